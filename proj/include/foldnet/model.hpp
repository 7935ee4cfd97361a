#pragma once

// The fold classifier: one tower of stacked (conv -> batchnorm -> ReLU) layers per
// window size, K-max pooling per tower, concatenation, a ReLU hidden layer (whose
// activations are the fold-feature embedding), dropout, and a softmax output layer.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "foldnet/batch.hpp"
#include "foldnet/encode.hpp"
#include "foldnet/nn.hpp"

namespace foldnet::model {

struct ModelConfig {
  std::vector<std::size_t> window_sizes{6, 10};
  std::size_t filters_per_layer = 10;
  std::size_t conv_depth = 10;
  std::size_t kmax = 30;
  std::size_t hidden_units = 500;
  std::size_t num_folds = 1195;
  double dropout_rate = 0.2;
  std::size_t input_channels = encode::kFeatureWidth;

  std::size_t flatten_width() const noexcept {
    return filters_per_layer * kmax * window_sizes.size();
  }
  void validate() const;
  // Canonical JSON text: sorted keys, no whitespace.
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Tower {
  std::size_t window = 0;
  std::vector<nn::ConvLayerParams> layers;
};

struct ModelState {
  ModelConfig config;
  std::vector<Tower> towers;  // one per window size, in config order
  Tensor hidden_weights;      // [flatten_width, hidden_units]
  Tensor hidden_bias;         // [hidden_units]
  Tensor output_weights;      // [hidden_units, num_folds]
  Tensor output_bias;         // [num_folds]

  // Trainable tensors: per tower, per layer {kernel, bias, gamma, beta}; then hidden
  // weights, hidden bias, output weights, output bias.
  std::vector<Tensor*> trainable();
  std::vector<const Tensor*> trainable() const;
  // Checkpoint order: per tower, per layer {kernel, bias, gamma, beta, running_mean,
  // running_var}; then hidden weights, hidden bias, output weights, output bias.
  std::vector<const Tensor*> all_tensors() const;
  std::vector<Tensor*> all_tensors();

  // Rounds every checkpointed value to the nearest float32. Builders and updaters call
  // this so a saved model reproduces the in-memory one exactly.
  void round_to_storage();

  // Throws ValidationError when shapes disagree with the config or values are non-finite.
  void validate() const;
};

// Glorot-uniform kernels and weights, zero biases, identity normalization.
ModelState build_model(const ModelConfig& config, std::uint64_t seed);

struct FoldPrediction {
  std::vector<double> probabilities;
  std::vector<std::size_t> ranked_folds;  // descending probability, ties by ascending index
};

struct SFFeature {
  std::vector<double> values;  // post-ReLU hidden activations, pre-dropout
};

std::vector<std::size_t> rank_folds(std::span<const double> probabilities);

struct ForwardOutput {
  Tensor logits;         // [B, num_folds]
  Tensor probabilities;  // [B, num_folds]
  Tensor features;       // [B, hidden_units]

  FoldPrediction prediction(std::size_t row) const;
  SFFeature feature(std::size_t row) const;
};

struct TowerTrace {
  std::vector<Tensor> layer_inputs;
  std::vector<nn::BatchNormCache> norms;
  std::vector<Tensor> pre_activation;
  nn::KMaxCache pool;
};

struct ForwardTrace {
  nn::Mask mask;
  std::vector<TowerTrace> towers;
  Tensor flat;
  Tensor hidden_pre;
  Tensor hidden;
  nn::DropoutMask dropout;
  Tensor dropped;
};

// Train mode normalizes with batch statistics and applies dropout seeded by
// `dropout_seed`; running statistics are folded in separately (apply_batch_statistics).
ForwardOutput forward(const ModelState& state, const train::PaddedBatch& batch, nn::Mode mode,
                      std::uint64_t dropout_seed = 0, ForwardTrace* trace = nullptr);

// Gradients aligned with ModelState::trainable().
std::vector<Tensor> backward(const ModelState& state, const ForwardTrace& trace,
                             const Tensor& grad_logits);

void apply_batch_statistics(ModelState& state, const ForwardTrace& trace,
                            double momentum = nn::kBatchNormMomentum);

// Replaces every running mean/variance with the pooled statistics of the train-mode
// activations over `corpus`, batched by length as in training. The variance is the
// unbiased pooled estimate over all valid positions.
void refresh_running_statistics(ModelState& state,
                                std::span<const encode::EncodedProtein> corpus,
                                std::size_t bin_size = 15, std::size_t batch_capacity = 64);

struct ProteinOutputs {
  std::vector<FoldPrediction> predictions;
  std::vector<SFFeature> features;
};

// Infer-mode predictions and features for every protein, in input order. Proteins are
// batched internally by length; results do not depend on the batching.
ProteinOutputs infer(const ModelState& state, std::span<const encode::EncodedProtein> proteins);

FoldPrediction predict(const ModelState& state, const encode::EncodedProtein& protein);
SFFeature extract_feature(const ModelState& state, const encode::EncodedProtein& protein);

struct TopKEntry {
  std::size_t fold = 0;
  double probability = 0.0;
};
std::vector<TopKEntry> predict_topk(const ModelState& state, const encode::EncodedProtein& protein,
                                    std::size_t k);
std::vector<TopKEntry> top_k(const FoldPrediction& prediction, std::size_t k);

// --- checkpoints ---------------------------------------------------------------------
// "DSF1" | u32 LE version | u64 LE config length | config JSON | every tensor of
// ModelState::all_tensors() in order, as LE float32.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ModelState& state);
ModelState deserialize_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace foldnet::model
