#pragma once

// Length-binned mini-batch training and top-k evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foldnet/batch.hpp"
#include "foldnet/model.hpp"

namespace foldnet::train {

enum class Optimizer { sgd, sgd_momentum };

struct TrainSchedule {
  std::size_t bin_size = 15;
  std::size_t total_epochs = 100;         // outer passes over all bins
  std::size_t epochs_per_bin_visit = 3;   // inner epochs each time a bin is visited
  std::size_t batch_capacity = 64;
  Optimizer optimizer = Optimizer::sgd_momentum;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 7;
  bool track_training_accuracy = false;   // evaluate the training corpus after every pass
  // Re-estimate normalization running statistics over the training corpus after every
  // pass, before validation. The moving averages alone lag behind fast-changing weights.
  bool refresh_norm_statistics = true;

  void validate() const;
};

// Plain SGD (momentum 0) or heavy-ball momentum: v = mu*v - lr*g; p += v.
class SgdOptimizer {
 public:
  SgdOptimizer(const model::ModelState& state, double learning_rate, double momentum);
  void step(model::ModelState& state, const std::vector<Tensor>& grads);

 private:
  double learning_rate_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

SgdOptimizer make_optimizer(const model::ModelState& state, const TrainSchedule& schedule);

// One forward/backward/update on a labeled batch; returns the pre-update batch loss.
double train_step(model::ModelState& state, const PaddedBatch& batch, SgdOptimizer& optimizer,
                  std::uint64_t dropout_seed);

// Infer-mode loss of a labeled batch (no dropout, running statistics).
double batch_loss(const model::ModelState& state, const PaddedBatch& batch);

struct TopKAccuracy {
  std::map<std::size_t, double> by_k;
  std::size_t count = 0;
  double at(std::size_t k) const;
};

struct BinRecord {
  std::size_t pass = 0;
  std::size_t bin = 0;
  std::size_t batches = 0;
  double loss = 0.0;  // mean batch loss over the visit
};

struct PassRecord {
  std::size_t pass = 0;
  double loss = 0.0;  // mean batch loss over the pass
  std::optional<TopKAccuracy> validation;
  std::optional<TopKAccuracy> training;
};

struct TrainingLog {
  std::vector<BinRecord> bins;
  std::vector<PassRecord> passes;
  // One JSON object per line: bin visits ("type":"bin") and pass summaries ("type":"pass").
  std::string to_jsonl() const;
};

struct TrainResult {
  model::ModelState best;  // best validation top-1, or the final state without validation
  model::ModelState final_state;
  TrainingLog log;
  std::optional<std::size_t> best_pass;
};

using PassCallback = std::function<void(const PassRecord&)>;

TrainResult train(model::ModelState state, std::span<const encode::EncodedProtein> corpus,
                  const TrainSchedule& schedule,
                  std::span<const encode::EncodedProtein> validation = {},
                  const PassCallback& on_pass = {});

// Accuracy@k = fraction whose true fold is among the k most probable. k is capped at the
// number of folds.
TopKAccuracy evaluate_topk(const model::ModelState& state,
                           std::span<const encode::EncodedProtein> corpus,
                           const std::vector<std::size_t>& ks = {1, 5, 10});
TopKAccuracy topk_from_predictions(std::span<const model::FoldPrediction> predictions,
                                   std::span<const encode::EncodedProtein> corpus,
                                   const std::vector<std::size_t>& ks);

enum class FoldSizeClass { small, medium, large };
// small: <= 5 proteins, medium: 6-50, large: > 50.
FoldSizeClass classify_fold_size(std::size_t proteins_in_fold);
const char* fold_size_name(FoldSizeClass c);

std::map<std::size_t, std::size_t> count_fold_sizes(std::span<const encode::EncodedProtein> corpus);

std::map<FoldSizeClass, TopKAccuracy> group_evaluate(
    const model::ModelState& state, std::span<const encode::EncodedProtein> corpus,
    const std::map<std::size_t, std::size_t>& fold_sizes,
    const std::vector<std::size_t>& ks = {1, 5, 10});

struct CorpusSplit {
  std::vector<encode::EncodedProtein> train;
  std::vector<encode::EncodedProtein> validation;
};

// Per-fold split: round(train_fraction * n) proteins (at least one) go to training.
CorpusSplit split_per_fold(std::span<const encode::EncodedProtein> corpus,
                           double train_fraction, std::uint64_t seed);

}  // namespace foldnet::train
