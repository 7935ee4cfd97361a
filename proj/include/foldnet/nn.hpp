#pragma once

// Layer kernels with hand-written backward passes. Sequence tensors are laid out
// [batch, channels, length]; every sequence kernel honours a tail-padding Mask, so the
// values computed at valid positions never depend on how much padding follows them.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "foldnet/tensor.hpp"

namespace foldnet::nn {

enum class Mode { train, infer };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.99;

// Per-row valid lengths of a padded batch. Rows are always a prefix of ones followed by
// zeros, so the lengths are the whole story.
class Mask {
 public:
  Mask() = default;
  Mask(std::vector<std::size_t> lengths, std::size_t max_len);

  static Mask full(std::size_t batch, std::size_t length);
  // Accepts a [batch, L] 0/1 tensor; rejects rows that are not tail-padded.
  static Mask from_indicator(const Tensor& valid);

  std::size_t batch() const noexcept { return lengths_.size(); }
  std::size_t max_len() const noexcept { return max_len_; }
  std::size_t length(std::size_t row) const noexcept { return lengths_[row]; }
  const std::vector<std::size_t>& lengths() const noexcept { return lengths_; }
  bool valid(std::size_t row, std::size_t pos) const noexcept { return pos < lengths_[row]; }
  std::size_t valid_count() const noexcept;
  Tensor indicator() const;

 private:
  std::vector<std::size_t> lengths_;
  std::size_t max_len_ = 0;
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

  // gamma = 1, beta = 0, running mean 0, running variance 1.
  static BatchNormParams identity(std::size_t channels);
  std::size_t channels() const noexcept { return gamma.size(); }
};

struct ConvLayerParams {
  Tensor kernel;  // [out_channels, in_channels, window]
  Tensor bias;    // [out_channels]
  BatchNormParams norm;

  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t window() const { return kernel.dim(2); }
};

// "same" convolution: left pad floor((w-1)/2), right pad ceil((w-1)/2), zeros. Input
// beyond a row's valid length is read as zero and padded outputs are written as zero.
Tensor conv1d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                      const Mask& mask);
Tensor conv1d_forward(const Tensor& input, const ConvLayerParams& params, const Mask& mask);

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};
// With `input_grad` false the returned input gradient is left empty.
ConvGrads conv1d_backward(const Tensor& input, const Tensor& kernel, const Mask& mask,
                          const Tensor& grad_output, bool input_grad = true);

struct BatchNormCache {
  Mode mode = Mode::infer;
  Tensor normalized;  // x_hat at valid positions, 0 elsewhere
  std::vector<double> mean;
  std::vector<double> variance;  // biased, over valid positions (train) or running (infer)
  std::vector<double> inv_std;
  std::size_t count = 0;  // valid positions per channel
};

// Train mode normalizes with statistics over valid positions only and leaves the running
// statistics alone; fold them in afterwards with batchnorm_update_running().
Tensor batchnorm_forward(const Tensor& input, const BatchNormParams& params, const Mask& mask,
                         Mode mode, BatchNormCache* cache = nullptr);
void batchnorm_update_running(BatchNormParams& params, const BatchNormCache& cache,
                              double momentum = kBatchNormMomentum);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batchnorm_backward(const Tensor& grad_output, const BatchNormParams& params,
                                  const Mask& mask, const BatchNormCache& cache);

Tensor relu(const Tensor& input);
// Subgradient at exactly 0 is 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

struct KMaxCache {
  Tensor::Shape input_shape;
  std::vector<std::ptrdiff_t> source;  // flat input index per output element, -1 for fill
};

// Top-k valid values per (row, channel) kept in sequence order; rows shorter than k are
// followed by zeros. Ties go to the earlier position.
Tensor kmax_pool(const Tensor& input, const Mask& mask, std::size_t k,
                 KMaxCache* cache = nullptr);
Tensor kmax_pool_backward(const Tensor& grad_output, const KMaxCache& cache);

// input [B, N_in], weights [N_in, N_out], bias [N_out].
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output);

struct DropoutMask {
  std::vector<double> scale;  // empty means identity
};

// Inverted dropout: survivors are scaled by 1/(1-rate), so infer mode is the identity.
Tensor dropout_forward(const Tensor& input, double rate, Mode mode, std::uint64_t seed,
                       DropoutMask* mask = nullptr);
Tensor dropout_backward(const Tensor& grad_output, const DropoutMask& mask);

Tensor softmax(const Tensor& logits);

struct SoftmaxCrossEntropy {
  double loss = 0.0;  // mean negative log-likelihood of the labels
  Tensor probabilities;
};
SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits,
                                          std::span<const std::size_t> labels);
// (p - onehot) / B
Tensor softmax_cross_entropy_backward(const Tensor& probabilities,
                                      std::span<const std::size_t> labels);

}  // namespace foldnet::nn
