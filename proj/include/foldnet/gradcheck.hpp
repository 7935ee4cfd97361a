#pragma once

// Central-difference verification of the hand-written backward passes.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "foldnet/nn.hpp"

namespace foldnet::nn {

// A scalar objective over a set of tensors plus its analytic gradient. Layer probes
// below use objective = sum(layer_output * R) for a fixed random R, so the analytic
// gradient is the layer's backward pass applied to R.
struct GradientProbe {
  std::vector<Tensor*> variables;
  std::vector<std::string> names;
  std::function<double()> objective;
  std::function<std::vector<Tensor>()> analytic;  // aligned with `variables`
  std::shared_ptr<void> owner;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t components = 0;
  std::string worst;  // "<variable>[<flat index>]"
  bool within(double tolerance) const { return max_relative_error < tolerance; }
};

// Relative error per component is |a - n| / max(|a|, |n|, floor). The objective must be
// deterministic: fixed dropout masks, no running-statistic updates.
GradCheckReport finite_difference_check(const GradientProbe& probe, double step = 1e-5,
                                        double floor = 1e-4);

GradientProbe conv1d_probe(Tensor input, Tensor kernel, Tensor bias, Mask mask,
                           std::uint64_t seed);
// Train-mode normalization, gradients flow through the batch statistics.
GradientProbe batchnorm_probe(Tensor input, BatchNormParams params, Mask mask,
                              std::uint64_t seed);
GradientProbe relu_probe(Tensor input, std::uint64_t seed);
GradientProbe kmax_probe(Tensor input, Mask mask, std::size_t k, std::uint64_t seed);
GradientProbe dense_probe(Tensor input, Tensor weights, Tensor bias, std::uint64_t seed);
GradientProbe dropout_probe(Tensor input, double rate, std::uint64_t mask_seed,
                            std::uint64_t seed);
// Objective is the loss itself.
GradientProbe softmax_cross_entropy_probe(Tensor logits, std::vector<std::size_t> labels);

}  // namespace foldnet::nn
