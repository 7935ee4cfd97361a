#include "foldnet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "foldnet/error.hpp"
#include "foldnet/simd.hpp"

namespace foldnet::nn {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
  }
}

void require_mask(const Tensor& input, const Mask& mask, const char* what) {
  if (mask.batch() != input.dim(0) || mask.max_len() != input.dim(2)) {
    throw ShapeError(std::string(what) + ": mask [" + std::to_string(mask.batch()) + ", " +
                     std::to_string(mask.max_len()) + "] does not match input " +
                     shape_string(input.shape()));
  }
}

std::size_t left_pad(std::size_t window) { return (window - 1) / 2; }

// Output positions t whose tap k reads input position t + k - pad inside [0, len).
struct TapRange {
  std::size_t out_begin = 0;
  std::size_t out_end = 0;
  std::ptrdiff_t shift = 0;
};

TapRange tap_range(std::size_t len, std::size_t k, std::size_t pad) {
  TapRange r;
  r.shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(len);
  const std::ptrdiff_t begin = std::max<std::ptrdiff_t>(0, -r.shift);
  const std::ptrdiff_t end = std::min<std::ptrdiff_t>(n, n - r.shift);
  if (end > begin) {
    r.out_begin = static_cast<std::size_t>(begin);
    r.out_end = static_cast<std::size_t>(end);
  }
  return r;
}

// Column matrix [in_ch * window, len] of row b: entry (ci * window + tap, t) holds
// input[b, ci, t + tap - pad], or 0 when that position falls outside [0, len).
void unfold_columns(const Tensor& input, std::size_t b, std::size_t len, std::size_t window,
                    std::size_t pad, std::vector<double>& cols) {
  const std::size_t in_ch = input.dim(1);
  cols.resize(in_ch * window * len);
  for (std::size_t ci = 0; ci < in_ch; ++ci) {
    const double* x = &input.at(b, ci, 0);
    for (std::size_t tap = 0; tap < window; ++tap) {
      const TapRange r = tap_range(len, tap, pad);
      double* row = cols.data() + (ci * window + tap) * len;
      std::fill(row, row + r.out_begin, 0.0);
      std::copy(x + r.out_begin + r.shift, x + r.out_end + r.shift, row + r.out_begin);
      std::fill(row + std::max(r.out_begin, r.out_end), row + len, 0.0);
    }
  }
}

// Row-major counterpart [len, in_ch * window] of unfold_columns, built directly.
void unfold_rows(const Tensor& input, std::size_t b, std::size_t len, std::size_t window,
                 std::size_t pad, std::vector<double>& rows) {
  const std::size_t in_ch = input.dim(1), taps = in_ch * window;
  rows.resize(len * taps);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(len);
  for (std::size_t t = 0; t < len; ++t) {
    const std::ptrdiff_t first = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(pad);
    const std::size_t lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -first));
    const std::size_t hi = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(n - first, 0, static_cast<std::ptrdiff_t>(window)));
    double* dst = rows.data() + t * taps;
    for (std::size_t ci = 0; ci < in_ch; ++ci, dst += window) {
      const double* x = &input.at(b, ci, 0) + first;
      std::fill(dst, dst + lo, 0.0);
      if (hi > lo) std::copy(x + lo, x + hi, dst + lo);
      std::fill(dst + std::max(lo, hi), dst + window, 0.0);
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------------------
// Mask

Mask::Mask(std::vector<std::size_t> lengths, std::size_t max_len)
    : lengths_(std::move(lengths)), max_len_(max_len) {
  for (std::size_t len : lengths_) {
    if (len > max_len_) {
      throw ShapeError("mask length " + std::to_string(len) + " exceeds padded length " +
                       std::to_string(max_len_));
    }
  }
}

Mask Mask::full(std::size_t batch, std::size_t length) {
  return Mask(std::vector<std::size_t>(batch, length), length);
}

Mask Mask::from_indicator(const Tensor& valid) {
  require_rank(valid, 2, "mask");
  const std::size_t rows = valid.dim(0), cols = valid.dim(1);
  std::vector<std::size_t> lengths(rows, 0);
  for (std::size_t b = 0; b < rows; ++b) {
    std::size_t len = 0;
    while (len < cols && valid.at(b, len) == 1.0) ++len;
    for (std::size_t t = len; t < cols; ++t) {
      if (valid.at(b, t) != 0.0) {
        throw ValidationError("mask row " + std::to_string(b) +
                              " is not a prefix of ones followed by zeros");
      }
    }
    lengths[b] = len;
  }
  return Mask(std::move(lengths), cols);
}

std::size_t Mask::valid_count() const noexcept {
  return std::accumulate(lengths_.begin(), lengths_.end(), std::size_t{0});
}

Tensor Mask::indicator() const {
  Tensor out({batch(), max_len_});
  for (std::size_t b = 0; b < batch(); ++b) {
    for (std::size_t t = 0; t < lengths_[b]; ++t) out.at(b, t) = 1.0;
  }
  return out;
}

BatchNormParams BatchNormParams::identity(std::size_t channels) {
  return {Tensor({channels}, 1.0), Tensor({channels}, 0.0), Tensor({channels}, 0.0),
          Tensor({channels}, 1.0)};
}

// ---------------------------------------------------------------------------------------
// Convolution

Tensor conv1d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                      const Mask& mask) {
  require_rank(input, 3, "conv1d input");
  require_rank(kernel, 3, "conv1d kernel");
  require_mask(input, mask, "conv1d");
  const std::size_t batch = input.dim(0), in_ch = input.dim(1), len_max = input.dim(2);
  const std::size_t out_ch = kernel.dim(0), window = kernel.dim(2);
  if (kernel.dim(1) != in_ch) {
    throw ShapeError("conv1d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, input has " + std::to_string(in_ch));
  }
  if (window == 0) throw ShapeError("conv1d: window must be positive");
  if (bias.size() != out_ch) {
    throw ShapeError("conv1d: bias has " + std::to_string(bias.size()) + " entries, expected " +
                     std::to_string(out_ch));
  }

  const auto& k = simd::kernels();
  const std::size_t pad = left_pad(window);
  const std::size_t taps = in_ch * window;
  Tensor out({batch, out_ch, len_max});
  std::vector<double> cols;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = mask.length(b);
    if (len == 0) continue;
    unfold_columns(input, b, len, window, pad, cols);
    for (std::size_t co = 0; co < out_ch; ++co) {
      double* y = &out.at(b, co, 0);
      std::fill(y, y + len, bias[co]);
    }
    k.gemm(out_ch, len, taps, kernel.data(), taps, cols.data(), len, &out.at(b, 0, 0), len_max);
  }
  return out;
}

Tensor conv1d_forward(const Tensor& input, const ConvLayerParams& params, const Mask& mask) {
  return conv1d_forward(input, params.kernel, params.bias, mask);
}

ConvGrads conv1d_backward(const Tensor& input, const Tensor& kernel, const Mask& mask,
                          const Tensor& grad_output, bool input_grad) {
  require_mask(input, mask, "conv1d backward");
  const std::size_t batch = input.dim(0), in_ch = input.dim(1), len_max = input.dim(2);
  const std::size_t out_ch = kernel.dim(0), window = kernel.dim(2);
  if (grad_output.shape() != Tensor::Shape{batch, out_ch, len_max}) {
    throw ShapeError("conv1d backward: gradient shape " + shape_string(grad_output.shape()));
  }
  const auto& k = simd::kernels();
  const std::size_t pad = left_pad(window);
  const std::size_t taps = in_ch * window;
  ConvGrads g{input_grad ? Tensor::zeros_like(input) : Tensor(), Tensor::zeros_like(kernel),
              Tensor({out_ch})};
  // The input gradient is a convolution of the output gradient with the flipped kernel:
  // flipped[ci, co * window + j] = kernel[co, ci, window - 1 - j], left pad window - 1 - pad.
  const std::size_t flipped_taps = out_ch * window;
  std::vector<double> flipped;
  if (input_grad) {
    flipped.resize(in_ch * flipped_taps);
    for (std::size_t co = 0; co < out_ch; ++co) {
      for (std::size_t ci = 0; ci < in_ch; ++ci) {
        const double* w = &kernel.at(co, ci, 0);
        double* dst = flipped.data() + ci * flipped_taps + co * window;
        std::reverse_copy(w, w + window, dst);
      }
    }
  }
  std::vector<double> rows, grad_cols;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = mask.length(b);
    if (len == 0) continue;
    const double* gy = &grad_output.at(b, 0, 0);
    for (std::size_t co = 0; co < out_ch; ++co) {
      g.bias[co] += std::accumulate(gy + co * len_max, gy + co * len_max + len, 0.0);
    }
    unfold_rows(input, b, len, window, pad, rows);
    k.gemm(out_ch, taps, len, gy, len_max, rows.data(), taps, g.kernel.data(), taps);
    if (!input_grad) continue;
    unfold_columns(grad_output, b, len, window, window - 1 - pad, grad_cols);
    k.gemm(in_ch, len, flipped_taps, flipped.data(), flipped_taps, grad_cols.data(), len,
           &g.input.at(b, 0, 0), len_max);
  }
  return g;
}

// ---------------------------------------------------------------------------------------
// Batch normalization

Tensor batchnorm_forward(const Tensor& input, const BatchNormParams& params, const Mask& mask,
                         Mode mode, BatchNormCache* cache) {
  require_rank(input, 3, "batchnorm input");
  require_mask(input, mask, "batchnorm");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  if (params.channels() != channels) {
    throw ShapeError("batchnorm: parameters for " + std::to_string(params.channels()) +
                     " channels, input has " + std::to_string(channels));
  }
  const std::size_t count = mask.valid_count();

  BatchNormCache local;
  BatchNormCache& c = cache ? *cache : local;
  c.mode = mode;
  c.count = count;
  c.mean.assign(channels, 0.0);
  c.variance.assign(channels, 0.0);
  c.inv_std.assign(channels, 0.0);

  if (mode == Mode::train) {
    if (count == 0) throw ValidationError("batchnorm: no valid positions in batch");
    for (std::size_t ch = 0; ch < channels; ++ch) {
      double sum = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* x = &input.at(b, ch, 0);
        for (std::size_t t = 0; t < mask.length(b); ++t) sum += x[t];
      }
      const double mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* x = &input.at(b, ch, 0);
        for (std::size_t t = 0; t < mask.length(b); ++t) {
          const double d = x[t] - mean;
          sq += d * d;
        }
      }
      c.mean[ch] = mean;
      c.variance[ch] = sq / static_cast<double>(count);
    }
  } else {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      c.mean[ch] = params.running_mean[ch];
      c.variance[ch] = params.running_var[ch];
    }
  }

  Tensor out = Tensor::zeros_like(input);
  c.normalized = Tensor::zeros_like(input);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    c.inv_std[ch] = 1.0 / std::sqrt(c.variance[ch] + kBatchNormEpsilon);
    const double g = params.gamma[ch], beta = params.beta[ch];
    for (std::size_t b = 0; b < batch; ++b) {
      const double* x = &input.at(b, ch, 0);
      double* xh = &c.normalized.at(b, ch, 0);
      double* y = &out.at(b, ch, 0);
      for (std::size_t t = 0; t < mask.length(b); ++t) {
        xh[t] = (x[t] - c.mean[ch]) * c.inv_std[ch];
        y[t] = g * xh[t] + beta;
      }
    }
  }
  return out;
}

void batchnorm_update_running(BatchNormParams& params, const BatchNormCache& cache,
                              double momentum) {
  if (cache.mode != Mode::train) return;
  // Running variance tracks the unbiased estimate; a single position has none.
  const double n = static_cast<double>(cache.count);
  const double correction = cache.count > 1 ? n / (n - 1.0) : 1.0;
  for (std::size_t ch = 0; ch < params.channels(); ++ch) {
    params.running_mean[ch] = momentum * params.running_mean[ch] + (1.0 - momentum) * cache.mean[ch];
    params.running_var[ch] =
        momentum * params.running_var[ch] + (1.0 - momentum) * cache.variance[ch] * correction;
  }
}

BatchNormGrads batchnorm_backward(const Tensor& grad_output, const BatchNormParams& params,
                                  const Mask& mask, const BatchNormCache& cache) {
  require_mask(grad_output, mask, "batchnorm backward");
  const std::size_t batch = grad_output.dim(0), channels = grad_output.dim(1);
  BatchNormGrads g{Tensor::zeros_like(grad_output), Tensor({channels}), Tensor({channels})};
  const double n = static_cast<double>(cache.count);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* dy = &grad_output.at(b, ch, 0);
      const double* xh = &cache.normalized.at(b, ch, 0);
      for (std::size_t t = 0; t < mask.length(b); ++t) {
        sum_dy += dy[t];
        sum_dy_xh += dy[t] * xh[t];
      }
    }
    g.beta[ch] = sum_dy;
    g.gamma[ch] = sum_dy_xh;
    const double scale = params.gamma[ch] * cache.inv_std[ch];
    for (std::size_t b = 0; b < batch; ++b) {
      const double* dy = &grad_output.at(b, ch, 0);
      const double* xh = &cache.normalized.at(b, ch, 0);
      double* dx = &g.input.at(b, ch, 0);
      for (std::size_t t = 0; t < mask.length(b); ++t) {
        if (cache.mode == Mode::train) {
          dx[t] = scale * (dy[t] - sum_dy / n - xh[t] * sum_dy_xh / n);
        } else {
          dx[t] = scale * dy[t];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------------------
// Elementwise

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  if (input.shape() != grad_output.shape()) throw ShapeError("relu backward: shape mismatch");
  Tensor g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(input[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

// ---------------------------------------------------------------------------------------
// K-max pooling

Tensor kmax_pool(const Tensor& input, const Mask& mask, std::size_t k, KMaxCache* cache) {
  require_rank(input, 3, "kmax_pool input");
  require_mask(input, mask, "kmax_pool");
  if (k == 0) throw ValidationError("kmax_pool: K must be at least 1");
  const std::size_t batch = input.dim(0), channels = input.dim(1), len_max = input.dim(2);
  Tensor out({batch, channels, k});
  std::vector<std::ptrdiff_t> source(out.size(), -1);
  std::vector<std::size_t> order;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = mask.length(b);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double* x = &input.at(b, ch, 0);
      const std::size_t row_base = (b * channels + ch) * len_max;
      const std::size_t out_base = (b * channels + ch) * k;
      order.resize(len);
      std::iota(order.begin(), order.end(), std::size_t{0});
      if (len > k) {
        auto larger = [x](std::size_t a, std::size_t c) {
          return x[a] > x[c] || (x[a] == x[c] && a < c);
        };
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1),
                         order.end(), larger);
        order.resize(k);
        std::sort(order.begin(), order.end());
      }
      for (std::size_t i = 0; i < order.size(); ++i) {
        out[out_base + i] = x[order[i]];
        source[out_base + i] = static_cast<std::ptrdiff_t>(row_base + order[i]);
      }
    }
  }
  if (cache) {
    cache->input_shape = input.shape();
    cache->source = std::move(source);
  }
  return out;
}

Tensor kmax_pool_backward(const Tensor& grad_output, const KMaxCache& cache) {
  if (grad_output.size() != cache.source.size()) {
    throw ShapeError("kmax_pool backward: gradient does not match cached selection");
  }
  Tensor g(cache.input_shape);
  for (std::size_t i = 0; i < cache.source.size(); ++i) {
    if (cache.source[i] >= 0) g[static_cast<std::size_t>(cache.source[i])] += grad_output[i];
  }
  return g;
}

// ---------------------------------------------------------------------------------------
// Dense

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(input, 2, "dense input");
  require_rank(weights, 2, "dense weights");
  const std::size_t batch = input.dim(0), n_in = input.dim(1), n_out = weights.dim(1);
  if (weights.dim(0) != n_in) {
    throw ShapeError("dense: input width " + std::to_string(n_in) + " does not match weights " +
                     shape_string(weights.shape()));
  }
  if (bias.size() != n_out) throw ShapeError("dense: bias does not match output width");
  Tensor out({batch, n_out});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(bias.data(), bias.data() + n_out, &out.at(b, 0));
  }
  simd::kernels().gemm(batch, n_out, n_in, input.data(), n_in, weights.data(), n_out, out.data(),
                       n_out);
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_output) {
  const std::size_t batch = input.dim(0), n_in = input.dim(1), n_out = weights.dim(1);
  if (grad_output.shape() != Tensor::Shape{batch, n_out}) {
    throw ShapeError("dense backward: gradient shape " + shape_string(grad_output.shape()));
  }
  const auto& k = simd::kernels();
  DenseGrads g{Tensor::zeros_like(input), Tensor::zeros_like(weights), Tensor({n_out})};
  for (std::size_t b = 0; b < batch; ++b) k.axpy(n_out, 1.0, &grad_output.at(b, 0), g.bias.data());
  std::vector<double> weights_t(n_out * n_in), input_t(n_in * batch);
  for (std::size_t i = 0; i < n_in; ++i) {
    for (std::size_t o = 0; o < n_out; ++o) weights_t[o * n_in + i] = weights.at(i, o);
    for (std::size_t b = 0; b < batch; ++b) input_t[i * batch + b] = input.at(b, i);
  }
  k.gemm(batch, n_in, n_out, grad_output.data(), n_out, weights_t.data(), n_in, g.input.data(),
         n_in);
  k.gemm(n_in, n_out, batch, input_t.data(), batch, grad_output.data(), n_out, g.weights.data(),
         n_out);
  return g;
}

// ---------------------------------------------------------------------------------------
// Dropout

Tensor dropout_forward(const Tensor& input, double rate, Mode mode, std::uint64_t seed,
                       DropoutMask* mask) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ValidationError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mask) mask->scale.clear();
  if (mode == Mode::infer || rate == 0.0) return input;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> scale(input.size());
  Tensor out = input;
  for (std::size_t i = 0; i < out.size(); ++i) {
    scale[i] = uniform(rng) >= rate ? keep_scale : 0.0;
    out[i] *= scale[i];
  }
  if (mask) mask->scale = std::move(scale);
  return out;
}

Tensor dropout_backward(const Tensor& grad_output, const DropoutMask& mask) {
  if (mask.scale.empty()) return grad_output;
  if (mask.scale.size() != grad_output.size()) throw ShapeError("dropout backward: mask size");
  Tensor g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask.scale[i];
  return g;
}

// ---------------------------------------------------------------------------------------
// Softmax / cross-entropy

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax logits");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor p = logits;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = &p.at(r, 0);
    const double mx = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
  }
  return p;
}

SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits,
                                          std::span<const std::size_t> labels) {
  require_rank(logits, 2, "softmax logits");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(rows) + " rows");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= cols) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(labels[r]) +
                            " out of range [0, " + std::to_string(cols) + ")");
    }
  }
  SoftmaxCrossEntropy res{0.0, softmax(logits)};
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = &logits.at(r, 0);
    const double mx = *std::max_element(z, z + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(z[c] - mx);
    res.loss += std::log(sum) - (z[labels[r]] - mx);
  }
  if (rows) res.loss /= static_cast<double>(rows);
  return res;
}

Tensor softmax_cross_entropy_backward(const Tensor& probabilities,
                                      std::span<const std::size_t> labels) {
  const std::size_t rows = probabilities.dim(0);
  Tensor g = probabilities;
  for (std::size_t r = 0; r < rows; ++r) g.at(r, labels[r]) -= 1.0;
  const double inv = rows ? 1.0 / static_cast<double>(rows) : 0.0;
  for (double& v : g.values()) v *= inv;
  return g;
}

}  // namespace foldnet::nn
