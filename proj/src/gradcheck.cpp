#include "foldnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "foldnet/error.hpp"

namespace foldnet::nn {

namespace {

Tensor random_weights(const Tensor::Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor r(shape);
  for (double& v : r.values()) v = u(rng);
  return r;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

GradCheckReport finite_difference_check(const GradientProbe& probe, double step, double floor) {
  if (probe.variables.size() != probe.names.size()) {
    throw ValidationError("gradient probe: variable/name count mismatch");
  }
  const std::vector<Tensor> analytic = probe.analytic();
  if (analytic.size() != probe.variables.size()) {
    throw ValidationError("gradient probe: analytic gradient count mismatch");
  }
  GradCheckReport report;
  for (std::size_t v = 0; v < probe.variables.size(); ++v) {
    Tensor& var = *probe.variables[v];
    if (analytic[v].size() != var.size()) {
      throw ShapeError("gradient probe: gradient for '" + probe.names[v] + "' has wrong size");
    }
    for (std::size_t i = 0; i < var.size(); ++i) {
      const double saved = var[i];
      var[i] = saved + step;
      const double up = probe.objective();
      var[i] = saved - step;
      const double down = probe.objective();
      var[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[v][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
      const double err = std::fabs(a - numeric) / denom;
      ++report.components;
      if (report.worst.empty() || err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst = probe.names[v] + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

GradientProbe conv1d_probe(Tensor input, Tensor kernel, Tensor bias, Mask mask,
                           std::uint64_t seed) {
  struct State {
    Tensor x, w, b, r;
    Mask mask;
  };
  auto s = std::make_shared<State>(State{std::move(input), std::move(kernel), std::move(bias),
                                         Tensor(), std::move(mask)});
  s->r = random_weights({s->x.dim(0), s->w.dim(0), s->x.dim(2)}, seed);
  GradientProbe p;
  p.variables = {&s->x, &s->w, &s->b};
  p.names = {"input", "kernel", "bias"};
  p.objective = [s] { return weighted_sum(conv1d_forward(s->x, s->w, s->b, s->mask), s->r); };
  p.analytic = [s] {
    ConvGrads g = conv1d_backward(s->x, s->w, s->mask, s->r);
    return std::vector<Tensor>{g.input, g.kernel, g.bias};
  };
  p.owner = s;
  return p;
}

GradientProbe batchnorm_probe(Tensor input, BatchNormParams params, Mask mask,
                              std::uint64_t seed) {
  struct State {
    Tensor x;
    BatchNormParams params;
    Mask mask;
    Tensor r;
  };
  auto s = std::make_shared<State>(State{std::move(input), std::move(params), std::move(mask), {}});
  s->r = random_weights(s->x.shape(), seed);
  GradientProbe p;
  p.variables = {&s->x, &s->params.gamma, &s->params.beta};
  p.names = {"input", "gamma", "beta"};
  p.objective = [s] {
    return weighted_sum(batchnorm_forward(s->x, s->params, s->mask, Mode::train), s->r);
  };
  p.analytic = [s] {
    BatchNormCache cache;
    batchnorm_forward(s->x, s->params, s->mask, Mode::train, &cache);
    BatchNormGrads g = batchnorm_backward(s->r, s->params, s->mask, cache);
    return std::vector<Tensor>{g.input, g.gamma, g.beta};
  };
  p.owner = s;
  return p;
}

GradientProbe relu_probe(Tensor input, std::uint64_t seed) {
  struct State {
    Tensor x, r;
  };
  auto s = std::make_shared<State>(State{std::move(input), {}});
  s->r = random_weights(s->x.shape(), seed);
  GradientProbe p;
  p.variables = {&s->x};
  p.names = {"input"};
  p.objective = [s] { return weighted_sum(relu(s->x), s->r); };
  p.analytic = [s] { return std::vector<Tensor>{relu_backward(s->x, s->r)}; };
  p.owner = s;
  return p;
}

GradientProbe kmax_probe(Tensor input, Mask mask, std::size_t k, std::uint64_t seed) {
  struct State {
    Tensor x;
    Mask mask;
    std::size_t k;
    Tensor r;
  };
  auto s = std::make_shared<State>(State{std::move(input), std::move(mask), k, {}});
  s->r = random_weights({s->x.dim(0), s->x.dim(1), k}, seed);
  GradientProbe p;
  p.variables = {&s->x};
  p.names = {"input"};
  p.objective = [s] { return weighted_sum(kmax_pool(s->x, s->mask, s->k), s->r); };
  p.analytic = [s] {
    KMaxCache cache;
    kmax_pool(s->x, s->mask, s->k, &cache);
    return std::vector<Tensor>{kmax_pool_backward(s->r, cache)};
  };
  p.owner = s;
  return p;
}

GradientProbe dense_probe(Tensor input, Tensor weights, Tensor bias, std::uint64_t seed) {
  struct State {
    Tensor x, w, b, r;
  };
  auto s = std::make_shared<State>(State{std::move(input), std::move(weights), std::move(bias), {}});
  s->r = random_weights({s->x.dim(0), s->w.dim(1)}, seed);
  GradientProbe p;
  p.variables = {&s->x, &s->w, &s->b};
  p.names = {"input", "weights", "bias"};
  p.objective = [s] { return weighted_sum(dense_forward(s->x, s->w, s->b), s->r); };
  p.analytic = [s] {
    DenseGrads g = dense_backward(s->x, s->w, s->r);
    return std::vector<Tensor>{g.input, g.weights, g.bias};
  };
  p.owner = s;
  return p;
}

GradientProbe dropout_probe(Tensor input, double rate, std::uint64_t mask_seed,
                            std::uint64_t seed) {
  struct State {
    Tensor x;
    double rate;
    std::uint64_t mask_seed;
    Tensor r;
  };
  auto s = std::make_shared<State>(State{std::move(input), rate, mask_seed, {}});
  s->r = random_weights(s->x.shape(), seed);
  GradientProbe p;
  p.variables = {&s->x};
  p.names = {"input"};
  p.objective = [s] {
    return weighted_sum(dropout_forward(s->x, s->rate, Mode::train, s->mask_seed), s->r);
  };
  p.analytic = [s] {
    DropoutMask mask;
    dropout_forward(s->x, s->rate, Mode::train, s->mask_seed, &mask);
    return std::vector<Tensor>{dropout_backward(s->r, mask)};
  };
  p.owner = s;
  return p;
}

GradientProbe softmax_cross_entropy_probe(Tensor logits, std::vector<std::size_t> labels) {
  struct State {
    Tensor z;
    std::vector<std::size_t> labels;
  };
  auto s = std::make_shared<State>(State{std::move(logits), std::move(labels)});
  GradientProbe p;
  p.variables = {&s->z};
  p.names = {"logits"};
  p.objective = [s] { return softmax_cross_entropy(s->z, s->labels).loss; };
  p.analytic = [s] {
    auto res = softmax_cross_entropy(s->z, s->labels);
    return std::vector<Tensor>{softmax_cross_entropy_backward(res.probabilities, s->labels)};
  };
  p.owner = s;
  return p;
}

}  // namespace foldnet::nn
