#include "foldnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "foldnet/error.hpp"

namespace foldnet::model {

namespace {

void glorot_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : t.values()) v = u(rng);
}

void expect_shape(const Tensor& t, const Tensor::Shape& shape, const std::string& what) {
  if (t.shape() != shape) {
    throw ValidationError("model: " + what + " has shape " + shape_string(t.shape()) +
                          ", expected " + shape_string(shape));
  }
}

}  // namespace

// ---------------------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (window_sizes.empty()) throw ValidationError("model config: no window sizes");
  for (std::size_t w : window_sizes) {
    if (w == 0) throw ValidationError("model config: window sizes must be positive");
  }
  if (filters_per_layer == 0 || conv_depth == 0 || kmax == 0 || hidden_units == 0 ||
      num_folds == 0 || input_channels == 0) {
    throw ValidationError("model config: all extents must be at least 1");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ValidationError("model config: dropout rate must lie in [0, 1)");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["window_sizes"] = window_sizes;
  j["filters_per_layer"] = filters_per_layer;
  j["conv_depth"] = conv_depth;
  j["kmax"] = kmax;
  j["hidden_units"] = hidden_units;
  j["num_folds"] = num_folds;
  j["dropout_rate"] = dropout_rate;
  j["input_channels"] = input_channels;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.window_sizes = j.at("window_sizes").get<std::vector<std::size_t>>();
    c.filters_per_layer = j.at("filters_per_layer").get<std::size_t>();
    c.conv_depth = j.at("conv_depth").get<std::size_t>();
    c.kmax = j.at("kmax").get<std::size_t>();
    c.hidden_units = j.at("hidden_units").get<std::size_t>();
    c.num_folds = j.at("num_folds").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.input_channels = j.at("input_channels").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------------------
// State

std::vector<Tensor*> ModelState::trainable() {
  std::vector<Tensor*> out;
  for (auto& tower : towers) {
    for (auto& l : tower.layers) {
      out.insert(out.end(), {&l.kernel, &l.bias, &l.norm.gamma, &l.norm.beta});
    }
  }
  out.insert(out.end(), {&hidden_weights, &hidden_bias, &output_weights, &output_bias});
  return out;
}

std::vector<const Tensor*> ModelState::trainable() const {
  auto mut = const_cast<ModelState*>(this)->trainable();
  return {mut.begin(), mut.end()};
}

std::vector<Tensor*> ModelState::all_tensors() {
  std::vector<Tensor*> out;
  for (auto& tower : towers) {
    for (auto& l : tower.layers) {
      out.insert(out.end(), {&l.kernel, &l.bias, &l.norm.gamma, &l.norm.beta,
                             &l.norm.running_mean, &l.norm.running_var});
    }
  }
  out.insert(out.end(), {&hidden_weights, &hidden_bias, &output_weights, &output_bias});
  return out;
}

std::vector<const Tensor*> ModelState::all_tensors() const {
  auto mut = const_cast<ModelState*>(this)->all_tensors();
  return {mut.begin(), mut.end()};
}

void ModelState::validate() const {
  config.validate();
  if (towers.size() != config.window_sizes.size()) {
    throw ValidationError("model: tower count does not match window sizes");
  }
  const std::size_t f = config.filters_per_layer;
  for (std::size_t t = 0; t < towers.size(); ++t) {
    const std::size_t w = config.window_sizes[t];
    if (towers[t].window != w || towers[t].layers.size() != config.conv_depth) {
      throw ValidationError("model: tower " + std::to_string(t) + " does not match config");
    }
    for (std::size_t l = 0; l < towers[t].layers.size(); ++l) {
      const auto& p = towers[t].layers[l];
      const std::string where = "tower " + std::to_string(t) + " layer " + std::to_string(l);
      expect_shape(p.kernel, {f, l == 0 ? config.input_channels : f, w}, where + " kernel");
      for (const Tensor* v : {&p.bias, &p.norm.gamma, &p.norm.beta, &p.norm.running_mean,
                              &p.norm.running_var}) {
        expect_shape(*v, {f}, where + " per-channel tensor");
      }
      for (double v : p.norm.running_var.values()) {
        if (!(v > 0.0)) throw ValidationError("model: " + where + " running variance not positive");
      }
    }
  }
  expect_shape(hidden_weights, {config.flatten_width(), config.hidden_units}, "hidden weights");
  expect_shape(hidden_bias, {config.hidden_units}, "hidden bias");
  expect_shape(output_weights, {config.hidden_units, config.num_folds}, "output weights");
  expect_shape(output_bias, {config.num_folds}, "output bias");
  for (const Tensor* t : all_tensors()) {
    if (!t->all_finite()) throw ValidationError("model: non-finite parameter");
  }
}

void ModelState::round_to_storage() {
  for (Tensor* t : all_tensors()) {
    for (double& v : t->values()) v = static_cast<double>(static_cast<float>(v));
  }
}

ModelState build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelState s;
  s.config = config;
  const std::size_t f = config.filters_per_layer;
  for (std::size_t w : config.window_sizes) {
    Tower tower;
    tower.window = w;
    for (std::size_t l = 0; l < config.conv_depth; ++l) {
      const std::size_t in = l == 0 ? config.input_channels : f;
      nn::ConvLayerParams p{Tensor({f, in, w}), Tensor({f}), nn::BatchNormParams::identity(f)};
      glorot_fill(p.kernel, in * w, f * w, rng);
      tower.layers.push_back(std::move(p));
    }
    s.towers.push_back(std::move(tower));
  }
  s.hidden_weights = Tensor({config.flatten_width(), config.hidden_units});
  glorot_fill(s.hidden_weights, config.flatten_width(), config.hidden_units, rng);
  s.hidden_bias = Tensor({config.hidden_units});
  s.output_weights = Tensor({config.hidden_units, config.num_folds});
  glorot_fill(s.output_weights, config.hidden_units, config.num_folds, rng);
  s.output_bias = Tensor({config.num_folds});
  s.round_to_storage();
  return s;
}

// ---------------------------------------------------------------------------------------
// Predictions

std::vector<std::size_t> rank_folds(std::span<const double> probabilities) {
  std::vector<std::size_t> order(probabilities.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probabilities[a] > probabilities[b];
  });
  return order;
}

FoldPrediction ForwardOutput::prediction(std::size_t row) const {
  const std::size_t n = probabilities.dim(1);
  FoldPrediction p;
  p.probabilities.assign(probabilities.data() + row * n, probabilities.data() + (row + 1) * n);
  p.ranked_folds = rank_folds(p.probabilities);
  return p;
}

SFFeature ForwardOutput::feature(std::size_t row) const {
  const std::size_t n = features.dim(1);
  return {std::vector<double>(features.data() + row * n, features.data() + (row + 1) * n)};
}

ForwardOutput forward(const ModelState& state, const train::PaddedBatch& batch, nn::Mode mode,
                      std::uint64_t dropout_seed, ForwardTrace* trace) {
  const ModelConfig& cfg = state.config;
  if (batch.features.rank() != 3 || batch.features.dim(1) != cfg.input_channels) {
    throw ShapeError("forward: batch features " + shape_string(batch.features.shape()) +
                     " do not have " + std::to_string(cfg.input_channels) + " channels");
  }
  const std::size_t bsz = batch.size();
  const std::size_t f = cfg.filters_per_layer, k = cfg.kmax;
  const nn::Mask& mask = batch.mask;

  ForwardTrace local;
  ForwardTrace& tr = trace ? *trace : local;
  tr.mask = mask;
  tr.towers.assign(state.towers.size(), {});
  tr.flat = Tensor({bsz, cfg.flatten_width()});

  for (std::size_t t = 0; t < state.towers.size(); ++t) {
    TowerTrace& tt = tr.towers[t];
    Tensor h = batch.features;
    for (const auto& layer : state.towers[t].layers) {
      Tensor z = nn::conv1d_forward(h, layer, mask);
      nn::BatchNormCache cache;
      Tensor normed = nn::batchnorm_forward(z, layer.norm, mask, mode, &cache);
      Tensor next = nn::relu(normed);
      if (trace) {
        tt.layer_inputs.push_back(std::move(h));
        tt.norms.push_back(std::move(cache));
        tt.pre_activation.push_back(std::move(normed));
      }
      h = std::move(next);
    }
    Tensor pooled = nn::kmax_pool(h, mask, k, trace ? &tt.pool : nullptr);
    const std::size_t seg = f * k;
    for (std::size_t b = 0; b < bsz; ++b) {
      std::copy(pooled.data() + b * seg, pooled.data() + (b + 1) * seg,
                tr.flat.data() + b * cfg.flatten_width() + t * seg);
    }
  }

  tr.hidden_pre = nn::dense_forward(tr.flat, state.hidden_weights, state.hidden_bias);
  tr.hidden = nn::relu(tr.hidden_pre);
  tr.dropped = nn::dropout_forward(tr.hidden, cfg.dropout_rate, mode, dropout_seed, &tr.dropout);

  ForwardOutput out;
  out.logits = nn::dense_forward(tr.dropped, state.output_weights, state.output_bias);
  out.probabilities = nn::softmax(out.logits);
  out.features = tr.hidden;
  return out;
}

std::vector<Tensor> backward(const ModelState& state, const ForwardTrace& trace,
                             const Tensor& grad_logits) {
  const ModelConfig& cfg = state.config;
  const std::size_t bsz = trace.mask.batch();
  const std::size_t f = cfg.filters_per_layer, k = cfg.kmax, seg = f * k;

  nn::DenseGrads out_g = nn::dense_backward(trace.dropped, state.output_weights, grad_logits);
  Tensor g_hidden = nn::dropout_backward(out_g.input, trace.dropout);
  Tensor g_hidden_pre = nn::relu_backward(trace.hidden_pre, g_hidden);
  nn::DenseGrads hid_g = nn::dense_backward(trace.flat, state.hidden_weights, g_hidden_pre);

  std::vector<Tensor> grads;
  grads.reserve(state.towers.size() * cfg.conv_depth * 4 + 4);
  for (std::size_t t = 0; t < state.towers.size(); ++t) {
    const Tower& tower = state.towers[t];
    const TowerTrace& tt = trace.towers[t];
    Tensor g_pool({bsz, f, k});
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* src = hid_g.input.data() + b * cfg.flatten_width() + t * seg;
      std::copy(src, src + seg, g_pool.data() + b * seg);
    }
    Tensor g = nn::kmax_pool_backward(g_pool, tt.pool);
    std::vector<Tensor> tower_grads(tower.layers.size() * 4);
    for (std::size_t l = tower.layers.size(); l-- > 0;) {
      const auto& layer = tower.layers[l];
      Tensor g_norm = nn::relu_backward(tt.pre_activation[l], g);
      nn::BatchNormGrads bn = nn::batchnorm_backward(g_norm, layer.norm, trace.mask, tt.norms[l]);
      nn::ConvGrads cv =
          nn::conv1d_backward(tt.layer_inputs[l], layer.kernel, trace.mask, bn.input, l > 0);
      tower_grads[4 * l + 0] = std::move(cv.kernel);
      tower_grads[4 * l + 1] = std::move(cv.bias);
      tower_grads[4 * l + 2] = std::move(bn.gamma);
      tower_grads[4 * l + 3] = std::move(bn.beta);
      g = std::move(cv.input);
    }
    for (auto& tg : tower_grads) grads.push_back(std::move(tg));
  }
  grads.push_back(std::move(hid_g.weights));
  grads.push_back(std::move(hid_g.bias));
  grads.push_back(std::move(out_g.weights));
  grads.push_back(std::move(out_g.bias));
  return grads;
}

void apply_batch_statistics(ModelState& state, const ForwardTrace& trace, double momentum) {
  for (std::size_t t = 0; t < state.towers.size(); ++t) {
    auto& layers = state.towers[t].layers;
    for (std::size_t l = 0; l < layers.size() && l < trace.towers[t].norms.size(); ++l) {
      nn::batchnorm_update_running(layers[l].norm, trace.towers[t].norms[l], momentum);
    }
  }
  state.round_to_storage();
}

void refresh_running_statistics(ModelState& state,
                                std::span<const encode::EncodedProtein> corpus,
                                std::size_t bin_size, std::size_t batch_capacity) {
  if (corpus.empty()) return;
  if (batch_capacity == 0) throw ValidationError("refresh_running_statistics: zero capacity");
  struct Moments {
    std::vector<double> sum, sum_sq;
    double count = 0.0;
  };
  std::vector<std::vector<Moments>> acc(state.towers.size());
  for (std::size_t t = 0; t < state.towers.size(); ++t) {
    acc[t].resize(state.towers[t].layers.size());
  }
  for (const auto& bin : train::make_bins(corpus, bin_size)) {
    for (std::size_t start = 0; start < bin.members.size(); start += batch_capacity) {
      const std::size_t end = std::min(bin.members.size(), start + batch_capacity);
      std::vector<const encode::EncodedProtein*> chunk;
      for (std::size_t i = start; i < end; ++i) chunk.push_back(&corpus[bin.members[i]]);
      ForwardTrace trace;
      forward(state, train::pad_batch(chunk), nn::Mode::train, 0, &trace);
      for (std::size_t t = 0; t < acc.size(); ++t) {
        for (std::size_t l = 0; l < acc[t].size(); ++l) {
          const auto& c = trace.towers[t].norms[l];
          auto& m = acc[t][l];
          const double n = static_cast<double>(c.count);
          m.sum.resize(c.mean.size(), 0.0);
          m.sum_sq.resize(c.mean.size(), 0.0);
          for (std::size_t ch = 0; ch < c.mean.size(); ++ch) {
            m.sum[ch] += n * c.mean[ch];
            m.sum_sq[ch] += n * (c.variance[ch] + c.mean[ch] * c.mean[ch]);
          }
          m.count += n;
        }
      }
    }
  }
  for (std::size_t t = 0; t < acc.size(); ++t) {
    for (std::size_t l = 0; l < acc[t].size(); ++l) {
      const auto& m = acc[t][l];
      auto& norm = state.towers[t].layers[l].norm;
      const double correction = m.count > 1.0 ? m.count / (m.count - 1.0) : 1.0;
      for (std::size_t ch = 0; ch < m.sum.size(); ++ch) {
        const double mean = m.sum[ch] / m.count;
        const double var = std::max(0.0, m.sum_sq[ch] / m.count - mean * mean);
        norm.running_mean[ch] = mean;
        // A constant channel has no spread; keep the variance representable and positive.
        norm.running_var[ch] = std::max(var * correction, 1e-12);
      }
    }
  }
  state.round_to_storage();
}

ProteinOutputs infer(const ModelState& state, std::span<const encode::EncodedProtein> proteins) {
  constexpr std::size_t kBinSize = 15;
  constexpr std::size_t kCapacity = 64;
  ProteinOutputs out;
  out.predictions.resize(proteins.size());
  out.features.resize(proteins.size());
  for (const auto& bin : train::make_bins(proteins, kBinSize)) {
    for (std::size_t start = 0; start < bin.members.size(); start += kCapacity) {
      const std::size_t end = std::min(bin.members.size(), start + kCapacity);
      std::vector<const encode::EncodedProtein*> members;
      for (std::size_t i = start; i < end; ++i) members.push_back(&proteins[bin.members[i]]);
      const ForwardOutput fo = forward(state, train::pad_batch(members), nn::Mode::infer);
      for (std::size_t i = start; i < end; ++i) {
        out.predictions[bin.members[i]] = fo.prediction(i - start);
        out.features[bin.members[i]] = fo.feature(i - start);
      }
    }
  }
  return out;
}

FoldPrediction predict(const ModelState& state, const encode::EncodedProtein& protein) {
  const encode::EncodedProtein* one[] = {&protein};
  return forward(state, train::pad_batch(one), nn::Mode::infer).prediction(0);
}

SFFeature extract_feature(const ModelState& state, const encode::EncodedProtein& protein) {
  const encode::EncodedProtein* one[] = {&protein};
  return forward(state, train::pad_batch(one), nn::Mode::infer).feature(0);
}

std::vector<TopKEntry> top_k(const FoldPrediction& prediction, std::size_t k) {
  if (k == 0) throw ValidationError("top-k: k must be at least 1");
  if (k > prediction.ranked_folds.size()) {
    throw ValidationError("top-k: k = " + std::to_string(k) + " exceeds " +
                          std::to_string(prediction.ranked_folds.size()) + " folds");
  }
  std::vector<TopKEntry> out;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t fold = prediction.ranked_folds[i];
    out.push_back({fold, prediction.probabilities[fold]});
  }
  return out;
}

std::vector<TopKEntry> predict_topk(const ModelState& state, const encode::EncodedProtein& protein,
                                    std::size_t k) {
  if (k == 0) throw ValidationError("top-k: k must be at least 1");
  return top_k(predict(state, protein), k);
}

}  // namespace foldnet::model
