#include <doctest.h>

#include <cmath>
#include <random>

#include "foldnet/error.hpp"
#include "foldnet/gradcheck.hpp"
#include "foldnet/model.hpp"
#include "foldnet/simd.hpp"
#include "foldnet/train.hpp"
#include "support.hpp"

using namespace foldnet;
using foldnet::testing::tiny_config;

TEST_CASE("model shapes follow the configuration") {
  const auto cfg = tiny_config(4);
  const auto state = model::build_model(cfg, 1);
  REQUIRE(state.towers.size() == 2);
  CHECK(state.towers[1].window == 4);
  CHECK(state.towers[0].layers.size() == 2);
  CHECK(state.towers[0].layers[0].kernel.shape() == Tensor::Shape{4, encode::kFeatureWidth, 3});
  CHECK(state.towers[0].layers[1].kernel.shape() == Tensor::Shape{4, 4, 3});
  CHECK(state.hidden_weights.shape() == Tensor::Shape{cfg.flatten_width(), 12});
  CHECK(state.output_weights.shape() == Tensor::Shape{12, 4});
  CHECK(state.trainable().size() == 2 * 2 * 4 + 4);
  CHECK(state.all_tensors().size() == 2 * 2 * 6 + 4);
  CHECK_NOTHROW(state.validate());
  CHECK(model::build_model(cfg, 1).hidden_weights == state.hidden_weights);
  CHECK_FALSE(model::build_model(cfg, 2).hidden_weights == state.hidden_weights);
}

TEST_CASE("model config JSON is canonical and validated") {
  const auto cfg = tiny_config(7);
  const auto text = cfg.to_json();
  CHECK(text.find(' ') == std::string::npos);
  CHECK(model::ModelConfig::from_json(text) == cfg);
  auto bad = cfg;
  bad.window_sizes.clear();
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("probabilities sum to one and folds are ranked") {
  const auto corpus = foldnet::testing::small_corpus(4, 3).proteins;
  const auto state = model::build_model(tiny_config(4), 3);
  const auto out = model::infer(state, corpus);
  REQUIRE(out.predictions.size() == corpus.size());
  for (const auto& p : out.predictions) {
    double s = 0.0;
    for (double v : p.probabilities) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 1; i < p.ranked_folds.size(); ++i) {
      CHECK(p.probabilities[p.ranked_folds[i - 1]] >= p.probabilities[p.ranked_folds[i]]);
    }
  }
  for (const auto& f : out.features) {
    CHECK(f.values.size() == 12);
    for (double v : f.values) CHECK(v >= 0.0);
  }
  const auto top = model::top_k(out.predictions[0], 2);
  CHECK(top.size() == 2);
  CHECK(top[0].fold == out.predictions[0].ranked_folds[0]);
  CHECK(model::rank_folds(std::vector<double>{0.2, 0.5, 0.2, 0.1}) ==
        std::vector<std::size_t>{1, 0, 2, 3});
}

TEST_CASE("infer results do not depend on batch composition or padding") {
  const auto corpus = foldnet::testing::small_corpus(4, 4).proteins;
  auto state = model::build_model(tiny_config(4), 4);
  model::refresh_running_statistics(state, corpus);
  const auto all = model::infer(state, corpus);
  for (std::size_t i = 0; i < corpus.size(); i += 5) {
    const auto single = model::predict(state, corpus[i]);
    for (std::size_t f = 0; f < 4; ++f) {
      CHECK(single.probabilities[f] == doctest::Approx(all.predictions[i].probabilities[f]).epsilon(1e-12));
    }
    std::vector<const encode::EncodedProtein*> one{&corpus[i]};
    for (std::size_t extra : {0u, 13u, 90u}) {
      const auto batch = train::pad_batch(one, corpus[i].length() + extra);
      const auto out = model::forward(state, batch, nn::Mode::infer);
      for (std::size_t f = 0; f < 4; ++f) {
        CHECK(std::fabs(out.probabilities.at(0, f) - single.probabilities[f]) < 1e-12);
      }
    }
  }
}

TEST_CASE("every SIMD backend gives the same predictions") {
  const auto corpus = foldnet::testing::small_corpus(3, 3).proteins;
  const auto state = model::build_model(tiny_config(3), 5);
  const auto before = simd::kernels().backend;
  simd::set_backend(simd::Backend::scalar);
  const auto ref = model::infer(state, corpus);
  for (simd::Backend b : simd::available_backends()) {
    simd::set_backend(b);
    const auto got = model::infer(state, corpus);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      for (std::size_t f = 0; f < 3; ++f) {
        CHECK(got.predictions[i].probabilities[f] ==
              doctest::Approx(ref.predictions[i].probabilities[f]).epsilon(1e-10));
      }
    }
  }
  simd::set_backend(before);
}

TEST_CASE("whole-model backward agrees with finite differences") {
  const auto corpus = foldnet::testing::small_corpus(3, 2, 9).proteins;
  auto cfg = tiny_config(3);
  cfg.hidden_units = 6;
  auto state = model::build_model(cfg, 6);
  const auto batch = train::pad_batch(corpus);

  nn::GradientProbe probe;
  const auto params = state.trainable();
  for (std::size_t i = 0; i < params.size(); ++i) {
    probe.variables.push_back(params[i]);
    probe.names.push_back("param" + std::to_string(i));
  }
  probe.objective = [&] {
    const auto out = model::forward(state, batch, nn::Mode::train, 17);
    return nn::softmax_cross_entropy(out.logits, batch.labels).loss;
  };
  probe.analytic = [&] {
    model::ForwardTrace trace;
    const auto out = model::forward(state, batch, nn::Mode::train, 17, &trace);
    const auto ce = nn::softmax_cross_entropy(out.logits, batch.labels);
    return model::backward(state, trace, nn::softmax_cross_entropy_backward(ce.probabilities, batch.labels));
  };
  const auto report = nn::finite_difference_check(probe);
  CAPTURE(report.worst);
  CHECK(report.within(1e-4));
}

TEST_CASE("checkpoints round-trip byte for byte") {
  foldnet::testing::ScratchDir dir("ckpt");
  const auto corpus = foldnet::testing::small_corpus(4, 2).proteins;
  auto state = model::build_model(tiny_config(4), 8);
  model::refresh_running_statistics(state, corpus);
  model::save_checkpoint(state, dir / "a.dsf");
  const auto loaded = model::load_checkpoint(dir / "a.dsf");
  CHECK(loaded.config == state.config);
  CHECK(model::serialize_checkpoint(loaded) == model::serialize_checkpoint(state));

  const auto before = model::infer(state, corpus);
  const auto after = model::infer(loaded, corpus);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (std::size_t f = 0; f < 4; ++f) {
      CHECK(std::fabs(after.predictions[i].probabilities[f] - before.predictions[i].probabilities[f]) < 1e-6);
    }
  }

  auto bytes = model::serialize_checkpoint(state);
  CHECK_THROWS_AS(model::deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(model::deserialize_checkpoint(bytes + "x"), FormatError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(model::deserialize_checkpoint(bytes), FormatError);
  CHECK_THROWS_AS(model::load_checkpoint(dir / "missing.dsf"), ValidationError);
}

TEST_CASE("running statistics refresh matches pooled train-mode moments") {
  const auto corpus = foldnet::testing::small_corpus(2, 3).proteins;
  auto cfg = tiny_config(2);
  cfg.conv_depth = 1;
  auto state = model::build_model(cfg, 10);
  model::refresh_running_statistics(state, corpus, 1000, 1000);
  // One batch holds everything, so the first layer's statistics are the plain moments.
  const auto batch = train::pad_batch(corpus);
  const auto& layer = state.towers[0].layers[0];
  const auto y = nn::conv1d_forward(batch.features, layer, batch.mask);
  for (std::size_t c = 0; c < layer.out_channels(); ++c) {
    double sum = 0.0, sq = 0.0;
    const double n = static_cast<double>(batch.mask.valid_count());
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (std::size_t t = 0; t < batch.mask.length(b); ++t) sum += y.at(b, c, t);
    const double mean = sum / n;
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (std::size_t t = 0; t < batch.mask.length(b); ++t) sq += (y.at(b, c, t) - mean) * (y.at(b, c, t) - mean);
    // Stored at float32 resolution.
    CHECK(layer.norm.running_mean[c] == doctest::Approx(mean).epsilon(1e-7));
    CHECK(layer.norm.running_var[c] == doctest::Approx(sq / (n - 1)).epsilon(1e-7));
  }
}

TEST_CASE("trained parameters survive a checkpoint exactly") {
  foldnet::testing::ScratchDir dir("exact");
  const auto corpus = foldnet::testing::small_corpus(3, 3, 12).proteins;
  auto state = model::build_model(tiny_config(3), 13);
  const auto batch = train::pad_batch(corpus);
  train::TrainSchedule schedule;
  auto optimizer = train::make_optimizer(state, schedule);
  for (std::uint64_t step = 0; step < 3; ++step) train::train_step(state, batch, optimizer, step);
  model::refresh_running_statistics(state, corpus);

  for (const Tensor* t : state.all_tensors()) {
    for (double v : t->values()) REQUIRE(static_cast<double>(static_cast<float>(v)) == v);
  }
  model::save_checkpoint(state, dir / "m.dsf");
  const auto loaded = model::load_checkpoint(dir / "m.dsf");
  const auto before = model::infer(state, corpus);
  const auto after = model::infer(loaded, corpus);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(after.predictions[i].probabilities == before.predictions[i].probabilities);
    CHECK(after.features[i].values == before.features[i].values);
  }
}
