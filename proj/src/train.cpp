#include "foldnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "foldnet/error.hpp"
#include "foldnet/simd.hpp"

namespace foldnet::train {

void TrainSchedule::validate() const {
  if (bin_size == 0 || epochs_per_bin_visit == 0 || batch_capacity == 0) {
    throw ValidationError("train schedule: bin size, inner epochs and capacity must be positive");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train schedule: learning rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ValidationError("train schedule: momentum must lie in [0, 1)");
  }
}

// ---------------------------------------------------------------------------------------
// Optimizer

SgdOptimizer::SgdOptimizer(const model::ModelState& state, double learning_rate, double momentum)
    : learning_rate_(learning_rate), momentum_(momentum) {
  for (const Tensor* t : state.trainable()) velocity_.push_back(Tensor::zeros_like(*t));
}

void SgdOptimizer::step(model::ModelState& state, const std::vector<Tensor>& grads) {
  auto params = state.trainable();
  if (grads.size() != params.size() || velocity_.size() != params.size()) {
    throw ShapeError("optimizer: gradient count does not match parameters");
  }
  const auto& k = simd::kernels();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& v = velocity_[i];
    if (grads[i].size() != v.size()) throw ShapeError("optimizer: gradient shape mismatch");
    for (double& x : v.values()) x *= momentum_;
    k.axpy(v.size(), -learning_rate_, grads[i].data(), v.data());
    k.axpy(v.size(), 1.0, v.data(), params[i]->data());
    for (double& x : params[i]->values()) x = static_cast<double>(static_cast<float>(x));
  }
}

SgdOptimizer make_optimizer(const model::ModelState& state, const TrainSchedule& schedule) {
  return SgdOptimizer(state, schedule.learning_rate,
                      schedule.optimizer == Optimizer::sgd_momentum ? schedule.momentum : 0.0);
}

double train_step(model::ModelState& state, const PaddedBatch& batch, SgdOptimizer& optimizer,
                  std::uint64_t dropout_seed) {
  if (batch.labels.size() != batch.size()) throw ValidationError("train_step: unlabeled batch");
  model::ForwardTrace trace;
  const model::ForwardOutput out =
      model::forward(state, batch, nn::Mode::train, dropout_seed, &trace);
  const nn::SoftmaxCrossEntropy sce = nn::softmax_cross_entropy(out.logits, batch.labels);
  if (!std::isfinite(sce.loss)) return sce.loss;
  const Tensor grad = nn::softmax_cross_entropy_backward(sce.probabilities, batch.labels);
  const std::vector<Tensor> grads = model::backward(state, trace, grad);
  model::apply_batch_statistics(state, trace);
  optimizer.step(state, grads);
  return sce.loss;
}

double batch_loss(const model::ModelState& state, const PaddedBatch& batch) {
  const model::ForwardOutput out = model::forward(state, batch, nn::Mode::infer);
  return nn::softmax_cross_entropy(out.logits, batch.labels).loss;
}

// ---------------------------------------------------------------------------------------
// Log

double TopKAccuracy::at(std::size_t k) const {
  auto it = by_k.find(k);
  if (it == by_k.end()) throw ValidationError("no accuracy recorded for k = " + std::to_string(k));
  return it->second;
}

namespace {

nlohmann::json accuracy_json(const TopKAccuracy& acc) {
  nlohmann::json j;
  for (const auto& [k, v] : acc.by_k) j["top" + std::to_string(k)] = v;
  j["count"] = acc.count;
  return j;
}

}  // namespace

std::string TrainingLog::to_jsonl() const {
  std::ostringstream out;
  std::size_t b = 0;
  for (const auto& pass : passes) {
    for (; b < bins.size() && bins[b].pass == pass.pass; ++b) {
      nlohmann::json j{{"type", "bin"},
                       {"pass", bins[b].pass},
                       {"bin", bins[b].bin},
                       {"batches", bins[b].batches},
                       {"loss", bins[b].loss}};
      out << j.dump() << '\n';
    }
    nlohmann::json j{{"type", "pass"}, {"pass", pass.pass}, {"loss", pass.loss}};
    if (pass.validation) j["validation"] = accuracy_json(*pass.validation);
    if (pass.training) j["training"] = accuracy_json(*pass.training);
    out << j.dump() << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------------------
// Training loop

TrainResult train(model::ModelState state, std::span<const encode::EncodedProtein> corpus,
                  const TrainSchedule& schedule,
                  std::span<const encode::EncodedProtein> validation,
                  const PassCallback& on_pass) {
  schedule.validate();
  for (const auto& p : corpus) {
    if (!p.label) throw ValidationError("train: '" + p.id + "' has no fold label");
    if (*p.label >= state.config.num_folds) {
      throw ValidationError("train: '" + p.id + "' label " + std::to_string(*p.label) +
                            " is not below num_folds " + std::to_string(state.config.num_folds));
    }
  }

  TrainResult result{state, state, {}, std::nullopt};
  if (schedule.total_epochs == 0 || corpus.empty()) return result;

  std::mt19937_64 rng(schedule.seed);
  SgdOptimizer optimizer = make_optimizer(state, schedule);
  const std::vector<LengthBin> bins = make_bins(corpus, schedule.bin_size);
  const std::vector<std::size_t> ks{1, 5, 10};
  double best_top1 = -1.0;
  std::size_t batch_id = 0;

  std::vector<std::size_t> bin_order(bins.size());
  std::iota(bin_order.begin(), bin_order.end(), std::size_t{0});
  for (std::size_t pass = 0; pass < schedule.total_epochs; ++pass) {
    std::shuffle(bin_order.begin(), bin_order.end(), rng);
    double pass_loss = 0.0;
    std::size_t pass_batches = 0;
    for (std::size_t bi : bin_order) {
      const LengthBin& bin = bins[bi];
      std::vector<std::size_t> members = bin.members;
      double bin_loss = 0.0;
      std::size_t bin_batches = 0;
      for (std::size_t epoch = 0; epoch < schedule.epochs_per_bin_visit; ++epoch) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t start = 0; start < members.size(); start += schedule.batch_capacity) {
          const std::size_t end = std::min(members.size(), start + schedule.batch_capacity);
          std::vector<const encode::EncodedProtein*> chunk;
          for (std::size_t i = start; i < end; ++i) chunk.push_back(&corpus[members[i]]);
          const double loss = train_step(state, pad_batch(chunk), optimizer, rng());
          if (!std::isfinite(loss)) {
            throw TrainingError(batch_id, "train: non-finite loss in batch " +
                                              std::to_string(batch_id) + " (pass " +
                                              std::to_string(pass) + ", bin " +
                                              std::to_string(bin.bin_index) + ")");
          }
          bin_loss += loss;
          ++bin_batches;
          ++batch_id;
        }
      }
      result.log.bins.push_back({pass, bin.bin_index, bin_batches, bin_loss / bin_batches});
      pass_loss += bin_loss;
      pass_batches += bin_batches;
    }

    if (schedule.refresh_norm_statistics) {
      model::refresh_running_statistics(state, corpus, schedule.bin_size,
                                        schedule.batch_capacity);
    }
    PassRecord rec;
    rec.pass = pass;
    rec.loss = pass_loss / static_cast<double>(pass_batches);
    if (!validation.empty()) rec.validation = evaluate_topk(state, validation, ks);
    if (schedule.track_training_accuracy) rec.training = evaluate_topk(state, corpus, ks);
    if (rec.validation && rec.validation->at(1) > best_top1) {
      best_top1 = rec.validation->at(1);
      result.best = state;
      result.best_pass = pass;
    }
    result.log.passes.push_back(rec);
    if (on_pass) on_pass(rec);
  }
  result.final_state = state;
  if (validation.empty()) result.best = std::move(state);
  return result;
}

// ---------------------------------------------------------------------------------------
// Evaluation

TopKAccuracy topk_from_predictions(std::span<const model::FoldPrediction> predictions,
                                   std::span<const encode::EncodedProtein> corpus,
                                   const std::vector<std::size_t>& ks) {
  if (predictions.size() != corpus.size()) {
    throw ValidationError("evaluate: prediction count does not match corpus");
  }
  TopKAccuracy acc;
  acc.count = corpus.size();
  for (std::size_t k : ks) {
    if (k == 0) throw ValidationError("evaluate: k must be at least 1");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (!corpus[i].label) throw ValidationError("evaluate: '" + corpus[i].id + "' is unlabeled");
      const auto& ranked = predictions[i].ranked_folds;
      const std::size_t kk = std::min(k, ranked.size());
      if (std::find(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(kk),
                    *corpus[i].label) != ranked.begin() + static_cast<std::ptrdiff_t>(kk)) {
        ++hits;
      }
    }
    acc.by_k[k] = corpus.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(corpus.size());
  }
  return acc;
}

TopKAccuracy evaluate_topk(const model::ModelState& state,
                           std::span<const encode::EncodedProtein> corpus,
                           const std::vector<std::size_t>& ks) {
  const auto outputs = model::infer(state, corpus);
  return topk_from_predictions(outputs.predictions, corpus, ks);
}

FoldSizeClass classify_fold_size(std::size_t n) {
  if (n <= 5) return FoldSizeClass::small;
  if (n <= 50) return FoldSizeClass::medium;
  return FoldSizeClass::large;
}

const char* fold_size_name(FoldSizeClass c) {
  switch (c) {
    case FoldSizeClass::small:
      return "small";
    case FoldSizeClass::medium:
      return "medium";
    case FoldSizeClass::large:
      return "large";
  }
  return "unknown";
}

std::map<std::size_t, std::size_t> count_fold_sizes(std::span<const encode::EncodedProtein> corpus) {
  std::map<std::size_t, std::size_t> sizes;
  for (const auto& p : corpus) {
    if (p.label) ++sizes[*p.label];
  }
  return sizes;
}

std::map<FoldSizeClass, TopKAccuracy> group_evaluate(
    const model::ModelState& state, std::span<const encode::EncodedProtein> corpus,
    const std::map<std::size_t, std::size_t>& fold_sizes, const std::vector<std::size_t>& ks) {
  std::map<FoldSizeClass, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].label) throw ValidationError("group_evaluate: '" + corpus[i].id + "' is unlabeled");
    auto it = fold_sizes.find(*corpus[i].label);
    if (it == fold_sizes.end()) {
      throw ValidationError("group_evaluate: fold " + std::to_string(*corpus[i].label) +
                            " missing from fold sizes");
    }
    members[classify_fold_size(it->second)].push_back(i);
  }
  const auto outputs = model::infer(state, corpus);
  std::map<FoldSizeClass, TopKAccuracy> out;
  for (const auto& [cls, idx] : members) {
    std::vector<encode::EncodedProtein> sub;
    std::vector<model::FoldPrediction> preds;
    for (std::size_t i : idx) {
      sub.push_back(corpus[i]);
      preds.push_back(outputs.predictions[i]);
    }
    out[cls] = topk_from_predictions(preds, sub, ks);
  }
  return out;
}

CorpusSplit split_per_fold(std::span<const encode::EncodedProtein> corpus, double train_fraction,
                           std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ValidationError("split: train fraction must lie in (0, 1]");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_fold;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].label) throw ValidationError("split: '" + corpus[i].id + "' is unlabeled");
    by_fold[*corpus[i].label].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<bool> to_train(corpus.size(), false);
  for (auto& [_, idx] : by_fold) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(idx.size()))));
    for (std::size_t i = 0; i < std::min(n_train, idx.size()); ++i) to_train[idx[i]] = true;
  }
  CorpusSplit split;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    (to_train[i] ? split.train : split.validation).push_back(corpus[i]);
  }
  return split;
}

}  // namespace foldnet::train
