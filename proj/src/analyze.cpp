#include "foldnet/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <unordered_set>

#include "foldnet/error.hpp"
#include "foldnet/simd.hpp"

namespace foldnet::analyze {

const char* metric_name(DistanceMetric metric) {
  switch (metric) {
    case DistanceMetric::euclid: return "euclid";
    case DistanceMetric::manh: return "manh";
    case DistanceMetric::corr: return "corr";
    case DistanceMetric::kl: return "kl";
  }
  return "unknown";
}

DistanceMetric parse_metric(std::string_view name) {
  for (auto m : {DistanceMetric::euclid, DistanceMetric::manh, DistanceMetric::corr,
                 DistanceMetric::kl}) {
    if (name == metric_name(m)) return m;
  }
  throw ValidationError("unknown metric '" + std::string(name) +
                        "' (expected euclid, manh, corr or kl)");
}

namespace {

Distance correlation_distance(std::span<const double> q, std::span<const double> t) {
  const std::size_t n = q.size();
  if (n == 0) return {std::log(2.0), true};
  // The covariance cancels heavily when r is near 0; extended accumulators keep the
  // distance accurate relative to its own (small) magnitude.
  using Wide = long double;
  Wide sq = 0, st = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sq += q[i];
    st += t[i];
  }
  const Wide mq = sq / static_cast<Wide>(n), mt = st / static_cast<Wide>(n);
  Wide cov = 0, vq = 0, vt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Wide dq = q[i] - mq, dt = t[i] - mt;
    cov += dq * dt;
    vq += dq * dq;
    vt += dt * dt;
  }
  if (vq == 0 || vt == 0) return {std::log(2.0), true};
  const double r = static_cast<double>(cov / std::sqrt(vq * vt));
  if (1.0 - r <= kCorrFloor) return {std::log(kCorrFloor), false};
  return {std::log1p(-r), false};
}

double kl_distance(std::span<const double> q, std::span<const double> t) {
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double a = q[i] + kKlSmoothing, b = t[i] + kKlSmoothing;
    const double log_ratio = std::log(a / b);
    sum += (a - b) * log_ratio;  // a ln(a/b) + b ln(b/a)
  }
  return sum;
}

}  // namespace

Distance measure(DistanceMetric metric, std::span<const double> q, std::span<const double> t) {
  if (q.size() != t.size()) {
    throw ShapeError("distance: feature lengths differ (" + std::to_string(q.size()) + " vs " +
                     std::to_string(t.size()) + ")");
  }
  const auto& k = simd::kernels();
  switch (metric) {
    case DistanceMetric::euclid:
      return {std::sqrt(k.squared_distance(q.size(), q.data(), t.data())), false};
    case DistanceMetric::manh:
      return {k.manhattan_distance(q.size(), q.data(), t.data()), false};
    case DistanceMetric::corr:
      return correlation_distance(q, t);
    case DistanceMetric::kl:
      return {kl_distance(q, t), false};
  }
  throw ValidationError("distance: unknown metric");
}

double distance(DistanceMetric metric, std::span<const double> q, std::span<const double> t) {
  return measure(metric, q, t).value;
}

namespace {

Tensor pairwise(DistanceMetric metric, std::span<const std::vector<double>> features,
                std::span<const std::size_t> pick, std::size_t* degenerate) {
  const std::size_t n = pick.size();
  Tensor d({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const Distance m = measure(metric, features[pick[i]], features[pick[j]]);
      if (m.degenerate && degenerate) ++*degenerate;
      d.at(i, j) = m.value;
      d.at(j, i) = m.value;
    }
  }
  return d;
}

}  // namespace

Tensor pairwise_distances(DistanceMetric metric, std::span<const std::vector<double>> features) {
  std::vector<std::size_t> all(features.size());
  std::iota(all.begin(), all.end(), 0);
  return pairwise(metric, features, all, nullptr);
}

std::vector<std::size_t> hierarchical_cluster(const Tensor& distances, std::size_t num_clusters) {
  if (distances.rank() != 2 || distances.dim(0) != distances.dim(1)) {
    throw ShapeError("hierarchical_cluster: distance matrix must be square, got " +
                     shape_string(distances.shape()));
  }
  const std::size_t n = distances.dim(0);
  if (n == 0) return {};
  if (num_clusters == 0 || num_clusters > n) {
    throw ValidationError("hierarchical_cluster: cannot form " + std::to_string(num_clusters) +
                          " clusters from " + std::to_string(n) + " items");
  }

  // Average linkage via the Lance-Williams update on a working copy.
  std::vector<double> link(distances.values().begin(), distances.values().end());
  std::vector<std::size_t> owner(n), size(n, 1);
  std::iota(owner.begin(), owner.end(), 0);
  std::vector<bool> active(n, true);
  for (std::size_t remaining = n; remaining > num_clusters; --remaining) {
    std::size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        const double v = link[i * n + j];
        if (!found || v < best) {
          best = v;
          bi = i;
          bj = j;
          found = true;
        }
      }
    }
    const double wi = static_cast<double>(size[bi]), wj = static_cast<double>(size[bj]);
    for (std::size_t m = 0; m < n; ++m) {
      if (!active[m] || m == bi || m == bj) continue;
      const double v = (wi * link[bi * n + m] + wj * link[bj * n + m]) / (wi + wj);
      link[bi * n + m] = v;
      link[m * n + bi] = v;
    }
    size[bi] += size[bj];
    active[bj] = false;
    for (std::size_t& o : owner) {
      if (o == bj) o = bi;
    }
  }

  std::map<std::size_t, std::size_t> relabel;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = relabel.emplace(owner[i], relabel.size());
    labels[i] = it->second;
  }
  return labels;
}

std::vector<std::size_t> max_weight_assignment(const std::vector<std::vector<double>>& weights) {
  const std::size_t rows = weights.size();
  std::size_t cols = 0;
  for (const auto& r : weights) cols = std::max(cols, r.size());
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return {};
  // Hungarian algorithm with potentials, minimizing the negated weights (1-based arrays).
  auto cost = [&](std::size_t i, std::size_t j) {
    if (i >= rows || j >= weights[i].size()) return 0.0;
    return -weights[i][j];
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> choice(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] != 0) choice[p[j] - 1] = j - 1;
  }
  choice.resize(rows);
  return choice;
}

double clustering_accuracy(std::span<const std::size_t> assignment,
                           std::span<const std::size_t> truth) {
  if (assignment.size() != truth.size()) {
    throw ValidationError("clustering_accuracy: " + std::to_string(assignment.size()) +
                          " assignments for " + std::to_string(truth.size()) + " items");
  }
  if (assignment.empty()) return 0.0;
  std::map<std::size_t, std::size_t> cluster_index, class_index;
  for (std::size_t c : assignment) cluster_index.emplace(c, cluster_index.size());
  for (std::size_t c : truth) class_index.emplace(c, class_index.size());
  std::vector<std::vector<double>> table(cluster_index.size(),
                                         std::vector<double>(class_index.size(), 0.0));
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    table[cluster_index[assignment[i]]][class_index[truth[i]]] += 1.0;
  }
  const auto choice = max_weight_assignment(table);
  double correct = 0.0;
  for (std::size_t r = 0; r < table.size(); ++r) {
    if (choice[r] < table[r].size()) correct += table[r][choice[r]];
  }
  return correct / static_cast<double>(assignment.size());
}

ClusteringResult clustering_protocol(std::span<const std::vector<double>> features,
                                     std::span<const std::size_t> folds, DistanceMetric metric,
                                     std::size_t trials, std::uint64_t seed,
                                     const ClusteringOptions& options) {
  if (features.size() != folds.size()) {
    throw ValidationError("clustering_protocol: " + std::to_string(features.size()) +
                          " features for " + std::to_string(folds.size()) + " fold labels");
  }
  if (options.folds_per_trial == 0) {
    throw ValidationError("clustering_protocol: folds_per_trial must be positive");
  }
  if (options.max_proteins < options.folds_per_trial * options.min_fold_size) {
    throw ValidationError("clustering_protocol: max_proteins too small for the fold sample");
  }
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < folds.size(); ++i) members[folds[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> eligible;
  for (const auto& [fold, list] : members) {
    if (list.size() >= options.min_fold_size) eligible.push_back(&list);
  }
  if (eligible.size() < options.folds_per_trial) {
    throw ValidationError("clustering_protocol: need " + std::to_string(options.folds_per_trial) +
                          " folds with at least " + std::to_string(options.min_fold_size) +
                          " proteins, found " + std::to_string(eligible.size()));
  }

  ClusteringResult result;
  result.per_trial.reserve(trials);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32)};
    std::mt19937_64 rng(seq);
    auto order = eligible;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(options.folds_per_trial);

    std::vector<std::size_t> picked, spare;
    for (const auto* list : order) {
      std::vector<std::size_t> shuffled = *list;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      picked.insert(picked.end(), shuffled.begin(), shuffled.begin() + options.min_fold_size);
      spare.insert(spare.end(), shuffled.begin() + options.min_fold_size, shuffled.end());
    }
    std::shuffle(spare.begin(), spare.end(), rng);
    const std::size_t extra = std::min(spare.size(), options.max_proteins - picked.size());
    picked.insert(picked.end(), spare.begin(), spare.begin() + extra);
    std::sort(picked.begin(), picked.end());

    const Tensor d = pairwise(metric, features, picked, &result.degenerate_distances);
    const auto labels = hierarchical_cluster(d, options.folds_per_trial);
    std::vector<std::size_t> truth(picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) truth[i] = folds[picked[i]];
    result.per_trial.push_back(clustering_accuracy(labels, truth));
  }
  if (!result.per_trial.empty()) {
    result.mean = std::accumulate(result.per_trial.begin(), result.per_trial.end(), 0.0) /
                  static_cast<double>(result.per_trial.size());
  }
  return result;
}

ClusteringResult clustering_protocol(const TemplateDB& db, DistanceMetric metric,
                                     std::size_t trials, std::uint64_t seed,
                                     const ClusteringOptions& options) {
  std::vector<std::vector<double>> features;
  std::vector<std::size_t> folds;
  features.reserve(db.size());
  folds.reserve(db.size());
  for (const auto& r : db.records()) {
    features.push_back(r.feature);
    folds.push_back(r.fold);
  }
  return clustering_protocol(features, folds, metric, trials, seed, options);
}

RankResult rank_templates(const model::FoldPrediction& prediction,
                          const model::SFFeature& feature, const TemplateDB& db,
                          std::size_t top_folds, std::size_t top_templates) {
  if (db.empty()) throw ValidationError("rank_templates: template database is empty");
  RankResult result;
  const std::size_t nf = std::min(top_folds, prediction.ranked_folds.size());
  result.predicted_folds.assign(prediction.ranked_folds.begin(),
                                prediction.ranked_folds.begin() + nf);
  const std::unordered_set<std::size_t> wanted(result.predicted_folds.begin(),
                                               result.predicted_folds.end());
  for (const auto& r : db.records()) {
    if (!wanted.contains(r.fold)) continue;
    result.templates.push_back({r.id, r.fold, distance(DistanceMetric::kl, feature.values, r.feature)});
  }
  if (result.templates.empty()) {
    result.status = RankStatus::empty_pool;
    return result;
  }
  std::stable_sort(result.templates.begin(), result.templates.end(),
                   [](const RankedTemplate& a, const RankedTemplate& b) {
                     if (a.score != b.score) return a.score < b.score;
                     if (a.id != b.id) return a.id < b.id;
                     return a.fold < b.fold;
                   });
  if (result.templates.size() > top_templates) result.templates.resize(top_templates);
  return result;
}

RankResult rank_templates(const model::ModelState& state, const encode::EncodedProtein& target,
                          const TemplateDB& db, std::size_t top_folds,
                          std::size_t top_templates) {
  const encode::EncodedProtein one[] = {target};
  auto out = model::infer(state, one);
  return rank_templates(out.predictions.front(), out.features.front(), db, top_folds,
                        top_templates);
}

}  // namespace foldnet::analyze
