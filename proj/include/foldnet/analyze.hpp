#pragma once

// Distances between fold-feature embeddings, agglomerative clustering with a
// repeated-sampling accuracy protocol, and template ranking.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "foldnet/model.hpp"
#include "foldnet/template_db.hpp"
#include "foldnet/tensor.hpp"

namespace foldnet::analyze {

enum class DistanceMetric { euclid, manh, corr, kl };

const char* metric_name(DistanceMetric metric);
// Accepts euclid, manh, corr, kl. Throws ValidationError otherwise.
DistanceMetric parse_metric(std::string_view name);

inline constexpr double kKlSmoothing = 1e-10;
inline constexpr double kCorrFloor = 1e-12;

struct Distance {
  double value = 0.0;
  // Correlation distance with a zero-variance operand: reported as ln 2.
  bool degenerate = false;
};

// euclid: sqrt(sum (q-t)^2); manh: sum |q-t|;
// corr: ln(clamp(1 - pearson(q, t), 1e-12, 2));
// kl: sum q' ln(q'/t') + t' ln(t'/q') with q' = q + 1e-10, t' = t + 1e-10.
// Smaller is more similar for all four. Throws ShapeError on a length mismatch.
Distance measure(DistanceMetric metric, std::span<const double> q, std::span<const double> t);
double distance(DistanceMetric metric, std::span<const double> q, std::span<const double> t);

// Symmetric [n, n] matrix of distance() over every pair; the diagonal is computed too.
Tensor pairwise_distances(DistanceMetric metric, std::span<const std::vector<double>> features);

// Average-linkage agglomeration until `num_clusters` remain. Among equally close pairs
// the one with the smallest (i, j) cluster indices merges first; a merged cluster keeps
// the smaller index. Labels are 0..num_clusters-1 in order of first appearance.
std::vector<std::size_t> hierarchical_cluster(const Tensor& distances, std::size_t num_clusters);

// Maximum-weight one-to-one assignment of rows to columns on a (padded) square matrix.
// Returns the chosen column for every row.
std::vector<std::size_t> max_weight_assignment(const std::vector<std::vector<double>>& weights);

// Fraction of items placed correctly under the best one-to-one cluster-to-class matching.
// Unequal cluster and class counts are padded with empty classes.
double clustering_accuracy(std::span<const std::size_t> assignment,
                           std::span<const std::size_t> truth);

struct ClusteringOptions {
  std::size_t folds_per_trial = 5;
  std::size_t max_proteins = 100;
  std::size_t min_fold_size = 2;
};

struct ClusteringResult {
  std::vector<double> per_trial;
  double mean = 0.0;
  std::size_t degenerate_distances = 0;  // zero-variance correlation cases seen
};

// Each trial samples `folds_per_trial` folds having at least `min_fold_size` members and
// up to `max_proteins` of their proteins (every sampled fold keeps at least
// `min_fold_size`), clusters them into `folds_per_trial` groups and scores the result.
// Trial t draws from its own stream seeded by (seed, t). Throws ValidationError when
// too few folds qualify.
ClusteringResult clustering_protocol(std::span<const std::vector<double>> features,
                                     std::span<const std::size_t> folds, DistanceMetric metric,
                                     std::size_t trials, std::uint64_t seed,
                                     const ClusteringOptions& options = {});
ClusteringResult clustering_protocol(const TemplateDB& db, DistanceMetric metric,
                                     std::size_t trials, std::uint64_t seed,
                                     const ClusteringOptions& options = {});

struct RankedTemplate {
  std::string id;
  std::size_t fold = 0;
  double score = 0.0;  // KL distance to the target feature
};

enum class RankStatus { ok, empty_pool };

struct RankResult {
  RankStatus status = RankStatus::ok;
  std::vector<std::size_t> predicted_folds;  // the target's top folds, most probable first
  std::vector<RankedTemplate> templates;     // ascending score, ties by id
};

// Templates from the target's `top_folds` most probable folds, ranked by KL distance.
// An empty pool is reported through `status`, not an exception.
RankResult rank_templates(const model::FoldPrediction& prediction,
                          const model::SFFeature& feature, const TemplateDB& db,
                          std::size_t top_folds = 5, std::size_t top_templates = 10);
RankResult rank_templates(const model::ModelState& state, const encode::EncodedProtein& target,
                          const TemplateDB& db, std::size_t top_folds = 5,
                          std::size_t top_templates = 10);

}  // namespace foldnet::analyze
