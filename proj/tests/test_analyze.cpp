#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "foldnet/analyze.hpp"
#include "foldnet/error.hpp"
#include "support.hpp"

using namespace foldnet;
using namespace foldnet::analyze;

namespace {

std::vector<double> random_feature(std::size_t n, std::mt19937_64& rng, bool sparse = false) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::bernoulli_distribution zero(0.4);
  std::vector<double> v(n);
  for (double& x : v) x = sparse && zero(rng) ? 0.0 : u(rng);
  return v;
}

// Average linkage recomputed from the original matrix at every step.
std::vector<std::size_t> naive_average_linkage(const Tensor& d, std::size_t k) {
  const std::size_t n = d.dim(0);
  std::vector<std::vector<std::size_t>> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
  std::vector<bool> alive(n, true);
  for (std::size_t left = n; left > k; --left) {
    double best = INFINITY;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!alive[j]) continue;
        double s = 0.0;
        for (auto a : clusters[i])
          for (auto b : clusters[j]) s += d.at(a, b);
        s /= static_cast<double>(clusters[i].size() * clusters[j].size());
        if (s < best - 1e-12) {
          best = s;
          bi = i;
          bj = j;
        }
      }
    }
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    alive[bj] = false;
  }
  std::vector<std::size_t> owner(n);
  for (std::size_t c = 0; c < n; ++c)
    if (alive[c])
      for (auto m : clusters[c]) owner[m] = c;
  std::vector<std::size_t> labels(n);
  std::vector<std::ptrdiff_t> relabel(n, -1);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (relabel[owner[i]] < 0) relabel[owner[i]] = static_cast<std::ptrdiff_t>(next++);
    labels[i] = static_cast<std::size_t>(relabel[owner[i]]);
  }
  return labels;
}

double brute_force_accuracy(const std::vector<std::size_t>& assign, const std::vector<std::size_t>& truth) {
  const std::size_t k = std::max(*std::max_element(assign.begin(), assign.end()),
                                 *std::max_element(truth.begin(), truth.end())) + 1;
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < assign.size(); ++i) hits += perm[assign[i]] == truth[i];
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(assign.size());
}

}  // namespace

TEST_CASE("hand-computed distances") {
  const std::vector<double> a{0, 3}, b{4, 0};
  CHECK(distance(DistanceMetric::euclid, a, b) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(distance(DistanceMetric::manh, a, b) == doctest::Approx(7.0).epsilon(1e-12));
  const std::vector<double> p{2, 1}, q{1, 2};
  CHECK(std::fabs(distance(DistanceMetric::kl, p, q) - 2.0 * std::log(2.0)) < 1e-9);
  CHECK(distance(DistanceMetric::kl, p, p) == 0.0);
  const std::vector<double> r{1, 2, 3}, s{2, 4, 6};
  CHECK(distance(DistanceMetric::corr, r, s) == doctest::Approx(std::log(1e-12)));
  const std::vector<double> flat{1, 1, 1};
  const auto d = measure(DistanceMetric::corr, r, flat);
  CHECK(d.degenerate);
  CHECK(d.value == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(distance(DistanceMetric::euclid, r, a), ShapeError);
}

TEST_CASE("metric names parse") {
  for (auto m : {DistanceMetric::euclid, DistanceMetric::manh, DistanceMetric::corr, DistanceMetric::kl}) {
    CHECK(parse_metric(metric_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_metric("cosine"), ValidationError);
}

TEST_CASE("distances agree with naive formulas on random pairs") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto q = random_feature(37, rng, trial % 2 == 0);
    const auto t = random_feature(37, rng, trial % 3 == 0);
    double eu = 0, ma = 0, kl = 0;
    long double mq = 0, mt = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      eu += (q[i] - t[i]) * (q[i] - t[i]);
      ma += std::fabs(q[i] - t[i]);
      const double a = q[i] + 1e-10, b = t[i] + 1e-10;
      kl += a * std::log(a / b) + b * std::log(b / a);
      mq += q[i];
      mt += t[i];
    }
    mq /= q.size();
    mt /= t.size();
    long double sqq = 0, stt = 0, sqt = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      sqq += (q[i] - mq) * (q[i] - mq);
      stt += (t[i] - mt) * (t[i] - mt);
      sqt += (q[i] - mq) * (t[i] - mt);
    }
    const double corr = static_cast<double>(std::log1pl(-sqt / std::sqrt(sqq * stt)));
    CHECK(distance(DistanceMetric::euclid, q, t) == doctest::Approx(std::sqrt(eu)).epsilon(1e-12));
    CHECK(distance(DistanceMetric::manh, q, t) == doctest::Approx(ma).epsilon(1e-12));
    CHECK(distance(DistanceMetric::kl, q, t) == doctest::Approx(kl).epsilon(1e-12));
    CHECK(distance(DistanceMetric::corr, q, t) == doctest::Approx(corr).epsilon(1e-12));
  }
}

TEST_CASE("pairwise distance matrices are symmetric") {
  std::mt19937_64 rng(22);
  std::vector<std::vector<double>> f;
  for (int i = 0; i < 6; ++i) f.push_back(random_feature(8, rng));
  const auto d = pairwise_distances(DistanceMetric::kl, f);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(d.at(i, i) == 0.0);
    for (std::size_t j = 0; j < 6; ++j) CHECK(d.at(i, j) == d.at(j, i));
  }
}

TEST_CASE("average linkage matches a from-scratch recomputation") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + trial % 12;
    std::vector<std::vector<double>> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back(random_feature(3, rng));
    const auto d = pairwise_distances(DistanceMetric::euclid, pts);
    for (std::size_t k : {std::size_t{1}, std::size_t{2}, n / 2 + 1, n}) {
      CHECK(hierarchical_cluster(d, k) == naive_average_linkage(d, k));
    }
  }
}

TEST_CASE("clustering separates obvious groups and rejects bad k") {
  Tensor d({4, 4}, std::vector<double>{0, 1, 9, 9, 1, 0, 9, 9, 9, 9, 0, 1, 9, 9, 1, 0});
  CHECK(hierarchical_cluster(d, 2) == std::vector<std::size_t>{0, 0, 1, 1});
  // Ties merge the lowest index pair first.
  Tensor flat({3, 3}, std::vector<double>{0, 1, 1, 1, 0, 1, 1, 1, 0});
  CHECK(hierarchical_cluster(flat, 2) == std::vector<std::size_t>{0, 0, 1});
  CHECK_THROWS_AS(hierarchical_cluster(d, 0), ValidationError);
  CHECK_THROWS_AS(hierarchical_cluster(d, 5), ValidationError);
}

TEST_CASE("assignment and accuracy agree with brute-force matching") {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + trial % 5, cols = 1 + (trial / 5) % 5;
    std::vector<std::vector<double>> w(rows, std::vector<double>(cols));
    for (auto& r : w)
      for (double& x : r) x = std::floor(u(rng));
    const auto pick = max_weight_assignment(w);
    REQUIRE(pick.size() == rows);
    double got = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
      if (pick[i] < cols) got += w[i][pick[i]];
    const std::size_t n = std::max(rows, cols);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 0.0;
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < rows; ++i)
        if (perm[i] < cols) s += w[i][perm[i]];
      best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == doctest::Approx(best));
  }
  std::uniform_int_distribution<std::size_t> lab(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> a(12), t(12);
    for (auto& x : a) x = lab(rng) % (1 + trial % 5);
    for (auto& x : t) x = lab(rng);
    CHECK(clustering_accuracy(a, t) == doctest::Approx(brute_force_accuracy(a, t)));
  }
}

TEST_CASE("clustering protocol is seeded and validates its input") {
  std::mt19937_64 rng(25);
  std::vector<std::vector<double>> f;
  std::vector<std::size_t> folds;
  for (std::size_t fold = 0; fold < 8; ++fold) {
    for (int i = 0; i < 6; ++i) {
      auto v = random_feature(5, rng);
      v[fold % 5] += 20.0 * static_cast<double>(1 + fold / 5);
      f.push_back(v);
      folds.push_back(fold);
    }
  }
  const auto a = clustering_protocol(f, folds, DistanceMetric::euclid, 20, 3);
  const auto b = clustering_protocol(f, folds, DistanceMetric::euclid, 20, 3);
  CHECK(a.per_trial == b.per_trial);
  CHECK(a.per_trial.size() == 20);
  CHECK(a.mean > 0.9);
  const auto first10 = clustering_protocol(f, folds, DistanceMetric::euclid, 10, 3);
  CHECK(std::equal(first10.per_trial.begin(), first10.per_trial.end(), a.per_trial.begin()));

  ClusteringOptions opts;
  opts.folds_per_trial = 9;
  CHECK_THROWS_AS(clustering_protocol(f, folds, DistanceMetric::kl, 1, 1, opts), ValidationError);
  std::vector<std::size_t> short_folds(folds.begin(), folds.end() - 1);
  CHECK_THROWS(clustering_protocol(f, short_folds, DistanceMetric::kl, 1, 1));
}

TEST_CASE("template databases validate, serialize and rank") {
  TemplateDB db;
  db.add({"t1", 0, {1.0, 0.0}});
  db.add({"t2", 1, {0.0, 1.0}});
  db.add({"t3", 1, {0.5, 0.5}});
  CHECK_THROWS_AS(db.add({"bad", 0, {1.0}}), ValidationError);
  CHECK(db.dimension() == 2);

  const auto bytes = serialize_template_db(db);
  const auto back = deserialize_template_db(bytes);
  CHECK(serialize_template_db(back) == bytes);
  CHECK(back[2].id == "t3");
  CHECK(back[1].fold == 1);
  CHECK_THROWS_AS(deserialize_template_db(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(deserialize_template_db("DSFX" + bytes.substr(4)), FormatError);
  CHECK(template_db_tsv(db).rfind("id\tfold\tf0\tf1\n", 0) == 0);

  model::FoldPrediction pred;
  pred.probabilities = {0.3, 0.6, 0.1};
  pred.ranked_folds = {1, 0, 2};
  model::SFFeature feat{{0.0, 1.0}};
  const auto r = rank_templates(pred, feat, db, 1, 10);
  CHECK(r.status == RankStatus::ok);
  REQUIRE(r.templates.size() == 2);
  CHECK(r.templates[0].id == "t2");
  CHECK(r.templates[0].score == 0.0);
  CHECK(r.templates[1].id == "t3");

  pred.ranked_folds = {2, 1, 0};
  CHECK(rank_templates(pred, feat, db, 1, 10).status == RankStatus::empty_pool);
  CHECK_THROWS(rank_templates(pred, feat, TemplateDB{}, 1, 10));
}
