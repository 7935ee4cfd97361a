#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <set>

#include "foldnet/error.hpp"
#include "foldnet/perturb.hpp"
#include "support.hpp"

using namespace foldnet;
using namespace foldnet::perturb;

namespace {

std::string random_sequence(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> u(0, 19);
  std::string s(n, 'A');
  for (char& c : s) c = encode::kAlphabet[u(rng)];
  return s;
}

// Rank-sum of the first sample from pairwise comparisons: W = U + n1(n1+1)/2.
double pairwise_rank_sum(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  const double n1 = static_cast<double>(a.size());
  return u + n1 * (n1 + 1.0) / 2.0;
}

// Two-sided exact p by enumerating every subset of the pooled sample as bitmasks.
double subset_exact_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size(), n1 = a.size();
  auto rank_sum = [&](std::uint32_t mask) {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1u ? x : y).push_back(pooled[i]);
    return pairwise_rank_sum(x, y);
  };
  const double expected = static_cast<double>(n1) * static_cast<double>(n + 1) / 2.0;
  const double observed = std::fabs(rank_sum((1u << n1) - 1u) - expected);
  std::size_t total = 0, extreme = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != n1) continue;
    ++total;
    if (std::fabs(rank_sum(mask) - expected) >= observed - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("variants respect their edit budget and alignment map") {
  std::mt19937_64 rng(31);
  const std::string wild = random_sequence(60, rng);
  VariantOptions opts;
  opts.repeats_per_kind = 40;
  const auto variants = generate_variants(wild, 5, opts);
  std::set<std::string> seen;
  for (const auto& v : variants) {
    CAPTURE(edit_kind_name(v.kind));
    CHECK(seen.insert(v.sequence).second);
    REQUIRE(v.source.size() == v.sequence.size());
    std::size_t carried = 0, inserted = 0, changed = 0;
    std::ptrdiff_t last = -1;
    for (std::size_t i = 0; i < v.sequence.size(); ++i) {
      if (!v.source[i]) {
        ++inserted;
        continue;
      }
      const auto src = static_cast<std::ptrdiff_t>(*v.source[i]);
      CHECK(src > last);
      last = src;
      ++carried;
      if (v.sequence[i] != wild[*v.source[i]]) ++changed;
    }
    switch (v.kind) {
      case EditKind::mutation:
        CHECK(v.sequence.size() == wild.size());
        CHECK(inserted == 0);
        CHECK(changed <= opts.max_indel_total);
        CHECK(v.sequence != wild);
        break;
      case EditKind::insertion:
        CHECK(changed == 0);
        CHECK(inserted >= 1);
        CHECK(inserted <= opts.max_indel_total);
        CHECK(carried == wild.size());
        break;
      case EditKind::deletion:
        CHECK(changed == 0);
        CHECK(inserted == 0);
        CHECK(wild.size() - carried >= 1);
        CHECK(wild.size() - carried <= opts.max_indel_total);
        break;
    }
  }
  CHECK(generate_variants(wild, 5, opts).size() == variants.size());
  CHECK_THROWS_AS(generate_variants("A", 1), ValidationError);
  // Deleting from a short sequence never empties it.
  for (const auto& v : generate_variants("ACDE", 2)) CHECK_FALSE(v.sequence.empty());
}

TEST_CASE("variant encoding reuses wild-type rows") {
  const auto corpus = foldnet::testing::small_corpus(1, 1).proteins;
  const auto& wild = corpus[0];
  Variant v;
  v.kind = EditKind::insertion;
  v.sequence = std::string(1, 'W') + wild.residues;
  v.source.push_back(std::nullopt);
  for (std::size_t i = 0; i < wild.length(); ++i) v.source.push_back(i);
  const auto enc = encode_variant(wild, v, "v");
  CHECK(enc.features.at(0, encode::kOneHotOffset + *encode::residue_index('W')) == 1.0);
  for (std::size_t c = encode::kProfileOffset; c < encode::kFeatureWidth; ++c) {
    CHECK(enc.features.at(5, c) == wild.features.at(4, c));
  }
  for (std::size_t c = encode::kProfileOffset; c < encode::kSecondaryOffset; ++c) CHECK(enc.features.at(0, c) == 0.0);
  CHECK(enc.features.at(0, encode::kSecondaryOffset + 2) == 1.0);
  CHECK(enc.features.at(0, encode::kAccessibilityOffset) == 1.0);
  const auto zero = encode_variant(wild, v, "z", ProfileReuse::zero);
  CHECK(zero.features.at(5, encode::kProfileOffset) == 0.0);
  CHECK(zero.features.at(5, encode::kSecondaryOffset) == wild.features.at(4, encode::kSecondaryOffset));
  CHECK_FALSE(zero.provenance.profile);
  CHECK_NOTHROW(encode::check_encoded(enc));
}

TEST_CASE("controls come from the corpus first and exclude the wild type") {
  const auto corpus = foldnet::testing::small_corpus(3, 5).proteins;
  ControlOptions opts;
  opts.count = 8;
  opts.min_length = 40;
  opts.max_length = 70;
  const auto controls = generate_controls(corpus, 3, opts, corpus[0].id);
  CHECK(controls.size() == 8);
  std::size_t from_corpus = 0;
  for (const auto& c : controls) {
    CHECK(c.id != corpus[0].id);
    CHECK(c.length() >= 40);
    CHECK(c.length() <= 70);
    if (c.id.rfind("random_", 0) != 0) ++from_corpus;
  }
  CHECK(from_corpus > 0);

  opts.count = 1000;
  const auto topped = generate_controls(corpus, 3, opts);
  CHECK(topped.size() == 1000);
  opts.allow_random = false;
  opts.min_length = 500;
  opts.max_length = 600;
  CHECK_THROWS_AS(generate_controls(corpus, 3, opts), ValidationError);
}

TEST_CASE("rank-sum statistic and exact p-values match enumeration") {
  std::mt19937_64 rng(32);
  std::uniform_int_distribution<int> u(0, 6);  // small range forces ties
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<double> a(1 + trial % 6), b(1 + (trial / 6) % 7);
    for (double& x : a) x = u(rng);
    for (double& x : b) x = u(rng);
    const auto r = rank_sum_test(a, b);
    CHECK(r.exact);
    CHECK(r.statistic == doctest::Approx(pairwise_rank_sum(a, b)));
    CHECK(r.p_value == doctest::Approx(subset_exact_p(a, b)).epsilon(1e-12));
  }
  const std::vector<double> lo{1, 2, 3}, hi{4, 5, 6, 7};
  CHECK(rank_sum_test(lo, hi).p_value == doctest::Approx(2.0 / 35.0));
  CHECK_THROWS_AS(rank_sum_test({}, hi), ValidationError);
}

TEST_CASE("rank-sum normal approximation with ties and continuity correction") {
  const std::vector<double> a{1.2, 3.4, 2.2, 5.0, 0.3, 2.2, 7.1, 4.4, 3.3, 0.9, 1.1, 6.0};
  const std::vector<double> b{5.5, 6.1, 2.2, 8.0, 9.1, 7.7, 6.6, 5.0, 10.2, 4.9};
  const auto r = rank_sum_test(a, b);
  CHECK_FALSE(r.exact);
  CHECK(r.statistic == doctest::Approx(16.5 + 78.0));
  CHECK(r.z < 0.0);
  CHECK(r.p_value == doctest::Approx(0.004520597079994356).epsilon(1e-9));
  const std::vector<double> same(10, 1.0);
  CHECK(rank_sum_test(same, same).p_value == 1.0);
}

TEST_CASE("divergence and truncation reports on an untrained model") {
  const auto corpus = foldnet::testing::small_corpus(3, 4).proteins;
  auto state = model::build_model(foldnet::testing::tiny_config(3), 3);
  model::refresh_running_statistics(state, corpus);
  PerturbationSet set;
  set.wild_type_id = corpus[0].id;
  VariantOptions vo;
  vo.repeats_per_kind = 3;
  set.variants = generate_variants(corpus[0].residues, 1, vo);
  ControlOptions co;
  co.count = 5;
  co.min_length = 30;
  set.controls = generate_controls(corpus, 2, co, corpus[0].id);
  const auto report = divergence_experiment(state, corpus[0], set);
  CHECK(report.rows.size() == set.variants.size() + 5);
  CHECK(report.rows.back().kind == "control");
  for (const auto& row : report.rows) CHECK(row.kl_d >= 0.0);
  CHECK(report.to_tsv().rfind("sequence_id\tkind\tlength\tkl_d\n", 0) == 0);

  const auto prefix = prefix_of(corpus[1], 10);
  CHECK(prefix.length() == 10);
  CHECK(prefix.id == corpus[1].id + "/1-10");
  CHECK_THROWS_AS(prefix_of(corpus[1], 0), ValidationError);

  const auto trunc = truncation_scan(state, std::span(corpus).first(4), 3);
  REQUIRE(trunc.rows.size() == 4);
  for (const auto& row : trunc.rows) {
    CHECK(row.full_prefix_matches);
    CHECK(row.fraction > 0.0);
    CHECK(row.fraction <= 1.0);
    const auto it = std::find_if(corpus.begin(), corpus.end(), [&](const auto& p) { return p.id == row.id; });
    REQUIRE(it != corpus.end());
    CHECK(row.full_fold == model::predict(state, *it).ranked_folds[0]);
  }
  CHECK(trunc.to_tsv().find("# mean_fraction") != std::string::npos);
}
