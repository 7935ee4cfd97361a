#include "foldnet/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "foldnet/analyze.hpp"
#include "foldnet/error.hpp"

namespace foldnet::perturb {

const char* edit_kind_name(EditKind kind) {
  switch (kind) {
    case EditKind::mutation: return "mutation";
    case EditKind::insertion: return "insertion";
    case EditKind::deletion: return "deletion";
  }
  return "unknown";
}

namespace {

char random_residue(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, encode::kAlphabet.size() - 1);
  return encode::kAlphabet[pick(rng)];
}

// Splits `total` into `parts` positive sizes at distinct random cut points.
std::vector<std::size_t> split_total(std::size_t total, std::size_t parts, std::mt19937_64& rng) {
  std::vector<std::size_t> cuts(total - 1);
  std::iota(cuts.begin(), cuts.end(), std::size_t{1});
  std::shuffle(cuts.begin(), cuts.end(), rng);
  cuts.resize(parts - 1);
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> sizes;
  std::size_t prev = 0;
  for (std::size_t c : cuts) {
    sizes.push_back(c - prev);
    prev = c;
  }
  sizes.push_back(total - prev);
  return sizes;
}

Variant identity_variant(std::string_view seq, EditKind kind) {
  Variant v;
  v.kind = kind;
  v.sequence = std::string(seq);
  v.source.resize(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) v.source[i] = i;
  return v;
}

Variant mutate(std::string_view seq, std::size_t total, std::mt19937_64& rng) {
  Variant v = identity_variant(seq, EditKind::mutation);
  std::vector<std::size_t> pos(seq.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::shuffle(pos.begin(), pos.end(), rng);
  for (std::size_t i = 0; i < std::min(total, pos.size()); ++i) {
    v.sequence[pos[i]] = random_residue(rng);
  }
  return v;
}

Variant insert(std::string_view seq, std::size_t total, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> count(1, total);
  const auto sizes = split_total(total, count(rng), rng);
  std::uniform_int_distribution<std::size_t> gap(0, seq.size());
  std::vector<std::size_t> points(sizes.size());
  for (auto& p : points) p = gap(rng);
  std::sort(points.begin(), points.end());

  Variant v;
  v.kind = EditKind::insertion;
  std::size_t next = 0;
  for (std::size_t i = 0; i <= seq.size(); ++i) {
    for (; next < points.size() && points[next] == i; ++next) {
      for (std::size_t r = 0; r < sizes[next]; ++r) {
        v.sequence.push_back(random_residue(rng));
        v.source.push_back(std::nullopt);
      }
    }
    if (i < seq.size()) {
      v.sequence.push_back(seq[i]);
      v.source.push_back(i);
    }
  }
  return v;
}

Variant remove(std::string_view seq, std::size_t total, std::mt19937_64& rng) {
  total = std::min(total, seq.size() - 1);
  std::uniform_int_distribution<std::size_t> count(1, total);
  const auto sizes = split_total(total, count(rng), rng);
  // Non-overlapping runs: sorted offsets in the residue budget plus the runs before them.
  std::uniform_int_distribution<std::size_t> gap(0, seq.size() - total);
  std::vector<std::size_t> offsets(sizes.size());
  for (auto& o : offsets) o = gap(rng);
  std::sort(offsets.begin(), offsets.end());
  std::vector<bool> dropped(seq.size(), false);
  std::size_t before = 0;
  for (std::size_t r = 0; r < sizes.size(); ++r) {
    const std::size_t start = offsets[r] + before;
    for (std::size_t i = 0; i < sizes[r]; ++i) dropped[start + i] = true;
    before += sizes[r];
  }
  Variant v;
  v.kind = EditKind::deletion;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (dropped[i]) continue;
    v.sequence.push_back(seq[i]);
    v.source.push_back(i);
  }
  return v;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<Variant> generate_variants(std::string_view sequence, std::uint64_t seed,
                                       const VariantOptions& options) {
  if (sequence.size() < 2) {
    throw ValidationError("generate_variants: sequence must have at least 2 residues");
  }
  if (options.max_indel_total == 0) {
    throw ValidationError("generate_variants: max_indel_total must be positive");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> total(1, options.max_indel_total);
  std::vector<Variant> out;
  std::set<std::string> seen;
  for (EditKind kind : {EditKind::mutation, EditKind::insertion, EditKind::deletion}) {
    for (std::size_t r = 0; r < options.repeats_per_kind; ++r) {
      const std::size_t size = total(rng);
      Variant v = kind == EditKind::mutation    ? mutate(sequence, size, rng)
                  : kind == EditKind::insertion ? insert(sequence, size, rng)
                                                : remove(sequence, size, rng);
      if (seen.insert(v.sequence).second) out.push_back(std::move(v));
    }
  }
  return out;
}

std::vector<encode::EncodedProtein> generate_controls(
    std::span<const encode::EncodedProtein> corpus, std::uint64_t seed,
    const ControlOptions& options, std::string_view exclude_id) {
  if (options.min_length == 0 || options.min_length > options.max_length) {
    throw ValidationError("generate_controls: invalid length range");
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus[i];
    if (p.length() >= options.min_length && p.length() <= options.max_length &&
        p.id != exclude_id) {
      eligible.push_back(i);
    }
  }
  if (eligible.empty() && !options.allow_random) {
    throw ValidationError("generate_controls: no corpus protein has length in [" +
                          std::to_string(options.min_length) + ", " +
                          std::to_string(options.max_length) + "] and random controls are off");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  if (eligible.size() > options.count) eligible.resize(options.count);
  std::sort(eligible.begin(), eligible.end());

  std::vector<encode::EncodedProtein> controls;
  controls.reserve(options.count);
  for (std::size_t i : eligible) controls.push_back(corpus[i]);
  if (controls.size() < options.count && !options.allow_random) {
    return controls;
  }
  std::uniform_int_distribution<std::size_t> length(options.min_length, options.max_length);
  for (std::size_t n = 0; controls.size() < options.count; ++n) {
    std::string seq(length(rng), 'A');
    for (char& c : seq) c = random_residue(rng);
    const encode::FeatureBlocks blocks = options.blocks ? options.blocks(seq) : encode::FeatureBlocks{};
    controls.push_back(encode::encode_protein("random_" + std::to_string(n), seq, blocks));
  }
  return controls;
}

encode::EncodedProtein encode_variant(const encode::EncodedProtein& wild_type,
                                      const Variant& variant, std::string id,
                                      ProfileReuse profile) {
  if (variant.source.size() != variant.sequence.size()) {
    throw ValidationError("encode_variant: alignment map does not cover the sequence");
  }
  encode::EncodedProtein p = encode::encode_protein(std::move(id), variant.sequence);
  p.label = wild_type.label;
  p.provenance = wild_type.provenance;
  if (profile == ProfileReuse::zero) p.provenance.profile = false;
  for (std::size_t i = 0; i < variant.sequence.size(); ++i) {
    const auto& src = variant.source[i];
    if (!src) {
      // Inserted residue: no profile, loop and exposed when the wild type has those blocks.
      if (p.provenance.secondary) {
        p.features.at(i, encode::kSecondaryOffset + static_cast<std::size_t>(encode::SecondaryStructure::loop)) = 1.0;
      }
      if (p.provenance.accessibility) {
        p.features.at(i, encode::kAccessibilityOffset + static_cast<std::size_t>(encode::Accessibility::exposed)) = 1.0;
      }
      continue;
    }
    if (*src >= wild_type.length()) {
      throw ValidationError("encode_variant: source position beyond the wild type");
    }
    for (std::size_t c = encode::kProfileOffset; c < encode::kFeatureWidth; ++c) {
      if (profile == ProfileReuse::zero && c < encode::kSecondaryOffset) continue;
      p.features.at(i, c) = wild_type.features.at(*src, c);
    }
  }
  return p;
}

RankSumResult rank_sum_test(std::span<const double> first, std::span<const double> second,
                            std::size_t exact_limit) {
  if (first.empty() || second.empty()) {
    throw ValidationError("rank_sum_test: both samples must be nonempty");
  }
  const std::size_t n1 = first.size(), n2 = second.size(), n = n1 + n2;
  std::vector<std::pair<double, std::size_t>> pooled;
  pooled.reserve(n);
  for (std::size_t i = 0; i < n1; ++i) pooled.emplace_back(first[i], i);
  for (std::size_t i = 0; i < n2; ++i) pooled.emplace_back(second[i], n1 + i);
  std::sort(pooled.begin(), pooled.end());

  std::vector<double> rank(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank[pooled[k].second] = mid;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }

  RankSumResult r;
  for (std::size_t i = 0; i < n1; ++i) r.statistic += rank[i];
  const double d1 = static_cast<double>(n1), d2 = static_cast<double>(n2),
               dn = static_cast<double>(n);
  const double expected = d1 * (dn + 1.0) / 2.0;
  const double observed = std::abs(r.statistic - expected);

  if (n1 <= exact_limit && n2 <= exact_limit) {
    // Every way of choosing which n1 of the pooled ranks belong to the first sample.
    r.exact = true;
    std::vector<bool> choose(n, false);
    std::fill(choose.begin(), choose.begin() + static_cast<std::ptrdiff_t>(n1), true);
    std::size_t total = 0, extreme = 0;
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (choose[i]) s += rank[i];
      }
      ++total;
      if (std::abs(s - expected) >= observed - 1e-9) ++extreme;
    } while (std::prev_permutation(choose.begin(), choose.end()));
    r.p_value = static_cast<double>(extreme) / static_cast<double>(total);
    return r;
  }

  const double variance = d1 * d2 / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (variance <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double diff = r.statistic - expected;
  const double corrected = std::max(0.0, std::abs(diff) - 0.5);
  r.z = std::copysign(corrected / std::sqrt(variance), diff);
  r.p_value = std::min(1.0, std::erfc(std::abs(r.z) / std::sqrt(2.0)));
  return r;
}

std::string DivergenceReport::to_tsv() const {
  std::ostringstream out;
  out.precision(10);
  out << "sequence_id\tkind\tlength\tkl_d\n";
  for (const auto& row : rows) {
    out << row.sequence_id << '\t' << row.kind << '\t' << row.length << '\t' << row.kl_d << '\n';
  }
  return out.str();
}

DivergenceReport divergence_experiment(const model::ModelState& state,
                                       const encode::EncodedProtein& wild_type,
                                       const PerturbationSet& set, ProfileReuse profile) {
  std::vector<encode::EncodedProtein> batch;
  batch.reserve(1 + set.variants.size() + set.controls.size());
  batch.push_back(wild_type);
  if (profile == ProfileReuse::zero) {
    batch.front() = encode_variant(wild_type, identity_variant(wild_type.residues, EditKind::mutation),
                                   wild_type.id, profile);
  }
  for (std::size_t i = 0; i < set.variants.size(); ++i) {
    const auto& v = set.variants[i];
    batch.push_back(encode_variant(
        wild_type, v, wild_type.id + "_" + edit_kind_name(v.kind) + "_" + std::to_string(i),
        profile));
  }
  for (const auto& c : set.controls) batch.push_back(c);

  const auto out = model::infer(state, batch);
  const auto& reference = out.features.front().values;
  DivergenceReport report;
  report.wild_type_id = wild_type.id;
  std::vector<double> variant_d, control_d;
  for (std::size_t i = 1; i < batch.size(); ++i) {
    const bool is_variant = i <= set.variants.size();
    const double d = analyze::distance(analyze::DistanceMetric::kl, out.features[i].values, reference);
    report.rows.push_back({batch[i].id,
                           is_variant ? edit_kind_name(set.variants[i - 1].kind) : "control",
                           batch[i].length(), d});
    (is_variant ? variant_d : control_d).push_back(d);
  }
  report.variant_median = median(variant_d);
  report.control_median = median(control_d);
  if (!variant_d.empty() && !control_d.empty()) report.test = rank_sum_test(variant_d, control_d);
  return report;
}

encode::EncodedProtein prefix_of(const encode::EncodedProtein& protein, std::size_t k) {
  if (k == 0 || k > protein.length()) {
    throw ValidationError("prefix_of: length " + std::to_string(k) + " outside [1, " +
                          std::to_string(protein.length()) + "]");
  }
  encode::EncodedProtein p;
  p.id = protein.id + "/1-" + std::to_string(k);
  p.residues = protein.residues.substr(0, k);
  const auto values = protein.features.values();
  p.features = Tensor({k, encode::kFeatureWidth},
                      std::vector<double>(values.begin(), values.begin() + k * encode::kFeatureWidth));
  p.label = protein.label;
  p.provenance = protein.provenance;
  return p;
}

std::string TruncationReport::to_tsv() const {
  std::ostringstream out;
  out.precision(10);
  out << "id\tlength\tfull_fold\tstable_prefix\tfraction\n";
  for (const auto& r : rows) {
    out << r.id << '\t' << r.length << '\t' << r.full_fold << '\t' << r.stable_prefix << '\t'
        << r.fraction << '\n';
  }
  out << "# mean_fraction\t" << mean_fraction << '\n';
  return out.str();
}

TruncationReport truncation_scan(const model::ModelState& state,
                                 std::span<const encode::EncodedProtein> corpus,
                                 std::size_t step) {
  if (step == 0) throw ValidationError("truncation_scan: step must be positive");
  const auto full = model::infer(state, corpus);
  TruncationReport report;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& protein = corpus[i];
    const std::size_t len = protein.length();
    std::vector<std::size_t> lengths;
    for (std::size_t k = step; k < len; k += step) lengths.push_back(k);
    lengths.push_back(len);
    std::vector<encode::EncodedProtein> prefixes;
    prefixes.reserve(lengths.size());
    for (std::size_t k : lengths) prefixes.push_back(prefix_of(protein, k));
    const auto pred = model::infer(state, prefixes);

    TruncationRow row;
    row.id = protein.id;
    row.length = len;
    row.full_fold = full.predictions[i].ranked_folds.front();
    row.full_prefix_matches = pred.predictions.back().probabilities == full.predictions[i].probabilities;
    std::size_t first_stable = lengths.size() - 1;
    while (first_stable > 0 &&
           pred.predictions[first_stable - 1].ranked_folds.front() == row.full_fold) {
      --first_stable;
    }
    row.stable_prefix = lengths[first_stable];
    row.fraction = static_cast<double>(row.stable_prefix) / static_cast<double>(len);
    report.rows.push_back(row);
  }
  if (!report.rows.empty()) {
    double sum = 0.0;
    for (const auto& r : report.rows) sum += r.fraction;
    report.mean_fraction = sum / static_cast<double>(report.rows.size());
  }
  return report;
}

}  // namespace foldnet::perturb
