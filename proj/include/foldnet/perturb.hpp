#pragma once

// Robustness of fold features to sequence edits: mutation/insertion/deletion variants
// against random controls, and the N-to-C truncation scan.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "foldnet/encode.hpp"
#include "foldnet/model.hpp"

namespace foldnet::perturb {

enum class EditKind { mutation, insertion, deletion };
const char* edit_kind_name(EditKind kind);

struct Variant {
  EditKind kind = EditKind::mutation;
  std::string sequence;
  // For every residue of `sequence`, the wild-type position it came from; nullopt for
  // inserted residues.
  std::vector<std::optional<std::size_t>> source;
};

struct PerturbationSet {
  std::string wild_type_id;
  std::vector<Variant> variants;
  std::vector<encode::EncodedProtein> controls;
};

struct VariantOptions {
  std::size_t repeats_per_kind = 50;
  std::size_t max_indel_total = 20;  // also bounds the number of substituted residues
};

// For each kind, `repeats_per_kind` independent edits. An edit draws a total size
// uniformly from [1, max_indel_total] (capped at L - 1 for deletions) and splits it
// across a uniformly drawn number of edit positions; inserted and substituted letters
// are uniform over the 20 residues. Duplicate sequences are dropped, first one kept.
// Throws ValidationError when the sequence is shorter than 2.
std::vector<Variant> generate_variants(std::string_view sequence, std::uint64_t seed,
                                       const VariantOptions& options = {});

struct ControlOptions {
  std::size_t count = 500;
  std::size_t min_length = 80;
  std::size_t max_length = 120;
  // Synthesize uniform random sequences when the corpus has too few eligible proteins.
  bool allow_random = true;
  // Feature blocks for synthesized sequences; none when unset.
  std::function<encode::FeatureBlocks(std::string_view)> blocks;
};

// Controls drawn without replacement from corpus proteins whose length is in range and
// whose id differs from `exclude_id`, topped up with random sequences if allowed.
// Throws ValidationError when nothing is eligible and random synthesis is disabled.
std::vector<encode::EncodedProtein> generate_controls(
    std::span<const encode::EncodedProtein> corpus, std::uint64_t seed,
    const ControlOptions& options = {}, std::string_view exclude_id = {});

enum class ProfileReuse {
  wild_type,  // copy the wild type's profile row for every residue carried over
  zero,       // clear the profile block
};

// Variant features: one-hot from the edited sequence; profile, secondary structure and
// accessibility rows copied from the wild-type row each residue came from. Inserted
// residues get a zero profile row and, where the wild type carries those blocks, loop
// and exposed.
encode::EncodedProtein encode_variant(const encode::EncodedProtein& wild_type,
                                      const Variant& variant, std::string id,
                                      ProfileReuse profile = ProfileReuse::wild_type);

struct RankSumResult {
  double statistic = 0.0;  // rank sum of the first sample (midranks for ties)
  double z = 0.0;          // normal score, 0 when computed exactly
  double p_value = 1.0;    // two-sided
  bool exact = false;
};

// Two-sided Wilcoxon rank-sum test. Exact permutation distribution when both samples
// have at most `exact_limit` values, otherwise the normal approximation with tie and
// continuity corrections. Throws ValidationError on an empty sample.
RankSumResult rank_sum_test(std::span<const double> first, std::span<const double> second,
                            std::size_t exact_limit = 8);

struct DivergenceRow {
  std::string sequence_id;
  std::string kind;  // mutation, insertion, deletion or control
  std::size_t length = 0;
  double kl_d = 0.0;
};

struct DivergenceReport {
  std::string wild_type_id;
  std::vector<DivergenceRow> rows;  // variants in input order, then controls
  double variant_median = 0.0;
  double control_median = 0.0;
  RankSumResult test;

  // sequence_id, kind, length, kl_d; tab-separated with a header line.
  std::string to_tsv() const;
};

// KL distance of every variant's and control's feature to the wild type's, and a rank-sum
// comparison of variant against control distances.
DivergenceReport divergence_experiment(const model::ModelState& state,
                                       const encode::EncodedProtein& wild_type,
                                       const PerturbationSet& set,
                                       ProfileReuse profile = ProfileReuse::wild_type);

// First k rows of every block, i.e. the wild type read up to residue k.
encode::EncodedProtein prefix_of(const encode::EncodedProtein& protein, std::size_t k);

struct TruncationRow {
  std::string id;
  std::size_t length = 0;
  std::size_t full_fold = 0;       // top-1 on the whole sequence
  std::size_t stable_prefix = 0;   // smallest k whose top-1 matches for every prefix >= k
  double fraction = 1.0;           // stable_prefix / length
  bool full_prefix_matches = true; // the length-L prefix reproduced the full prediction
};

struct TruncationReport {
  std::vector<TruncationRow> rows;
  double mean_fraction = 0.0;

  // Per-protein rows plus a trailing "# mean_fraction" summary line.
  std::string to_tsv() const;
};

// Predicts every prefix of length step, 2*step, ..., L (L always included).
TruncationReport truncation_scan(const model::ModelState& state,
                                 std::span<const encode::EncodedProtein> corpus,
                                 std::size_t step = 1);

}  // namespace foldnet::perturb
