#pragma once

// Input parsing and per-residue feature assembly.
//
// Each residue becomes a row of 45 numbers:
//   [ 0, 20)  one-hot residue identity, alphabet order ACDEFGHIKLMNPQRSTVWY
//   [20, 40)  profile log-odds scores, PSI-BLAST column order ARNDCQEGHILKMFPSTWYV
//   [40, 43)  secondary structure one-hot (helix, strand, loop)
//   [43, 45)  solvent accessibility one-hot (exposed, buried)
// Blocks that are not supplied are zero-filled and recorded in FeatureProvenance.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "foldnet/tensor.hpp"

namespace foldnet::encode {

inline constexpr std::size_t kFeatureWidth = 45;
inline constexpr std::size_t kOneHotOffset = 0;
inline constexpr std::size_t kProfileOffset = 20;
inline constexpr std::size_t kSecondaryOffset = 40;
inline constexpr std::size_t kAccessibilityOffset = 43;
inline constexpr std::string_view kAlphabet = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr std::string_view kProfileOrder = "ARNDCQEGHILKMFPSTWYV";

enum class SecondaryStructure { helix, strand, loop };
enum class Accessibility { exposed, buried };

// Index in kAlphabet, or nullopt for anything that is not one of the 20 letters.
std::optional<std::size_t> residue_index(char residue) noexcept;
// Uppercases and maps B->D, Z->E, X->A, U->C, O->K, J->L. Returns '\0' for letters with
// no mapping.
char canonical_residue(char residue) noexcept;

struct FastaRecord {
  std::string id;
  std::string sequence;
};

struct Substitution {
  std::string id;
  std::size_t position = 0;  // 0-based
  char original = 0;
  char replacement = 0;
};

struct FastaReport {
  std::vector<Substitution> substitutions;
};

std::vector<FastaRecord> parse_fasta(const std::filesystem::path& path,
                                     FastaReport* report = nullptr);
std::vector<FastaRecord> parse_fasta_text(std::string_view text, const std::string& source,
                                          FastaReport* report = nullptr);

struct ProfileMatrix {
  Tensor scores;  // [L, 20], kProfileOrder columns
  std::size_t length() const { return scores.empty() ? 0 : scores.dim(0); }
};

// PSI-BLAST ASCII layout: header lines, then one row per residue with the 1-based index,
// the residue letter and 20 integer log-odds; trailing columns are ignored. Letters are
// checked against `expected_sequence` after canonical substitution.
ProfileMatrix parse_pssm(const std::filesystem::path& path, std::string_view expected_sequence);
ProfileMatrix parse_pssm_text(std::string_view text, const std::string& source,
                              std::string_view expected_sequence);
// Emits the layout parse_pssm reads; scores are rounded to integers.
std::string format_pssm(const ProfileMatrix& profile, std::string_view sequence);
void write_pssm(const std::filesystem::path& path, const ProfileMatrix& profile,
                std::string_view sequence);

// One letter per residue: H/E/C for secondary structure, e/b for accessibility.
// Whitespace is ignored.
std::vector<SecondaryStructure> parse_ss(const std::filesystem::path& path, std::size_t length);
std::vector<SecondaryStructure> parse_ss_text(std::string_view text, const std::string& source,
                                              std::size_t length);
std::vector<Accessibility> parse_sa(const std::filesystem::path& path, std::size_t length);
std::vector<Accessibility> parse_sa_text(std::string_view text, const std::string& source,
                                         std::size_t length);
std::string format_ss(const std::vector<SecondaryStructure>& ss);
std::string format_sa(const std::vector<Accessibility>& sa);

struct FeatureProvenance {
  bool profile = false;
  bool secondary = false;
  bool accessibility = false;
  friend bool operator==(const FeatureProvenance&, const FeatureProvenance&) = default;
};

struct EncodedProtein {
  std::string id;
  std::string residues;
  Tensor features;  // [L, 45]
  std::optional<std::size_t> label;
  FeatureProvenance provenance;

  std::size_t length() const noexcept { return residues.size(); }
};

struct FeatureBlocks {
  std::optional<ProfileMatrix> profile;
  std::optional<std::vector<SecondaryStructure>> secondary;
  std::optional<std::vector<Accessibility>> accessibility;
};

// `sequence` must already be canonical (see canonical_residue).
EncodedProtein encode_protein(std::string id, std::string_view sequence,
                              const FeatureBlocks& blocks = {},
                              std::optional<std::size_t> label = std::nullopt);

// Throws ValidationError when the column invariants do not hold.
void check_encoded(const EncodedProtein& protein);

// Per-column z-scoring of the profile block across a whole corpus (off by default).
void standardize_profiles(std::vector<EncodedProtein>& proteins);

// --- dataset directories -------------------------------------------------------------
//   sequences.fasta, labels.tsv (header + id<TAB>fold_index),
//   profiles/<id>.pssm, ss/<id>.ss, sa/<id>.sa (each optional per protein)

std::map<std::string, std::size_t> parse_labels(const std::filesystem::path& path);

struct DatasetOptions {
  bool standardize_profile = false;
  bool require_labels = false;
};

struct Dataset {
  std::vector<EncodedProtein> proteins;
  FastaReport report;
};

Dataset load_dataset(const std::filesystem::path& dir, const DatasetOptions& options = {});
void write_dataset(const std::filesystem::path& dir, const std::vector<EncodedProtein>& proteins);

// Encoded cache ("DSFE"): exact double features plus ids, residues, labels, provenance.
void save_encoded(const std::filesystem::path& path, const std::vector<EncodedProtein>& proteins);
std::vector<EncodedProtein> load_encoded(const std::filesystem::path& path);

// --- synthetic corpora ---------------------------------------------------------------

struct SyntheticSpec {
  std::size_t num_folds = 20;
  std::size_t proteins_per_fold = 50;
  std::size_t min_length = 40;
  std::size_t max_length = 120;
  std::size_t motifs_per_fold = 3;
  std::size_t motif_length = 10;
  double noise_rate = 0.05;  // per-residue chance that an implanted motif letter is redrawn
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<EncodedProtein> proteins;
  std::vector<std::vector<std::string>> motifs;  // per fold
};

// Each fold owns a distinct set of motifs that are implanted, without overlap, at random
// positions of a uniformly random background.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Window counts (+-2 residues) of each amino acid, kProfileOrder columns.
ProfileMatrix synthetic_profile(std::string_view sequence);
// Residue-class heuristics so the structure channels carry sequence-dependent signal.
std::vector<SecondaryStructure> synthetic_secondary(std::string_view sequence);
std::vector<Accessibility> synthetic_accessibility(std::string_view sequence);
// All three blocks for a canonical sequence.
FeatureBlocks synthetic_blocks(std::string_view sequence);

}  // namespace foldnet::encode
