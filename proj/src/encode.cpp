#include "foldnet/encode.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "foldnet/error.hpp"

namespace foldnet::encode {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename Int>
bool parse_int(std::string_view s, Int& value) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc() && ptr == last;
}

std::string strip_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  }
  return out;
}

std::size_t profile_column(char residue) {
  return kProfileOrder.find(residue);
}

}  // namespace

// ---------------------------------------------------------------------------------------
// Alphabet

std::optional<std::size_t> residue_index(char residue) noexcept {
  const std::size_t i = kAlphabet.find(residue);
  if (i == std::string_view::npos) return std::nullopt;
  return i;
}

char canonical_residue(char residue) noexcept {
  const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(residue)));
  switch (c) {
    case 'B':
      return 'D';
    case 'Z':
      return 'E';
    case 'X':
      return 'A';
    case 'U':
      return 'C';
    case 'O':
      return 'K';
    case 'J':
      return 'L';
    default:
      return residue_index(c) ? c : '\0';
  }
}

// ---------------------------------------------------------------------------------------
// FASTA

std::vector<FastaRecord> parse_fasta_text(std::string_view text, const std::string& source,
                                          FastaReport* report) {
  std::vector<FastaRecord> records;
  std::vector<std::size_t> header_lines;
  std::set<std::string> seen;
  const auto lines = split_lines(text);

  auto finish = [&]() {
    if (!records.empty() && records.back().sequence.empty()) {
      throw ParseError(source, header_lines.back(),
                       "empty sequence for record '" + records.back().id + "'");
    }
  };

  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::size_t line_no = n + 1;
    const std::string_view line = lines[n];
    if (!line.empty() && line.front() == '>') {
      finish();
      const auto toks = tokens(line.substr(1));
      if (toks.empty() || std::isspace(static_cast<unsigned char>(line.size() > 1 ? line[1] : ' '))) {
        throw ParseError(source, line_no, "malformed header: identifier must follow '>'");
      }
      std::string id(toks.front());
      if (!seen.insert(id).second) {
        throw ParseError(source, line_no, "duplicate identifier '" + id + "'");
      }
      records.push_back({std::move(id), {}});
      header_lines.push_back(line_no);
      continue;
    }
    const std::string residues = strip_whitespace(line);
    if (residues.empty()) continue;
    if (records.empty()) {
      throw ParseError(source, line_no, "sequence data before the first '>' header");
    }
    FastaRecord& rec = records.back();
    for (char raw : residues) {
      if (raw == '*') continue;  // terminal stop marker
      const char upper = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
      const char c = canonical_residue(raw);
      if (c == '\0') {
        throw ParseError(source, line_no,
                         std::string("invalid residue '") + raw + "' in record '" + rec.id + "'");
      }
      if (c != upper && report) {
        report->substitutions.push_back({rec.id, rec.sequence.size(), upper, c});
      }
      rec.sequence.push_back(c);
    }
  }
  finish();
  return records;
}

std::vector<FastaRecord> parse_fasta(const fs::path& path, FastaReport* report) {
  return parse_fasta_text(read_text(path), path.string(), report);
}

// ---------------------------------------------------------------------------------------
// PSSM

ProfileMatrix parse_pssm_text(std::string_view text, const std::string& source,
                              std::string_view expected_sequence) {
  std::vector<std::array<double, 20>> rows;
  std::string letters;
  bool in_rows = false;
  const auto lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto toks = tokens(lines[n]);
    long index = 0;
    const bool row_like = toks.size() >= 2 && parse_int(toks[0], index) && toks[1].size() == 1 &&
                          std::isalpha(static_cast<unsigned char>(toks[1][0]));
    if (!row_like) {
      if (in_rows) break;  // first non-row line after the matrix ends it
      continue;
    }
    in_rows = true;
    const std::size_t row = rows.size() + 1;
    if (index != static_cast<long>(row)) {
      throw ParseError(source, n + 1,
                       "profile row " + std::to_string(row) + " has position index " +
                           std::string(toks[0]));
    }
    if (toks.size() < 22) {
      throw ParseError(source, n + 1,
                       "profile row " + std::to_string(row) + " has fewer than 20 scores");
    }
    std::array<double, 20> values{};
    for (std::size_t j = 0; j < 20; ++j) {
      long v = 0;
      if (!parse_int(toks[2 + j], v)) {
        throw ParseError(source, n + 1,
                         "profile row " + std::to_string(row) + ": non-numeric score '" +
                             std::string(toks[2 + j]) + "'");
      }
      values[j] = static_cast<double>(v);
    }
    rows.push_back(values);
    letters.push_back(toks[1][0]);
  }

  if (rows.size() != expected_sequence.size()) {
    throw ParseError(source, 0,
                     "profile has " + std::to_string(rows.size()) + " rows, sequence has " +
                         std::to_string(expected_sequence.size()) + " residues");
  }
  for (std::size_t i = 0; i < letters.size(); ++i) {
    if (canonical_residue(letters[i]) != canonical_residue(expected_sequence[i])) {
      throw ParseError(source, 0,
                       "profile row " + std::to_string(i + 1) + " residue '" + letters[i] +
                           "' does not match sequence residue '" + expected_sequence[i] + "'");
    }
  }
  ProfileMatrix m{Tensor({rows.size(), 20})};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < 20; ++j) m.scores.at(i, j) = rows[i][j];
  }
  return m;
}

ProfileMatrix parse_pssm(const fs::path& path, std::string_view expected_sequence) {
  return parse_pssm_text(read_text(path), path.string(), expected_sequence);
}

std::string format_pssm(const ProfileMatrix& profile, std::string_view sequence) {
  if (profile.length() != sequence.size()) {
    throw ValidationError("format_pssm: profile rows do not match sequence length");
  }
  std::ostringstream out;
  out << "\nLast position-specific scoring matrix computed, weighted observed percentages "
         "rounded down, information per position, and relative weight of gapless real matches "
         "to pseudocounts\n";
  out << "         ";
  for (char c : kProfileOrder) out << "  " << c;
  out << '\n';
  char buf[16];
  for (std::size_t i = 0; i < profile.length(); ++i) {
    std::snprintf(buf, sizeof buf, "%5zu %c ", i + 1, sequence[i]);
    out << buf;
    for (std::size_t j = 0; j < 20; ++j) {
      std::snprintf(buf, sizeof buf, "%3ld", std::lround(profile.scores.at(i, j)));
      out << buf;
    }
    out << "  0.00 0.00\n";
  }
  out << "\n                      K         Lambda\n"
         "PSI Ungapped         0.1346     0.3173\n";
  return out.str();
}

void write_pssm(const fs::path& path, const ProfileMatrix& profile, std::string_view sequence) {
  write_text(path, format_pssm(profile, sequence));
}

// ---------------------------------------------------------------------------------------
// SS / SA

namespace {

template <typename Class, typename Map>
std::vector<Class> parse_classes(std::string_view text, const std::string& source,
                                 std::size_t length, const char* kind, Map map) {
  std::vector<Class> out;
  std::size_t line_no = 1;
  for (char c : text) {
    if (c == '\n') {
      ++line_no;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    const auto cls = map(c);
    if (!cls) {
      throw ParseError(source, line_no, std::string("unknown ") + kind + " letter '" + c + "'");
    }
    out.push_back(*cls);
  }
  if (out.size() != length) {
    throw ParseError(source, 0,
                     std::string(kind) + " annotation has " + std::to_string(out.size()) +
                         " letters, expected " + std::to_string(length));
  }
  return out;
}

}  // namespace

std::vector<SecondaryStructure> parse_ss_text(std::string_view text, const std::string& source,
                                              std::size_t length) {
  return parse_classes<SecondaryStructure>(
      text, source, length, "secondary structure",
      [](char c) -> std::optional<SecondaryStructure> {
        switch (c) {
          case 'H':
            return SecondaryStructure::helix;
          case 'E':
            return SecondaryStructure::strand;
          case 'C':
            return SecondaryStructure::loop;
          default:
            return std::nullopt;
        }
      });
}

std::vector<Accessibility> parse_sa_text(std::string_view text, const std::string& source,
                                         std::size_t length) {
  return parse_classes<Accessibility>(text, source, length, "solvent accessibility",
                                      [](char c) -> std::optional<Accessibility> {
                                        switch (c) {
                                          case 'e':
                                            return Accessibility::exposed;
                                          case 'b':
                                            return Accessibility::buried;
                                          default:
                                            return std::nullopt;
                                        }
                                      });
}

std::vector<SecondaryStructure> parse_ss(const fs::path& path, std::size_t length) {
  return parse_ss_text(read_text(path), path.string(), length);
}

std::vector<Accessibility> parse_sa(const fs::path& path, std::size_t length) {
  return parse_sa_text(read_text(path), path.string(), length);
}

std::string format_ss(const std::vector<SecondaryStructure>& ss) {
  std::string s;
  for (auto c : ss) {
    s.push_back(c == SecondaryStructure::helix ? 'H' : c == SecondaryStructure::strand ? 'E' : 'C');
  }
  return s + "\n";
}

std::string format_sa(const std::vector<Accessibility>& sa) {
  std::string s;
  for (auto c : sa) s.push_back(c == Accessibility::exposed ? 'e' : 'b');
  return s + "\n";
}

// ---------------------------------------------------------------------------------------
// Encoding

EncodedProtein encode_protein(std::string id, std::string_view sequence,
                              const FeatureBlocks& blocks, std::optional<std::size_t> label) {
  const std::size_t len = sequence.size();
  if (len == 0) throw ValidationError("encode_protein: '" + id + "' has an empty sequence");
  auto mismatch = [&](const char* what, std::size_t n) {
    return ValidationError("encode_protein: '" + id + "' " + what + " has length " +
                           std::to_string(n) + ", sequence has " + std::to_string(len));
  };
  if (blocks.profile && blocks.profile->length() != len) {
    throw mismatch("profile", blocks.profile->length());
  }
  if (blocks.secondary && blocks.secondary->size() != len) {
    throw mismatch("secondary structure", blocks.secondary->size());
  }
  if (blocks.accessibility && blocks.accessibility->size() != len) {
    throw mismatch("solvent accessibility", blocks.accessibility->size());
  }

  EncodedProtein p;
  p.id = std::move(id);
  p.residues = std::string(sequence);
  p.label = label;
  p.features = Tensor({len, kFeatureWidth});
  p.provenance = {blocks.profile.has_value(), blocks.secondary.has_value(),
                  blocks.accessibility.has_value()};
  for (std::size_t i = 0; i < len; ++i) {
    const auto r = residue_index(sequence[i]);
    if (!r) {
      throw ValidationError("encode_protein: '" + p.id + "' has non-canonical residue '" +
                            std::string(1, sequence[i]) + "' at position " + std::to_string(i));
    }
    p.features.at(i, kOneHotOffset + *r) = 1.0;
    if (blocks.profile) {
      for (std::size_t j = 0; j < 20; ++j) {
        p.features.at(i, kProfileOffset + j) = blocks.profile->scores.at(i, j);
      }
    }
    if (blocks.secondary) {
      p.features.at(i, kSecondaryOffset + static_cast<std::size_t>((*blocks.secondary)[i])) = 1.0;
    }
    if (blocks.accessibility) {
      p.features.at(i, kAccessibilityOffset + static_cast<std::size_t>((*blocks.accessibility)[i])) =
          1.0;
    }
  }
  return p;
}

void check_encoded(const EncodedProtein& p) {
  const std::size_t len = p.length();
  if (len == 0) throw ValidationError("'" + p.id + "': empty protein");
  if (p.features.shape() != Tensor::Shape{len, kFeatureWidth}) {
    throw ValidationError("'" + p.id + "': feature matrix " + shape_string(p.features.shape()) +
                          " does not match length " + std::to_string(len));
  }
  auto block_sum = [&](std::size_t i, std::size_t offset, std::size_t width, bool binary) {
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double v = p.features.at(i, offset + j);
      if (binary && v != 0.0 && v != 1.0) return -1.0;
      s += v;
    }
    return s;
  };
  for (std::size_t i = 0; i < len; ++i) {
    if (block_sum(i, kOneHotOffset, 20, true) != 1.0) {
      throw ValidationError("'" + p.id + "': residue one-hot block invalid at row " +
                            std::to_string(i));
    }
    const double ss = block_sum(i, kSecondaryOffset, 3, true);
    if (ss != (p.provenance.secondary ? 1.0 : 0.0)) {
      throw ValidationError("'" + p.id + "': secondary structure block invalid at row " +
                            std::to_string(i));
    }
    const double sa = block_sum(i, kAccessibilityOffset, 2, true);
    if (sa != (p.provenance.accessibility ? 1.0 : 0.0)) {
      throw ValidationError("'" + p.id + "': accessibility block invalid at row " +
                            std::to_string(i));
    }
  }
  if (!p.features.all_finite()) throw ValidationError("'" + p.id + "': non-finite features");
}

void standardize_profiles(std::vector<EncodedProtein>& proteins) {
  std::array<double, 20> sum{}, sq{};
  double rows = 0.0;
  for (const auto& p : proteins) {
    if (!p.provenance.profile) continue;
    for (std::size_t i = 0; i < p.length(); ++i) {
      for (std::size_t j = 0; j < 20; ++j) {
        const double v = p.features.at(i, kProfileOffset + j);
        sum[j] += v;
        sq[j] += v * v;
      }
      rows += 1.0;
    }
  }
  if (rows < 2.0) return;
  std::array<double, 20> mean{}, inv_std{};
  for (std::size_t j = 0; j < 20; ++j) {
    mean[j] = sum[j] / rows;
    const double var = std::max(sq[j] / rows - mean[j] * mean[j], 0.0);
    inv_std[j] = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  }
  for (auto& p : proteins) {
    if (!p.provenance.profile) continue;
    for (std::size_t i = 0; i < p.length(); ++i) {
      for (std::size_t j = 0; j < 20; ++j) {
        double& v = p.features.at(i, kProfileOffset + j);
        v = (v - mean[j]) * inv_std[j];
      }
    }
  }
}

// ---------------------------------------------------------------------------------------
// Dataset directories

std::map<std::string, std::size_t> parse_labels(const fs::path& path) {
  const std::string text = read_text(path);
  const auto lines = split_lines(text);
  std::map<std::string, std::size_t> labels;
  for (std::size_t n = 1; n < lines.size(); ++n) {  // line 1 is the header
    if (lines[n].find_first_not_of(" \t") == std::string_view::npos) continue;
    const std::size_t tab = lines[n].find('\t');
    if (tab == std::string_view::npos) {
      throw ParseError(path.string(), n + 1, "expected id<TAB>fold_index");
    }
    const std::string id(lines[n].substr(0, tab));
    std::size_t fold = 0;
    if (id.empty() || !parse_int(lines[n].substr(tab + 1), fold)) {
      throw ParseError(path.string(), n + 1, "malformed label line");
    }
    if (!labels.emplace(id, fold).second) {
      throw ParseError(path.string(), n + 1, "duplicate label for '" + id + "'");
    }
  }
  return labels;
}

Dataset load_dataset(const fs::path& dir, const DatasetOptions& options) {
  if (!fs::is_directory(dir)) throw ValidationError("dataset directory not found: " + dir.string());
  Dataset ds;
  const auto records = parse_fasta(dir / "sequences.fasta", &ds.report);
  std::map<std::string, std::size_t> labels;
  if (fs::exists(dir / "labels.tsv")) {
    labels = parse_labels(dir / "labels.tsv");
  } else if (options.require_labels) {
    throw ValidationError("labels file not found: " + (dir / "labels.tsv").string());
  }
  for (const auto& rec : records) {
    FeatureBlocks blocks;
    const fs::path pssm = dir / "profiles" / (rec.id + ".pssm");
    const fs::path ss = dir / "ss" / (rec.id + ".ss");
    const fs::path sa = dir / "sa" / (rec.id + ".sa");
    if (fs::exists(pssm)) blocks.profile = parse_pssm(pssm, rec.sequence);
    if (fs::exists(ss)) blocks.secondary = parse_ss(ss, rec.sequence.size());
    if (fs::exists(sa)) blocks.accessibility = parse_sa(sa, rec.sequence.size());
    std::optional<std::size_t> label;
    if (auto it = labels.find(rec.id); it != labels.end()) {
      label = it->second;
    } else if (options.require_labels) {
      throw ValidationError("no fold label for '" + rec.id + "'");
    }
    ds.proteins.push_back(encode_protein(rec.id, rec.sequence, blocks, label));
  }
  if (options.standardize_profile) standardize_profiles(ds.proteins);
  return ds;
}

void write_dataset(const fs::path& dir, const std::vector<EncodedProtein>& proteins) {
  fs::create_directories(dir);
  std::ostringstream fasta, labels;
  labels << "id\tfold_index\n";
  bool any_label = false;
  for (const auto& p : proteins) {
    fasta << '>' << p.id << '\n';
    for (std::size_t i = 0; i < p.residues.size(); i += 60) fasta << p.residues.substr(i, 60) << '\n';
    if (p.label) {
      labels << p.id << '\t' << *p.label << '\n';
      any_label = true;
    }
    if (p.provenance.profile) {
      fs::create_directories(dir / "profiles");
      ProfileMatrix m{Tensor({p.length(), 20})};
      for (std::size_t i = 0; i < p.length(); ++i) {
        for (std::size_t j = 0; j < 20; ++j) m.scores.at(i, j) = p.features.at(i, kProfileOffset + j);
      }
      write_pssm(dir / "profiles" / (p.id + ".pssm"), m, p.residues);
    }
    if (p.provenance.secondary) {
      fs::create_directories(dir / "ss");
      std::vector<SecondaryStructure> ss(p.length());
      for (std::size_t i = 0; i < p.length(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
          if (p.features.at(i, kSecondaryOffset + c) == 1.0) ss[i] = static_cast<SecondaryStructure>(c);
        }
      }
      write_text(dir / "ss" / (p.id + ".ss"), format_ss(ss));
    }
    if (p.provenance.accessibility) {
      fs::create_directories(dir / "sa");
      std::vector<Accessibility> sa(p.length());
      for (std::size_t i = 0; i < p.length(); ++i) {
        if (p.features.at(i, kAccessibilityOffset + 1) == 1.0) sa[i] = Accessibility::buried;
      }
      write_text(dir / "sa" / (p.id + ".sa"), format_sa(sa));
    }
  }
  write_text(dir / "sequences.fasta", fasta.str());
  if (any_label) write_text(dir / "labels.tsv", labels.str());
}

// ---------------------------------------------------------------------------------------
// Encoded cache

namespace {
constexpr char kEncodedMagic[4] = {'D', 'S', 'F', 'E'};
constexpr std::uint32_t kEncodedVersion = 1;
}  // namespace

void save_encoded(const fs::path& path, const std::vector<EncodedProtein>& proteins) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(kEncodedMagic, 4);
  io::write_le<std::uint32_t>(out, kEncodedVersion);
  io::write_le<std::uint64_t>(out, proteins.size());
  for (const auto& p : proteins) {
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.id.size()));
    io::write_bytes(out, p.id);
    io::write_le<std::uint64_t>(out, p.residues.size());
    io::write_bytes(out, p.residues);
    io::write_le<std::uint64_t>(out, p.label ? static_cast<std::uint64_t>(*p.label)
                                             : ~std::uint64_t{0});
    const std::uint8_t flags = (p.provenance.profile ? 1 : 0) | (p.provenance.secondary ? 2 : 0) |
                               (p.provenance.accessibility ? 4 : 0);
    io::write_le<std::uint8_t>(out, flags);
    for (double v : p.features.values()) io::write_f64(out, v);
  }
}

std::vector<EncodedProtein> load_encoded(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  io::Reader r(in, path.string());
  if (r.read_string(4, "magic") != std::string(kEncodedMagic, 4)) {
    throw FormatError(path.string() + ": not an encoded protein cache (bad magic)");
  }
  if (const auto v = r.read_le<std::uint32_t>("version"); v != kEncodedVersion) {
    throw FormatError(path.string() + ": unsupported cache version " + std::to_string(v));
  }
  const auto count = r.read_le<std::uint64_t>("record count");
  std::vector<EncodedProtein> proteins;
  for (std::uint64_t n = 0; n < count; ++n) {
    EncodedProtein p;
    p.id = r.read_string(r.read_le<std::uint32_t>("id length"), "id");
    const auto len = r.read_le<std::uint64_t>("sequence length");
    p.residues = r.read_string(len, "residues");
    const auto label = r.read_le<std::uint64_t>("label");
    if (label != ~std::uint64_t{0}) p.label = static_cast<std::size_t>(label);
    const auto flags = r.read_le<std::uint8_t>("flags");
    p.provenance = {(flags & 1) != 0, (flags & 2) != 0, (flags & 4) != 0};
    p.features = Tensor({len, kFeatureWidth});
    for (double& v : p.features.values()) v = r.read_f64("features");
    proteins.push_back(std::move(p));
  }
  r.expect_end();
  return proteins;
}

// ---------------------------------------------------------------------------------------
// Synthetic corpora

void SyntheticSpec::validate() const {
  if (num_folds == 0 || proteins_per_fold == 0 || motifs_per_fold == 0 || motif_length == 0) {
    throw ValidationError("synthetic spec: all counts must be positive");
  }
  if (min_length == 0 || min_length > max_length) {
    throw ValidationError("synthetic spec: invalid length range");
  }
  if (min_length < motifs_per_fold * motif_length) {
    throw ValidationError("synthetic spec: minimum length " + std::to_string(min_length) +
                          " cannot hold " + std::to_string(motifs_per_fold) + " motifs of length " +
                          std::to_string(motif_length));
  }
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw ValidationError("synthetic spec: noise rate must lie in [0, 1]");
  }
  const double distinct = std::pow(20.0, static_cast<double>(motif_length));
  if (distinct < static_cast<double>(num_folds * motifs_per_fold)) {
    throw ValidationError("synthetic spec: motif length too short for distinct motifs");
  }
}

ProfileMatrix synthetic_profile(std::string_view sequence) {
  constexpr std::ptrdiff_t kHalfWindow = 2;
  const auto len = static_cast<std::ptrdiff_t>(sequence.size());
  ProfileMatrix m{Tensor({sequence.size(), 20})};
  for (std::ptrdiff_t i = 0; i < len; ++i) {
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - kHalfWindow);
         j <= std::min(len - 1, i + kHalfWindow); ++j) {
      const std::size_t col = profile_column(sequence[static_cast<std::size_t>(j)]);
      if (col != std::string_view::npos) m.scores.at(static_cast<std::size_t>(i), col) += 1.0;
    }
  }
  return m;
}

std::vector<SecondaryStructure> synthetic_secondary(std::string_view sequence) {
  constexpr std::string_view kHelix = "AELMQKRH";
  constexpr std::string_view kStrand = "VIYFWTC";
  std::vector<SecondaryStructure> out;
  out.reserve(sequence.size());
  for (char c : sequence) {
    if (kHelix.find(c) != std::string_view::npos) {
      out.push_back(SecondaryStructure::helix);
    } else if (kStrand.find(c) != std::string_view::npos) {
      out.push_back(SecondaryStructure::strand);
    } else {
      out.push_back(SecondaryStructure::loop);
    }
  }
  return out;
}

std::vector<Accessibility> synthetic_accessibility(std::string_view sequence) {
  constexpr std::string_view kBuried = "AVILMFWC";
  std::vector<Accessibility> out;
  out.reserve(sequence.size());
  for (char c : sequence) {
    out.push_back(kBuried.find(c) != std::string_view::npos ? Accessibility::buried
                                                            : Accessibility::exposed);
  }
  return out;
}

FeatureBlocks synthetic_blocks(std::string_view sequence) {
  return {synthetic_profile(sequence), synthetic_secondary(sequence),
          synthetic_accessibility(sequence)};
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> letter(0, kAlphabet.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_string = [&](std::size_t n) {
    std::string s(n, 'A');
    for (char& c : s) c = kAlphabet[letter(rng)];
    return s;
  };

  SyntheticCorpus corpus;
  std::set<std::string> used;
  corpus.motifs.resize(spec.num_folds);
  for (auto& fold_motifs : corpus.motifs) {
    while (fold_motifs.size() < spec.motifs_per_fold) {
      std::string m = random_string(spec.motif_length);
      if (used.insert(m).second) fold_motifs.push_back(std::move(m));
    }
  }

  std::uniform_int_distribution<std::size_t> length_dist(spec.min_length, spec.max_length);
  const std::size_t motif_span = spec.motifs_per_fold * spec.motif_length;
  for (std::size_t fold = 0; fold < spec.num_folds; ++fold) {
    for (std::size_t n = 0; n < spec.proteins_per_fold; ++n) {
      const std::size_t len = length_dist(rng);
      std::string seq = random_string(len);

      // Non-overlapping placement: sorted gap offsets in [0, free] plus cumulative motif span.
      std::uniform_int_distribution<std::size_t> gap(0, len - motif_span);
      std::vector<std::size_t> offsets(spec.motifs_per_fold);
      for (auto& o : offsets) o = gap(rng);
      std::sort(offsets.begin(), offsets.end());
      std::vector<std::size_t> order(spec.motifs_per_fold);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t slot = 0; slot < spec.motifs_per_fold; ++slot) {
        const std::string& motif = corpus.motifs[fold][order[slot]];
        const std::size_t start = offsets[slot] + slot * spec.motif_length;
        for (std::size_t i = 0; i < motif.size(); ++i) {
          seq[start + i] = unit(rng) < spec.noise_rate ? kAlphabet[letter(rng)] : motif[i];
        }
      }

      char id[32];
      std::snprintf(id, sizeof id, "syn_f%03zu_p%03zu", fold, n);
      corpus.proteins.push_back(encode_protein(id, seq, synthetic_blocks(seq), fold));
    }
  }
  return corpus;
}

}  // namespace foldnet::encode
