#include <doctest.h>

#include <fstream>
#include <sstream>

#include "foldnet/encode.hpp"
#include "foldnet/error.hpp"
#include "support.hpp"

using namespace foldnet;
using namespace foldnet::encode;
using foldnet::testing::ScratchDir;

namespace {

const std::filesystem::path kFixtures = FOLDNET_FIXTURE_DIR;
const std::string kQuery = "MKTAYIAKQRQISFVKSHFSRQ";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("residue alphabet and canonical substitutions") {
  CHECK(residue_index('A') == 0u);
  CHECK(residue_index('Y') == 19u);
  CHECK_FALSE(residue_index('B').has_value());
  CHECK(canonical_residue('b') == 'D');
  CHECK(canonical_residue('Z') == 'E');
  CHECK(canonical_residue('X') == 'A');
  CHECK(canonical_residue('U') == 'C');
  CHECK(canonical_residue('O') == 'K');
  CHECK(canonical_residue('J') == 'L');
  CHECK(canonical_residue('w') == 'W');
  CHECK(canonical_residue('1') == '\0');
}

TEST_CASE("FASTA parsing joins lines and reports substitutions") {
  FastaReport report;
  const auto recs = parse_fasta_text(">a desc\nACD\nxef*\n\n>b\nGG\n", "t", &report);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].id == "a");
  CHECK(recs[0].sequence == "ACDAEF");
  CHECK(recs[1].sequence == "GG");
  REQUIRE(report.substitutions.size() == 1);
  CHECK(report.substitutions[0].position == 3);
  CHECK(report.substitutions[0].replacement == 'A');

  const auto file = parse_fasta(kFixtures / "query.fasta");
  REQUIRE(file.size() == 1);
  CHECK(file[0].id == "query");
  CHECK(file[0].sequence == kQuery);
}

TEST_CASE("malformed FASTA raises ParseError with the offending line") {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_fasta_text(text, "bad.fasta");
    } catch (const ParseError& e) {
      return e.line();
    }
    FAIL("accepted malformed FASTA: " << text);
    return 0;
  };
  CHECK(line_of("ACDE\n") == 1);            // data before header
  CHECK(line_of(">a\nAC\n>a\nDE\n") == 3);  // duplicate id
  CHECK(line_of(">a\n>b\nAC\n") == 1);      // empty record
  CHECK(line_of(">a\nAC\n>b\n") == 3);      // empty last record
  CHECK(line_of(">\nAC\n") == 1);           // missing id
  CHECK(line_of("> a\nAC\n") == 1);         // space before id
  CHECK(line_of(">a\nAC1D\n") == 2);        // digit
  CHECK(line_of(">a\nAC\nD-E\n") == 3);     // gap symbol
  CHECK_THROWS_AS(parse_fasta(kFixtures / "missing.fasta"), ValidationError);
}

TEST_CASE("PSSM fixture parses and round-trips exactly") {
  const auto m = parse_pssm(kFixtures / "query.pssm", kQuery);
  REQUIRE(m.length() == kQuery.size());
  const std::vector<double> first{0, -3, 1, -5, -4, 3, -4, 0, -5, 3, -2, -5, 4, 1, 1, -4, -2, -4, 3, 1};
  for (std::size_t j = 0; j < 20; ++j) CHECK(m.scores.at(0, j) == first[j]);

  const std::string text = format_pssm(m, kQuery);
  const auto again = parse_pssm_text(text, "formatted", kQuery);
  CHECK(again.scores == m.scores);
  CHECK(format_pssm(again, kQuery) == text);

  ScratchDir dir("pssm");
  write_pssm(dir / "q.pssm", m, kQuery);
  CHECK(slurp(dir / "q.pssm") == text);
  CHECK(parse_pssm(dir / "q.pssm", kQuery).scores == m.scores);
}

TEST_CASE("malformed PSSM input raises ParseError") {
  const std::string good = slurp(kFixtures / "query.pssm");
  CHECK_THROWS_AS(parse_pssm_text(good, "p", kQuery.substr(1)), ParseError);       // length
  CHECK_THROWS_AS(parse_pssm_text(good, "p", "A" + kQuery.substr(1)), ParseError); // residue
  std::string bad = good;
  bad.replace(bad.find("    2 K"), 7, "    3 K");
  CHECK_THROWS_AS(parse_pssm_text(bad, "p", kQuery), ParseError);  // index gap
  std::string nonnum = good;
  nonnum.replace(nonnum.find("    1 M     0"), 13, "    1 M     x");
  CHECK_THROWS_AS(parse_pssm_text(nonnum, "p", kQuery), ParseError);
  CHECK_THROWS_AS(parse_pssm_text("    1 M  1 2 3\n", "p", "M"), ParseError);  // short row
  CHECK_THROWS_AS(parse_pssm_text("no rows here\n", "p", "M"), ParseError);
}

TEST_CASE("SS and SA parsing") {
  const auto ss = parse_ss(kFixtures / "query.ss", kQuery.size());
  CHECK(ss[0] == SecondaryStructure::loop);
  CHECK(ss[2] == SecondaryStructure::helix);
  CHECK(ss[13] == SecondaryStructure::strand);
  CHECK(format_ss(ss) == "CCHHHHHHHHHCCEEEECCCCC\n");
  const auto sa = parse_sa(kFixtures / "query.sa", kQuery.size());
  CHECK(sa[2] == Accessibility::buried);
  CHECK(format_sa(sa) == "eebbbeebeebbeeebbbeebe\n");

  auto line_of = [](auto fn) -> std::size_t {
    try {
      fn();
    } catch (const ParseError& e) {
      return e.line();
    }
    FAIL("accepted malformed annotation");
    return 99;
  };
  CHECK(line_of([] { parse_ss_text("HHE\nHXC\n", "s", 6); }) == 2);
  CHECK(line_of([] { parse_ss_text("HHE", "s", 4); }) == 0);
  CHECK(line_of([] { parse_sa_text("eeb\nbq", "s", 5); }) == 2);
  CHECK(line_of([] { parse_sa_text("eebb", "s", 3); }) == 0);
  CHECK(line_of([] { parse_sa_text("EEBB", "s", 4); }) == 1);
}

TEST_CASE("encoded rows follow the column layout") {
  FeatureBlocks blocks;
  blocks.profile = parse_pssm(kFixtures / "query.pssm", kQuery);
  blocks.secondary = parse_ss(kFixtures / "query.ss", kQuery.size());
  const auto p = encode_protein("query", kQuery, blocks, 3);
  CHECK(p.features.shape() == Tensor::Shape{kQuery.size(), kFeatureWidth});
  CHECK(p.features.at(0, kOneHotOffset + *residue_index('M')) == 1.0);
  CHECK(p.features.at(0, kProfileOffset + 2) == 1.0);
  CHECK(p.features.at(2, kSecondaryOffset + 0) == 1.0);
  CHECK(p.features.at(0, kAccessibilityOffset) == 0.0);
  CHECK(p.provenance == FeatureProvenance{true, true, false});
  CHECK(p.label == 3u);
  CHECK_NOTHROW(check_encoded(p));

  FeatureBlocks wrong;
  wrong.secondary = std::vector<SecondaryStructure>(3, SecondaryStructure::loop);
  CHECK_THROWS_AS(encode_protein("x", kQuery, wrong), ValidationError);
  CHECK_THROWS_AS(encode_protein("x", "", {}), ValidationError);
  CHECK_THROWS_AS(encode_protein("x", "ACB", {}), ValidationError);

  auto broken = p;
  broken.features.at(1, 0) = 1.0;
  CHECK_THROWS_AS(check_encoded(broken), ValidationError);
}

TEST_CASE("profile standardization gives zero mean and unit variance per column") {
  auto corpus = foldnet::testing::small_corpus(2, 4).proteins;
  standardize_profiles(corpus);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& p : corpus) {
    for (std::size_t i = 0; i < p.length(); ++i) {
      const double v = p.features.at(i, kProfileOffset + 4);
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("synthetic corpora are deterministic and well formed") {
  SyntheticSpec spec;
  spec.num_folds = 3;
  spec.proteins_per_fold = 5;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  REQUIRE(a.proteins.size() == 15);
  CHECK(a.motifs.size() == 3);
  for (std::size_t i = 0; i < a.proteins.size(); ++i) {
    const auto& p = a.proteins[i];
    CHECK(p.residues == b.proteins[i].residues);
    CHECK(p.length() >= spec.min_length);
    CHECK(p.length() <= spec.max_length);
    REQUIRE(p.label.has_value());
    CHECK_NOTHROW(check_encoded(p));
  }
  spec.seed = 2;
  CHECK(generate_synthetic(spec).proteins[0].residues != a.proteins[0].residues);

  SyntheticSpec bad;
  bad.min_length = 130;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = {};
  bad.noise_rate = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("dataset directories and the encoded cache round-trip") {
  ScratchDir dir("dataset");
  const auto corpus = foldnet::testing::small_corpus(2, 3).proteins;
  write_dataset(dir.path(), corpus);
  const auto loaded = load_dataset(dir.path(), {false, true});
  REQUIRE(loaded.proteins.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(loaded.proteins[i].id == corpus[i].id);
    CHECK(loaded.proteins[i].label == corpus[i].label);
    CHECK(loaded.proteins[i].features == corpus[i].features);
  }

  save_encoded(dir / "cache.dsfe", corpus);
  const auto cached = load_encoded(dir / "cache.dsfe");
  REQUIRE(cached.size() == corpus.size());
  CHECK(cached[2].features == corpus[2].features);
  CHECK(cached[2].provenance == corpus[2].provenance);

  {
    std::ofstream f(dir / "junk.dsfe", std::ios::binary);
    f << "NOPE and more";
  }
  CHECK_THROWS_AS(load_encoded(dir / "junk.dsfe"), FormatError);

  std::filesystem::remove(dir / "labels.tsv");
  CHECK_THROWS_AS(load_dataset(dir.path(), {false, true}), ValidationError);
  CHECK_NOTHROW(load_dataset(dir.path(), {false, false}));
}

TEST_CASE("label files reject malformed lines") {
  ScratchDir dir("labels");
  {
    std::ofstream f(dir / "labels.tsv");
    f << "id\tfold\na\t1\nb\tx\n";
  }
  CHECK_THROWS_AS(parse_labels(dir / "labels.tsv"), ParseError);
}
