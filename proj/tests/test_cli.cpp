#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "foldnet/cli.hpp"
#include "support.hpp"

using namespace foldnet;
using foldnet::testing::ScratchDir;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "foldnet");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string first_line(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

}  // namespace

TEST_CASE("fnv1a reference values") {
  CHECK(cli::fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(cli::fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(cli::fnv1a("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("usage errors exit with 1 and help with 0") {
  CHECK(invoke({"--help"}).code == cli::kExitOk);
  CHECK(invoke({}).code == cli::kExitUsage);
  CHECK(invoke({"bogus"}).code == cli::kExitUsage);
  CHECK(invoke({"train", "--no-such-flag"}).code == cli::kExitUsage);
  CHECK(invoke({"train", "--epochs", "many"}).code == cli::kExitUsage);
  CHECK(invoke({"cluster", "--metric", "cosine"}).code == cli::kExitUsage);
  CHECK(invoke({"--config", "/nonexistent/config.json", "synth"}).code == cli::kExitUsage);
}

TEST_CASE("data errors exit with 2 and name the path") {
  ScratchDir dir("cli_err");
  const auto r = invoke({"--out", dir.path().string(), "train", "--data", "/nonexistent/data"});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find("/nonexistent/data") != std::string::npos);
  CHECK(invoke({"--out", dir.path().string(), "eval", "--data", dir.path().string(), "--checkpoint",
                "/nonexistent/model.dsf"}).code == cli::kExitData);
  CHECK(invoke({"--out", dir.path().string(), "predict", "--checkpoint", "/nonexistent.dsf",
                "--sequence", "ACD"}).code == cli::kExitData);
}

TEST_CASE("end-to-end pipeline on a tiny corpus") {
  ScratchDir dir("cli_e2e");
  const auto data = (dir / "data").string();
  const auto run = (dir / "run").string();
  REQUIRE(invoke({"--out", data, "--seed", "4", "synth", "--folds", "3", "--per-fold", "6",
                  "--min-length", "30", "--max-length", "60"}).code == 0);
  CHECK(std::filesystem::exists(dir / "data" / "sequences.fasta"));
  CHECK(first_line(dir / "data" / "motifs.tsv").rfind("# foldnet synth seed=4 config=", 0) == 0);

  REQUIRE(invoke({"--out", data, "encode", "--data", data}).code == 0);
  REQUIRE(std::filesystem::exists(dir / "data" / "encoded.dsfe"));

  const auto t = invoke({"--out", run, "train", "--data", (dir / "data" / "encoded.dsfe").string(),
                         "--epochs", "2", "--inner-epochs", "1", "--windows", "3", "4", "--filters",
                         "4", "--depth", "2", "--kmax", "5", "--hidden", "10"});
  REQUIRE(t.code == 0);
  for (const char* f : {"model.dsf", "final.dsf", "train_log.jsonl", "split.tsv", "manifest.json"}) {
    CHECK(std::filesystem::exists(dir / "run" / f));
  }
  const auto manifest = nlohmann::json::parse(slurp(dir / "run" / "manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["config"]["train.epochs"] == "2");
  CHECK(first_line(dir / "run" / "split.tsv") ==
        "# foldnet train seed=7 config=" + manifest["config_hash"].get<std::string>());

  const auto model = (dir / "run" / "model.dsf").string();
  const auto e = invoke({"--out", run, "eval", "--data", data, "--checkpoint", model});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("all\t18\t") != std::string::npos);

  const auto p = invoke({"--out", run, "predict", "--checkpoint", model, "--sequence",
                         "MKTAYIAKQRQISFVKSHFSRQ", "--topk", "2"});
  REQUIRE(p.code == 0);
  CHECK(p.out.find("query\t2\t") != std::string::npos);
  CHECK(invoke({"--out", run, "predict", "--checkpoint", model, "--sequence", "MK1"}).code ==
        cli::kExitData);

  REQUIRE(invoke({"--out", run, "extract", "--data", data, "--checkpoint", model}).code == 0);
  const auto db = (dir / "run" / "templates.dsft").string();
  CHECK(invoke({"--out", run, "cluster", "--templates", db, "--trials", "3", "--folds-per-trial",
                "3", "--max-proteins", "12"}).code == 0);
  CHECK(std::filesystem::exists(dir / "run" / "cluster_kl.tsv"));
  const auto r = invoke({"--out", run, "rank", "--checkpoint", model, "--templates", db, "--data",
                         data, "--id", "syn_f001_p002", "--top-templates", "3"});
  CHECK(r.code == 0);
  CHECK(r.out.find("syn_f001_p002\t1\tsyn_f001_p002\t") != std::string::npos);
  CHECK(invoke({"--out", run, "rank", "--checkpoint", model, "--templates", db, "--data", data,
                "--id", "nope"}).code == cli::kExitData);

  const auto pt = invoke({"--out", run, "perturb", "--checkpoint", model, "--data", data,
                          "--repeats", "3", "--controls", "5", "--control-min", "30",
                          "--control-max", "60", "--truncation", "2", "--step", "4"});
  CHECK(pt.code == 0);
  CHECK(std::filesystem::exists(dir / "run" / "truncation.tsv"));
  CHECK(std::filesystem::exists(dir / "run" / "divergence_summary.tsv"));
}

TEST_CASE("JSON config sections match the equivalent flags") {
  ScratchDir dir("cli_cfg");
  {
    std::ofstream f(dir / "cfg.json");
    f << R"({"seed": 9, "out": ")" << (dir / "a").string()
      << R"(", "synth": {"folds": 2, "per-fold": 3, "noise": 0.1}})";
  }
  REQUIRE(invoke({"--config", (dir / "cfg.json").string(), "synth"}).code == 0);
  REQUIRE(invoke({"--seed", "9", "--out", (dir / "b").string(), "synth", "--folds", "2",
                  "--per-fold", "3", "--noise", "0.1"}).code == 0);
  CHECK(slurp(dir / "a" / "sequences.fasta") == slurp(dir / "b" / "sequences.fasta"));
  const auto ma = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  const auto mb = nlohmann::json::parse(slurp(dir / "b" / "manifest.json"));
  CHECK(ma["config"]["synth.folds"] == "2");
  // Only the output directory differs.
  auto ca = ma["config"], cb = mb["config"];
  ca.erase("out");
  cb.erase("out");
  CHECK(ca == cb);

  // Flags override the file.
  REQUIRE(invoke({"--config", (dir / "cfg.json").string(), "--out", (dir / "c").string(), "synth",
                  "--folds", "3"}).code == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "c" / "manifest.json"))["config"]["synth.folds"] == "3");

  {
    std::ofstream f(dir / "broken.json");
    f << "{not json";
  }
  CHECK(invoke({"--config", (dir / "broken.json").string(), "synth"}).code == cli::kExitUsage);
}

TEST_CASE("outputs are reproducible for a fixed seed") {
  ScratchDir dir("cli_repro");
  const auto out = (dir / "x").string();
  REQUIRE(invoke({"--out", out, "synth", "--folds", "2", "--per-fold", "4"}).code == 0);
  const auto motifs = slurp(dir / "x" / "motifs.tsv");
  const auto fasta = slurp(dir / "x" / "sequences.fasta");
  REQUIRE(invoke({"--out", out, "synth", "--folds", "2", "--per-fold", "4"}).code == 0);
  CHECK(slurp(dir / "x" / "motifs.tsv") == motifs);
  CHECK(slurp(dir / "x" / "sequences.fasta") == fasta);
  REQUIRE(invoke({"--out", out, "--seed", "8", "synth", "--folds", "2", "--per-fold", "4"}).code == 0);
  CHECK(slurp(dir / "x" / "sequences.fasta") != fasta);
}

TEST_CASE("training twice with the same config gives identical artifacts") {
  ScratchDir dir("cli_train_repro");
  const auto data = (dir / "data").string();
  REQUIRE(invoke({"--out", data, "synth", "--folds", "2", "--per-fold", "5", "--min-length", "30",
                  "--max-length", "50"}).code == 0);
  const std::vector<std::string> train_args{"train", "--data", data, "--epochs", "2", "--windows", "3",
                                            "--filters", "3", "--depth", "1", "--kmax", "4", "--hidden", "6"};
  std::map<std::string, std::string> first;
  for (int round = 0; round < 2; ++round) {
    std::vector<std::string> args{"--out", (dir / "run").string()};
    args.insert(args.end(), train_args.begin(), train_args.end());
    REQUIRE(invoke(args).code == 0);
    for (const char* f : {"model.dsf", "final.dsf", "train_log.jsonl", "split.tsv", "train_summary.tsv"}) {
      const auto bytes = slurp(dir / "run" / f);
      if (round == 0) {
        first[f] = bytes;
      } else {
        CHECK_MESSAGE(bytes == first[f], f);
      }
    }
  }
}
