#include "foldnet/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "foldnet/analyze.hpp"
#include "foldnet/encode.hpp"
#include "foldnet/error.hpp"
#include "foldnet/model.hpp"
#include "foldnet/perturb.hpp"
#include "foldnet/simd.hpp"
#include "foldnet/template_db.hpp"
#include "foldnet/train.hpp"

namespace foldnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

// JSON configuration files: top-level keys are global flags, objects keyed by a
// subcommand name hold that subcommand's flags.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string& name = opt->get_lnames().front();
      if (opt->count() > 0) {
        j[name] = opt->results().size() == 1 ? json(opt->results().front()) : json(opt->results());
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const json& j, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto next = parents;
        next.push_back(key);
        flatten(value, next, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::uint64_t seed = 7;
  std::string out = "foldnet_out";
};

// Shared state of one invocation after parsing.
struct Context {
  std::string command;
  Globals globals;
  json config;
  std::string config_hash;
  std::ostream& out;
  std::ostream& err;

  fs::path out_dir() const { return fs::path(globals.out); }

  std::string header() const {
    return "# foldnet " + command + " seed=" + std::to_string(globals.seed) +
           " config=" + config_hash + "\n";
  }

  void write(const std::string& name, const std::string& body, bool with_header = true) const {
    fs::create_directories(out_dir());
    const fs::path path = out_dir() / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path.string());
    if (with_header) f << header();
    f << body;
    if (!f) throw ValidationError("failed writing " + path.string());
  }

  void write_manifest() const {
    json m;
    m["command"] = command;
    m["seed"] = globals.seed;
    m["config"] = config;
    m["config_hash"] = config_hash;
    m["simd_backend"] = simd::kernels().name;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ts;
    ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    m["created_utc"] = ts.str();
    write("manifest.json", m.dump(2) + "\n", false);
  }
};

json option_value(const CLI::Option* opt) {
  if (opt->count() == 0) return opt->get_default_str();
  const auto& r = opt->results();
  return r.size() == 1 ? json(r.front()) : json(r);
}

json effective_config(const CLI::App& app, const CLI::App& sub) {
  json j = json::object();
  auto add = [&](const CLI::App& a, const std::string& prefix) {
    for (const CLI::Option* opt : a.get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string& name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      j[prefix + name] = option_value(opt);
    }
  };
  add(app, "");
  add(sub, sub.get_name() + ".");
  return j;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::vector<encode::EncodedProtein> load_corpus(const std::string& path, bool require_labels,
                                                bool standardize = false) {
  if (path.empty()) throw ValidationError("no dataset given (--data)");
  const fs::path p(path);
  std::vector<encode::EncodedProtein> proteins;
  if (fs::is_directory(p)) {
    proteins = encode::load_dataset(p, {standardize, require_labels}).proteins;
  } else if (fs::is_regular_file(p)) {
    proteins = encode::load_encoded(p);
    if (standardize) encode::standardize_profiles(proteins);
    if (require_labels) {
      for (const auto& q : proteins) {
        if (!q.label) throw ValidationError(path + ": '" + q.id + "' has no fold label");
      }
    }
  } else {
    throw ValidationError("dataset not found: " + path);
  }
  if (proteins.empty()) throw ValidationError("dataset is empty: " + path);
  return proteins;
}

model::ModelState load_model(const std::string& path) {
  if (path.empty()) throw ValidationError("no checkpoint given (--checkpoint)");
  if (!fs::is_regular_file(path)) throw ValidationError("checkpoint not found: " + path);
  return model::load_checkpoint(path);
}

analyze::TemplateDB load_templates(const std::string& path) {
  if (!fs::is_regular_file(path)) throw ValidationError("template database not found: " + path);
  return analyze::load_template_db(path);
}

const encode::EncodedProtein& find_protein(const std::vector<encode::EncodedProtein>& corpus,
                                           const std::string& id) {
  for (const auto& p : corpus) {
    if (p.id == id) return p;
  }
  throw ValidationError("no protein with id '" + id + "' in the dataset");
}

// Query proteins from --sequence / --fasta with optional feature blocks.
struct QueryOptions {
  std::string sequence;
  std::string fasta;
  std::string pssm, ss, sa;
  bool synthetic_blocks = false;

  void add_to(CLI::App* sub) {
    sub->add_option("--sequence", sequence, "Query sequence (one-letter residues)");
    sub->add_option("--fasta", fasta, "FASTA file of query sequences");
    sub->add_option("--pssm", pssm, "Profile matrix for a single query");
    sub->add_option("--ss", ss, "Secondary structure for a single query");
    sub->add_option("--sa", sa, "Solvent accessibility for a single query");
    sub->add_flag("--synthetic-blocks", synthetic_blocks,
                  "Derive profile, secondary structure and accessibility from the sequence "
                  "the way synthetic corpora do");
  }

  std::vector<encode::EncodedProtein> load() const {
    std::vector<encode::FastaRecord> records;
    if (!sequence.empty() && !fasta.empty()) {
      throw ValidationError("give either --sequence or --fasta, not both");
    }
    if (!sequence.empty()) {
      records = encode::parse_fasta_text(">query\n" + sequence + "\n", "--sequence");
    } else if (!fasta.empty()) {
      if (!fs::is_regular_file(fasta)) throw ValidationError("FASTA file not found: " + fasta);
      records = encode::parse_fasta(fasta);
    } else {
      throw ValidationError("no query given (--sequence or --fasta)");
    }
    if (records.size() > 1 && (!pssm.empty() || !ss.empty() || !sa.empty())) {
      throw ValidationError("--pssm, --ss and --sa apply to a single query only");
    }
    std::vector<encode::EncodedProtein> out;
    for (const auto& rec : records) {
      encode::FeatureBlocks blocks;
      if (synthetic_blocks) blocks = encode::synthetic_blocks(rec.sequence);
      if (!pssm.empty()) blocks.profile = encode::parse_pssm(pssm, rec.sequence);
      if (!ss.empty()) blocks.secondary = encode::parse_ss(ss, rec.sequence.size());
      if (!sa.empty()) blocks.accessibility = encode::parse_sa(sa, rec.sequence.size());
      out.push_back(encode::encode_protein(rec.id, rec.sequence, blocks));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------------------

struct SynthCommand {
  encode::SyntheticSpec spec;

  void add_to(CLI::App* sub) {
    sub->add_option("--folds", spec.num_folds, "Number of folds");
    sub->add_option("--per-fold", spec.proteins_per_fold, "Proteins per fold");
    sub->add_option("--min-length", spec.min_length, "Shortest sequence");
    sub->add_option("--max-length", spec.max_length, "Longest sequence");
    sub->add_option("--motifs", spec.motifs_per_fold, "Motifs per fold");
    sub->add_option("--motif-length", spec.motif_length, "Residues per motif");
    sub->add_option("--noise", spec.noise_rate, "Chance that an implanted motif letter is redrawn");
  }

  void execute(Context& ctx) {
    spec.seed = ctx.globals.seed;
    const auto corpus = encode::generate_synthetic(spec);
    encode::write_dataset(ctx.out_dir(), corpus.proteins);
    std::ostringstream motifs;
    motifs << "fold\tmotif\n";
    for (std::size_t f = 0; f < corpus.motifs.size(); ++f) {
      for (const auto& m : corpus.motifs[f]) motifs << f << '\t' << m << '\n';
    }
    ctx.write("motifs.tsv", motifs.str());
    ctx.out << "wrote " << corpus.proteins.size() << " proteins in " << spec.num_folds
            << " folds to " << ctx.out_dir().string() << '\n';
  }
};

struct EncodeCommand {
  std::string data;
  bool standardize = false;

  void add_to(CLI::App* sub) {
    sub->add_option("--data", data, "Dataset directory");
    sub->add_flag("--standardize-profile", standardize, "Z-score profile columns over the corpus");
  }

  void execute(Context& ctx) {
    if (!fs::is_directory(data)) throw ValidationError("dataset directory not found: " + data);
    const auto proteins = load_corpus(data, false, standardize);
    fs::create_directories(ctx.out_dir());
    encode::save_encoded(ctx.out_dir() / "encoded.dsfe", proteins);
    std::ostringstream summary;
    summary << "id\tlength\tlabel\tprofile\tsecondary\taccessibility\n";
    for (const auto& p : proteins) {
      summary << p.id << '\t' << p.length() << '\t'
              << (p.label ? std::to_string(*p.label) : std::string("-")) << '\t'
              << p.provenance.profile << '\t' << p.provenance.secondary << '\t'
              << p.provenance.accessibility << '\n';
    }
    ctx.write("encoded.tsv", summary.str());
    ctx.out << "encoded " << proteins.size() << " proteins to "
            << (ctx.out_dir() / "encoded.dsfe").string() << '\n';
  }
};

struct TrainCommand {
  std::string data;
  train::TrainSchedule schedule;
  model::ModelConfig config;
  std::size_t num_folds = 0;
  double validation_fraction = 0.2;
  bool standardize = false;
  bool keep_running_stats = false;

  void add_to(CLI::App* sub) {
    sub->add_option("--data", data, "Dataset directory or encoded cache");
    sub->add_option("--bin-size", schedule.bin_size, "Length interval per bin");
    sub->add_option("--epochs", schedule.total_epochs, "Outer passes over all bins");
    sub->add_option("--inner-epochs", schedule.epochs_per_bin_visit, "Epochs per bin visit");
    sub->add_option("--capacity", schedule.batch_capacity, "Largest batch");
    sub->add_option("--lr", schedule.learning_rate, "Learning rate");
    sub->add_option("--momentum", schedule.momentum, "Momentum (0 for plain SGD)");
    sub->add_option("--validation-fraction", validation_fraction,
                    "Share of each fold held out for validation (0 disables)");
    sub->add_option("--num-folds", num_folds, "Output classes (default: largest label + 1)");
    sub->add_option("--windows", config.window_sizes, "Convolution window sizes");
    sub->add_option("--filters", config.filters_per_layer, "Filters per convolution layer");
    sub->add_option("--depth", config.conv_depth, "Convolution layers per window size");
    sub->add_option("--kmax", config.kmax, "Values kept per filter by K-max pooling");
    sub->add_option("--hidden", config.hidden_units, "Hidden layer width");
    sub->add_option("--dropout", config.dropout_rate, "Dropout rate");
    sub->add_flag("--standardize-profile", standardize, "Z-score profile columns over the corpus");
    sub->add_flag("--keep-running-stats", keep_running_stats,
                  "Do not re-estimate normalization statistics after each pass");
    sub->add_flag("--track-training", schedule.track_training_accuracy,
                  "Evaluate the training split after every pass");
  }

  void execute(Context& ctx) {
    auto corpus = load_corpus(data, true, standardize);
    std::size_t max_label = 0;
    for (const auto& p : corpus) max_label = std::max(max_label, *p.label);
    config.num_folds = num_folds ? num_folds : max_label + 1;
    schedule.seed = ctx.globals.seed;
    schedule.refresh_norm_statistics = !keep_running_stats;
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
      throw ValidationError("--validation-fraction must be in [0, 1)");
    }

    train::CorpusSplit split;
    if (validation_fraction > 0.0) {
      split = train::split_per_fold(corpus, 1.0 - validation_fraction, ctx.globals.seed + 2);
    } else {
      split.train = corpus;
    }
    std::ostringstream split_tsv;
    split_tsv << "id\tsplit\n";
    for (const auto& p : split.train) split_tsv << p.id << "\ttrain\n";
    for (const auto& p : split.validation) split_tsv << p.id << "\tvalidation\n";
    ctx.write("split.tsv", split_tsv.str());

    auto state = model::build_model(config, ctx.globals.seed + 1);
    auto result = train::train(std::move(state), split.train, schedule, split.validation,
                               [&](const train::PassRecord& r) {
                                 ctx.err << "pass " << r.pass << " loss " << fmt(r.loss);
                                 if (r.validation) {
                                   ctx.err << " val@1 " << fmt(r.validation->at(1)) << " val@5 "
                                           << fmt(r.validation->at(5));
                                 }
                                 ctx.err << '\n';
                               });
    fs::create_directories(ctx.out_dir());
    model::save_checkpoint(result.best, ctx.out_dir() / "model.dsf");
    model::save_checkpoint(result.final_state, ctx.out_dir() / "final.dsf");
    json head{{"type", "header"}, {"seed", ctx.globals.seed}, {"config_hash", ctx.config_hash}};
    ctx.write("train_log.jsonl", head.dump() + "\n" + result.log.to_jsonl(), false);

    const auto train_acc = train::evaluate_topk(result.best, split.train);
    std::ostringstream summary;
    summary << "split\tproteins\ttop1\ttop5\ttop10\n";
    summary << "train\t" << train_acc.count << '\t' << fmt(train_acc.at(1)) << '\t'
            << fmt(train_acc.at(5)) << '\t' << fmt(train_acc.at(10)) << '\n';
    if (!split.validation.empty()) {
      const auto val = train::evaluate_topk(result.best, split.validation);
      summary << "validation\t" << val.count << '\t' << fmt(val.at(1)) << '\t' << fmt(val.at(5))
              << '\t' << fmt(val.at(10)) << '\n';
    }
    ctx.write("train_summary.tsv", summary.str());
    ctx.out << summary.str();
    if (result.best_pass) ctx.out << "best pass " << *result.best_pass << '\n';
  }
};

struct EvalCommand {
  std::string data, checkpoint, fold_sizes_from;
  std::size_t topk = 10;

  void add_to(CLI::App* sub) {
    sub->add_option("--data", data, "Labeled dataset directory or encoded cache");
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint");
    sub->add_option("--topk", topk, "Largest k reported");
    sub->add_option("--fold-sizes-from", fold_sizes_from,
                    "Dataset whose fold sizes define the small/medium/large groups "
                    "(default: the evaluated dataset)");
  }

  void execute(Context& ctx) {
    if (topk == 0) throw ValidationError("--topk must be at least 1");
    const auto state = load_model(checkpoint);
    const auto corpus = load_corpus(data, true);
    const auto sizes = train::count_fold_sizes(
        fold_sizes_from.empty() ? corpus : load_corpus(fold_sizes_from, true));
    std::vector<std::size_t> ks;
    for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}}) {
      if (k < topk) ks.push_back(k);
    }
    ks.push_back(topk);

    const auto all = train::evaluate_topk(state, corpus, ks);
    const auto groups = train::group_evaluate(state, corpus, sizes, ks);
    std::ostringstream tsv;
    tsv << "group\tproteins";
    for (std::size_t k : ks) tsv << "\ttop" << k;
    tsv << '\n';
    auto row = [&](const std::string& name, const train::TopKAccuracy& acc) {
      tsv << name << '\t' << acc.count;
      for (std::size_t k : ks) tsv << '\t' << fmt(acc.at(k));
      tsv << '\n';
    };
    row("all", all);
    for (auto cls : {train::FoldSizeClass::small, train::FoldSizeClass::medium,
                     train::FoldSizeClass::large}) {
      auto it = groups.find(cls);
      if (it != groups.end()) row(train::fold_size_name(cls), it->second);
    }
    ctx.write("eval.tsv", tsv.str());
    ctx.out << tsv.str();
  }
};

struct PredictCommand {
  std::string checkpoint;
  std::size_t topk = 5;
  QueryOptions query;

  void add_to(CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint");
    sub->add_option("--topk", topk, "Folds reported per query");
    query.add_to(sub);
  }

  void execute(Context& ctx) {
    if (topk == 0) throw ValidationError("--topk must be at least 1");
    const auto state = load_model(checkpoint);
    const auto queries = query.load();
    const auto out = model::infer(state, queries);
    std::ostringstream tsv;
    tsv << "id\trank\tfold\tprobability\n";
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto top = model::top_k(out.predictions[i], topk);
      for (std::size_t r = 0; r < top.size(); ++r) {
        tsv << queries[i].id << '\t' << r + 1 << '\t' << top[r].fold << '\t'
            << fmt(top[r].probability) << '\n';
      }
    }
    ctx.write("predictions.tsv", tsv.str());
    ctx.out << tsv.str();
  }
};

struct ExtractCommand {
  std::string data, checkpoint;

  void add_to(CLI::App* sub) {
    sub->add_option("--data", data, "Dataset directory or encoded cache");
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint");
  }

  void execute(Context& ctx) {
    const auto state = load_model(checkpoint);
    const auto corpus = load_corpus(data, false);
    const auto out = model::infer(state, corpus);
    std::ostringstream tsv;
    tsv << "id\tfold";
    for (std::size_t i = 0; i < state.config.hidden_units; ++i) tsv << "\tf" << i;
    tsv << '\n';
    analyze::TemplateDB db;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& p = corpus[i];
      tsv << p.id << '\t' << (p.label ? std::to_string(*p.label) : std::string("-"));
      for (double v : out.features[i].values) tsv << '\t' << fmt(v);
      tsv << '\n';
      if (p.label) db.add({p.id, *p.label, out.features[i].values});
    }
    ctx.write("features.tsv", tsv.str());
    fs::create_directories(ctx.out_dir());
    analyze::save_template_db(db, ctx.out_dir() / "templates.dsft");
    ctx.out << "extracted " << corpus.size() << " features; " << db.size()
            << " labeled records in " << (ctx.out_dir() / "templates.dsft").string() << '\n';
  }
};

struct ClusterCommand {
  std::string templates, data, checkpoint, metric = "kl";
  std::size_t trials = 1000;
  analyze::ClusteringOptions options;

  void add_to(CLI::App* sub) {
    sub->add_option("--templates", templates, "Template database (or --data with --checkpoint)");
    sub->add_option("--data", data, "Labeled dataset directory or encoded cache");
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint used with --data");
    sub->add_option("--metric", metric, "Distance: euclid, manh, corr or kl")
        ->check(CLI::IsMember({"euclid", "manh", "corr", "kl"}));
    sub->add_option("--trials", trials, "Sampling trials");
    sub->add_option("--folds-per-trial", options.folds_per_trial, "Folds sampled per trial");
    sub->add_option("--max-proteins", options.max_proteins, "Proteins per trial at most");
  }

  void execute(Context& ctx) {
    analyze::TemplateDB db;
    if (!templates.empty()) {
      db = load_templates(templates);
    } else {
      db = analyze::build_template_db(load_model(checkpoint), load_corpus(data, true));
    }
    const auto m = analyze::parse_metric(metric);
    const auto result = analyze::clustering_protocol(db, m, trials, ctx.globals.seed, options);
    std::ostringstream tsv;
    tsv << "trial\taccuracy\n";
    for (std::size_t t = 0; t < result.per_trial.size(); ++t) {
      tsv << t << '\t' << fmt(result.per_trial[t]) << '\n';
    }
    tsv << "# mean_accuracy\t" << fmt(result.mean) << '\n';
    tsv << "# degenerate_distances\t" << result.degenerate_distances << '\n';
    ctx.write("cluster_" + metric + ".tsv", tsv.str());
    ctx.out << "metric " << metric << " trials " << trials << " mean accuracy " << fmt(result.mean)
            << '\n';
  }
};

struct RankCommand {
  std::string checkpoint, templates, data, id;
  std::size_t top_folds = 5, top_templates = 10;
  QueryOptions query;

  void add_to(CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint");
    sub->add_option("--templates", templates, "Template database");
    sub->add_option("--data", data, "Dataset holding the target (with --id)");
    sub->add_option("--id", id, "Target protein id in --data");
    sub->add_option("--topk", top_folds, "Predicted folds searched");
    sub->add_option("--top-templates", top_templates, "Templates reported");
    query.add_to(sub);
  }

  void execute(Context& ctx) {
    const auto state = load_model(checkpoint);
    if (templates.empty()) throw ValidationError("no template database given (--templates)");
    const auto db = load_templates(templates);
    std::vector<encode::EncodedProtein> targets;
    if (!id.empty()) {
      const auto corpus = load_corpus(data, false);
      targets.push_back(find_protein(corpus, id));
    } else {
      targets = query.load();
    }
    std::ostringstream tsv;
    tsv << "target\trank\ttemplate\tfold\tkl_d\n";
    for (const auto& t : targets) {
      const auto r = analyze::rank_templates(state, t, db, top_folds, top_templates);
      if (r.status == analyze::RankStatus::empty_pool) {
        tsv << "# " << t.id << "\tempty_pool\n";
        continue;
      }
      for (std::size_t i = 0; i < r.templates.size(); ++i) {
        tsv << t.id << '\t' << i + 1 << '\t' << r.templates[i].id << '\t' << r.templates[i].fold
            << '\t' << fmt(r.templates[i].score) << '\n';
      }
    }
    ctx.write("rank.tsv", tsv.str());
    ctx.out << tsv.str();
  }
};

struct PerturbCommand {
  std::string checkpoint, data;
  std::vector<std::string> wild_types;
  perturb::VariantOptions variants;
  perturb::ControlOptions controls;
  bool zero_profile = false;
  bool synthetic_blocks = false;
  bool no_random = false;
  std::size_t truncation = 100;
  std::size_t step = 1;

  void add_to(CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint");
    sub->add_option("--data", data, "Dataset with wild types and control candidates");
    sub->add_option("--wild-type", wild_types,
                    "Wild-type protein id (repeatable; default: length closest to 100)");
    sub->add_option("--repeats", variants.repeats_per_kind, "Edits per kind");
    sub->add_option("--max-indel", variants.max_indel_total, "Largest total edit size");
    sub->add_option("--controls", controls.count, "Control sequences");
    sub->add_option("--control-min", controls.min_length, "Shortest control");
    sub->add_option("--control-max", controls.max_length, "Longest control");
    sub->add_flag("--no-random-controls", no_random,
                  "Fail instead of synthesizing controls when the dataset has too few");
    sub->add_flag("--synthetic-blocks", synthetic_blocks,
                  "Give synthesized controls synthetic profile/structure blocks");
    sub->add_flag("--zero-profile", zero_profile, "Clear the profile block of variants");
    sub->add_option("--truncation", truncation, "Proteins in the truncation scan (0 skips it)");
    sub->add_option("--step", step, "Prefix length step of the truncation scan");
  }

  void execute(Context& ctx) {
    const auto state = load_model(checkpoint);
    const auto corpus = load_corpus(data, false);
    if (wild_types.empty()) {
      const auto closest = std::min_element(corpus.begin(), corpus.end(), [](const auto& a, const auto& b) {
        const auto da = a.length() > 100 ? a.length() - 100 : 100 - a.length();
        const auto db = b.length() > 100 ? b.length() - 100 : 100 - b.length();
        return da < db;
      });
      wild_types.push_back(closest->id);
    }
    controls.allow_random = !no_random;
    if (synthetic_blocks) controls.blocks = [](std::string_view s) { return encode::synthetic_blocks(s); };
    const auto profile = zero_profile ? perturb::ProfileReuse::zero : perturb::ProfileReuse::wild_type;

    std::ostringstream summary;
    summary << "wild_type\tvariants\tcontrols\tvariant_median\tcontrol_median\trank_sum\tz\tp_value\texact\n";
    for (std::size_t w = 0; w < wild_types.size(); ++w) {
      const auto& wild = find_protein(corpus, wild_types[w]);
      perturb::PerturbationSet set;
      set.wild_type_id = wild.id;
      set.variants = perturb::generate_variants(wild.residues, ctx.globals.seed + w, variants);
      set.controls = perturb::generate_controls(corpus, ctx.globals.seed + 1000 + w, controls, wild.id);
      const auto report = perturb::divergence_experiment(state, wild, set, profile);
      ctx.write("divergence_" + wild.id + ".tsv", report.to_tsv());
      summary << wild.id << '\t' << set.variants.size() << '\t' << set.controls.size() << '\t'
              << fmt(report.variant_median) << '\t' << fmt(report.control_median) << '\t'
              << fmt(report.test.statistic) << '\t' << fmt(report.test.z) << '\t'
              << fmt(report.test.p_value) << '\t' << report.test.exact << '\n';
    }
    ctx.write("divergence_summary.tsv", summary.str());
    ctx.out << summary.str();

    if (truncation > 0) {
      const std::size_t n = std::min(truncation, corpus.size());
      const auto report = perturb::truncation_scan(
          state, std::span<const encode::EncodedProtein>(corpus.data(), n), step);
      ctx.write("truncation.tsv", report.to_tsv());
      ctx.out << "truncation: " << n << " proteins, mean stable fraction "
              << fmt(report.mean_fraction) << '\n';
    }
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fold classification with 1D convolutional networks over protein sequences",
               "foldnet"};
  app.option_defaults()->always_capture_default();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON configuration file (flags override its values)");
  app.require_subcommand(1, 1);
  app.fallthrough();

  Globals globals;
  app.add_option("--seed", globals.seed, "Seed for every random choice");
  app.add_option("--out", globals.out, "Output directory");

  SynthCommand synth;
  EncodeCommand encode_cmd;
  TrainCommand train_cmd;
  EvalCommand eval;
  PredictCommand predict;
  ExtractCommand extract;
  ClusterCommand cluster;
  RankCommand rank;
  PerturbCommand perturb_cmd;

  struct Entry {
    CLI::App* sub;
    std::function<void(Context&)> execute;
  };
  std::vector<Entry> entries;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    cmd.add_to(sub);
    entries.push_back({sub, [&cmd](Context& c) { cmd.execute(c); }});
  };
  add("synth", "Generate a synthetic labeled corpus", synth);
  add("encode", "Encode a dataset directory into a feature cache", encode_cmd);
  add("train", "Train a model with length-binned mini-batches", train_cmd);
  add("eval", "Top-k accuracy overall and by fold-size group", eval);
  add("predict", "Most probable folds of query sequences", predict);
  add("extract", "Fold features and a template database", extract);
  add("cluster", "Repeated-sampling clustering accuracy of a distance metric", cluster);
  add("rank", "Rank templates for a target by feature distance", rank);
  add("perturb", "Edit-robustness experiment and truncation scan", perturb_cmd);

  std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rest.begin(), rest.end());  // CLI11 consumes the vector from the back
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (const auto& entry : entries) {
    if (!entry.sub->parsed()) continue;
    Context ctx{entry.sub->get_name(), globals, effective_config(app, *entry.sub), "", out, err};
    ctx.config_hash = hex64(fnv1a(ctx.config.dump()));
    try {
      entry.execute(ctx);
      ctx.write_manifest();
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return kExitData;
    } catch (const fs::filesystem_error& e) {
      err << "error: " << e.what() << '\n';
      return kExitData;
    }
    return kExitOk;
  }
  err << app.help();
  return kExitUsage;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace foldnet::cli
