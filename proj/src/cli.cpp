#include "fusecap/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fusecap/checkpoint.hpp"
#include "fusecap/dataset.hpp"
#include "fusecap/decoding.hpp"
#include "fusecap/edits.hpp"
#include "fusecap/errors.hpp"
#include "fusecap/metrics.hpp"
#include "fusecap/mlm.hpp"
#include "fusecap/training.hpp"
#include "fusecap/vocab.hpp"

namespace fusecap {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Bad flags or flag combinations (exit 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Every option carries a config key. Values come from the flag when given,
// else from --config, else the built-in default.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_,
                     "JSON config (or a run manifest); explicit flags take precedence");
  }

  template <typename T>
  CLI::Option* add(const std::string& flag, const std::string& key, T& var,
                   const std::string& help) {
    auto* opt = app_->add_option(flag, var, help)->capture_default_str();
    entries_.push_back({key, opt, [&var](const json& j) { var = j.get<T>(); },
                        [&var] { return json(var); }});
    return opt;
  }

  CLI::Option* flag(const std::string& flag, const std::string& key, bool& var,
                    const std::string& help) {
    auto* opt = app_->add_flag(flag, var, help);
    entries_.push_back({key, opt, [&var](const json& j) { var = j.get<bool>(); },
                        [&var] { return json(var); }});
    return opt;
  }

  bool given(const std::string& key) const {
    for (const auto& e : entries_) {
      if (e.key == key) return e.opt->count() > 0 || from_file_.count(key) > 0;
    }
    return false;
  }

  /// Sets a value unless the flag or the config file supplied one.
  void preset(const std::string& key, const json& value) {
    for (auto& e : entries_) {
      if (e.key == key && !given(key)) e.set(value);
    }
  }

  void load_config() {
    if (config_path_.empty()) return;
    std::ifstream in(config_path_);
    if (!in) throw InputError("cannot open config " + config_path_);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError(config_path_ + ": " + e.what());
    }
    if (j.contains("config") && j.at("config").is_object()) j = j.at("config");
    for (auto& e : entries_) {
      if (e.opt->count() == 0 && j.contains(e.key)) {
        try {
          e.set(j.at(e.key));
        } catch (const json::exception&) {
          throw UsageError("config key '" + e.key + "' has the wrong type");
        }
        from_file_.insert({e.key, true});
      }
    }
  }

  json resolved() const {
    json j = json::object();
    for (const auto& e : entries_) j[e.key] = e.get();
    return j;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    std::function<void(const json&)> set;
    std::function<json()> get;
  };
  CLI::App* app_;
  std::string config_path_;
  std::vector<Entry> entries_;
  std::map<std::string, bool> from_file_;
};

struct Manifest {
  std::string subcommand;
  json config;
  json seeds = json::array();
  json inputs = json::object();
  std::string started = now_iso();

  void write(const fs::path& artifact, const std::vector<fs::path>& outputs) const {
    json outs = json::array();
    for (const auto& p : outputs) outs.push_back(p.string());
    const json j{{"tool", "fusecap"},
                 {"version", kToolVersion},
                 {"subcommand", subcommand},
                 {"config", config},
                 {"seeds", seeds},
                 {"inputs", inputs},
                 {"outputs", outs},
                 {"started", started},
                 {"finished", now_iso()}};
    std::ofstream out(artifact.string() + ".manifest.json");
    if (!out) throw InputError("cannot write manifest for " + artifact.string());
    out << j.dump(2) << '\n';
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " is required");
  if (!fs::exists(path)) throw InputError(what + " not found: " + path);
}

FusionKind parse_kind_flag(const std::string& name) {
  try {
    return parse_fusion_kind(name);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

// Seeded output path: "{seed}" is substituted; otherwise multi-seed runs get
// ".seed<k>" before the extension.
fs::path seeded_path(const std::string& pattern, std::uint64_t seed, bool multi) {
  const std::string tag = "{seed}";
  if (auto pos = pattern.find(tag); pos != std::string::npos) {
    std::string s = pattern;
    s.replace(pos, tag.size(), std::to_string(seed));
    return s;
  }
  if (!multi) return pattern;
  fs::path p(pattern);
  const auto ext = p.extension().string();
  p.replace_extension();
  return p.string() + ".seed" + std::to_string(seed) + ext;
}

struct DataSplits {
  std::vector<CaptionExample> all;
  Vocab vocab;
};

DataSplits load_data(const std::string& path, const std::string& vocab_path,
                     std::size_t min_count) {
  require_file(path, "--data");
  DataSplits d;
  d.all = read_jsonl(path);
  if (!vocab_path.empty()) {
    require_file(vocab_path, "--vocab");
    d.vocab = Vocab::load(vocab_path);
  } else {
    std::vector<std::string> captions;
    for (const auto& e : select_split(d.all, "train")) {
      captions.insert(captions.end(), e.references.begin(), e.references.end());
    }
    d.vocab = build_vocab(captions, min_count);
  }
  return d;
}

std::vector<CaptionExample> split_or_throw(const std::vector<CaptionExample>& all,
                                           const std::string& split) {
  if (split != "train" && split != "val" && split != "test") {
    throw UsageError("--split must be train, val or test, got '" + split + "'");
  }
  auto out = select_split(all, split);
  if (out.empty()) throw InputError("the " + split + " split is empty");
  return out;
}

std::size_t default_max_len(const std::vector<CaptionExample>& all) {
  std::size_t longest = 2;
  for (const auto& e : all) {
    if (e.split != "train") continue;
    for (const auto& r : e.references) longest = std::max(longest, split_words(r).size() + 2);
  }
  return 2 * longest;
}

void check_features(const CaptionModel& model, const std::vector<CaptionExample>& examples) {
  const std::size_t F = model.config().decoder.feature_dim;
  for (const auto& e : examples) {
    if (e.features.size() != F) {
      throw InputError("example " + e.id + " has " + std::to_string(e.features.size()) +
                       " features; the model expects " + std::to_string(F));
    }
  }
}

Vocab mlm_vocab(const LoadedMlm& loaded) {
  if (!loaded.meta.contains("vocab")) throw LoadError("MLM checkpoint carries no vocabulary");
  return Vocab::from_tokens(loaded.meta.at("vocab").get<std::vector<std::string>>());
}

std::map<std::string, std::string> captions_by_id(const fs::path& path) {
  std::map<std::string, std::string> out;
  for (auto& r : read_captions(path)) {
    if (!out.emplace(r.id, r.caption).second) {
      throw InputError(path.string() + ": duplicate id " + r.id);
    }
  }
  return out;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::uint64_t seed = 7;
  std::size_t n = 2400;
  std::size_t refs = 3;
  std::size_t feature_dim = 64;
  double noise = 0.05;
  std::size_t min_count = 5;
  std::string out = "dataset.jsonl";
  std::string vocab_out;
};

int cmd_synth(const SynthArgs& a, const Options& opts, std::ostream& out) {
  DatasetConfig dc;
  dc.seed = a.seed;
  dc.n_scenes = a.n;
  dc.refs_per_scene = a.refs;
  dc.feature_dim = a.feature_dim;
  dc.noise = a.noise;
  try {
    dc.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  Manifest m{"synth", opts.resolved()};
  m.seeds.push_back(a.seed);
  const auto data = generate_dataset(dc);
  write_jsonl(a.out, data);
  std::vector<std::string> captions;
  for (const auto& e : select_split(data, "train")) {
    captions.insert(captions.end(), e.references.begin(), e.references.end());
  }
  const Vocab vocab = build_vocab(captions, a.min_count);
  const fs::path vocab_path =
      a.vocab_out.empty() ? fs::path(a.out).replace_extension(".vocab.txt") : fs::path(a.vocab_out);
  vocab.save(vocab_path);
  m.write(a.out, {a.out, vocab_path});
  out << "wrote " << data.size() << " examples (" << select_split(data, "train").size() << " train, "
      << select_split(data, "val").size() << " val, " << select_split(data, "test").size()
      << " test) to " << a.out << "\nwrote " << vocab.size() << "-token vocabulary to "
      << vocab_path.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------- pretrain-mlm

struct PretrainArgs {
  std::string data;
  std::string vocab;
  std::size_t min_count = 5;
  std::string out = "mlm.ckpt";
  std::size_t epochs = 4;
  std::size_t batch = 32;
  double lr = 2e-3;
  std::uint64_t seed = 1;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t layers = 2;
  bool paper_dims = false;
};

int cmd_pretrain(const PretrainArgs& a, const Options& opts, std::ostream& out,
                 std::ostream& err) {
  Manifest m{"pretrain-mlm", opts.resolved()};
  m.seeds.push_back(a.seed);
  m.inputs["data"] = a.data;
  auto d = load_data(a.data, a.vocab, a.min_count);
  std::vector<TokenSeq> corpus;
  for (const auto& e : select_split(d.all, "train")) {
    for (const auto& r : e.references) corpus.push_back(tokenize(r, d.vocab));
  }
  MlmConfig mc;
  mc.vocab_size = d.vocab.size();
  mc.embed_dim = a.embed_dim;
  mc.hidden_dim = a.hidden_dim;
  mc.num_layers = a.layers;
  mc.seed = a.seed;
  ToyMLM mlm(mc);
  MlmPretrainConfig pc;
  pc.epochs = a.epochs;
  pc.batch_size = a.batch;
  pc.lr = a.lr;
  pc.seed = a.seed;
  err << "pretraining MLM on " << corpus.size() << " captions, " << a.epochs << " epochs\n";
  const auto report = mlm_pretrain(mlm, corpus, pc);
  json rep{{"initial_loss", report.initial_loss}, {"epochs", json::array()}};
  out << "initial loss " << report.initial_loss << '\n';
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    rep["epochs"].push_back({{"loss", report.epochs[i].loss}, {"accuracy", report.epochs[i].accuracy}});
    out << "epoch " << i << ": loss " << report.epochs[i].loss << ", masked accuracy "
        << report.epochs[i].accuracy << '\n';
  }
  save_checkpoint(mlm, a.out, {{"vocab", d.vocab.tokens()}, {"report", rep}});
  m.write(a.out, {a.out});
  out << "wrote frozen MLM to " << a.out << " (checksum " << mlm.checksum().substr(0, 16)
      << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string vocab;
  std::size_t min_count = 5;
  std::string fusion = "none";
  std::string mlm;
  std::string baseline;
  std::uint64_t seed = 1;
  std::size_t seeds = 1;
  std::string out = "model.ckpt";
  std::size_t epochs = 7;
  std::size_t batch = 32;
  double lr = 5e-4;
  double dropout = 0.5;
  double clip = 0.0;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t layers = 2;
  std::size_t halve_patience = 2;
  std::size_t stop_patience = 4;
  bool non_strict = false;
  std::size_t val_max_len = 0;
  bool paper_dims = false;
};

int cmd_train(const TrainArgs& a, const Options& opts, std::ostream& out, std::ostream& err) {
  const FusionKind kind = parse_kind_flag(a.fusion);
  if (a.seeds == 0) throw UsageError("--seeds must be at least 1");
  TrainConfig tc;
  tc.lr = a.lr;
  tc.batch_size = a.batch;
  tc.max_epochs = a.epochs;
  tc.halve_patience = a.halve_patience;
  tc.stop_patience = a.stop_patience;
  tc.strict_improvement = !a.non_strict;
  tc.fusion = kind;
  tc.dropout = a.dropout;
  tc.clip_norm = a.clip;
  tc.embed_dim = a.embed_dim;
  tc.hidden_dim = a.hidden_dim;
  tc.num_layers = a.layers;
  tc.val_max_len = a.val_max_len;
  try {
    tc.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (kind != FusionKind::None) {
    if (a.mlm.empty()) throw UsageError("--mlm is required for fusion training");
    if (a.baseline.empty()) {
      throw UsageError("--baseline is required for fusion training (its drafts drive validation)");
    }
  }

  auto d = load_data(a.data, a.vocab, a.min_count);
  TrainData data{d.vocab, select_split(d.all, "train"), select_split(d.all, "val")};
  if (data.train.empty()) throw InputError("the train split is empty");
  if (data.val.empty()) throw InputError("the val split is empty");

  std::optional<LoadedMlm> mlm;
  std::optional<FusionCache> cache;
  if (kind != FusionKind::None) {
    require_file(a.mlm, "--mlm");
    mlm.emplace(load_mlm(a.mlm));
    if (!(mlm_vocab(*mlm) == data.vocab)) {
      throw InputError("MLM vocabulary differs from the dataset vocabulary");
    }
    err << "caching MLM states for " << data.train.size() + data.val.size() << " examples\n";
    cache.emplace(build_fusion_cache(data, mlm->mlm));
  }
  const std::size_t max_len = a.val_max_len ? a.val_max_len : 2 * longest_caption(data);

  for (std::size_t k = 0; k < a.seeds; ++k) {
    const std::uint64_t seed = a.seed + k;
    const fs::path out_path = seeded_path(a.out, seed, a.seeds > 1);
    Manifest m{"train", opts.resolved()};
    m.seeds.push_back(seed);
    m.inputs["data"] = a.data;
    tc.seed = seed;
    const std::string tag = "[" + fusion_label(kind) + " seed " + std::to_string(seed) + "] ";
    auto on_epoch = [&](const EpochRecord& e) {
      char line[160];
      std::snprintf(line, sizeof line,
                    "epoch %zu: loss %.4f  val B-4 %.2f  lr %.2e%s  (%.1fs)\n", e.epoch,
                    e.train_loss, e.val_bleu4, e.lr, e.lr_halved ? " (halving)" : "", e.seconds);
      err << tag << line;
    };
    std::optional<TrainResult> result;
    if (kind == FusionKind::None) {
      result.emplace(train_baseline(data, tc, on_epoch));
    } else {
      const fs::path base_path = seeded_path(a.baseline, seed, false);
      require_file(base_path.string(), "--baseline");
      auto base = load_caption_model(base_path);
      if (base.model.fused()) {
        throw InputError(base_path.string() + " is a " + to_string(base.model.kind()) +
                         " fusion model; --baseline needs a fusion-free model");
      }
      if (!(base.model.vocab() == data.vocab)) {
        throw InputError("baseline vocabulary differs from the dataset vocabulary");
      }
      check_features(base.model, data.val);
      std::vector<TokenSeq> drafts;
      for (const auto& e : data.val) {
        drafts.push_back(greedy_decode(base.model, e.features, max_len).tokens);
      }
      m.inputs["mlm"] = a.mlm;
      m.inputs["baseline"] = base_path.string();
      result.emplace(train_fusion(data, mlm->mlm, drafts, tc, on_epoch, &*cache));
    }
    const json report = result->report.to_json();
    save_checkpoint(result->model, out_path, {{"train_report", report}});
    const fs::path report_path = out_path.string() + ".report.json";
    write_text(report_path, report.dump(2) + "\n");
    m.write(out_path, {out_path, report_path});
    out << tag << "best epoch " << result->report.best_epoch << " (val B-4 "
        << result->report.epochs[result->report.best_epoch].val_bleu4 << "), "
        << result->report.stop_reason << ", " << result->report.wall_seconds << "s -> "
        << out_path.string() << '\n';
  }
  return kExitOk;
}

// -------------------------------------------------------------- caption

struct CaptionArgs {
  std::string model;
  std::string data;
  std::string split = "test";
  std::size_t beam = 5;
  std::size_t max_len = 0;
  bool length_norm = false;
  std::string out = "captions.jsonl";
};

int cmd_caption(const CaptionArgs& a, const Options& opts, std::ostream& out) {
  if (a.beam == 0) throw UsageError("--beam must be at least 1");
  require_file(a.model, "--model");
  require_file(a.data, "--data");
  Manifest m{"caption", opts.resolved()};
  m.inputs = {{"model", a.model}, {"data", a.data}};
  auto loaded = load_caption_model(a.model);
  if (loaded.model.fused()) {
    throw InputError(a.model + " is a " + to_string(loaded.model.kind()) +
                     " fusion model; use `emend` with a draft file");
  }
  const auto all = read_jsonl(a.data);
  const auto examples = split_or_throw(all, a.split);
  check_features(loaded.model, examples);
  const Vocab vocab = loaded.model.vocab();
  BeamConfig bc{a.beam, a.max_len ? a.max_len : default_max_len(all), a.length_norm};
  std::vector<CaptionRecord> records;
  for (const auto& e : examples) {
    const auto result = bc.beam_width == 1 ? greedy_decode(loaded.model, e.features, bc.max_len)
                                           : beam_search(loaded.model, e.features, bc);
    records.push_back({e.id, detokenize(result.tokens, vocab)});
  }
  write_captions(a.out, records);
  m.write(a.out, {a.out});
  out << "wrote " << records.size() << " captions to " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- emend

struct EmendArgs {
  std::string model;
  std::string mlm;
  std::string data;
  std::string drafts;
  std::string split = "test";
  std::string fusion;
  std::size_t beam = 5;
  std::size_t max_len = 0;
  bool length_norm = false;
  std::string out = "emended.jsonl";
};

int cmd_emend(const EmendArgs& a, const Options& opts, std::ostream& out, std::ostream& err) {
  if (a.beam == 0) throw UsageError("--beam must be at least 1");
  std::optional<FusionKind> expected;
  if (!a.fusion.empty()) expected = parse_kind_flag(a.fusion);
  require_file(a.model, "--model");
  require_file(a.mlm, "--mlm");
  require_file(a.data, "--data");
  require_file(a.drafts, "--drafts");
  Manifest m{"emend", opts.resolved()};
  m.inputs = {{"model", a.model}, {"mlm", a.mlm}, {"data", a.data}, {"drafts", a.drafts}};
  auto loaded = load_caption_model(a.model);
  if (!loaded.model.fused()) {
    throw InputError(a.model + " is a baseline model; emend needs a fusion model");
  }
  if (expected && *expected != loaded.model.kind()) {
    throw InputError("--fusion " + to_string(*expected) + " does not match the checkpoint (" +
                     to_string(loaded.model.kind()) + ")");
  }
  auto mlm = load_mlm(a.mlm);
  const Vocab vocab = loaded.model.vocab();
  if (!(mlm_vocab(mlm) == vocab)) throw InputError("MLM and model vocabularies differ");
  const auto all = read_jsonl(a.data);
  const auto examples = split_or_throw(all, a.split);
  check_features(loaded.model, examples);
  const auto drafts = captions_by_id(a.drafts);
  BeamConfig bc{a.beam, a.max_len ? a.max_len : default_max_len(all), a.length_norm};
  std::vector<CaptionRecord> records;
  std::size_t empty = 0, changed = 0;
  for (const auto& e : examples) {
    auto it = drafts.find(e.id);
    if (it == drafts.end()) throw InputError(a.drafts + ": no draft for example " + e.id);
    const TokenSeq draft = tokenize(it->second, vocab);
    if (strip_specials(draft).empty()) {
      ++empty;
      records.push_back({e.id, it->second});
      continue;
    }
    const auto result = emend(loaded.model, mlm.mlm, e.features, draft, bc);
    records.push_back({e.id, detokenize(result.tokens, vocab)});
    if (records.back().caption != it->second) ++changed;
  }
  if (empty) err << "warning: " << empty << " empty drafts copied through unchanged\n";
  write_captions(a.out, records);
  m.inputs["empty_drafts"] = empty;
  m.write(a.out, {a.out});
  out << "emended " << records.size() << " captions (" << changed << " changed) -> " << a.out
      << '\n';
  return kExitOk;
}

// ----------------------------------------------------------------- eval

struct EvalArgs {
  std::string data;
  std::string split = "test";
  std::vector<std::string> captions;
  bool smoothing = false;
  std::string out;
};

int cmd_eval(const EvalArgs& a, const Options& opts, std::ostream& out) {
  if (a.captions.empty()) throw UsageError("at least one --captions is required");
  require_file(a.data, "--data");
  const auto all = read_jsonl(a.data);
  const auto examples = split_or_throw(all, a.split);
  std::vector<References> refs;
  for (const auto& e : examples) {
    References r;
    for (const auto& s : e.references) r.push_back(split_words(s));
    refs.push_back(std::move(r));
  }
  Manifest m{"eval", opts.resolved()};
  m.inputs["data"] = a.data;
  std::vector<MetricsReport> rows;
  for (const auto& spec : a.captions) {
    std::string label, list = spec;
    if (auto colon = spec.find(':'); colon != std::string::npos) {
      label = spec.substr(0, colon);
      list = spec.substr(colon + 1);
    }
    std::vector<std::string> paths;
    std::stringstream ss(list);
    for (std::string p; std::getline(ss, p, ',');) {
      if (!p.empty()) paths.push_back(p);
    }
    if (paths.empty()) throw UsageError("--captions '" + spec + "' names no file");
    if (label.empty()) label = fs::path(paths.front()).stem().string();
    std::vector<MetricsReport> runs;
    for (const auto& p : paths) {
      require_file(p, "--captions");
      const auto caps = captions_by_id(p);
      std::vector<Words> hyps;
      for (const auto& e : examples) {
        auto it = caps.find(e.id);
        if (it == caps.end()) throw InputError(p + ": no caption for example " + e.id);
        hyps.push_back(split_words(it->second));
      }
      runs.push_back(evaluate_corpus(hyps, refs, label, a.smoothing));
    }
    rows.push_back(aggregate_seeds(runs));
    m.inputs["captions"].push_back(spec);
  }
  out << "split " << a.split << ", " << examples.size()
      << " images; BLEU/ROUGE-L x100, CIDEr-D x100\n"
      << format_table(rows);
  if (!a.out.empty()) {
    json j{{"split", a.split}, {"rows", json::array()}};
    for (const auto& r : rows) j["rows"].push_back(r.to_json());
    write_text(a.out, j.dump(2) + "\n");
    m.write(a.out, {a.out});
  }
  return kExitOk;
}

// ---------------------------------------------------------------- edits

struct EditsArgs {
  std::string drafts;
  std::string emended;
  std::string out = "edits.jsonl";
  std::size_t chart_width = 50;
};

int cmd_edits(const EditsArgs& a, const Options& opts, std::ostream& out) {
  require_file(a.drafts, "--drafts");
  require_file(a.emended, "--emended");
  Manifest m{"edits", opts.resolved()};
  m.inputs = {{"drafts", a.drafts}, {"emended", a.emended}};
  const auto drafts = read_captions(a.drafts);
  const auto emended = captions_by_id(a.emended);
  std::vector<EditRecord> records;
  std::ostringstream lines;
  for (const auto& d : drafts) {
    auto it = emended.find(d.id);
    if (it == emended.end()) throw InputError(a.emended + ": no caption for example " + d.id);
    records.push_back(token_edits(split_words(d.caption), split_words(it->second), d.id));
    lines << records.back().to_json().dump() << '\n';
  }
  const auto hist = edit_histogram(records);
  const fs::path csv = fs::path(a.out).replace_extension(".hist.csv");
  const fs::path chart = fs::path(a.out).replace_extension(".hist.txt");
  write_text(a.out, lines.str());
  write_text(csv, hist.to_csv());
  write_text(chart, hist.to_chart(a.chart_width));
  m.write(a.out, {a.out, csv, chart});
  out << "token edits over " << hist.total() << " captions (" << hist.unchanged
      << " unchanged)\n"
      << hist.to_chart(a.chart_width);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fusecap: caption emendation by fusing a decoder with a frozen masked LM"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s_app = app.add_subcommand("synth", "Generate the synthetic shapes caption dataset");
  Options s_opts(s_app);
  s_opts.add("--seed", "seed", synth.seed, "Dataset seed");
  s_opts.add("--n", "n", synth.n, "Number of scenes");
  s_opts.add("--refs", "refs", synth.refs, "Reference captions per scene (3-5)");
  s_opts.add("--feature-dim", "feature_dim", synth.feature_dim, "Image feature width");
  s_opts.add("--noise", "noise", synth.noise, "Feature noise standard deviation");
  s_opts.add("--min-count", "min_count", synth.min_count, "Vocabulary frequency cutoff");
  s_opts.add("--out", "out", synth.out, "Output dataset (JSONL)");
  s_opts.add("--vocab-out", "vocab_out", synth.vocab_out,
             "Vocabulary file (default: <out> with .vocab.txt)");

  PretrainArgs pre;
  auto* p_app = app.add_subcommand("pretrain-mlm", "Pretrain and freeze the masked language model");
  Options p_opts(p_app);
  p_opts.add("--data", "data", pre.data, "Dataset (JSONL)");
  p_opts.add("--vocab", "vocab", pre.vocab, "Vocabulary file (default: built from train split)");
  p_opts.add("--min-count", "min_count", pre.min_count, "Vocabulary frequency cutoff");
  p_opts.add("--out", "out", pre.out, "Output checkpoint");
  p_opts.add("--epochs", "epochs", pre.epochs, "Pretraining epochs");
  p_opts.add("--batch", "batch", pre.batch, "Batch size");
  p_opts.add("--lr", "lr", pre.lr, "Adam learning rate");
  p_opts.add("--seed", "seed", pre.seed, "Initialisation and masking seed");
  p_opts.add("--embed-dim", "embed_dim", pre.embed_dim, "Embedding width E_m");
  p_opts.add("--hidden-dim", "hidden_dim", pre.hidden_dim, "Hidden width H_m");
  p_opts.add("--layers", "layers", pre.layers, "LSTM layers per direction");
  p_opts.flag("--paper-dims", "paper_dims", pre.paper_dims,
              "Full-size model: E=H=1024, batch 128, min-count 5");

  TrainArgs tr;
  auto* t_app = app.add_subcommand("train", "Train a baseline or fusion caption model");
  Options t_opts(t_app);
  t_opts.add("--data", "data", tr.data, "Dataset (JSONL)");
  t_opts.add("--vocab", "vocab", tr.vocab, "Vocabulary file (default: built from train split)");
  t_opts.add("--min-count", "min_count", tr.min_count, "Vocabulary frequency cutoff");
  t_opts.add("--fusion", "fusion", tr.fusion, "Fusion scheme: none, simple, cold or hier");
  t_opts.add("--mlm", "mlm", tr.mlm, "Frozen MLM checkpoint (fusion only)");
  t_opts.add("--baseline", "baseline", tr.baseline,
             "Baseline checkpoint whose val drafts drive fusion validation ({seed} expands)");
  t_opts.add("--seed", "seed", tr.seed, "First seed");
  t_opts.add("--seeds", "seeds", tr.seeds, "Number of consecutive seeds to train");
  t_opts.add("--out", "out", tr.out, "Output checkpoint ({seed} expands)");
  t_opts.add("--epochs", "epochs", tr.epochs, "Maximum epochs");
  t_opts.add("--batch", "batch", tr.batch, "Batch size");
  t_opts.add("--lr", "lr", tr.lr, "Initial Adam learning rate");
  t_opts.add("--dropout", "dropout", tr.dropout, "Dropout before the output layer");
  t_opts.add("--clip", "clip", tr.clip, "Gradient norm clip (0 disables)");
  t_opts.add("--embed-dim", "embed_dim", tr.embed_dim, "Embedding width E");
  t_opts.add("--hidden-dim", "hidden_dim", tr.hidden_dim, "Decoder hidden width H");
  t_opts.add("--layers", "layers", tr.layers, "Decoder LSTM layers");
  t_opts.add("--halve-patience", "halve_patience", tr.halve_patience,
             "Epochs without val improvement before halving the lr");
  t_opts.add("--stop-patience", "stop_patience", tr.stop_patience,
             "Epochs without val improvement before stopping");
  t_opts.flag("--non-strict", "non_strict", tr.non_strict,
              "Count a tie with the best val BLEU-4 as an improvement");
  t_opts.add("--val-max-len", "val_max_len", tr.val_max_len,
             "Validation decode length cap (0: twice the longest train caption)");
  t_opts.flag("--paper-dims", "paper_dims", tr.paper_dims,
              "Full-size model: E=H=1024, batch 128, min-count 5");

  CaptionArgs cap;
  auto* c_app = app.add_subcommand("caption", "Caption a split with a baseline model");
  Options c_opts(c_app);
  c_opts.add("--model", "model", cap.model, "Baseline checkpoint");
  c_opts.add("--data", "data", cap.data, "Dataset (JSONL)");
  c_opts.add("--split", "split", cap.split, "train, val or test");
  c_opts.add("--beam", "beam", cap.beam, "Beam width (1 = greedy)");
  c_opts.add("--max-len", "max_len", cap.max_len,
             "Generated token cap (0: twice the longest train caption)");
  c_opts.flag("--length-norm", "length_norm", cap.length_norm,
              "Rank finished beams by mean token log-probability");
  c_opts.add("--out", "out", cap.out, "Output captions (JSONL)");

  EmendArgs em;
  auto* e_app = app.add_subcommand("emend", "Re-decode draft captions with a fusion model");
  Options e_opts(e_app);
  e_opts.add("--model", "model", em.model, "Fusion checkpoint");
  e_opts.add("--mlm", "mlm", em.mlm, "Frozen MLM checkpoint");
  e_opts.add("--data", "data", em.data, "Dataset (JSONL)");
  e_opts.add("--drafts", "drafts", em.drafts, "Draft captions (JSONL)");
  e_opts.add("--split", "split", em.split, "train, val or test");
  e_opts.add("--fusion", "fusion", em.fusion, "Expected fusion scheme (checked if given)");
  e_opts.add("--beam", "beam", em.beam, "Beam width");
  e_opts.add("--max-len", "max_len", em.max_len,
             "Generated token cap (0: twice the longest train caption)");
  e_opts.flag("--length-norm", "length_norm", em.length_norm,
              "Rank finished beams by mean token log-probability");
  e_opts.add("--out", "out", em.out, "Output captions (JSONL)");

  EvalArgs ev;
  auto* v_app = app.add_subcommand("eval", "Score caption files against the references");
  Options v_opts(v_app);
  v_opts.add("--data", "data", ev.data, "Dataset (JSONL)");
  v_opts.add("--split", "split", ev.split, "train, val or test");
  v_opts.add("--captions", "captions", ev.captions,
             "LABEL:path[,path...]; several paths are averaged as seeds (repeatable)");
  v_opts.flag("--smoothing", "smoothing", ev.smoothing, "Add-one smoothing for BLEU orders >= 2");
  v_opts.add("--out", "out", ev.out, "Optional JSON report");

  EditsArgs ed;
  auto* d_app = app.add_subcommand("edits", "Token edits between drafts and emended captions");
  Options d_opts(d_app);
  d_opts.add("--drafts", "drafts", ed.drafts, "Draft captions (JSONL)");
  d_opts.add("--emended", "emended", ed.emended, "Emended captions (JSONL)");
  d_opts.add("--out", "out", ed.out, "Edit records (JSONL); histogram files sit beside it");
  d_opts.add("--chart-width", "chart_width", ed.chart_width, "Bar chart width");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s_app->parsed()) {
      s_opts.load_config();
      return cmd_synth(synth, s_opts, out);
    }
    if (p_app->parsed()) {
      p_opts.load_config();
      if (pre.paper_dims) {
        p_opts.preset("embed_dim", 1024);
        p_opts.preset("hidden_dim", 1024);
        p_opts.preset("batch", 128);
        p_opts.preset("min_count", 5);
      }
      return cmd_pretrain(pre, p_opts, out, err);
    }
    if (t_app->parsed()) {
      t_opts.load_config();
      if (tr.paper_dims) {
        t_opts.preset("embed_dim", 1024);
        t_opts.preset("hidden_dim", 1024);
        t_opts.preset("batch", 128);
        t_opts.preset("min_count", 5);
      }
      return cmd_train(tr, t_opts, out, err);
    }
    if (c_app->parsed()) {
      c_opts.load_config();
      return cmd_caption(cap, c_opts, out);
    }
    if (e_app->parsed()) {
      e_opts.load_config();
      return cmd_emend(em, e_opts, out, err);
    }
    if (v_app->parsed()) {
      v_opts.load_config();
      return cmd_eval(ev, v_opts, out);
    }
    if (d_app->parsed()) {
      d_opts.load_config();
      return cmd_edits(ed, d_opts, out);
    }
  } catch (const UsageError& e) {
    err << "fusecap: usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "fusecap: error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace fusecap
