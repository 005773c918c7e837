#include "capkit/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "capkit/corpus.hpp"
#include "capkit/error.hpp"
#include "capkit/features.hpp"
#include "capkit/harness.hpp"
#include "capkit/metrics.hpp"
#include "capkit/net.hpp"
#include "capkit/pca.hpp"
#include "capkit/synth.hpp"
#include "capkit/vae.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace capkit {

namespace {

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run config (falls back to $CAPKIT_CONFIG)");
  cmd->add_option("--seed", c.seed, "Seed propagated to every subsystem");
  cmd->add_option("--out", c.out, "Output directory");
}

void require_file(const std::string& path, const std::string& what) {
  CAPKIT_CHECK(fs::is_regular_file(path), "missing_file", what + " not found: " + path);
}

void require_dir(const std::string& path, const std::string& what) {
  CAPKIT_CHECK(fs::is_directory(path), "missing_file", what + " not found: " + path);
}

void make_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  CAPKIT_CHECK(!ec && fs::is_directory(path), "io", "cannot create directory " + path);
}

std::string one_line(std::string s) {
  for (auto& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

void write_text(const std::string& path, const std::string& text) { write_file(path, text); }

// Run config: {"paths": {data, features, checkpoints, reports}, "seed",
// "synth": {...}, "train": {...}, "triplet": {...}}.
class RunConfig {
 public:
  void load(const Common& c) {
    std::string path = c.config_path;
    if (path.empty()) {
      if (const char* env = std::getenv("CAPKIT_CONFIG")) path = env;
    }
    if (!path.empty()) {
      require_file(path, "config file");
      try {
        doc_ = json::parse(read_file(path));
      } catch (const json::exception& e) {
        throw Error("bad_config", path + ": " + e.what());
      }
      CAPKIT_CHECK(doc_.is_object(), "bad_config", path + ": top level must be an object");
      for (const auto& [k, v] : doc_.items()) {
        CAPKIT_CHECK(k == "paths" || k == "seed" || k == "synth" || k == "train" || k == "triplet", "bad_config",
                     "unknown config section '" + k + "'");
      }
    }
    seed_ = c.seed ? *c.seed : doc_.value("seed", std::uint64_t{1});
  }

  std::uint64_t seed() const { return seed_; }
  json section(const char* name) const { return doc_.contains(name) ? doc_.at(name) : json::object(); }
  std::string path(const char* key, const std::string& fallback) const {
    const auto p = section("paths");
    return p.contains(key) ? p.at(key).get<std::string>() : fallback;
  }

 private:
  json doc_ = json::object();
  std::uint64_t seed_ = 1;
};

LogFn stderr_log(std::ostream& err) {
  return [&err](const std::string& m) { err << "[capkit] " << m << std::endl; };
}

std::vector<LabeledClip> load_clips(const std::string& data_dir, const std::string& features_dir) {
  const std::string captions = data_dir + "/captions.jsonl";
  require_file(captions, "captions file");
  require_dir(features_dir, "features directory");
  std::vector<LabeledClip> clips;
  for (auto& r : read_records_jsonl(captions)) {
    auto f = load_features(features_dir, r.clip_id);
    clips.push_back({std::move(r), std::move(f)});
  }
  CAPKIT_CHECK(!clips.empty(), "empty_dataset", captions + " has no records");
  return clips;
}

Vocabulary build_train_vocab(std::span<const CaptionRecord> records, int min_count) {
  std::vector<Tokens> corpus;
  for (const auto& r : records) {
    if (r.split == Split::kTrain) corpus.push_back(r.tokens);
  }
  return Vocabulary::build(corpus, min_count);
}

const SWLexicon& lexicon_from(const std::string& path, std::optional<SWLexicon>& storage) {
  if (path.empty()) return SWLexicon::builtin();
  require_file(path, "lexicon");
  storage = SWLexicon::load(path);
  return *storage;
}

FeatureConfig feature_config(const RunConfig& rc) {
  const json s = rc.section("synth");
  FeatureConfig fc;
  fc.seed = rc.seed();
  fc.duration_s = s.value("duration_s", fc.duration_s);
  fc.pca_dim = s.value("pca_dim", fc.pca_dim);
  fc.calibration_clips = s.value("calibration_clips", fc.calibration_clips);
  fc.vae.epochs = s.value("vae_epochs", fc.vae.epochs);
  fc.vae.latent_dim = s.value("vae_latent_dim", fc.vae.latent_dim);
  fc.vae.seed = rc.seed();
  return fc;
}

TrainConfig train_config(const RunConfig& rc, std::optional<int> epochs, std::optional<int> patience) {
  TrainConfig tc = TrainConfig::from_json(rc.section("train"));
  tc.seed = rc.seed();
  if (epochs) tc.epochs_max = *epochs;
  if (patience) tc.patience = *patience;
  tc.validate();
  return tc;
}

// --- subcommands -------------------------------------------------------------

struct SynthArgs {
  int n = 50;
  std::optional<double> duration;
  std::optional<int> calibration_clips;
  std::optional<int> vae_epochs;
  int min_count = 1;
  bool raw = false;
};

int cmd_synth(const Common& c, const SynthArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  rc.load(c);
  const std::string dir = c.out.empty() ? rc.path("data", "data_synth") : c.out;
  FeatureConfig fc = feature_config(rc);
  if (a.duration) fc.duration_s = *a.duration;
  if (a.calibration_clips) fc.calibration_clips = *a.calibration_clips;
  if (a.vae_epochs) fc.vae.epochs = *a.vae_epochs;
  CAPKIT_CHECK(a.n >= 1, "bad_config", "--n must be >= 1");
  const auto log = stderr_log(err);

  log("fitting flow PCA and VAE on " + std::to_string(fc.calibration_clips) + " calibration clips");
  const auto models = fit_feature_models(fc);
  log("rendering " + std::to_string(a.n) + " clips");
  const auto data = synth_dataset(a.n, rc.seed(), models, fc);

  make_dir(dir + "/features");
  make_dir(dir + "/feature_models");
  std::vector<CaptionRecord> records;
  for (const auto& e : data) {
    save_features(dir + "/features", e.record.clip_id, e.features);
    records.push_back(e.record);
  }
  write_records_jsonl(dir + "/captions.jsonl", records);
  save_vocab(dir + "/vocab.json", build_train_vocab(records, a.min_count));
  save_flow_pca(dir + "/feature_models/pca.tar", models.pca);
  save_vae(dir + "/feature_models/vae.tar", models.vae);

  if (a.raw) {
    make_dir(dir + "/raw");
    for (int i = 0; i < a.n; ++i) {
      const auto s = clip_seed(rc.seed(), i);
      const auto clip = gen_clip(s, sample_action(s), fc.duration_s, fc.scene);
      write_tensor(dir + "/raw/" + clip_id_for(i) + ".frames", clip.frames);
      write_tensor(dir + "/raw/" + clip_id_for(i) + ".flow", clip.true_flow);
    }
  }
  json meta = {{"n", a.n}, {"seed", rc.seed()}, {"duration_s", fc.duration_s},
               {"calibration_clips", fc.calibration_clips}, {"pca_dim", fc.pca_dim},
               {"vae_loss_history", models.vae_loss_history},
               {"grammar_version", CaptionGrammar::builtin().version()}};
  write_text(dir + "/synth_meta.json", meta.dump(1) + "\n");
  out << "wrote " << a.n << " clips to " << dir << "\n";
  return 0;
}

struct PrepareArgs {
  std::string input;
  std::string entities;
  int min_count = 1;
};

int cmd_prepare(const Common& c, const PrepareArgs& a, std::ostream& out, std::ostream&) {
  RunConfig rc;
  rc.load(c);
  require_file(a.input, "input corpus");
  std::map<std::string, EntityKind> entities;
  if (!a.entities.empty()) {
    require_file(a.entities, "entities file");
    const json ej = json::parse(read_file(a.entities));
    for (const auto& [name, kind] : ej.items()) entities[name] = parse_entity_kind(kind.get<std::string>());
  }
  std::vector<CaptionRecord> records;
  std::istringstream lines(read_file(a.input));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json row = json::parse(line);
      CaptionRecord r;
      r.clip_id = row.at("clip_id").get<std::string>();
      r.action = parse_action(row.at("action").get<std::string>());
      r.tokens = tokenize(anonymize(row.at("caption").get<std::string>(), entities));
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error("bad_jsonl", a.input + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  CAPKIT_CHECK(!records.empty(), "empty_dataset", a.input + " has no records");
  split_dataset(records, SplitRatios{}, rc.seed());
  const std::string dir = c.out.empty() ? rc.path("data", "data") : c.out;
  make_dir(dir);
  write_records_jsonl(dir + "/captions.jsonl", records);
  const auto vocab = build_train_vocab(records, a.min_count);
  save_vocab(dir + "/vocab.json", vocab);
  out << "prepared " << records.size() << " records, vocabulary " << vocab.size() << "\n";
  return 0;
}

struct FitArgs {
  std::string raw;
  std::string data;
  std::string models;
};

int cmd_fit_features(const Common& c, const FitArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  rc.load(c);
  const std::string data = a.data.empty() ? rc.path("data", "data") : a.data;
  require_dir(a.raw, "raw clip directory");
  require_file(data + "/captions.jsonl", "captions file");
  const auto records = read_records_jsonl(data + "/captions.jsonl");
  const std::string dir = c.out.empty() ? data : c.out;
  const auto log = stderr_log(err);

  auto raw_clip = [&](const std::string& id) {
    return std::pair{read_tensor(a.raw + "/" + id + ".frames"), read_tensor(a.raw + "/" + id + ".flow")};
  };
  auto fit_or_load = [&]() -> FeatureModels {
    if (!a.models.empty()) {
      require_file(a.models + "/pca.tar", "PCA model");
      require_file(a.models + "/vae.tar", "VAE model");
      return FeatureModels{load_flow_pca(a.models + "/pca.tar"), load_vae(a.models + "/vae.tar"), {}};
    }
    std::vector<ArrayD> frames, flows;
    for (const auto& r : records) {
      if (r.split != Split::kTrain) continue;
      auto [fr, fl] = raw_clip(r.clip_id);
      frames.push_back(std::move(fr));
      flows.push_back(std::move(fl));
    }
    CAPKIT_CHECK(!frames.empty(), "empty_split", "no train-split clips to fit on");
    const FeatureConfig fc = feature_config(rc);
    log("fitting on " + std::to_string(frames.size()) + " train clips");
    return fit_feature_models(frames, flows, fc);
  };
  const FeatureModels models = fit_or_load();
  make_dir(dir + "/features");
  make_dir(dir + "/feature_models");
  for (const auto& r : records) {
    const auto [fr, fl] = raw_clip(r.clip_id);
    save_features(dir + "/features", r.clip_id, extract_features(fr, fl, models));
  }
  save_flow_pca(dir + "/feature_models/pca.tar", models.pca);
  save_vae(dir + "/feature_models/vae.tar", models.vae);
  out << "wrote features for " << records.size() << " clips to " << dir << "/features\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string features;
  std::optional<int> epochs;
  std::optional<int> patience;
};

std::string features_dir(const RunConfig& rc, const std::string& data, const std::string& flag) {
  if (!flag.empty()) return flag;
  return rc.path("features", data + "/features");
}

std::string history_text(const RunReport& r) {
  std::string s = "epoch  train_loss  val_B@4  val_CIDEr  val_P  val_R  val_norm\n";
  char buf[160];
  for (const auto& e : r.history) {
    std::snprintf(buf, sizeof buf, "%5d  %10.5f  %7.2f  %9.4f  %5.1f  %5.1f  %8.4f\n", e.epoch, e.train_loss,
                  e.val.bleu[3], e.val.cider, e.val.sw_precision, e.val.sw_recall, e.val.normalized);
    s += buf;
  }
  s += "best epoch " + std::to_string(r.best_epoch) + "\n\ntest\n" + r.test.to_text();
  return s;
}

int cmd_train(const Common& c, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  rc.load(c);
  const std::string data = a.data.empty() ? rc.path("data", "data") : a.data;
  const auto tc = train_config(rc, a.epochs, a.patience);
  require_file(data + "/vocab.json", "vocabulary");
  const auto vocab = load_vocab(data + "/vocab.json");
  const auto clips = load_clips(data, features_dir(rc, data, a.features));
  const std::string dir = c.out.empty() ? rc.path("checkpoints", "checkpoints") : c.out;
  make_dir(dir);
  auto res = train(clips, vocab, SWLexicon::builtin(), tc, dir + "/model.ckpt", stderr_log(err));
  write_text(dir + "/run_report.json", res.report.to_json().dump(1) + "\n");
  write_text(dir + "/run_report.txt", history_text(res.report));
  out << history_text(res.report);
  return res.report.aborted ? 1 : 0;
}

struct GenerateArgs {
  std::string data;
  std::string features;
  std::string checkpoint;
  std::string split = "test";
  std::string mode = "greedy";
  int max_len = 64;
};

int cmd_generate(const Common& c, const GenerateArgs& a, std::ostream& out, std::ostream&) {
  RunConfig rc;
  rc.load(c);
  const std::string data = a.data.empty() ? rc.path("data", "data") : a.data;
  const std::string ckpt = a.checkpoint.empty() ? rc.path("checkpoints", "checkpoints") + "/model.ckpt" : a.checkpoint;
  require_file(ckpt, "checkpoint");
  require_file(data + "/vocab.json", "vocabulary");
  const auto vocab = load_vocab(data + "/vocab.json");
  const auto model = load_model(ckpt);
  CAPKIT_CHECK(static_cast<std::size_t>(model.config().vocab_size) == vocab.size(), "checkpoint_mismatch",
               "checkpoint vocabulary size differs from " + data + "/vocab.json");
  const Split split = parse_split(a.split);
  const auto clips = select_split(load_clips(data, features_dir(rc, data, a.features)), split);
  const auto hyps = generate_captions(model, clips, vocab, a.max_len);
  std::vector<std::pair<std::string, Tokens>> rows;
  for (std::size_t i = 0; i < clips.size(); ++i) rows.emplace_back(clips[i].record.clip_id, hyps[i]);
  const std::string dir = c.out.empty() ? rc.path("reports", "reports") : c.out;
  make_dir(dir);
  const std::string path = dir + "/hyps_" + a.split + ".jsonl";
  write_captions_jsonl(path, rows);
  out << "wrote " << rows.size() << " captions to " << path << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string hyps;
  std::string refs;
  std::string lexicon;
  bool macro = false;
};

int cmd_evaluate(const Common& c, const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  rc.load(c);
  require_file(a.hyps, "hypotheses file");
  require_file(a.refs, "references file");
  std::optional<SWLexicon> lex_storage;
  const SWLexicon& lexicon = lexicon_from(a.lexicon, lex_storage);
  const auto hyps = read_captions_jsonl(a.hyps);
  const auto refs = read_captions_jsonl(a.refs);
  const auto [h, r] = join_on_clip_id(hyps, refs);
  const auto report = evaluate_corpus(h, r, lexicon, a.macro);
  for (const auto& w : report.warnings) err << "[capkit] warning: " << w << "\n";
  if (!c.out.empty()) {
    make_dir(c.out);
    write_text(c.out + "/metrics.json", report.to_json().dump(1) + "\n");
    write_text(c.out + "/metrics.txt", report.to_text());
  }
  out << report.to_text();
  return 0;
}

struct AblateArgs {
  std::string data;
  std::string features;
  std::optional<int> epochs;
  std::optional<int> patience;
};

int cmd_ablate(const Common& c, const AblateArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  rc.load(c);
  const std::string data = a.data.empty() ? rc.path("data", "data") : a.data;
  const auto tc = train_config(rc, a.epochs, a.patience);
  TripletConfig trip = TripletConfig::from_json(rc.section("triplet"));
  require_file(data + "/vocab.json", "vocabulary");
  const auto vocab = load_vocab(data + "/vocab.json");
  const auto clips = load_clips(data, features_dir(rc, data, a.features));
  const std::string dir = c.out.empty() ? rc.path("reports", "reports") : c.out;
  make_dir(dir + "/checkpoints");
  const auto suite = default_suite(tc);
  const auto table = run_ablation(suite, clips, vocab, SWLexicon::builtin(), trip, rc.seed(), dir + "/checkpoints",
                                  stderr_log(err));
  write_text(dir + "/ablation.json", table.to_json().dump(1) + "\n");
  write_text(dir + "/ablation.txt", table.to_text());
  out << table.to_text();
  return 0;
}

struct ReportArgs {
  std::string from_values;
  std::string from_run;
};

int cmd_report(const Common& c, const ReportArgs& a, std::ostream& out, std::ostream&) {
  RunConfig rc;
  rc.load(c);
  AblationTable table;
  if (!a.from_values.empty()) {
    require_file(a.from_values, "values file");
    table = table_from_values(json::parse(read_file(a.from_values)));
  } else {
    require_file(a.from_run, "ablation report");
    table = AblationTable::from_json(json::parse(read_file(a.from_run)));
  }
  if (!c.out.empty()) {
    make_dir(c.out);
    write_text(c.out + "/report.txt", table.to_text());
    write_text(c.out + "/report.json", table.to_json().dump(1) + "\n");
  }
  out << table.to_text();
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"capkit: synthetic soccer clip captioning pipeline", "capkit"};
  app.require_subcommand(1);

  Common common;
  SynthArgs synth;
  PrepareArgs prep;
  FitArgs fit;
  TrainArgs tr;
  GenerateArgs gen;
  EvaluateArgs ev;
  AblateArgs abl;
  ReportArgs rep;

  auto* s = app.add_subcommand("synth", "Generate synthetic clips, captions and features");
  add_common(s, common);
  s->add_option("--n", synth.n, "Number of clips")->capture_default_str();
  s->add_option("--duration", synth.duration, "Clip length in seconds");
  s->add_option("--calibration-clips", synth.calibration_clips, "Clips used to fit the PCA and VAE");
  s->add_option("--vae-epochs", synth.vae_epochs, "VAE training epochs");
  s->add_option("--min-count", synth.min_count, "Vocabulary frequency cut-off")->capture_default_str();
  s->add_flag("--raw", synth.raw, "Also write raw frames and flows under <out>/raw");

  auto* p = app.add_subcommand("prepare", "Anonymize, tokenize, split and build the vocabulary of a JSONL corpus");
  add_common(p, common);
  p->add_option("--input", prep.input, "JSONL rows {clip_id, action, caption}")->required();
  p->add_option("--entities", prep.entities, "JSON map of surface name -> player|coach|team|time");
  p->add_option("--min-count", prep.min_count, "Vocabulary frequency cut-off")->capture_default_str();

  auto* f = app.add_subcommand("fit-features", "Fit PCA and VAE on raw clips and write feature streams");
  add_common(f, common);
  f->add_option("--raw", fit.raw, "Directory of <clip>.frames and <clip>.flow tensors")->required();
  f->add_option("--data", fit.data, "Dataset directory with captions.jsonl");
  f->add_option("--models", fit.models, "Reuse pca.tar and vae.tar from this directory");

  auto* t = app.add_subcommand("train", "Train the captioning model");
  add_common(t, common);
  t->add_option("--data", tr.data, "Dataset directory");
  t->add_option("--features", tr.features, "Feature directory (default <data>/features)");
  t->add_option("--epochs", tr.epochs, "Maximum epochs");
  t->add_option("--patience", tr.patience, "Evaluations without improvement before stopping");

  auto* g = app.add_subcommand("generate", "Caption a split with a trained model");
  add_common(g, common);
  g->add_option("--data", gen.data, "Dataset directory");
  g->add_option("--features", gen.features, "Feature directory (default <data>/features)");
  g->add_option("--checkpoint", gen.checkpoint, "Model checkpoint");
  g->add_option("--split", gen.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  g->add_option("--mode", gen.mode, "Decoding mode")->check(CLI::IsMember({"greedy"}))->capture_default_str();
  g->add_option("--max-len", gen.max_len, "Maximum caption length")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  auto* e = app.add_subcommand("evaluate", "Score hypotheses against references");
  add_common(e, common);
  e->add_option("--hyps", ev.hyps, "Hypotheses JSONL {clip_id, caption}")->required();
  e->add_option("--refs", ev.refs, "References JSONL {clip_id, caption}")->required();
  e->add_option("--lexicon", ev.lexicon, "SW lexicon JSON (default: built-in)");
  e->add_flag("--macro", ev.macro, "Macro-average SW precision and recall over pairs");

  auto* a = app.add_subcommand("ablate", "Run the six-row ablation suite");
  add_common(a, common);
  a->add_option("--data", abl.data, "Dataset directory");
  a->add_option("--features", abl.features, "Feature directory (default <data>/features)");
  a->add_option("--epochs", abl.epochs, "Maximum epochs per trained row");
  a->add_option("--patience", abl.patience, "Evaluations without improvement before stopping");

  auto* r = app.add_subcommand("report", "Format a results table");
  add_common(r, common);
  auto* fv = r->add_option("--from-values", rep.from_values, "JSON rows of published metric values");
  auto* fr = r->add_option("--from-run", rep.from_run, "ablation.json written by ablate");
  fv->excludes(fr);

  std::vector<const char*> cargv;
  for (const auto& s : argv) cargv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
    if (r->parsed() && rep.from_values.empty() && rep.from_run.empty())
      throw CLI::RequiredError("report needs --from-values or --from-run");
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: code=usage message=" << one_line(ex.what()) << "\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  try {
    if (s->parsed()) return cmd_synth(common, synth, out, err);
    if (p->parsed()) return cmd_prepare(common, prep, out, err);
    if (f->parsed()) return cmd_fit_features(common, fit, out, err);
    if (t->parsed()) return cmd_train(common, tr, out, err);
    if (g->parsed()) return cmd_generate(common, gen, out, err);
    if (e->parsed()) return cmd_evaluate(common, ev, out, err);
    if (a->parsed()) return cmd_ablate(common, abl, out, err);
    if (r->parsed()) return cmd_report(common, rep, out, err);
  } catch (const Error& ex) {
    err << "error: code=" << ex.code() << " message=" << one_line(ex.what()) << "\n";
    return 1;
  } catch (const std::exception& ex) {
    err << "error: code=internal message=" << one_line(ex.what()) << "\n";
    return 1;
  }
  return 2;
}

}  // namespace capkit
