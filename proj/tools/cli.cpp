#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "kws/audio.hpp"
#include "kws/cenet.hpp"
#include "kws/dataset.hpp"
#include "kws/eval.hpp"
#include "kws/footprint.hpp"
#include "kws/frontend.hpp"
#include "kws/kv_config.hpp"
#include "kws/model_config.hpp"
#include "kws/trainer.hpp"

#ifndef KWS_BUILD_ID
#define KWS_BUILD_ID "unknown"
#endif

namespace kws::cli {

namespace fs = std::filesystem;

namespace {

// Layered settings: built-in default < environment < config file < flag.
class Settings {
 public:
  void layer(const KeyValues& kv, const std::string& source) {
    for (const auto& [k, v] : kv.entries()) values_[k] = {v, source};
  }
  void set(const std::string& key, const std::string& value, const std::string& source) {
    values_[key] = {value, source};
  }
  std::string get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::logic_error("unresolved setting " + key);
    return it->second.first;
  }
  KeyValues values() const {
    KeyValues kv;
    for (const auto& [k, v] : values_) kv.set(k, v.first);
    return kv;
  }

  void write_manifest(const fs::path& out_dir, const std::string& command) const {
    std::ofstream out(out_dir / "run_manifest.txt");
    if (!out) throw std::runtime_error("cannot write " + (out_dir / "run_manifest.txt").string());
    out << "# kws run manifest\n";
    out << "run.command = " << command << "\n";
    out << "run.build_id = " << KWS_BUILD_ID << "\n";
    out << "run.out_dir = " << fs::absolute(out_dir).generic_string() << "\n";
    for (const auto& [k, v] : values_) out << k << " = " << v.first << "  # " << v.second << "\n";
  }

 private:
  std::map<std::string, std::pair<std::string, std::string>> values_;
};

struct Flag {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

void apply_flags(Settings& s, const std::vector<Flag>& flags) {
  for (const auto& f : flags) {
    if (f.option && f.option->count() > 0) s.set(f.key, f.value, "flag");
  }
}

void apply_config_file(Settings& s, const std::string& path) {
  if (path.empty()) return;
  s.layer(KeyValues::load(path), "config");
}

fs::path prepare_out_dir(const std::string& dir) {
  if (dir.empty()) throw std::invalid_argument("--out-dir is required");
  fs::create_directories(dir);
  return dir;
}

// Relative output names land under the output directory.
fs::path under(const fs::path& out_dir, const std::string& name) {
  const fs::path p(name);
  return p.is_absolute() ? p : out_dir / p;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string env_data_dir() {
  const char* v = std::getenv("KWS_DATA_DIR");
  return v ? v : "";
}

void data_defaults(Settings& s) {
  KeyValues d;
  d.set("data.val_pct", "10");
  d.set("data.test_pct", "10");
  d.set("data.unknown_fraction", "0.1");
  d.set("data.silence_fraction", "0.1");
  s.layer(d, "default");
  s.set("data.dir", "", "default");
  if (auto env = env_data_dir(); !env.empty()) s.set("data.dir", env, "env");
}

void frontend_defaults(Settings& s) {
  s.set("frontend.kind", "mfcc", "default");
  s.set("frontend.mel_scale", "htk", "default");
}

FrontendConfig frontend_from(const KeyValues& kv) {
  FrontendConfig fe;
  fe.kind = parse_feature_kind(kv.get_string("frontend.kind", "mfcc"));
  fe.mel_scale = parse_mel_scale(kv.get_string("frontend.mel_scale", "htk"));
  fe.validate();
  return fe;
}

fs::path require_data_dir(const KeyValues& kv) {
  const auto dir = kv.get_string("data.dir", "");
  if (dir.empty()) throw std::invalid_argument("no dataset directory: pass --data-dir or set KWS_DATA_DIR");
  return dir;
}

std::string percent(std::size_t n, std::size_t total) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << (total ? 100.0 * static_cast<double>(n) / total : 0.0) << '%';
  return s.str();
}

// ---------------------------------------------------------------- commands

struct PrepareArgs {
  std::string out_dir, manifest_out = "dataset.csv", config;
  std::vector<Flag> flags{{"data.dir", "", nullptr}, {"data.val_pct", "", nullptr}, {"data.test_pct", "", nullptr}};
};

int cmd_prepare_data(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
  Settings s;
  data_defaults(s);
  apply_config_file(s, a.config);
  apply_flags(s, a.flags);
  const auto kv = s.values();
  const auto out_dir = prepare_out_dir(a.out_dir);
  s.write_manifest(out_dir, "prepare-data");

  const auto scanned = scan(require_data_dir(kv), kv.get_double("data.val_pct", 10), kv.get_double("data.test_pct", 10));
  for (const auto& w : scanned.warnings) err << "warning: " << w << '\n';
  auto csv = open_output(under(out_dir, a.manifest_out));
  write_manifest(csv, scanned.records);
  const auto c = count_splits(scanned.records);
  out << "records " << c.total() << '\n';
  out << "train " << c.train << " (" << percent(c.train, c.total()) << ")\n";
  out << "val " << c.val << " (" << percent(c.val, c.total()) << ")\n";
  out << "test " << c.test << " (" << percent(c.test, c.total()) << ")\n";
  out << "noise_files " << scanned.noise_files.size() << '\n';
  return kOk;
}

struct TrainArgs {
  std::string out_dir, config, resume;
  bool no_augment = false;
  std::vector<Flag> flags{{"model.variant", "", nullptr},     {"model.gcn_stages", "", nullptr},
                          {"data.dir", "", nullptr},          {"train.rng_seed", "", nullptr},
                          {"train.epochs", "", nullptr},      {"train.batch_size", "", nullptr},
                          {"train.max_steps", "", nullptr},   {"train.base_lr", "", nullptr},
                          {"train.momentum", "", nullptr},    {"frontend.kind", "", nullptr}};
};

int cmd_train(const TrainArgs& a, CLI::Option* no_augment, std::ostream& out, std::ostream& err) {
  Settings s;
  s.layer(ModelConfig::for_variant(Variant::cenet6).to_kv(), "default");
  s.layer(TrainConfig{}.to_kv(), "default");
  frontend_defaults(s);
  data_defaults(s);
  apply_config_file(s, a.config);
  apply_flags(s, a.flags);
  if (no_augment->count() > 0) s.set("train.augment", "false", "flag");
  const auto kv = s.values();

  const auto model_cfg = ModelConfig::from_kv(kv);
  const auto train_cfg = TrainConfig::from_kv(kv);
  const auto fe = frontend_from(kv);
  const auto data_dir = require_data_dir(kv);
  const auto out_dir = prepare_out_dir(a.out_dir);
  s.write_manifest(out_dir, "train");

  const auto scanned = scan(data_dir, kv.get_double("data.val_pct", 10), kv.get_double("data.test_pct", 10));
  for (const auto& w : scanned.warnings) err << "warning: " << w << '\n';
  auto noise = std::make_shared<const std::vector<AudioClip>>(load_noise_clips(scanned.noise_files));
  BalanceConfig balance{kv.get_double("data.unknown_fraction", 0.1), kv.get_double("data.silence_fraction", 0.1)};
  CorpusSplit train(scanned.records, Split::train, noise, balance, train_cfg.rng_seed, true);
  CorpusSplit val(scanned.records, Split::val, noise, balance, train_cfg.rng_seed ^ 0x5bd1e995u, false);

  auto model = CENet<float>::build(model_cfg, train_cfg.rng_seed);
  Trainer trainer(model, train_cfg, fe);
  if (!a.resume.empty()) trainer.load_checkpoint(a.resume);

  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.config_snapshot = kv;
  opts.on_epoch = [&](const EpochSummary& e) {
    out << "epoch " << e.epoch << " loss " << e.mean_loss << " train_acc " << e.train_acc;
    if (e.val_acc) out << " val_acc " << *e.val_acc;
    out << '\n' << std::flush;
  };
  const auto result = trainer.fit(train, val.size() ? &val : nullptr, *noise, opts);
  out << "steps " << result.iterations << " best_epoch " << result.best_epoch;
  if (result.best_val_acc) out << " best_val_acc " << *result.best_val_acc;
  out << '\n';
  return kOk;
}

struct EvalArgs {
  std::string out_dir, checkpoint, split = "test", roc_out = "roc", config;
  int batch_size = 64;
  std::vector<Flag> flags{{"data.dir", "", nullptr}, {"run.seed", "", nullptr}};
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  if (a.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  Settings s;
  data_defaults(s);
  s.set("run.seed", "0", "default");
  s.layer(KeyValues::load(config_path_for(a.checkpoint)), "checkpoint");
  if (auto env = env_data_dir(); !env.empty()) s.set("data.dir", env, "env");
  apply_config_file(s, a.config);
  apply_flags(s, a.flags);
  s.set("eval.checkpoint", a.checkpoint, "flag");
  s.set("eval.split", a.split, "flag");
  const auto kv = s.values();
  const auto split = parse_split(a.split);
  const auto fe = frontend_from(kv);
  auto model = load_model(a.checkpoint);
  const auto data_dir = require_data_dir(kv);
  const auto out_dir = prepare_out_dir(a.out_dir);
  s.write_manifest(out_dir, "eval");

  const auto scanned = scan(data_dir, kv.get_double("data.val_pct", 10), kv.get_double("data.test_pct", 10));
  for (const auto& w : scanned.warnings) err << "warning: " << w << '\n';
  auto noise = std::make_shared<const std::vector<AudioClip>>(load_noise_clips(scanned.noise_files));
  BalanceConfig balance{kv.get_double("data.unknown_fraction", 0.1), kv.get_double("data.silence_fraction", 0.1)};
  const auto seed = static_cast<std::uint64_t>(kv.get_int("run.seed", 0));
  CorpusSplit source(scanned.records, split, noise, balance, seed, false);
  if (source.size() == 0) throw std::runtime_error("split '" + a.split + "' is empty");

  Frontend frontend(fe);
  NoGradGuard no_grad;
  std::vector<double> probs;
  std::vector<int> labels;
  const int n_classes = model.config().n_classes;
  for (std::size_t begin = 0; begin < source.size(); begin += static_cast<std::size_t>(a.batch_size)) {
    const std::size_t end = std::min(source.size(), begin + static_cast<std::size_t>(a.batch_size));
    std::vector<FeatureMatrix> feats;
    for (std::size_t i = begin; i < end; ++i) {
      auto item = source.get(i);
      feats.push_back(frontend.compute(item.clip));
      labels.push_back(item.label);
    }
    std::vector<const FeatureMatrix*> ptrs;
    for (const auto& f : feats) ptrs.push_back(&f);
    const auto p = ops::softmax(model.forward(features_to_tensor(ptrs), Mode::infer), 1);
    probs.insert(probs.end(), p.data().begin(), p.data().end());
  }
  const double acc = accuracy(std::span<const double>(probs), n_classes, labels);

  {
    auto summary = open_output(out_dir / "accuracy.txt");
    summary << "split = " << a.split << "\nsamples = " << labels.size() << "\naccuracy = " << std::setprecision(10)
            << acc << '\n';
  }
  const auto roc_dir = under(out_dir, a.roc_out);
  const auto curves = keyword_rocs(probs, n_classes, labels);
  const auto overall = vertical_average(curves);
  auto auc = open_output(roc_dir / "auc.csv");
  auc << "keyword,auc\n" << std::setprecision(10);
  for (const auto& c : curves) {
    auto f = open_output(roc_dir / (c.keyword + ".csv"));
    write_roc_csv(f, c);
    auc << c.keyword << ',' << c.auc << '\n';
  }
  auto f = open_output(roc_dir / "overall.csv");
  write_roc_csv(f, overall);
  auc << "overall," << overall.auc << '\n';
  out << "accuracy " << std::setprecision(6) << acc << " (" << labels.size() << " samples, split " << a.split << ")\n";
  return kOk;
}

std::array<std::int64_t, 4> parse_input_shape(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw std::invalid_argument("--input expects TxF, got '" + text + "'");
  const auto t = std::stoll(text.substr(0, x)), f = std::stoll(text.substr(x + 1));
  if (t <= 0 || f <= 0) throw std::invalid_argument("--input dimensions must be positive");
  return {1, 1, t, f};
}

struct FootprintArgs {
  std::string out_dir, variant = "cenet6", gcn_stages = "none", input = "101x40";
};

int cmd_footprint(const FootprintArgs& a, std::ostream& out) {
  const auto cfg = ModelConfig::for_variant(parse_variant(a.variant), parse_stage_list(a.gcn_stages));
  const auto shape = parse_input_shape(a.input);
  const auto out_dir = prepare_out_dir(a.out_dir);
  Settings s;
  s.layer(cfg.to_kv(), "flag");
  s.set("footprint.input", a.input, "flag");
  s.write_manifest(out_dir, "footprint");
  const auto report = analyze_footprint(cfg, shape);
  auto csv = open_output(out_dir / "footprint.csv");
  write_footprint_csv(csv, report);
  auto table = open_output(out_dir / "footprint.txt");
  write_footprint_table(table, report);
  write_footprint_table(out, report);
  return kOk;
}

struct FeaturesArgs {
  std::string out_dir, wav, kind = "mfcc", mel_scale = "htk", out = "features.csv";
};

int cmd_features(const FeaturesArgs& a, std::ostream& out) {
  if (a.wav.empty()) throw std::invalid_argument("--wav is required");
  FrontendConfig fe;
  fe.kind = parse_feature_kind(a.kind);
  fe.mel_scale = parse_mel_scale(a.mel_scale);
  const auto clip = load_wav(a.wav);
  const auto out_dir = prepare_out_dir(a.out_dir);
  Settings s;
  s.set("features.wav", a.wav, "flag");
  s.set("frontend.kind", a.kind, "flag");
  s.set("frontend.mel_scale", a.mel_scale, "flag");
  s.write_manifest(out_dir, "features");
  const auto m = Frontend(fe).compute(clip);
  auto csv = open_output(under(out_dir, a.out));
  csv << std::setprecision(9);
  for (int t = 0; t < m.frames; ++t) {
    for (int f = 0; f < m.coeffs; ++f) {
      if (f) csv << ',';
      csv << m.at(t, f);
    }
    csv << '\n';
  }
  out << m.frames << 'x' << m.coeffs << ' ' << to_string(m.kind) << '\n';
  return kOk;
}

struct FeatureMapArgs {
  std::string out_dir, checkpoint, wav, side = "pre", out;
  int stage = 1;
};

int cmd_feature_map(const FeatureMapArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() || a.wav.empty()) throw std::invalid_argument("--checkpoint and --wav are required");
  const auto side = parse_gcn_side(a.side);
  const auto kv = KeyValues::load(config_path_for(a.checkpoint));
  auto model = load_model(a.checkpoint);
  const auto clip = load_wav(a.wav);
  const auto out_dir = prepare_out_dir(a.out_dir);
  Settings s;
  s.layer(kv, "checkpoint");
  s.set("feature_map.stage", std::to_string(a.stage), "flag");
  s.set("feature_map.side", a.side, "flag");
  s.write_manifest(out_dir, "feature-map");
  const auto grid = export_stage_feature_map(model, clip, Frontend(frontend_from(kv)), a.stage, side);
  const auto name = a.out.empty() ? "stage" + std::to_string(a.stage) + "_" + a.side + ".csv" : a.out;
  auto csv = open_output(under(out_dir, name));
  write_grid_csv(csv, grid);
  out << grid.rows << 'x' << grid.cols << '\n';
  return kOk;
}

void bind_flag(CLI::App* cmd, std::vector<Flag>& flags, const std::string& key, const std::string& name,
          const std::string& help) {
  for (auto& f : flags) {
    if (f.key == key) {
      f.option = cmd->add_option(name, f.value, help);
      return;
    }
  }
  throw std::logic_error("no flag slot for " + key);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Keyword spotting toolkit", "kws"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare-data", "Scan a dataset directory and write the split manifest");
  bind_flag(c_prep, prep.flags, "data.dir", "--data-dir", "Dataset root (default: $KWS_DATA_DIR)");
  bind_flag(c_prep, prep.flags, "data.val_pct", "--val-pct", "Validation percentage");
  bind_flag(c_prep, prep.flags, "data.test_pct", "--test-pct", "Test percentage");
  c_prep->add_option("--manifest-out", prep.manifest_out, "Manifest CSV path (relative to --out-dir)");
  c_prep->add_option("--config", prep.config, "Key-value config file");
  c_prep->add_option("--out-dir", prep.out_dir, "Output directory")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model");
  bind_flag(c_train, tr.flags, "model.variant", "--variant", "cenet6|cenet24|cenet40");
  bind_flag(c_train, tr.flags, "model.gcn_stages", "--gcn-stages", "Comma list of stages 1..3, or none");
  bind_flag(c_train, tr.flags, "data.dir", "--data-dir", "Dataset root (default: $KWS_DATA_DIR)");
  bind_flag(c_train, tr.flags, "train.rng_seed", "--seed", "Seed for init, sampling and augmentation");
  bind_flag(c_train, tr.flags, "train.epochs", "--epochs", "Training epochs");
  bind_flag(c_train, tr.flags, "train.batch_size", "--batch-size", "Batch size");
  bind_flag(c_train, tr.flags, "train.max_steps", "--max-steps", "Stop after this many steps (0 = no limit)");
  bind_flag(c_train, tr.flags, "train.base_lr", "--lr", "Base learning rate");
  bind_flag(c_train, tr.flags, "train.momentum", "--momentum", "SGD momentum");
  bind_flag(c_train, tr.flags, "frontend.kind", "--kind", "mfcc|fbank");
  auto* no_aug = c_train->add_flag("--no-augment", tr.no_augment, "Disable noise and shift augmentation");
  c_train->add_option("--resume", tr.resume, "Checkpoint to resume from");
  c_train->add_option("--config", tr.config, "Key-value config file");
  c_train->add_option("--out-dir", tr.out_dir, "Output directory")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Accuracy and ROC curves for a checkpoint");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  c_eval->add_option("--split", ev.split, "train|val|test");
  c_eval->add_option("--roc-out", ev.roc_out, "ROC directory (relative to --out-dir)");
  c_eval->add_option("--batch-size", ev.batch_size, "Batch size")->check(CLI::PositiveNumber);
  bind_flag(c_eval, ev.flags, "data.dir", "--data-dir", "Dataset root (default: $KWS_DATA_DIR)");
  bind_flag(c_eval, ev.flags, "run.seed", "--seed", "Seed for unknown/silence composition");
  c_eval->add_option("--config", ev.config, "Key-value config file");
  c_eval->add_option("--out-dir", ev.out_dir, "Output directory")->required();

  FootprintArgs fp;
  auto* c_fp = app.add_subcommand("footprint", "Per-layer parameter and multiply counts");
  c_fp->add_option("--variant", fp.variant, "cenet6|cenet24|cenet40");
  c_fp->add_option("--gcn-stages", fp.gcn_stages, "Comma list of stages 1..3, or none");
  c_fp->add_option("--input", fp.input, "Input plane TxF");
  c_fp->add_option("--out-dir", fp.out_dir, "Output directory")->required();

  FeaturesArgs fa;
  auto* c_feat = app.add_subcommand("features", "Feature matrix of one wav file as CSV");
  c_feat->add_option("--wav", fa.wav, "Input wav")->required();
  c_feat->add_option("--kind", fa.kind, "mfcc|fbank");
  c_feat->add_option("--mel-scale", fa.mel_scale, "htk|slaney");
  c_feat->add_option("--out", fa.out, "CSV name (relative to --out-dir)");
  c_feat->add_option("--out-dir", fa.out_dir, "Output directory")->required();

  FeatureMapArgs fm;
  auto* c_map = app.add_subcommand("feature-map", "Channel-mean stage activation of one wav file as CSV");
  c_map->add_option("--checkpoint", fm.checkpoint, "Checkpoint file")->required();
  c_map->add_option("--wav", fm.wav, "Input wav")->required();
  c_map->add_option("--stage", fm.stage, "Stage 1..3")->check(CLI::Range(1, 3));
  c_map->add_option("--side", fm.side, "pre|post (relative to the GCN module)");
  c_map->add_option("--out", fm.out, "CSV name (relative to --out-dir)");
  c_map->add_option("--out-dir", fm.out_dir, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "kws: error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (c_prep->parsed()) return cmd_prepare_data(prep, out, err);
    if (c_train->parsed()) return cmd_train(tr, no_aug, out, err);
    if (c_eval->parsed()) return cmd_eval(ev, out, err);
    if (c_fp->parsed()) return cmd_footprint(fp, out);
    if (c_feat->parsed()) return cmd_features(fa, out);
    if (c_map->parsed()) return cmd_feature_map(fm, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    err << "kws: error: " << msg << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace kws::cli
