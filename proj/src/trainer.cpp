#include "kws/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "kws/augment.hpp"
#include "kws/eval.hpp"

namespace kws {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(epoch));
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::array<double, 2> parse_range(const std::string& text, const std::string& key) {
  std::array<double, 2> r{};
  char sep = 0;
  std::istringstream in(text);
  if (!(in >> r[0] >> sep >> r[1]) || sep != ',') {
    throw std::invalid_argument(key + " expects 'low,high', got '" + text + "'");
  }
  return r;
}

// Per-clip augmentation draws for one epoch, fixed before any clip is loaded.
struct ClipPlan {
  bool add_noise = false;
  std::size_t noise_index = 0;
  double snr_db = 0.0;
  std::uint64_t crop_seed = 0;
  double shift_ms = 0.0;
};

}  // namespace

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw std::invalid_argument("train.base_lr must be positive");
  if (!(power > 0)) throw std::invalid_argument("train.power must be positive");
  if (epochs <= 0) throw std::invalid_argument("train.epochs must be positive");
  if (batch_size <= 0) throw std::invalid_argument("train.batch_size must be positive");
  if (weight_decay < 0) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train.momentum must be in [0,1)");
  if (noise_prob < 0 || noise_prob > 1) throw std::invalid_argument("train.noise_prob must be in [0,1]");
  if (snr_range_db[0] > snr_range_db[1]) throw std::invalid_argument("train.snr_range_db is not ordered");
  if (shift_range_ms[0] > shift_range_ms[1]) throw std::invalid_argument("train.shift_range_ms is not ordered");
  if (std::abs(shift_range_ms[0]) > kMaxShiftMs || std::abs(shift_range_ms[1]) > kMaxShiftMs) {
    throw std::invalid_argument("train.shift_range_ms must lie within [-100,100]");
  }
  if (max_steps < 0) throw std::invalid_argument("train.max_steps must be >= 0");
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  kv.set("train.base_lr", fmt(base_lr));
  kv.set("train.power", fmt(power));
  kv.set("train.epochs", std::to_string(epochs));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.weight_decay", fmt(weight_decay));
  kv.set("train.momentum", fmt(momentum));
  kv.set("train.noise_prob", fmt(noise_prob));
  kv.set("train.snr_range_db", fmt(snr_range_db[0]) + "," + fmt(snr_range_db[1]));
  kv.set("train.shift_range_ms", fmt(shift_range_ms[0]) + "," + fmt(shift_range_ms[1]));
  kv.set("train.rng_seed", std::to_string(rng_seed));
  kv.set("train.augment", augment ? "true" : "false");
  kv.set("train.max_steps", std::to_string(max_steps));
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv, TrainConfig base) {
  TrainConfig c = base;
  c.base_lr = kv.get_double("train.base_lr", c.base_lr);
  c.power = kv.get_double("train.power", c.power);
  c.epochs = static_cast<int>(kv.get_int("train.epochs", c.epochs));
  c.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.batch_size));
  c.weight_decay = kv.get_double("train.weight_decay", c.weight_decay);
  c.momentum = kv.get_double("train.momentum", c.momentum);
  c.noise_prob = kv.get_double("train.noise_prob", c.noise_prob);
  if (auto v = kv.get("train.snr_range_db")) c.snr_range_db = parse_range(*v, "train.snr_range_db");
  if (auto v = kv.get("train.shift_range_ms")) c.shift_range_ms = parse_range(*v, "train.shift_range_ms");
  c.rng_seed = static_cast<std::uint64_t>(kv.get_int("train.rng_seed", static_cast<long long>(c.rng_seed)));
  if (auto v = kv.get("train.augment")) {
    if (*v == "true" || *v == "1") c.augment = true;
    else if (*v == "false" || *v == "0") c.augment = false;
    else throw std::invalid_argument("train.augment expects true|false, got '" + *v + "'");
  }
  c.max_steps = kv.get_int("train.max_steps", c.max_steps);
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) { return from_kv(kv, TrainConfig{}); }

double poly_lr(long long iter, long long max_iter, const TrainConfig& cfg) {
  if (max_iter <= 0) throw std::invalid_argument("poly_lr: max_iter must be positive");
  if (iter < 0 || iter > max_iter) throw std::out_of_range("poly_lr: iter outside [0, max_iter]");
  return cfg.base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), cfg.power);
}

SgdOptimizer::SgdOptimizer(std::vector<NamedParameter<float>> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
}

void sgd_step(std::vector<NamedParameter<float>>& params, std::vector<std::vector<float>>& velocity, double lr,
              double momentum, double weight_decay) {
  if (params.size() != velocity.size()) throw std::invalid_argument("sgd_step: velocity count mismatch");
  const float m = static_cast<float>(momentum);
  const float step = static_cast<float>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto w = p.tensor.mutable_data();
    auto& v = velocity[i];
    if (v.size() != w.size()) throw std::invalid_argument("sgd_step: velocity shape mismatch for " + p.name);
    const auto g = p.tensor.grad();
    if (!g.empty() && g.size() != w.size()) throw std::invalid_argument("sgd_step: grad shape mismatch for " + p.name);
    const float wd = p.weight_decay ? static_cast<float>(weight_decay) : 0.0f;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float gj = g.empty() ? 0.0f : g[j];
      v[j] = m * v[j] + (gj + wd * w[j]);
      w[j] -= step * v[j];
    }
  }
}

void SgdOptimizer::step(double lr) { sgd_step(params_, velocity_, lr, momentum_, weight_decay_); }

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

bool SgdOptimizer::decays(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.weight_decay && weight_decay_ > 0;
  }
  throw std::out_of_range("no parameter named " + name);
}

std::vector<NamedArray> SgdOptimizer::state() const {
  std::vector<NamedArray> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"optimizer.velocity." + params_[i].name, params_[i].tensor.shape(), velocity_[i]});
  }
  return out;
}

void SgdOptimizer::load_state(const std::vector<NamedArray>& records) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto name = "optimizer.velocity." + params_[i].name;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing " + name);
    if (it->second->values.size() != velocity_[i].size()) throw std::runtime_error("shape mismatch for " + name);
    velocity_[i] = it->second->values;
  }
}

Trainer::Trainer(CENet<float>& model, TrainConfig cfg, FrontendConfig frontend)
    : model_(model),
      cfg_(cfg),
      frontend_(frontend),
      optimizer_(model.parameters(), cfg.momentum, cfg.weight_decay) {
  cfg_.validate();
}

StepMetrics Trainer::train_step(const Tensor<float>& batch, std::span<const int> labels, double lr) {
  optimizer_.zero_grad();
  auto logits = model_.forward(batch, Mode::train);
  auto loss = ops::cross_entropy(logits, labels);
  loss.backward();
  optimizer_.step(lr);
  StepMetrics m;
  m.step = iteration_;
  m.lr = lr;
  m.loss = loss.item();
  m.train_acc = accuracy(logits.data(), static_cast<int>(logits.dim(1)), labels);
  ++iteration_;
  return m;
}

void Trainer::save_checkpoint(const fs::path& path, const KeyValues& extra) {
  auto records = model_.state();
  for (auto& r : optimizer_.state()) records.push_back(std::move(r));
  write_checkpoint(path, records);
  auto kv = model_.config().to_kv();
  kv.merge(cfg_.to_kv());
  kv.set("frontend.kind", to_string(frontend_.config().kind));
  kv.set("frontend.mel_scale", to_string(frontend_.config().mel_scale));
  kv.merge(extra);
  kv.set("train.iteration", std::to_string(iteration_));
  kv.save(config_path_for(path));
}

void Trainer::load_checkpoint(const fs::path& path) {
  const auto records = read_checkpoint(path);
  model_.load_state(records);
  optimizer_.load_state(records);
  iteration_ = KeyValues::load(config_path_for(path)).get_int("train.iteration", 0);
}

TrainResult Trainer::fit(ClipSource& train, const ClipSource* val, const std::vector<AudioClip>& noise,
                         const TrainOptions& options) {
  train.begin_epoch(epoch_seed(cfg_.rng_seed, 0));
  if (train.size() == 0) throw std::invalid_argument("training set is empty");
  const bool use_noise = cfg_.augment && cfg_.noise_prob > 0 && !noise.empty();

  std::ofstream metrics, epochs_csv;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    const auto mode = iteration_ == 0 ? std::ios::trunc : std::ios::app;
    metrics.open(options.out_dir / "metrics.csv", std::ios::out | mode);
    epochs_csv.open(options.out_dir / "epochs.csv", std::ios::out | mode);
    if (!metrics || !epochs_csv) throw std::runtime_error("cannot write metrics under " + options.out_dir.string());
    if (iteration_ == 0) {
      metrics << "step,lr,loss,train_acc\n";
      epochs_csv << "epoch,mean_loss,train_acc,val_acc\n";
    }
    metrics << std::setprecision(9);
    epochs_csv << std::setprecision(9);
  }

  TrainResult result;
  const long long steps_per_epoch =
      (static_cast<long long>(train.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
  const long long max_iter = steps_per_epoch * cfg_.epochs;
  const long long stop_at = cfg_.max_steps > 0 ? std::min(max_iter, cfg_.max_steps) : max_iter;
  const int first_epoch = static_cast<int>(iteration_ / steps_per_epoch);

  for (int epoch = first_epoch; epoch < cfg_.epochs && iteration_ < stop_at; ++epoch) {
    const auto seed = epoch_seed(cfg_.rng_seed, epoch);
    train.begin_epoch(seed);
    const std::size_t n = train.size();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<ClipPlan> plans(n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> snr(cfg_.snr_range_db[0], cfg_.snr_range_db[1]);
    std::uniform_real_distribution<double> shift(cfg_.shift_range_ms[0], cfg_.shift_range_ms[1]);
    for (auto& p : plans) {
      p.add_noise = use_noise && unit(rng) < cfg_.noise_prob;
      if (use_noise) p.noise_index = std::uniform_int_distribution<std::size_t>(0, noise.size() - 1)(rng);
      p.snr_db = snr(rng);
      p.crop_seed = rng();
      p.shift_ms = shift(rng);
    }

    EpochSummary summary;
    summary.epoch = epoch + 1;
    double loss_sum = 0.0, correct = 0.0;
    std::size_t seen = 0;
    const long long first_step = static_cast<long long>(epoch) * steps_per_epoch;
    for (long long s = iteration_ - first_step; s < steps_per_epoch && iteration_ < stop_at; ++s) {
      const std::size_t begin = static_cast<std::size_t>(s) * cfg_.batch_size;
      const std::size_t end = std::min(n, begin + cfg_.batch_size);
      std::vector<FeatureMatrix> feats;
      std::vector<int> labels;
      for (std::size_t k = begin; k < end; ++k) {
        auto item = train.get(order[k]);
        validate_clip(item.clip);
        if (cfg_.augment) {
          const auto& p = plans[k];
          // A silent clip has no defined SNR; skip mixing for it.
          if (p.add_noise && mean_power(item.clip.samples) > 0) {
            item.clip = augment_noise(item.clip, noise[p.noise_index], p.snr_db, p.crop_seed);
          }
          item.clip = time_shift(item.clip, p.shift_ms);
        }
        feats.push_back(frontend_.compute(item.clip));
        labels.push_back(item.label);
      }
      std::vector<const FeatureMatrix*> ptrs;
      for (const auto& f : feats) ptrs.push_back(&f);
      const double lr = poly_lr(iteration_, max_iter, cfg_);
      auto m = train_step(features_to_tensor(ptrs), labels, lr);
      m.epoch = epoch + 1;
      loss_sum += m.loss * static_cast<double>(labels.size());
      correct += m.train_acc * static_cast<double>(labels.size());
      seen += labels.size();
      if (metrics) metrics << m.step << ',' << m.lr << ',' << m.loss << ',' << m.train_acc << '\n';
      if (options.on_step) options.on_step(m);
      result.steps.push_back(m);
    }
    if (seen == 0) continue;
    summary.mean_loss = loss_sum / static_cast<double>(seen);
    summary.train_acc = correct / static_cast<double>(seen);
    if (val && val->size() > 0) summary.val_acc = evaluate_accuracy(model_, *val, frontend_, cfg_.batch_size);
    result.epochs.push_back(summary);
    if (epochs_csv) {
      epochs_csv << summary.epoch << ',' << summary.mean_loss << ',' << summary.train_acc << ',';
      if (summary.val_acc) epochs_csv << *summary.val_acc;
      epochs_csv << '\n';
    }
    if (metrics) metrics.flush();
    if (epochs_csv) epochs_csv.flush();

    const bool improved = !result.best_val_acc || (summary.val_acc && *summary.val_acc > *result.best_val_acc);
    if (improved || !summary.val_acc) {
      result.best_epoch = summary.epoch;
      if (summary.val_acc) result.best_val_acc = summary.val_acc;
    }
    if (!options.out_dir.empty()) {
      auto extra = options.config_snapshot;
      extra.set("train.epoch", std::to_string(summary.epoch));
      if (summary.val_acc) extra.set("train.val_acc", fmt(*summary.val_acc));
      save_checkpoint(options.out_dir / "last.ckpt", extra);
      if (result.best_epoch == summary.epoch) save_checkpoint(options.out_dir / "best.ckpt", extra);
    }
    if (options.on_epoch) options.on_epoch(summary);
  }
  result.iterations = iteration_;
  return result;
}

double evaluate_accuracy(CENet<float>& model, const ClipSource& source, const Frontend& frontend, int batch_size) {
  if (source.size() == 0) throw std::invalid_argument("cannot evaluate an empty set");
  NoGradGuard no_grad;
  std::size_t hits = 0;
  for (std::size_t begin = 0; begin < source.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(source.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<FeatureMatrix> feats;
    std::vector<int> labels;
    for (std::size_t i = begin; i < end; ++i) {
      auto item = source.get(i);
      feats.push_back(frontend.compute(item.clip));
      labels.push_back(item.label);
    }
    std::vector<const FeatureMatrix*> ptrs;
    for (const auto& f : feats) ptrs.push_back(&f);
    const auto logits = model.forward(features_to_tensor(ptrs), Mode::infer);
    hits += static_cast<std::size_t>(
        std::lround(accuracy(logits.data(), static_cast<int>(logits.dim(1)), labels) * labels.size()));
  }
  return static_cast<double>(hits) / static_cast<double>(source.size());
}

}  // namespace kws
