#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kws/cenet.hpp"
#include "kws/dataset.hpp"
#include "kws/frontend.hpp"
#include "kws/kv_config.hpp"

namespace kws {

struct TrainConfig {
  double base_lr = 0.01;
  double power = 0.9;
  int epochs = 350;
  int batch_size = 64;
  double weight_decay = 1e-3;
  double momentum = 0.9;
  double noise_prob = 0.8;
  std::array<double, 2> snr_range_db{5.0, 15.0};
  std::array<double, 2> shift_range_ms{-100.0, 100.0};
  std::uint64_t rng_seed = 0;
  bool augment = true;
  // Stop after this many optimizer steps (0 = run all epochs). The schedule
  // still spans epochs × steps_per_epoch.
  long long max_steps = 0;

  void validate() const;
  KeyValues to_kv() const;
  // Keys under "train."; absent keys keep the values already in `base`.
  static TrainConfig from_kv(const KeyValues& kv, TrainConfig base);
  static TrainConfig from_kv(const KeyValues& kv);
};

/// base_lr · (1 − iter/max_iter)^power
double poly_lr(long long iter, long long max_iter, const TrainConfig& cfg);

/// SGD with momentum: v ← m·v + (g + wd·w), w ← w − lr·v. Parameters whose
/// weight_decay flag is false get wd = 0.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<NamedParameter<float>> params, double momentum, double weight_decay);

  void step(double lr);
  void zero_grad();

  const std::vector<NamedParameter<float>>& params() const { return params_; }
  const std::vector<std::vector<float>>& velocity() const { return velocity_; }
  bool decays(const std::string& name) const;

  // Records named "optimizer.velocity.<param>".
  std::vector<NamedArray> state() const;
  void load_state(const std::vector<NamedArray>& records);

 private:
  std::vector<NamedParameter<float>> params_;
  std::vector<std::vector<float>> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Functional form used by tests: one update of `params` with their current grads.
void sgd_step(std::vector<NamedParameter<float>>& params, std::vector<std::vector<float>>& velocity, double lr,
              double momentum, double weight_decay);

struct StepMetrics {
  long long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_acc = 0.0;
};

struct EpochSummary {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
};

struct TrainResult {
  std::vector<StepMetrics> steps;
  std::vector<EpochSummary> epochs;
  long long iterations = 0;
  int best_epoch = 0;
  std::optional<double> best_val_acc;
};

struct TrainOptions {
  // When set: metrics.csv, epochs.csv, last.ckpt and best.ckpt go here.
  std::filesystem::path out_dir;
  KeyValues config_snapshot;
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const EpochSummary&)> on_epoch;
};

class Trainer {
 public:
  Trainer(CENet<float>& model, TrainConfig cfg, FrontendConfig frontend = {});

  /// Throws std::invalid_argument for an empty training source.
  TrainResult fit(ClipSource& train, const ClipSource* val, const std::vector<AudioClip>& noise,
                  const TrainOptions& options = {});

  /// Forward, cross-entropy, backward and one SGD step on a prepared batch.
  StepMetrics train_step(const Tensor<float>& batch, std::span<const int> labels, double lr);

  void save_checkpoint(const std::filesystem::path& path, const KeyValues& extra = {});
  /// Restores model, optimizer velocity and the iteration counter.
  void load_checkpoint(const std::filesystem::path& path);

  long long iteration() const { return iteration_; }
  const TrainConfig& config() const { return cfg_; }
  const Frontend& frontend() const { return frontend_; }
  SgdOptimizer& optimizer() { return optimizer_; }

 private:
  CENet<float>& model_;
  TrainConfig cfg_;
  Frontend frontend_;
  SgdOptimizer optimizer_;
  long long iteration_ = 0;
};

/// Infer-mode accuracy over a whole source.
double evaluate_accuracy(CENet<float>& model, const ClipSource& source, const Frontend& frontend,
                         int batch_size = 64);

}  // namespace kws
