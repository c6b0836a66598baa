#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kws/checkpoint.hpp"
#include "kws/gcn.hpp"
#include "kws/model_config.hpp"
#include "kws/ops.hpp"
#include "kws/tensor.hpp"

namespace kws {

/// Conv (bias-free) followed by batch norm.
template <typename T>
struct ConvBn {
  std::string name;
  ConvSpec spec;
  Tensor<T> weight;
  Tensor<T> bn_gamma;
  Tensor<T> bn_beta;
  ops::BatchNormStats<T> bn_stats;

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
};

/// Bottleneck or connection block: y = ReLU(F(x) + shortcut(x)) with
/// F = conv1×1→BN→ReLU→conv3×3→BN→ReLU→conv1×1→BN. Bottlenecks use the
/// identity shortcut; connection blocks a 1×1 stride-2 projection + BN.
template <typename T>
struct ResidualBlock {
  BlockSpec spec;
  std::array<ConvBn<T>, 3> branch;
  std::optional<ConvBn<T>> shortcut;

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
};

template <typename T>
Tensor<T> bottleneck_forward(ResidualBlock<T>& block, const Tensor<T>& x, Mode mode);

template <typename T>
Tensor<T> connection_forward(ResidualBlock<T>& block, const Tensor<T>& x, Mode mode);

template <typename T>
struct Stage {
  std::vector<ResidualBlock<T>> blocks;
  std::optional<NonLocalGcn<T>> gcn;
};

/// Stage outputs captured during forward, before and after the GCN module.
/// Without a module at a stage, post_gcn aliases pre_gcn.
template <typename T>
struct ForwardTrace {
  std::array<Tensor<T>, ModelConfig::kStages> pre_gcn;
  std::array<Tensor<T>, ModelConfig::kStages> post_gcn;
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
  bool weight_decay = true;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values = nullptr;
};

template <typename T>
class CENet {
 public:
  /// Deterministic He-normal initialization from `seed`. GCN modules listed
  /// in cfg.gcn_stages are attached as by insert_gcn with a seed derived
  /// from `seed`.
  static CENet build(const ModelConfig& cfg, std::uint64_t seed);

  /// Appends a NonLocalGcn (γ = 0) after each listed stage's connection block.
  void insert_gcn(const std::set<int>& stages, std::uint64_t seed);

  /// Input (B,1,H,W) with H = time frames and W = coefficients; returns (B,n_classes) logits.
  Tensor<T> forward(const Tensor<T>& features, Mode mode, ForwardTrace<T>* trace = nullptr);

  const ModelConfig& config() const { return cfg_; }
  ConvBn<T>& initial() { return initial_; }
  Stage<T>& stage(int index);  // 1-based
  const Stage<T>& stage(int index) const;
  Tensor<T>& fc_weight() { return fc_weight_; }
  Tensor<T>& fc_bias() { return fc_bias_; }

  /// Trainable tensors in a fixed order. BN affine terms, biases and γ are
  /// excluded from weight decay.
  std::vector<NamedParameter<T>> parameters();
  std::vector<NamedBuffer<T>> buffers();

  std::vector<NamedArray> state();
  /// Copies values by name; throws on missing names or shape mismatch.
  void load_state(const std::vector<NamedArray>& records);

  void zero_grad();

  /// Deep copy. Plain copies share parameter storage with the original.
  CENet clone();

 private:
  ModelConfig cfg_;
  ConvBn<T> initial_;
  std::array<Stage<T>, ModelConfig::kStages> stages_;
  Tensor<T> fc_weight_;
  Tensor<T> fc_bias_;
};

/// Functional form of CENet::insert_gcn.
template <typename T>
CENet<T> insert_gcn(CENet<T> model, const std::set<int>& stages, std::uint64_t seed);

/// Writes `<path>` (binary tensors) and `<path>.cfg` (key-value model config).
void save_model(CENet<float>& model, const std::filesystem::path& path, const KeyValues& extra = {});
CENet<float> load_model(const std::filesystem::path& path);
std::filesystem::path config_path_for(const std::filesystem::path& checkpoint);

/// Batches feature planes into a (B,1,t,f) tensor.
struct FeatureMatrix;
Tensor<float> features_to_tensor(const std::vector<const FeatureMatrix*>& features);

extern template class CENet<float>;
extern template class CENet<double>;

}  // namespace kws
