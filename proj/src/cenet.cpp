#include "kws/cenet.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "kws/frontend.hpp"

namespace kws {

namespace {

constexpr std::uint64_t kGcnSeedSalt = 0x9E3779B97F4A7C15ull;

template <typename T>
Tensor<T> he_normal_conv(const ConvSpec& spec, std::mt19937_64& rng) {
  const int fan_out = spec.out * spec.kernel * spec.kernel;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_out));
  std::vector<T> v(static_cast<std::size_t>(spec.out) * spec.in * spec.kernel * spec.kernel);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from({spec.out, spec.in, spec.kernel, spec.kernel}, std::move(v), true);
}

template <typename T>
ConvBn<T> make_conv_bn(std::string name, const ConvSpec& spec, std::mt19937_64& rng) {
  ConvBn<T> cb;
  cb.name = std::move(name);
  cb.spec = spec;
  cb.weight = he_normal_conv<T>(spec, rng);
  cb.bn_gamma = Tensor<T>::full({spec.out}, T(1), true);
  cb.bn_beta = Tensor<T>::zeros({spec.out}, true);
  cb.bn_stats = ops::BatchNormStats<T>::fresh(static_cast<std::size_t>(spec.out));
  return cb;
}

template <typename T>
void push_conv_bn(std::vector<NamedParameter<T>>& out, ConvBn<T>& cb) {
  out.push_back({cb.name + ".conv.weight", cb.weight, true});
  out.push_back({cb.name + ".bn.gamma", cb.bn_gamma, false});
  out.push_back({cb.name + ".bn.beta", cb.bn_beta, false});
}

template <typename T>
void push_stats(std::vector<NamedBuffer<T>>& out, ConvBn<T>& cb) {
  out.push_back({cb.name + ".bn.running_mean", &cb.bn_stats.running_mean});
  out.push_back({cb.name + ".bn.running_var", &cb.bn_stats.running_var});
}

std::string stage_prefix(int stage) { return "stage" + std::to_string(stage); }

}  // namespace

template <typename T>
Tensor<T> ConvBn<T>::forward(const Tensor<T>& x, Mode mode) {
  return ops::batch_norm2d(ops::conv2d(x, weight, spec.stride, spec.pad), bn_gamma, bn_beta, bn_stats, mode);
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != spec.in_channels()) {
    throw std::invalid_argument(branch[0].name + ": expected " + std::to_string(spec.in_channels()) +
                                " input channels, got " + shape_to_string(x.shape()));
  }
  auto h = ops::relu(branch[0].forward(x, mode));
  h = ops::relu(branch[1].forward(h, mode));
  h = branch[2].forward(h, mode);
  const auto skip = shortcut ? shortcut->forward(x, mode) : x;
  return ops::relu(ops::add(h, skip));
}

template <typename T>
Tensor<T> bottleneck_forward(ResidualBlock<T>& block, const Tensor<T>& x, Mode mode) {
  if (block.spec.kind != BlockKind::bottleneck) throw std::invalid_argument("not a bottleneck block");
  return block.forward(x, mode);
}

template <typename T>
Tensor<T> connection_forward(ResidualBlock<T>& block, const Tensor<T>& x, Mode mode) {
  if (block.spec.kind != BlockKind::connection) throw std::invalid_argument("not a connection block");
  return block.forward(x, mode);
}

template <typename T>
CENet<T> CENet<T>::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CENet model;
  model.cfg_ = cfg;
  model.cfg_.gcn_stages.clear();
  std::mt19937_64 rng(seed);

  const auto specs = block_specs(cfg);
  model.initial_ = make_conv_bn<T>("initial", specs.front().convs.front(), rng);
  std::array<int, ModelConfig::kStages> counters{};
  for (std::size_t i = 1; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    auto& stage = model.stages_[static_cast<std::size_t>(spec.stage - 1)];
    const std::string prefix =
        stage_prefix(spec.stage) + ".block" + std::to_string(counters[static_cast<std::size_t>(spec.stage - 1)]++);
    ResidualBlock<T> block;
    block.spec = spec;
    const char* names[3] = {".reduce", ".spatial", ".restore"};
    for (int c = 0; c < 3; ++c) block.branch[c] = make_conv_bn<T>(prefix + names[c], spec.convs[c], rng);
    if (spec.kind == BlockKind::connection) block.shortcut = make_conv_bn<T>(prefix + ".shortcut", spec.shortcut, rng);
    stage.blocks.push_back(std::move(block));
  }

  const int features = cfg.stage_channels.back()[1];
  // Near-zero head so the initial posterior is close to uniform.
  std::normal_distribution<double> head(0.0, 0.01);
  std::vector<T> w(static_cast<std::size_t>(cfg.n_classes) * features);
  for (auto& v : w) v = static_cast<T>(head(rng));
  model.fc_weight_ = Tensor<T>::from({cfg.n_classes, features}, std::move(w), true);
  model.fc_bias_ = Tensor<T>::zeros({cfg.n_classes}, true);

  if (!cfg.gcn_stages.empty()) model.insert_gcn(cfg.gcn_stages, seed ^ kGcnSeedSalt);
  return model;
}

template <typename T>
void CENet<T>::insert_gcn(const std::set<int>& stages, std::uint64_t seed) {
  for (int s : stages) {
    if (s < 1 || s > ModelConfig::kStages) throw std::invalid_argument("invalid gcn stage " + std::to_string(s));
    if (stages_[static_cast<std::size_t>(s - 1)].gcn) {
      throw std::invalid_argument("stage " + std::to_string(s) + " already has a gcn module");
    }
  }
  auto cfg = cfg_;
  cfg.gcn_stages.insert(stages.begin(), stages.end());
  cfg.validate();
  std::mt19937_64 rng(seed);
  for (int s : stages) {
    stages_[static_cast<std::size_t>(s - 1)].gcn.emplace(cfg.stage_channels[s - 1][1], cfg.gcn_reduction, rng);
  }
  cfg_ = cfg;
}

template <typename T>
CENet<T> insert_gcn(CENet<T> model, const std::set<int>& stages, std::uint64_t seed) {
  model.insert_gcn(stages, seed);
  return model;
}

template <typename T>
Stage<T>& CENet<T>::stage(int index) {
  if (index < 1 || index > ModelConfig::kStages) throw std::out_of_range("stage index must be 1..3");
  return stages_[static_cast<std::size_t>(index - 1)];
}

template <typename T>
const Stage<T>& CENet<T>::stage(int index) const {
  if (index < 1 || index > ModelConfig::kStages) throw std::out_of_range("stage index must be 1..3");
  return stages_[static_cast<std::size_t>(index - 1)];
}

template <typename T>
Tensor<T> CENet<T>::forward(const Tensor<T>& features, Mode mode, ForwardTrace<T>* trace) {
  if (!features.defined() || features.rank() != 4 || features.dim(1) != 1) {
    throw std::invalid_argument("model input must be (B,1,t,f), got " +
                                (features.defined() ? shape_to_string(features.shape()) : std::string("undefined")));
  }
  auto h = ops::avg_pool2d(ops::relu(initial_.forward(features, mode)), 2, 2);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (auto& block : stages_[s].blocks) h = block.forward(h, mode);
    if (trace) trace->pre_gcn[s] = h;
    if (stages_[s].gcn) h = stages_[s].gcn->forward(h);
    if (trace) trace->post_gcn[s] = h;
  }
  return ops::linear(ops::global_avg_pool(h), fc_weight_, fc_bias_);
}

template <typename T>
std::vector<NamedParameter<T>> CENet<T>::parameters() {
  std::vector<NamedParameter<T>> out;
  push_conv_bn(out, initial_);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (auto& block : stages_[s].blocks) {
      for (auto& cb : block.branch) push_conv_bn(out, cb);
      if (block.shortcut) push_conv_bn(out, *block.shortcut);
    }
    if (auto& g = stages_[s].gcn) {
      const auto prefix = stage_prefix(static_cast<int>(s) + 1) + ".gcn";
      out.push_back({prefix + ".w_theta", g->w_theta(), true});
      out.push_back({prefix + ".w_phi", g->w_phi(), true});
      out.push_back({prefix + ".w", g->w(), true});
      out.push_back({prefix + ".gamma", g->gamma(), false});
    }
  }
  out.push_back({"head.fc.weight", fc_weight_, true});
  out.push_back({"head.fc.bias", fc_bias_, false});
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> CENet<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  push_stats(out, initial_);
  for (auto& stage : stages_) {
    for (auto& block : stage.blocks) {
      for (auto& cb : block.branch) push_stats(out, cb);
      if (block.shortcut) push_stats(out, *block.shortcut);
    }
  }
  return out;
}

template <typename T>
std::vector<NamedArray> CENet<T>::state() {
  std::vector<NamedArray> out;
  for (auto& p : parameters()) {
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  for (auto& b : buffers()) {
    out.push_back({b.name, {static_cast<std::int64_t>(b.values->size())},
                   std::vector<float>(b.values->begin(), b.values->end())});
  }
  return out;
}

template <typename T>
void CENet<T>::load_state(const std::vector<NamedArray>& records) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  auto lookup = [&](const std::string& name, const Shape& shape) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing tensor " + name);
    if (it->second->shape != shape) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_to_string(it->second->shape) +
                               ", model expects " + shape_to_string(shape));
    }
    return *it->second;
  };
  for (auto& p : parameters()) {
    const auto& rec = lookup(p.name, p.tensor.shape());
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec.values[i]);
  }
  for (auto& b : buffers()) {
    const auto& rec = lookup(b.name, {static_cast<std::int64_t>(b.values->size())});
    for (std::size_t i = 0; i < b.values->size(); ++i) (*b.values)[i] = static_cast<T>(rec.values[i]);
  }
}

template <typename T>
void CENet<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
CENet<T> CENet<T>::clone() {
  auto copy = build(cfg_, 0);
  copy.load_state(state());
  return copy;
}

std::filesystem::path config_path_for(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".cfg";
  return p;
}

void save_model(CENet<float>& model, const std::filesystem::path& path, const KeyValues& extra) {
  write_checkpoint(path, model.state());
  auto kv = model.config().to_kv();
  kv.merge(extra);
  kv.save(config_path_for(path));
}

CENet<float> load_model(const std::filesystem::path& path) {
  const auto kv = KeyValues::load(config_path_for(path));
  auto model = CENet<float>::build(ModelConfig::from_kv(kv), 0);
  model.load_state(read_checkpoint(path));
  return model;
}

Tensor<float> features_to_tensor(const std::vector<const FeatureMatrix*>& features) {
  if (features.empty()) throw std::invalid_argument("empty feature batch");
  const int t = features.front()->frames, f = features.front()->coeffs;
  std::vector<float> values;
  values.reserve(features.size() * static_cast<std::size_t>(t) * f);
  for (const auto* fm : features) {
    if (fm->frames != t || fm->coeffs != f) throw std::invalid_argument("feature batch has mixed shapes");
    values.insert(values.end(), fm->values.begin(), fm->values.end());
  }
  return Tensor<float>::from({static_cast<std::int64_t>(features.size()), 1, t, f}, std::move(values));
}

template struct ConvBn<float>;
template struct ConvBn<double>;
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template class CENet<float>;
template class CENet<double>;
template Tensor<float> bottleneck_forward(ResidualBlock<float>&, const Tensor<float>&, Mode);
template Tensor<double> bottleneck_forward(ResidualBlock<double>&, const Tensor<double>&, Mode);
template Tensor<float> connection_forward(ResidualBlock<float>&, const Tensor<float>&, Mode);
template Tensor<double> connection_forward(ResidualBlock<double>&, const Tensor<double>&, Mode);
template CENet<float> insert_gcn(CENet<float>, const std::set<int>&, std::uint64_t);
template CENet<double> insert_gcn(CENet<double>, const std::set<int>&, std::uint64_t);

}  // namespace kws
