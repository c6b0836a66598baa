#include "kws/model_config.hpp"

#include <sstream>
#include <stdexcept>

namespace kws {

Variant parse_variant(const std::string& name) {
  if (name == "cenet6") return Variant::cenet6;
  if (name == "cenet24") return Variant::cenet24;
  if (name == "cenet40") return Variant::cenet40;
  throw std::invalid_argument("unknown variant '" + name + "' (cenet6|cenet24|cenet40)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::cenet6: return "cenet6";
    case Variant::cenet24: return "cenet24";
    case Variant::cenet40: return "cenet40";
  }
  throw std::invalid_argument("invalid variant");
}

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::initial: return "initial";
    case BlockKind::bottleneck: return "bottleneck";
    case BlockKind::connection: return "connection";
  }
  return "?";
}

void BlockSpec::validate() const {
  switch (kind) {
    case BlockKind::initial:
      if (convs.size() != 1 || convs[0].kernel != 3) throw std::logic_error("initial block must be one 3x3 conv");
      return;
    case BlockKind::bottleneck:
    case BlockKind::connection:
      break;
  }
  if (convs.size() != 3 || convs[0].kernel != 1 || convs[1].kernel != 3 || convs[2].kernel != 1) {
    throw std::logic_error("residual block must be 1x1, 3x3, 1x1 convolutions");
  }
  for (std::size_t i = 1; i < convs.size(); ++i) {
    if (convs[i].in != convs[i - 1].out) throw std::logic_error("residual block channels do not compose");
  }
  if (kind == BlockKind::bottleneck) {
    if (in_channels() != out_channels() || stride != 1) {
      throw std::logic_error("bottleneck block must preserve channels with stride 1");
    }
  } else {
    if (out_channels() <= in_channels() || stride != 2) {
      throw std::logic_error("connection block must increase channels with stride 2");
    }
    if (shortcut.in != in_channels() || shortcut.out != out_channels() || shortcut.stride != 2) {
      throw std::logic_error("connection shortcut does not match block shape");
    }
  }
}

ModelConfig ModelConfig::for_variant(Variant v, std::set<int> gcn_stages) {
  ModelConfig cfg;
  cfg.variant = v;
  switch (v) {
    case Variant::cenet6: cfg.stage_repeats = {1, 1, 1}; break;
    case Variant::cenet24: cfg.stage_repeats = {7, 7, 7}; break;
    case Variant::cenet40: cfg.stage_repeats = {15, 15, 7}; break;
  }
  cfg.gcn_stages = std::move(gcn_stages);
  cfg.validate();
  return cfg;
}

void ModelConfig::validate() const {
  for (int r : stage_repeats) {
    if (r < 0) throw std::invalid_argument("stage repeats must be non-negative");
  }
  int channels = initial_channels;
  for (int s = 0; s < kStages; ++s) {
    if (stage_channels[s][0] != channels) throw std::invalid_argument("stage channels do not chain");
    if (stage_channels[s][1] <= stage_channels[s][0]) throw std::invalid_argument("stages must widen");
    if (bottleneck_width[s] < 1) throw std::invalid_argument("bottleneck width must be positive");
    channels = stage_channels[s][1];
  }
  if (n_classes < 2) throw std::invalid_argument("need at least two classes");
  if (gcn_reduction < 1) throw std::invalid_argument("gcn reduction must be positive");
  for (int s : gcn_stages) {
    if (s < 1 || s > kStages) throw std::invalid_argument("gcn stage index " + std::to_string(s) + " not in {1,2,3}");
    if (stage_channels[s - 1][1] % gcn_reduction != 0) {
      throw std::invalid_argument("stage " + std::to_string(s) + " channels not divisible by gcn reduction");
    }
  }
}

std::string ModelConfig::name() const {
  std::string base = to_string(variant);
  std::string digits = base.substr(5);
  if (gcn_stages.empty()) return "CENet-" + digits;
  if (gcn_stages.size() == static_cast<std::size_t>(kStages)) return "CENet-GCN-" + digits;
  return "CENet-GCN-" + digits + "[stage " + format_stage_list(gcn_stages) + "]";
}

std::set<int> parse_stage_list(const std::string& text) {
  std::set<int> stages;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    const auto first = token.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    token = token.substr(first, token.find_last_not_of(' ') - first + 1);
    if (token == "none") continue;
    std::size_t used = 0;
    int s = 0;
    try {
      s = std::stoi(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size() || s < 1 || s > ModelConfig::kStages) {
      throw std::invalid_argument("invalid gcn stage '" + token + "' (expected 1, 2 or 3)");
    }
    stages.insert(s);
  }
  return stages;
}

std::string format_stage_list(const std::set<int>& stages) {
  if (stages.empty()) return "none";
  std::string out;
  for (int s : stages) {
    if (!out.empty()) out += ',';
    out += std::to_string(s);
  }
  return out;
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  kv.set("model.variant", to_string(variant));
  kv.set("model.gcn_stages", format_stage_list(gcn_stages));
  kv.set("model.gcn_reduction", std::to_string(gcn_reduction));
  kv.set("model.n_classes", std::to_string(n_classes));
  return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  auto cfg = for_variant(parse_variant(kv.get_string("model.variant", "cenet6")),
                         parse_stage_list(kv.get_string("model.gcn_stages", "none")));
  cfg.gcn_reduction = static_cast<int>(kv.get_int("model.gcn_reduction", 4));
  cfg.n_classes = static_cast<int>(kv.get_int("model.n_classes", 12));
  cfg.validate();
  return cfg;
}

std::vector<BlockSpec> block_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<BlockSpec> blocks;
  BlockSpec initial;
  initial.kind = BlockKind::initial;
  initial.convs = {ConvSpec{3, 1, cfg.initial_channels, 1, 1}};
  blocks.push_back(initial);

  for (int s = 0; s < ModelConfig::kStages; ++s) {
    const int cin = cfg.stage_channels[s][0];
    const int cout = cfg.stage_channels[s][1];
    const int mid = cfg.bottleneck_width[s];
    for (int r = 0; r < cfg.stage_repeats[s]; ++r) {
      BlockSpec b;
      b.kind = BlockKind::bottleneck;
      b.stage = s + 1;
      b.convs = {ConvSpec{1, cin, mid, 1, 0}, ConvSpec{3, mid, mid, 1, 1}, ConvSpec{1, mid, cin, 1, 0}};
      b.validate();
      blocks.push_back(b);
    }
    BlockSpec c;
    c.kind = BlockKind::connection;
    c.stage = s + 1;
    c.stride = 2;
    c.convs = {ConvSpec{1, cin, mid, 1, 0}, ConvSpec{3, mid, mid, 2, 1}, ConvSpec{1, mid, cout, 1, 0}};
    c.shortcut = ConvSpec{1, cin, cout, 2, 0};
    c.validate();
    blocks.push_back(c);
  }
  return blocks;
}

}  // namespace kws
