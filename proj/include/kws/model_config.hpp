#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "kws/kv_config.hpp"

namespace kws {

enum class Variant { cenet6, cenet24, cenet40 };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

struct ConvSpec {
  int kernel = 1;
  int in = 0;
  int out = 0;
  int stride = 1;
  int pad = 0;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

enum class BlockKind { initial, bottleneck, connection };

std::string to_string(BlockKind kind);

/// One block of the network. Initial blocks hold a single 3×3 conv;
/// bottleneck and connection blocks hold the 1×1 → 3×3 → 1×1 residual
/// branch. Connection blocks also carry the 1×1 stride-2 projection shortcut.
struct BlockSpec {
  BlockKind kind = BlockKind::bottleneck;
  int stage = 0;  // 0 for the initial block, else 1..3
  std::vector<ConvSpec> convs;
  int stride = 1;
  ConvSpec shortcut{};  // meaningful for connection blocks only

  int in_channels() const { return convs.front().in; }
  int out_channels() const { return convs.back().out; }
  void validate() const;
};

struct ModelConfig {
  static constexpr int kStages = 3;

  Variant variant = Variant::cenet6;
  std::array<int, kStages> stage_repeats{1, 1, 1};
  // (in, out) channels of each stage; the connection block performs the increase.
  std::array<std::array<int, 2>, kStages> stage_channels{{{16, 32}, {32, 48}, {48, 64}}};
  std::array<int, kStages> bottleneck_width{8, 8, 12};
  int initial_channels = 16;
  int n_classes = 12;
  std::set<int> gcn_stages;
  int gcn_reduction = 4;

  static ModelConfig for_variant(Variant v, std::set<int> gcn_stages = {});

  void validate() const;
  std::string name() const;

  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv);
};

std::set<int> parse_stage_list(const std::string& text);
std::string format_stage_list(const std::set<int>& stages);

/// Blocks in forward order: initial, then per stage `repeats` bottlenecks and
/// one connection block.
std::vector<BlockSpec> block_specs(const ModelConfig& cfg);

}  // namespace kws
