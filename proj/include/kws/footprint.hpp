#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kws/model_config.hpp"

namespace kws {

template <typename T>
class CENet;

struct LayerFootprint {
  std::string name;
  std::string kind;  // conv, batchnorm, pool, gcn, linear
  std::int64_t params = 0;
  // Multiplies counted against weights only: h'·w'·k²·c_in·c_out for convs,
  // N·(2·c·c/r + c²) for GCN modules.
  std::int64_t macs = 0;
  // Adds the N²·(c/r) affinity and N²·c aggregation products of GCN modules.
  std::int64_t macs_full = 0;
  std::array<std::int64_t, 3> output_shape{};  // (c, h, w); (features, 1, 1) for linear
  // Learnable weights under the reported parameter-count convention
  // (conv, linear and GCN weights); false for batch-norm affine terms.
  bool counts_as_weight = true;
};

struct FootprintReport {
  std::string model_name;
  std::array<std::int64_t, 4> input_shape{1, 1, 101, 40};
  std::vector<LayerFootprint> layers;
  std::int64_t weight_params = 0;  // conv + linear (incl. bias) + GCN
  std::int64_t total_params = 0;   // weight_params + 2c per batch norm
  std::int64_t macs = 0;           // weights-only convention
  std::int64_t macs_full = 0;      // weights + affinity/aggregation
  std::string convention =
      "params: conv c_in*c_out*k^2, linear in*out+out, gcn 2*c*(c/r)+c^2+1; batchnorm 2c reported separately. "
      "macs: per conv h'*w'*k^2*c_in*c_out at output resolution; gcn weights-only N*(2*c*c/r+c^2), "
      "full adds N^2*(c/r)+N^2*c";
};

/// Walks the architecture described by `cfg` with spatial-shape propagation.
FootprintReport analyze_footprint(const ModelConfig& cfg, std::array<std::int64_t, 4> input_shape = {1, 1, 101, 40});

template <typename T>
FootprintReport count_params(const CENet<T>& model);

template <typename T>
FootprintReport count_macs(const CENet<T>& model, std::array<std::int64_t, 4> input_shape = {1, 1, 101, 40});

std::int64_t conv_params(const ConvSpec& spec);
std::int64_t conv_macs(const ConvSpec& spec, std::int64_t out_h, std::int64_t out_w);
std::int64_t conv_output_size(std::int64_t in, const ConvSpec& spec);

void write_footprint_csv(std::ostream& out, const FootprintReport& report);
void write_footprint_table(std::ostream& out, const FootprintReport& report);

}  // namespace kws
