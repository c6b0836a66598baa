#include "kws/footprint.hpp"

#include <iomanip>
#include <ostream>
#include <stdexcept>

#include "kws/cenet.hpp"

namespace kws {

std::int64_t conv_params(const ConvSpec& spec) {
  return static_cast<std::int64_t>(spec.in) * spec.out * spec.kernel * spec.kernel;
}

std::int64_t conv_macs(const ConvSpec& spec, std::int64_t out_h, std::int64_t out_w) {
  return out_h * out_w * conv_params(spec);
}

std::int64_t conv_output_size(std::int64_t in, const ConvSpec& spec) {
  const auto out = (in + 2 * spec.pad - spec.kernel) / spec.stride + 1;
  if (in + 2 * spec.pad < spec.kernel || out < 1) throw std::invalid_argument("input too small for convolution");
  return out;
}

namespace {

struct Walker {
  FootprintReport& report;
  std::int64_t c, h, w;

  void conv(const std::string& name, const ConvSpec& spec, bool advance = true) {
    if (spec.in != c) throw std::logic_error("footprint: channel mismatch at " + name);
    const auto oh = conv_output_size(h, spec);
    const auto ow = conv_output_size(w, spec);
    LayerFootprint conv{name + ".conv", "conv", conv_params(spec), conv_macs(spec, oh, ow), 0, {spec.out, oh, ow}, true};
    conv.macs_full = conv.macs;
    report.layers.push_back(conv);
    report.layers.push_back({name + ".bn", "batchnorm", 2LL * spec.out, 0, 0, {spec.out, oh, ow}, false});
    if (advance) {
      c = spec.out;
      h = oh;
      w = ow;
    }
  }
};

}  // namespace

FootprintReport analyze_footprint(const ModelConfig& cfg, std::array<std::int64_t, 4> input_shape) {
  FootprintReport report;
  report.model_name = cfg.name();
  report.input_shape = input_shape;
  if (input_shape[1] != 1) throw std::invalid_argument("footprint: input must have one channel");
  Walker walk{report, input_shape[1], input_shape[2], input_shape[3]};

  const auto specs = block_specs(cfg);
  walk.conv("initial", specs.front().convs.front());
  if (walk.h < 2 || walk.w < 2) throw std::invalid_argument("footprint: input too small for pooling");
  walk.h /= 2;
  walk.w /= 2;
  report.layers.push_back({"initial.pool", "pool", 0, 0, 0, {walk.c, walk.h, walk.w}, true});

  std::array<int, ModelConfig::kStages> counters{};
  for (std::size_t i = 1; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    const auto prefix = "stage" + std::to_string(spec.stage) + ".block" +
                        std::to_string(counters[static_cast<std::size_t>(spec.stage - 1)]++);
    const auto in_c = walk.c, in_h = walk.h, in_w = walk.w;
    walk.conv(prefix + ".reduce", spec.convs[0]);
    walk.conv(prefix + ".spatial", spec.convs[1]);
    walk.conv(prefix + ".restore", spec.convs[2]);
    if (spec.kind == BlockKind::connection) {
      Walker side{report, in_c, in_h, in_w};
      side.conv(prefix + ".shortcut", spec.shortcut);
      if (side.h != walk.h || side.w != walk.w) throw std::logic_error("footprint: shortcut shape mismatch");
    }
    const bool stage_end = i + 1 == specs.size() || specs[i + 1].stage != spec.stage;
    if (stage_end && cfg.gcn_stages.count(spec.stage)) {
      const std::int64_t ch = walk.c, e = ch / cfg.gcn_reduction, n = walk.h * walk.w;
      LayerFootprint g;
      g.name = "stage" + std::to_string(spec.stage) + ".gcn";
      g.kind = "gcn";
      g.params = 2 * ch * e + ch * ch + 1;
      g.macs = n * (2 * ch * e + ch * ch);
      g.macs_full = g.macs + n * n * e + n * n * ch;
      g.output_shape = {ch, walk.h, walk.w};
      report.layers.push_back(g);
    }
  }
  const std::int64_t features = walk.c;
  report.layers.push_back({"head.gap", "pool", 0, 0, 0, {features, 1, 1}, true});
  const std::int64_t classes = cfg.n_classes;
  report.layers.push_back(
      {"head.fc", "linear", features * classes + classes, features * classes, features * classes, {classes, 1, 1}, true});

  for (const auto& l : report.layers) {
    report.total_params += l.params;
    if (l.counts_as_weight) report.weight_params += l.params;
    report.macs += l.macs;
    report.macs_full += l.macs_full;
  }
  return report;
}

template <typename T>
FootprintReport count_params(const CENet<T>& model) {
  return analyze_footprint(model.config());
}

template <typename T>
FootprintReport count_macs(const CENet<T>& model, std::array<std::int64_t, 4> input_shape) {
  return analyze_footprint(model.config(), input_shape);
}

template FootprintReport count_params(const CENet<float>&);
template FootprintReport count_params(const CENet<double>&);
template FootprintReport count_macs(const CENet<float>&, std::array<std::int64_t, 4>);
template FootprintReport count_macs(const CENet<double>&, std::array<std::int64_t, 4>);

void write_footprint_csv(std::ostream& out, const FootprintReport& report) {
  out << "name,kind,params,macs,macs_full,out_c,out_h,out_w,counts_as_weight\n";
  for (const auto& l : report.layers) {
    out << l.name << ',' << l.kind << ',' << l.params << ',' << l.macs << ',' << l.macs_full << ','
        << l.output_shape[0] << ',' << l.output_shape[1] << ',' << l.output_shape[2] << ','
        << (l.counts_as_weight ? 1 : 0) << '\n';
  }
  out << "TOTAL_WEIGHTS,total,," << report.macs << ',' << report.macs_full << ",,,,\n";
  out << "TOTAL_WEIGHT_PARAMS,total," << report.weight_params << ",,,,,,\n";
  out << "TOTAL_ALL_PARAMS,total," << report.total_params << ",,,,,,\n";
}

void write_footprint_table(std::ostream& out, const FootprintReport& report) {
  out << report.model_name << "  input " << report.input_shape[0] << 'x' << report.input_shape[1] << 'x'
      << report.input_shape[2] << 'x' << report.input_shape[3] << '\n';
  out << std::left << std::setw(32) << "layer" << std::setw(11) << "kind" << std::right << std::setw(10) << "params"
      << std::setw(12) << "macs" << std::setw(12) << "macs_full" << "  output\n";
  for (const auto& l : report.layers) {
    out << std::left << std::setw(32) << l.name << std::setw(11) << l.kind << std::right << std::setw(10) << l.params
        << std::setw(12) << l.macs << std::setw(12) << l.macs_full << "  " << l.output_shape[0] << 'x'
        << l.output_shape[1] << 'x' << l.output_shape[2] << '\n';
  }
  out << "weight params (conv+linear+gcn): " << report.weight_params << '\n'
      << "all params (incl. batchnorm):    " << report.total_params << '\n'
      << "MACs (weights-only):             " << report.macs << '\n'
      << "MACs (full, incl. affinity):     " << report.macs_full << '\n';
}

}  // namespace kws
