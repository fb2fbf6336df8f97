#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sepvit/config.hpp"
#include "sepvit/cost.hpp"
#include "sepvit/mac_counter.hpp"
#include "sepvit/model.hpp"

namespace sepvit {

struct CostRow {
  std::string name;
  std::size_t stage = 0;  // 1..4, 0 for model-level components
  std::uint64_t analytic_macs = 0;
  std::uint64_t empirical_macs = 0;
  std::uint64_t params = 0;
};

struct StageGeometry {
  std::size_t stage = 0;
  std::size_t side = 0;      // H == W
  std::size_t channels = 0;
  std::size_t window = 0;    // M
  std::size_t group = 0;     // g for GSA blocks
  std::size_t windows = 0;   // N at window side M
};

struct CostReport {
  std::vector<StageGeometry> geometry;
  std::vector<CostRow> rows;

  std::uint64_t analytic_total() const {
    std::uint64_t t = 0;
    for (const auto& r : rows) t += r.analytic_macs;
    return t;
  }
  std::uint64_t empirical_total() const {
    std::uint64_t t = 0;
    for (const auto& r : rows) t += r.empirical_macs;
    return t;
  }
  std::uint64_t params_total() const {
    std::uint64_t t = 0;
    for (const auto& r : rows) t += r.params;
    return t;
  }

  CostRow* find(const std::string& name) {
    for (auto& r : rows) {
      if (r.name == name) return &r;
    }
    return nullptr;
  }
};

namespace detail {

struct ComponentParams {
  std::uint64_t dwa, pwa, mlp;
};

// Analytic learnable-parameter counts per block component (token mode
// matters: fixed-zero tokens are not parameters).
inline ComponentParams block_param_counts(std::size_t c, std::size_t n, TokenMode mode,
                                          std::size_t ratio) {
  ComponentParams p{};
  p.dwa = 3 * (c * c + c) + 2 * c;  // q,k,v with biases + ln_attn
  if (mode == TokenMode::kLearnable) p.dwa += n * c;
  p.pwa = 3 * (c * c + c) + 2 * c;  // pwa q,k + proj with biases + ln_tokens
  p.mlp = 2 * ratio * c * c + ratio * c + c + 2 * c;  // fc1, fc2, biases, ln_mlp
  return p;
}

inline std::uint64_t merge_param_count(std::size_t c_in, std::size_t c_out, std::size_t k,
                                       bool separable) {
  const std::uint64_t norm = 2 * c_out;
  if (separable) return c_in * k * k + c_in + c_in * c_out + c_out + norm;
  return static_cast<std::uint64_t>(c_out) * c_in * k * k + c_out + norm;
}

}  // namespace detail

/// Component breakdown of a single block at one geometry. The layer-norm
/// row is present with zero MACs to make the counting convention visible.
inline CostReport sepvit_block_cost(std::size_t h, std::size_t w, std::size_t c, std::size_t m,
                                    std::size_t mlp_ratio = 4) {
  CostReport report;
  StageGeometry g;
  g.stage = 1;
  g.side = h;
  g.channels = c;
  g.window = m;
  g.group = 1;
  g.windows = detail::window_count(h, w, m);
  report.geometry.push_back(g);
  report.rows.push_back({"dwa", 1, dwa_cost(h, w, c, m), 0, 0});
  report.rows.push_back({"pwa", 1, pwa_cost(h, w, c, m), 0, 0});
  report.rows.push_back({"mlp", 1, mlp_cost(h, w, c, mlp_ratio), 0, 0});
  report.rows.push_back({"ln", 1, 0, 0, 0});
  return report;
}

/// Per-stage window geometry echo for a config.
inline std::vector<StageGeometry> stage_geometry(const ModelConfig& cfg) {
  std::vector<StageGeometry> out;
  const auto sides = cfg.stage_sides();
  for (std::size_t s = 0; s < 4; ++s) {
    const StageConfig& st = cfg.stages[s];
    StageGeometry g;
    g.stage = s + 1;
    g.side = sides[s];
    g.channels = st.channels;
    g.window = st.window;
    g.group = st.group;
    g.windows = (sides[s] / st.window) * (sides[s] / st.window);
    out.push_back(g);
  }
  return out;
}

/// Analytic per-component report (MACs for a single image, learnable
/// parameter counts). Row order mirrors the forward pass, so an empirical
/// counter fills the same rows.
inline CostReport analytic_report(const ModelConfig& cfg) {
  validate_config(cfg);
  CostReport report;
  report.geometry = stage_geometry(cfg);
  const auto sides = cfg.stage_sides();
  std::size_t c_in = 3;
  for (std::size_t s = 0; s < 4; ++s) {
    const StageConfig& st = cfg.stages[s];
    const std::size_t side = sides[s];
    const std::string prefix = "stage" + std::to_string(s + 1) + ".";
    const std::uint64_t hw = static_cast<std::uint64_t>(side) * side;

    CostRow merge;
    merge.name = prefix + "merge";
    merge.stage = s + 1;
    const std::size_t k = st.merge_kernel;
    merge.analytic_macs = s == 0 ? hw * st.channels * c_in * k * k
                                 : hw * c_in * k * k + hw * c_in * st.channels;
    merge.params = detail::merge_param_count(c_in, st.channels, k, s > 0);
    report.rows.push_back(merge);

    for (std::size_t i = 0; i < st.depth; ++i) {
      const std::size_t m = st.block_pattern[i] == BlockKind::kGsa ? st.group * st.window
                                                                   : st.window;
      const std::size_t n = (side / m) * (side / m);
      const auto params =
          detail::block_param_counts(st.channels, n, cfg.token_mode, cfg.mlp_ratio);
      const std::string bp = prefix + "block" + std::to_string(i) + ".";
      report.rows.push_back(
          {bp + "dwa", s + 1, dwa_cost(side, side, st.channels, m), 0, params.dwa});
      report.rows.push_back(
          {bp + "pwa", s + 1, pwa_cost(side, side, st.channels, m), 0, params.pwa});
      report.rows.push_back(
          {bp + "mlp", s + 1, mlp_cost(side, side, st.channels, cfg.mlp_ratio), 0, params.mlp});
      if (i == 0) {
        report.rows.push_back(
            {prefix + "cpe", s + 1, hw * st.channels * 9, 0,
             static_cast<std::uint64_t>(st.channels) * 9 + st.channels});
      }
    }
    c_in = st.channels;
  }
  report.rows.push_back({"head", 0, static_cast<std::uint64_t>(c_in) * cfg.num_classes, 0,
                         2 * c_in + c_in * cfg.num_classes + cfg.num_classes});
  return report;
}

/// Walks the model parameters and buckets them into the same component names
/// the cost report uses ("stage1.merge", "stage2.block1.pwa", "head", ...).
template <typename T>
std::vector<std::pair<std::string, std::uint64_t>> count_params_by_component(Model<T>& model) {
  std::vector<std::pair<std::string, std::uint64_t>> out;
  auto bucket = [&](const std::string& component, std::size_t n) {
    for (auto& e : out) {
      if (e.first == component) {
        e.second += n;
        return;
      }
    }
    out.emplace_back(component, n);
  };
  model.visit_params([&](const std::string& name, Tensor<T>& t) {
    std::vector<std::string> segs;
    std::size_t pos = 0;
    while (pos != std::string::npos) {
      const std::size_t dot = name.find('.', pos);
      segs.push_back(name.substr(pos, dot == std::string::npos ? dot : dot - pos));
      pos = dot == std::string::npos ? dot : dot + 1;
    }
    std::string component;
    if (segs[0] == "head") {
      component = "head";
    } else if (segs[1].rfind("block", 0) == 0) {
      component = segs[0] + "." + segs[1] + "." + segs[2];
    } else {
      component = segs[0] + "." + segs[1];
    }
    bucket(component, t.size());
  });
  return out;
}

/// Runs one single-image forward under the MAC meter and overlays the
/// instrumented counts and walked parameter counts onto the analytic rows.
template <typename T>
CostReport measured_report(Model<T>& model) {
  CostReport report = analytic_report(model.config());

  MacCounter counter;
  {
    CountingScope session(counter);
    Tensor<T> probe({1, 3, model.config().input_resolution, model.config().input_resolution});
    model.forward(probe);
  }
  for (const auto& [label, macs] : counter.entries()) {
    if (CostRow* row = report.find(label)) {
      row->empirical_macs = macs;
    } else {
      report.rows.push_back({label, 0, 0, macs, 0});
    }
  }
  for (const auto& [component, params] : count_params_by_component(model)) {
    if (CostRow* row = report.find(component)) row->params = params;
  }
  return report;
}

struct BlockCompareRow {
  std::size_t stage = 0;
  std::size_t side = 0;
  std::size_t channels = 0;
  std::size_t window = 0;
  std::uint64_t sepvit_macs = 0;
  std::uint64_t two_swin_macs = 0;
  double ratio = 0.0;
};

/// One SepViT block vs two successive window-MSA blocks, per stage geometry.
inline std::vector<BlockCompareRow> block_comparison(const ModelConfig& cfg) {
  std::vector<BlockCompareRow> rows;
  const auto sides = cfg.stage_sides();
  for (std::size_t s = 0; s < 4; ++s) {
    const StageConfig& st = cfg.stages[s];
    BlockCompareRow r;
    r.stage = s + 1;
    r.side = sides[s];
    r.channels = st.channels;
    r.window = st.window;
    r.sepvit_macs = sepvit_block_macs(r.side, r.side, st.channels, st.window, cfg.mlp_ratio);
    r.two_swin_macs =
        two_window_msa_blocks_macs(r.side, r.side, st.channels, st.window, cfg.mlp_ratio);
    r.ratio = static_cast<double>(r.sepvit_macs) / static_cast<double>(r.two_swin_macs);
    rows.push_back(r);
  }
  return rows;
}

inline std::string report_to_csv(const CostReport& report) {
  std::ostringstream os;
  os << "name,stage,analytic_macs,empirical_macs,params\n";
  for (const auto& r : report.rows) {
    os << r.name << ',' << r.stage << ',' << r.analytic_macs << ',' << r.empirical_macs << ','
       << r.params << '\n';
  }
  os << "total,," << report.analytic_total() << ',' << report.empirical_total() << ','
     << report.params_total() << '\n';
  return os.str();
}

inline std::string comparison_to_csv(const std::vector<BlockCompareRow>& rows) {
  std::ostringstream os;
  os << "stage,side,channels,window,sepvit_block_macs,two_window_msa_blocks_macs,ratio\n";
  for (const auto& r : rows) {
    os << r.stage << ',' << r.side << ',' << r.channels << ',' << r.window << ',' << r.sepvit_macs
       << ',' << r.two_swin_macs << ',' << std::setprecision(6) << std::fixed << r.ratio << '\n';
  }
  return os.str();
}

inline std::string report_to_text(const CostReport& report) {
  std::ostringstream os;
  os << "geometry (per stage):\n";
  os << "  stage   side  channels  window  group      N\n";
  for (const auto& g : report.geometry) {
    os << "  " << std::setw(5) << g.stage << std::setw(7) << g.side << std::setw(10) << g.channels
       << std::setw(8) << g.window << std::setw(7) << g.group << std::setw(7) << g.windows << '\n';
  }
  os << '\n';
  std::size_t width = 4;
  for (const auto& r : report.rows) width = std::max(width, r.name.size());
  os << std::left << std::setw(static_cast<int>(width) + 2) << "name" << std::right
     << std::setw(16) << "analytic" << std::setw(16) << "empirical" << std::setw(14) << "params"
     << '\n';
  for (const auto& r : report.rows) {
    os << std::left << std::setw(static_cast<int>(width) + 2) << r.name << std::right
       << std::setw(16) << r.analytic_macs << std::setw(16) << r.empirical_macs << std::setw(14)
       << r.params << '\n';
  }
  os << std::left << std::setw(static_cast<int>(width) + 2) << "total" << std::right
     << std::setw(16) << report.analytic_total() << std::setw(16) << report.empirical_total()
     << std::setw(14) << report.params_total() << '\n';
  os << "\nMAC counts cover matmuls and convolutions only; layer norm, softmax,\n"
        "GELU, scaling and bias adds count zero by convention.\n";
  return os.str();
}

}  // namespace sepvit
