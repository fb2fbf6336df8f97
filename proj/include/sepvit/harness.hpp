#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sepvit/analyzer.hpp"
#include "sepvit/checkpoint.hpp"
#include "sepvit/config.hpp"
#include "sepvit/dataset.hpp"
#include "sepvit/model.hpp"
#include "sepvit/train.hpp"

namespace sepvit {

namespace detail {

inline void write_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream f(p, std::ios::trunc | std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << content;
}

}  // namespace detail

/// Resolves --preset / --config (exactly one required) into a ModelConfig.
inline ModelConfig resolve_config(const std::string& preset_name, const std::string& config_path,
                                  std::optional<std::size_t> resolution = std::nullopt) {
  ModelConfig cfg;
  if (!preset_name.empty() && !config_path.empty()) {
    throw ConfigError("give either --preset or --config, not both");
  }
  if (!preset_name.empty()) {
    cfg = preset(preset_name);
  } else if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw IoError("cannot open config file " + config_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(config_path + ": " + e.what());
    }
    cfg = config_from_json(j);
  } else {
    throw ConfigError("one of --preset or --config is required");
  }
  if (resolution) cfg.input_resolution = *resolution;
  validate_config(cfg);
  return cfg;
}

struct SummaryArgs {
  std::string preset_name;
  std::string config_path;
  std::optional<std::size_t> resolution;
  std::string csv_out;  // optional
};

inline int cmd_summary(const SummaryArgs& args, std::ostream& os = std::cout) {
  ModelConfig cfg = resolve_config(args.preset_name, args.config_path, args.resolution);
  CostReport report = analytic_report(cfg);
  const auto geom = stage_geometry(cfg);

  os << "sepvit '" << cfg.name << "': input " << cfg.input_resolution << "x"
     << cfg.input_resolution << ", " << cfg.num_classes << " classes, "
     << token_mode_name(cfg.token_mode) << " window tokens\n";
  os << "stage  depth  channels  heads  window  group  side      N  pattern\n";
  std::ostringstream csv;
  csv << "stage,depth,channels,heads,window,group,side,windows,pattern\n";
  for (std::size_t s = 0; s < 4; ++s) {
    const StageConfig& st = cfg.stages[s];
    std::string pattern;
    for (std::size_t i = 0; i < st.block_pattern.size(); ++i) {
      if (i) pattern += '|';
      pattern += block_kind_name(st.block_pattern[i]);
    }
    char line[160];
    std::snprintf(line, sizeof(line), "%5zu  %5zu  %8zu  %5zu  %6zu  %5zu  %4zu  %5zu  %s\n",
                  s + 1, st.depth, st.channels, st.heads, st.window, st.group, geom[s].side,
                  geom[s].windows, pattern.c_str());
    os << line;
    csv << s + 1 << ',' << st.depth << ',' << st.channels << ',' << st.heads << ',' << st.window
        << ',' << st.group << ',' << geom[s].side << ',' << geom[s].windows << ',' << pattern
        << '\n';
  }
  const std::uint64_t params = report.params_total();
  const std::uint64_t macs = report.analytic_total();
  char totals[160];
  std::snprintf(totals, sizeof(totals),
                "parameters: %llu (%.2f M)\nanalytic MACs per image: %llu (%.3f G)\n",
                static_cast<unsigned long long>(params), static_cast<double>(params) / 1e6,
                static_cast<unsigned long long>(macs), static_cast<double>(macs) / 1e9);
  os << totals;
  csv << "totals,params," << params << ",macs," << macs << ",,,,\n";
  if (!args.csv_out.empty()) detail::write_file(args.csv_out, csv.str());
  return 0;
}

struct AnalyzeArgs {
  std::string preset_name;
  std::string config_path;
  std::optional<std::size_t> resolution;
  std::string out_dir = "analysis";
};

/// Emits the per-component cost report (analytic + instrumented) and the
/// per-stage block comparison, then checks that instrumented attention MACs
/// equal the formula values exactly.
inline int cmd_analyze(const AnalyzeArgs& args, std::ostream& os = std::cout) {
  ModelConfig cfg = resolve_config(args.preset_name, args.config_path, args.resolution);
  Model<float> model(cfg, /*seed=*/1);
  CostReport report = measured_report(model);

  std::vector<std::string> mismatches;
  for (const auto& row : report.rows) {
    const bool attention = row.name.size() > 4 && (row.name.rfind(".dwa") == row.name.size() - 4 ||
                                                   row.name.rfind(".pwa") == row.name.size() - 4);
    if (attention && row.analytic_macs != row.empirical_macs) {
      mismatches.push_back(row.name + ": analytic " + std::to_string(row.analytic_macs) +
                           " != empirical " + std::to_string(row.empirical_macs));
    }
  }

  const auto compare = block_comparison(cfg);
  detail::write_file((std::filesystem::path(args.out_dir) / "components.csv").string(),
                     report_to_csv(report));
  detail::write_file((std::filesystem::path(args.out_dir) / "block_compare.csv").string(),
                     comparison_to_csv(compare));

  os << report_to_text(report) << '\n';
  os << "block comparison (one sepvit block vs two window-MSA blocks):\n";
  os << "stage    side  channels    sepvit_macs  two_block_macs   ratio\n";
  for (const auto& r : compare) {
    char line[160];
    std::snprintf(line, sizeof(line), "%5zu  %6zu  %8zu  %13llu  %14llu  %6.4f\n", r.stage, r.side,
                  r.channels, static_cast<unsigned long long>(r.sepvit_macs),
                  static_cast<unsigned long long>(r.two_swin_macs), r.ratio);
    os << line;
  }
  if (!mismatches.empty()) {
    std::string msg = "instrumented attention MACs diverge from the formulas:";
    for (const auto& m : mismatches) msg += "\n  " + m;
    throw ContractError(msg);
  }
  os << "attention rows: instrumented MACs match the formulas exactly\n";
  os << "reports written to " << args.out_dir << "/components.csv and block_compare.csv\n";
  return 0;
}

struct TrainArgs {
  std::string preset_name = "micro";
  std::string config_path;
  std::string data_dir;     // existing dataset; empty with synthetic=true generates one
  bool synthetic = false;
  std::size_t classes = 4;   // synthetic only
  std::size_t samples = 256; // synthetic only
  std::uint64_t seed = 7;
  std::size_t epochs = 50;
  std::size_t batch = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::string token_mode;    // "", "learnable", "fixed_zero"
  std::string out_dir = "run";
};

inline int cmd_train(const TrainArgs& args, std::ostream& os = std::cout) {
  namespace fs = std::filesystem;
  ModelConfig cfg = resolve_config(args.preset_name, args.config_path);
  if (!args.token_mode.empty()) cfg.token_mode = token_mode_from_name(args.token_mode);

  Dataset ds;
  if (args.synthetic) {
    ds = make_synthetic_dataset(args.seed, args.classes, args.samples, cfg.input_resolution);
    save_dataset(ds, (fs::path(args.out_dir) / "dataset").string());
  } else if (!args.data_dir.empty()) {
    ds = load_dataset(args.data_dir);
  } else {
    throw ConfigError("cmd_train needs --synthetic or --data <dir>");
  }
  cfg.num_classes = ds.classes;
  validate_config(cfg);

  Model<float> model(cfg, args.seed);
  TrainOptions opts;
  opts.epochs = args.epochs;
  opts.batch = args.batch;
  opts.lr = args.lr;
  opts.momentum = args.momentum;
  opts.weight_decay = args.weight_decay;
  opts.seed = args.seed;

  const auto metrics = train_model(model, ds, opts);
  detail::write_file((fs::path(args.out_dir) / "metrics.csv").string(), metrics_to_csv(metrics));
  save_checkpoint(model, (fs::path(args.out_dir) / "checkpoint").string());

  for (const auto& m : metrics) {
    char line[160];
    std::snprintf(line, sizeof(line), "epoch %3zu  lr %.5f  loss %.6f  train_acc %.4f\n", m.epoch,
                  m.lr, m.loss, m.train_accuracy);
    os << line;
  }
  os << "metrics: " << (fs::path(args.out_dir) / "metrics.csv").string() << '\n';
  os << "checkpoint: " << (fs::path(args.out_dir) / "checkpoint").string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint_dir;
  std::string data_dir;
  std::size_t batch = 16;
  std::string out_dir;  // optional CSV output
};

inline int cmd_eval(const EvalArgs& args, std::ostream& os = std::cout) {
  namespace fs = std::filesystem;
  Model<float> model = load_checkpoint<float>(args.checkpoint_dir);
  Dataset ds = load_dataset(args.data_dir);
  EvalResult result = evaluate(model, ds, args.batch);

  char line[160];
  std::snprintf(line, sizeof(line), "top-1 accuracy: %.6f (%zu samples, %zu classes)\n",
                result.accuracy, ds.count, ds.classes);
  os << line;
  for (std::size_t k = 0; k < ds.classes; ++k) {
    const double acc = result.per_class_total[k]
                           ? static_cast<double>(result.per_class_correct[k]) /
                                 static_cast<double>(result.per_class_total[k])
                           : 0.0;
    std::snprintf(line, sizeof(line), "class %zu: %.6f (%zu/%zu)\n", k, acc,
                  result.per_class_correct[k], result.per_class_total[k]);
    os << line;
  }
  if (!args.out_dir.empty()) {
    detail::write_file((fs::path(args.out_dir) / "accuracy.csv").string(), eval_to_csv(result));
    detail::write_file((fs::path(args.out_dir) / "confusion.csv").string(),
                       confusion_to_csv(result));
    os << "reports written to " << args.out_dir << "/accuracy.csv and confusion.csv\n";
  }
  return 0;
}

struct GenDataArgs {
  std::uint64_t seed = 7;
  std::size_t classes = 4;
  std::size_t samples = 256;
  std::size_t resolution = 64;
  std::string out_dir = "dataset";
};

inline int cmd_gen_data(const GenDataArgs& args, std::ostream& os = std::cout) {
  Dataset ds = make_synthetic_dataset(args.seed, args.classes, args.samples, args.resolution);
  save_dataset(ds, args.out_dir);
  os << "wrote " << ds.count << " samples (" << ds.classes << " classes, " << ds.resolution << "x"
     << ds.resolution << ") to " << args.out_dir << '\n';
  return 0;
}

}  // namespace sepvit
