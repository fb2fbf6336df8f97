#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sepvit/sepvit.hpp"

namespace {

void add_config_flags(CLI::App* cmd, std::string& preset, std::string& config) {
  cmd->add_option("--preset", preset, "preset name: lite, tiny, small, base, micro");
  cmd->add_option("--config", config, "path to a JSON model config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SepViT: separable vision transformer backbone, cost analyzer and trainer"};
  app.require_subcommand(1);

  sepvit::SummaryArgs summary;
  std::size_t summary_resolution = 0;
  auto* cmd_summary = app.add_subcommand("summary", "print a config/parameter/MAC summary");
  add_config_flags(cmd_summary, summary.preset_name, summary.config_path);
  cmd_summary->add_option("--resolution", summary_resolution, "override input resolution");
  cmd_summary->add_option("--out", summary.csv_out, "also write the stage table as CSV");

  sepvit::AnalyzeArgs analyze;
  std::size_t analyze_resolution = 0;
  auto* cmd_analyze = app.add_subcommand(
      "analyze", "emit cost reports and check instrumented MACs against the formulas");
  add_config_flags(cmd_analyze, analyze.preset_name, analyze.config_path);
  cmd_analyze->add_option("--resolution", analyze_resolution, "override input resolution");
  cmd_analyze->add_option("--out", analyze.out_dir, "report directory (default: analysis)");

  sepvit::TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "train a model on a dataset directory");
  add_config_flags(cmd_train, train.preset_name, train.config_path);
  cmd_train->add_option("--data", train.data_dir, "dataset directory");
  cmd_train->add_flag("--synthetic", train.synthetic, "generate the synthetic dataset instead");
  cmd_train->add_option("--classes", train.classes, "synthetic classes (default 4)");
  cmd_train->add_option("--samples", train.samples, "synthetic sample count (default 256)");
  cmd_train->add_option("--seed", train.seed, "seed for data, init and batch order (default 7)");
  cmd_train->add_option("--epochs", train.epochs, "training epochs (default 50)");
  cmd_train->add_option("--batch", train.batch, "batch size (default 16)");
  cmd_train->add_option("--lr", train.lr, "base learning rate, cosine-decayed (default 0.01)");
  cmd_train->add_option("--momentum", train.momentum, "SGD momentum (default 0.9)");
  cmd_train->add_option("--wd", train.weight_decay, "decoupled weight decay (default 1e-4)");
  cmd_train->add_option("--token-mode", train.token_mode,
                        "window token mode: learnable or fixed_zero");
  cmd_train->add_option("--out", train.out_dir, "output directory (default: run)");

  sepvit::EvalArgs eval;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  cmd_eval->add_option("--checkpoint", eval.checkpoint_dir, "checkpoint directory")->required();
  cmd_eval->add_option("--data", eval.data_dir, "dataset directory")->required();
  cmd_eval->add_option("--batch", eval.batch, "batch size (default 16)");
  cmd_eval->add_option("--out", eval.out_dir, "write accuracy.csv / confusion.csv here");

  sepvit::GenDataArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  cmd_gen->add_option("--seed", gen.seed, "generator seed (default 7)");
  cmd_gen->add_option("--classes", gen.classes, "number of classes (default 4)");
  cmd_gen->add_option("--samples", gen.samples, "number of samples (default 256)");
  cmd_gen->add_option("--resolution", gen.resolution, "image side in pixels (default 64)");
  cmd_gen->add_option("--out", gen.out_dir, "output directory (default: dataset)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_summary->parsed()) {
      if (summary_resolution) summary.resolution = summary_resolution;
      return sepvit::cmd_summary(summary);
    }
    if (cmd_analyze->parsed()) {
      if (analyze_resolution) analyze.resolution = analyze_resolution;
      return sepvit::cmd_analyze(analyze);
    }
    if (cmd_train->parsed()) return sepvit::cmd_train(train);
    if (cmd_eval->parsed()) return sepvit::cmd_eval(eval);
    if (cmd_gen->parsed()) return sepvit::cmd_gen_data(gen);
  } catch (const sepvit::Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
