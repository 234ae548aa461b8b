// Command-line front end: synth, train, eval, render, gradcheck.

#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nlccam/cli.hpp"

namespace cli = nlccam::cli;

int main(int argc, char** argv) {
  CLI::App app{"Combinational class activation maps with non-local attention"};
  app.require_subcommand(1);

  cli::SynthCommand synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic localization dataset");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--classes", synth.classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--per-class", synth.per_class, "Training images per class")->capture_default_str();
  synth_cmd->add_option("--test-per-class", synth.test_per_class, "Test images per class")->capture_default_str();
  synth_cmd->add_option("--size", synth.size, "Image side in pixels (multiple of 4, >= 8)")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();

  cli::TrainCommand train;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier and write a checkpoint");
  train_cmd->add_option("--data", train.data, "Dataset directory or training manifest")->required();
  train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
  std::string log_path;
  train_cmd->add_option("--log", log_path, "Loss log path (default <out>.log)");
  train_cmd->add_option("--nl-low", train.nl_low, "Non-local block before pooling (0/1)")->capture_default_str();
  train_cmd->add_option("--nl-high", train.nl_high, "Non-local block on the last feature map (0/1)")->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs)->capture_default_str();
  train_cmd->add_option("--lr", train.lr)->capture_default_str();
  train_cmd->add_option("--batch", train.batch)->capture_default_str();
  train_cmd->add_option("--seed", train.seed)->capture_default_str();
  train_cmd->add_option("--patch", train.patch, "Patch size of the embedding")->capture_default_str();
  train_cmd->add_option("--width1", train.width1, "Channels after patch embedding")->capture_default_str();
  train_cmd->add_option("--width2", train.width2, "Channels of the last feature map")->capture_default_str();
  train_cmd->add_option("--reduction", train.reduction, "Non-local channel reduction ratio")->capture_default_str();

  cli::EvalCommand eval;
  auto* eval_cmd = app.add_subcommand("eval", "Localize every test image and write a CSV error report");
  eval_cmd->add_option("--data", eval.data, "Dataset directory or test manifest")->required();
  eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--combine", eval.combine, "Combination function(s), e.g. 'topbot:i=1,b=0;poly:eta=2'")
      ->capture_default_str();
  eval_cmd->add_option("--tau", eval.tau, "Box threshold as a fraction of the map maximum")->capture_default_str();
  eval_cmd->add_option("--out", eval.out, "Report CSV path")->required();
  eval_cmd->add_flag("--gt-known", eval.gt_known, "Also report GT-known localization error");

  cli::RenderCommand render;
  std::string style = "color";
  auto* render_cmd = app.add_subcommand("render", "Write ranked class maps and the combined map for one image");
  render_cmd->add_option("--data", render.data, "Dataset directory or manifest")->required();
  render_cmd->add_option("--ckpt", render.ckpt, "Checkpoint path")->required();
  render_cmd->add_option("--image-id", render.image_id, "Image id from the manifest")->required();
  render_cmd->add_option("--combine", render.combine)->capture_default_str();
  render_cmd->add_option("--tau", render.tau)->capture_default_str();
  render_cmd->add_option("--style", style, "gray or color")->check(CLI::IsMember({"gray", "color"}))->capture_default_str();
  render_cmd->add_option("--out", render.out, "Output directory")->required();

  cli::GradcheckCommand grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  grad_cmd->add_option("--seed", grad.seed)->capture_default_str();
  grad_cmd->add_option("--size", grad.size, "Model size (only 'small')")->capture_default_str();
  grad_cmd->add_option("--nl-low", grad.nl_low)->capture_default_str();
  grad_cmd->add_option("--nl-high", grad.nl_high)->capture_default_str();
  grad_cmd->add_flag("--debug-corrupt-backward", grad.corrupt_backward, "Inject a gradient error (self-test)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitValidation;
  }

  try {
    if (*synth_cmd) return cli::run_synth(synth, std::cout);
    if (*train_cmd) {
      if (!log_path.empty()) train.log = log_path;
      return cli::run_train(train, std::cout);
    }
    if (*eval_cmd) return cli::run_eval(eval, std::cout, std::cerr);
    if (*render_cmd) {
      render.style = style == "gray" ? nlccam::HeatmapStyle::Gray : nlccam::HeatmapStyle::Color;
      return cli::run_render(render, std::cout, std::cerr);
    }
    if (*grad_cmd) return cli::run_gradcheck(grad, std::cout);
  } catch (const nlccam::ValueError& e) {
    const auto active = app.get_subcommands();
    std::cerr << "error: " << e.what() << "\n\n" << (active.empty() ? app.help() : active.front()->help());
    return cli::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitFailure;
  }
  return cli::kExitValidation;
}
