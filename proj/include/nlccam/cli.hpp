#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nlccam/cam.hpp"
#include "nlccam/combiner.hpp"
#include "nlccam/dataset.hpp"
#include "nlccam/gradcheck.hpp"
#include "nlccam/localization.hpp"
#include "nlccam/metrics.hpp"
#include "nlccam/model.hpp"
#include "nlccam/pipeline.hpp"
#include "nlccam/storage.hpp"
#include "nlccam/synth.hpp"

// Subcommand bodies. Flag parsing lives in tools/nlccam.cpp; these take
// already-parsed options so they can be driven from tests.
namespace nlccam::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitFailure = 2;

inline constexpr const char* kDefaultCombine = "topbot:i=1,b=10";

struct SynthCommand {
  std::filesystem::path out;
  std::size_t classes = 8;
  std::size_t per_class = 250;
  std::size_t test_per_class = 50;
  std::size_t size = 32;
  std::uint64_t seed = 0;
};

struct TrainCommand {
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> log;  // default: <out>.log
  bool nl_low = true;
  bool nl_high = true;
  std::size_t epochs = 30;
  double lr = 0.05;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  std::size_t patch = 2;
  std::size_t width1 = 16;
  std::size_t width2 = 32;
  std::size_t reduction = 8;
};

struct EvalCommand {
  std::filesystem::path data;
  std::filesystem::path ckpt;
  std::string combine = kDefaultCombine;
  double tau = kDefaultThreshold;
  std::filesystem::path out;
  bool gt_known = false;
};

struct RenderCommand {
  std::filesystem::path data;
  std::filesystem::path ckpt;
  std::string image_id;
  std::string combine = kDefaultCombine;
  std::filesystem::path out;
  double tau = kDefaultThreshold;
  HeatmapStyle style = HeatmapStyle::Color;
};

struct GradcheckCommand {
  std::uint64_t seed = 0;
  std::string size = "small";
  bool nl_low = true;
  bool nl_high = true;
  bool corrupt_backward = false;
};

namespace detail {

// A directory resolves to `<dir>/<split>.tsv`; a file is used as is.
inline std::filesystem::path resolve_manifest(const std::filesystem::path& data, const char* split) {
  if (std::filesystem::is_directory(data)) return data / (std::string(split) + ".tsv");
  return data;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ValueError(msg);
}

inline std::vector<CombinationFn> combinations_for(const std::string& spec, std::size_t num_classes,
                                                   std::ostream& err) {
  auto fns = parse_combination_list(spec);
  for (auto& g : fns) {
    const std::string before = to_string(g);
    if (clip_to_classes(g, num_classes)) {
      err << "warning: " << before << " exceeds " << num_classes << " classes, using " << to_string(g) << "\n";
    }
    nlccam::detail::validate_combination(g, num_classes);
  }
  return fns;
}

}  // namespace detail

inline int run_synth(const SynthCommand& cmd, std::ostream& out) {
  detail::require(!cmd.out.empty(), "--out is required");
  SynthConfig cfg;
  cfg.num_classes = cmd.classes;
  cfg.train_per_class = cmd.per_class;
  cfg.test_per_class = cmd.test_per_class;
  cfg.size = cmd.size;
  cfg.seed = cmd.seed;
  detail::require(cmd.size >= 8, nlccam::detail::concat("--size must be at least 8, got ", cmd.size));
  detail::require(cmd.size % 4 == 0, nlccam::detail::concat("--size must be a multiple of 4, got ", cmd.size));
  detail::require(cmd.classes >= 2, "--classes must be at least 2");
  detail::require(cmd.per_class > 0, "--per-class must be positive");
  // Blob sides span 5/16 to 5/8 of the image, i.e. 10..20 px at 32 px.
  cfg.blob_min = cmd.size * 5 / 16;
  cfg.blob_max = cmd.size * 5 / 8;
  cfg.validate();

  const SynthDataset data = generate(cfg);
  save_dataset(cmd.out, data);
  out << "wrote " << data.train.size() << " train and " << data.test.size() << " test images to "
      << cmd.out.string() << "\n";
  return kExitOk;
}

inline int run_train(const TrainCommand& cmd, std::ostream& out) {
  detail::require(!cmd.data.empty(), "--data is required");
  detail::require(!cmd.out.empty(), "--out is required");
  detail::require(cmd.epochs > 0, "--epochs must be positive");
  detail::require(cmd.batch > 0, "--batch must be positive");
  detail::require(cmd.lr >= 0.0, "--lr must be non-negative");

  const Dataset data = load_split(detail::resolve_manifest(cmd.data, "train"));
  if (data.empty()) throw ValueError("training manifest is empty");
  std::size_t num_classes = 0;
  for (const auto& s : data) num_classes = std::max(num_classes, s.label + 1);

  ModelConfig cfg;
  cfg.in_channels = data.front().image.extent(0);
  cfg.height = data.front().image.extent(1);
  cfg.width = data.front().image.extent(2);
  cfg.patch = cmd.patch;
  cfg.width1 = cmd.width1;
  cfg.width2 = cmd.width2;
  cfg.num_classes = std::max<std::size_t>(2, num_classes);
  cfg.nl_low = cmd.nl_low;
  cfg.nl_high = cmd.nl_high;
  cfg.reduction = cmd.reduction;
  cfg.seed = cmd.seed;
  cfg.validate();

  std::ostringstream log;
  TrainOptions opt;
  opt.epochs = cmd.epochs;
  opt.lr = cmd.lr;
  opt.batch = cmd.batch;
  opt.seed = cmd.seed;
  opt.on_epoch = [&](std::size_t epoch, double loss) {
    char line[96];
    std::snprintf(line, sizeof line, "epoch %zu loss %.9g\n", epoch + 1, loss);
    log << line;
    out << line << std::flush;
  };
  const TrainResult result = train(data, Model::initialize(cfg), opt);
  save_checkpoint(cmd.out, result.checkpoint());
  std::filesystem::path log_path = cmd.log.value_or(std::filesystem::path(cmd.out.string() + ".log"));
  nlccam::detail::write_text_atomic(log_path, log.str());
  out << "wrote " << cmd.out.string() << "\n";
  return kExitOk;
}

struct EvalBlock {
  CombinationFn combination;
  std::vector<EvalRecord> records;
  ErrorReport report;
};

inline std::vector<EvalBlock> evaluate_blocks(const Model& model, const Dataset& data,
                                              const std::vector<CombinationFn>& fns, double tau) {
  std::vector<EvalBlock> blocks;
  for (const auto& g : fns) {
    EvalBlock b{g, evaluate(model, data, g, tau), {}};
    b.report = aggregate(b.records);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

inline int run_eval(const EvalCommand& cmd, std::ostream& out, std::ostream& err) {
  detail::require(!cmd.data.empty(), "--data is required");
  detail::require(!cmd.ckpt.empty(), "--ckpt is required");
  detail::require(!cmd.out.empty(), "--out is required");
  detail::require(cmd.tau > 0.0 && cmd.tau < 1.0, "--tau must lie in (0,1)");
  parse_combination_list(cmd.combine);

  const Model model = Model::from_checkpoint(load_checkpoint(cmd.ckpt));
  const auto fns = detail::combinations_for(cmd.combine, model.config().num_classes, err);
  const Dataset data = load_split(detail::resolve_manifest(cmd.data, "test"));
  if (data.empty()) throw ValueError("evaluation manifest is empty");

  const auto blocks = evaluate_blocks(model, data, fns, cmd.tau);
  std::vector<ReportBlock> report;
  for (const auto& b : blocks) {
    report.push_back({fns.size() > 1 ? to_string(b.combination) : std::string{}, b.report, cmd.gt_known});
    out << to_string(b.combination) << ":";
    for (const MetricLine* m : b.report.lines()) {
      if (m == &b.report.gt_known && !cmd.gt_known) continue;
      char buf[96];
      std::snprintf(buf, sizeof buf, " %s=%.2f%%", m->name.c_str(), m->error_percent);
      out << buf;
    }
    out << "\n";
  }
  write_report_csv(cmd.out, report);
  return kExitOk;
}

inline std::vector<std::filesystem::path> run_render_files(const RenderCommand& cmd, std::ostream& err) {
  detail::require(!cmd.data.empty(), "--data is required");
  detail::require(!cmd.ckpt.empty(), "--ckpt is required");
  detail::require(!cmd.image_id.empty(), "--image-id is required");
  detail::require(!cmd.out.empty(), "--out is required");
  detail::require(cmd.tau > 0.0 && cmd.tau < 1.0, "--tau must lie in (0,1)");

  const Model model = Model::from_checkpoint(load_checkpoint(cmd.ckpt));
  auto fns = detail::combinations_for(cmd.combine, model.config().num_classes, err);
  if (fns.size() != 1) throw ValueError("render takes exactly one combination function");

  const auto manifest = detail::resolve_manifest(cmd.data, "test");
  const Dataset data = load_split(manifest);
  const auto it = std::find_if(data.begin(), data.end(), [&](const Sample& s) { return s.id == cmd.image_id; });
  if (it == data.end()) throw ValueError("image id '" + cmd.image_id + "' not found in " + manifest.string());

  const Localization loc = localize(model, *it, fns.front(), cmd.tau);
  const ForwardResult fwd = model.forward(it->image);
  const std::size_t h = it->image.extent(1), w = it->image.extent(2), k = loc.ranking.num_classes();
  const char* ext = cmd.style == HeatmapStyle::Gray ? ".pgm" : ".ppm";

  std::vector<std::size_t> ranks;
  for (std::size_t r = 1; r <= std::min<std::size_t>(3, k); ++r) ranks.push_back(r);
  for (std::size_t r = k >= 3 ? k - 2 : 1; r <= k; ++r) {
    if (std::find(ranks.begin(), ranks.end(), r) == ranks.end()) ranks.push_back(r);
  }

  std::filesystem::create_directories(cmd.out);
  std::vector<std::filesystem::path> written;
  for (std::size_t r : ranks) {
    const Tensor m = class_map(fwd.features, model.params().fc_w, loc.ranking.order[r - 1]);
    const auto path = cmd.out / ("rank" + std::to_string(r) + ext);
    render_heatmap(normalize_map(bilinear_resize(m, h, w)), path, cmd.style, loc.box);
    written.push_back(path);
  }
  const auto path = cmd.out / (std::string("ccam") + ext);
  render_heatmap(normalize_map(bilinear_resize(loc.map, h, w)), path, cmd.style, loc.box);
  written.push_back(path);
  return written;
}

inline int run_render(const RenderCommand& cmd, std::ostream& out, std::ostream& err) {
  for (const auto& p : run_render_files(cmd, err)) out << "wrote " << p.string() << "\n";
  return kExitOk;
}

inline int run_gradcheck(const GradcheckCommand& cmd, std::ostream& out) {
  detail::require(cmd.size == "small", "--size must be 'small'");
  ModelConfig cfg = small_config(cmd.seed);
  cfg.nl_low = cmd.nl_low;
  cfg.nl_high = cmd.nl_high;
  GradCheckOptions opt;
  opt.corrupt_backward = cmd.corrupt_backward;
  const GradCheckReport report = grad_check_model(cfg, cmd.seed, opt);
  for (const auto& g : report.groups) {
    char line[160];
    std::snprintf(line, sizeof line, "%-10s n=%-5zu max_rel_err=%.3e max|grad|=%.3e %s\n", g.name.c_str(),
                  g.count, g.max_rel_error, g.max_abs_grad, g.max_rel_error <= kGradCheckTolerance ? "ok" : "FAIL");
    out << line;
  }
  char summary[96];
  std::snprintf(summary, sizeof summary, "max relative error %.3e (tolerance %.0e)\n", report.max_rel_error,
                kGradCheckTolerance);
  out << summary;
  return report.passed() ? kExitOk : kExitFailure;
}

}  // namespace nlccam::cli
