// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <unistd.h>

#include "nlccam/gradcheck.hpp"
#include "nlccam/pipeline.hpp"
#include "nlccam/storage.hpp"
#include "nlccam/synth.hpp"
#include "test_util.hpp"

namespace {

using namespace nlccam;
using nlccam::testing::max_abs;
using nlccam::testing::max_abs_diff;
using nlccam::testing::random_tensor;
namespace fs = std::filesystem;
using nlccam::detail::read_file;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Outcome gradient_correctness() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (auto [low, high] : {std::pair{true, true}, std::pair{false, false}}) {
    ModelConfig cfg = small_config(0);
    cfg.nl_low = low;
    cfg.nl_high = high;
    const GradCheckReport r = grad_check_model(cfg, 0);
    worst = std::max(worst, r.max_rel_error);
    for (const char* group : {"embed.W", "proj.W", "fc.W", "nl0.Wf", "nl1.Wk"}) {
      const bool wanted = low || std::string(group).rfind("nl", 0) != 0;
      const bool present =
          std::any_of(r.groups.begin(), r.groups.end(), [&](const auto& g) { return g.name == group; });
      o.require(present == wanted, std::string("group coverage: ") + group);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.require(worst <= 1e-4, "relative error above 1e-4");
  o.require(secs < 60.0, "took longer than a minute");
  if (o.pass) o.detail = fmt("max rel err %.2e, %.1fs", worst, secs);
  return o;
}

Outcome identity_at_init() {
  Outcome o;
  Rng rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = static_cast<std::size_t>(rng.between(1, 16));
    NonLocalParams p = NonLocalParams::zeros(c, 4);
    for (Tensor* t : {&p.wf, &p.wg, &p.wh, &p.wk}) *t = random_tensor(t->shape(), rng);
    const Tensor x = random_tensor({c, 5, 6}, rng, -3, 3);
    worst = std::max(worst, max_abs_diff(nl_forward(x, p).y, x));
  }
  o.require(worst <= 1e-12, "nl_forward is not the identity");

  ModelConfig on;
  on.seed = 4;
  ModelConfig off = on;
  off.nl_low = off.nl_high = false;
  const Tensor img = random_tensor({3, 32, 32}, rng, 0, 1);
  const double logit_diff = max_abs_diff(Model::initialize(on).forward(img).logits,
                                         Model::initialize(off).forward(img).logits);
  o.require(logit_diff <= 1e-12, "logits differ with blocks on vs off");
  if (o.pass) o.detail = fmt("block max diff %.1e, logit diff %.1e", worst, logit_diff);
  return o;
}

Outcome attention_properties() {
  Outcome o;
  Rng rng(3);
  double col_err = 0.0, perm_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = static_cast<std::size_t>(rng.between(1, 10));
    const auto h = static_cast<std::size_t>(rng.between(1, 6));
    const auto w = static_cast<std::size_t>(rng.between(1, 6));
    NonLocalParams p = NonLocalParams::zeros(c, 2);
    for (Tensor* t : {&p.wf, &p.wg, &p.wh, &p.wk}) *t = random_tensor(t->shape(), rng);
    p.gamma = random_tensor({c}, rng, 0.5, 1.5);
    p.beta = random_tensor({c}, rng, -0.5, 0.5);
    const Tensor x = random_tensor({c, h, w}, rng, -2, 2);
    const std::size_t l = h * w;

    const Tensor a = attention_matrix(x, p);
    for (std::size_t j = 0; j < l; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < l; ++i) s += a.at(i, j);
      col_err = std::max(col_err, std::abs(s - 1.0));
    }

    std::vector<std::size_t> perm(l);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = l; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    auto permute = [&](const Tensor& t) {
      Tensor out(t.shape());
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < l; ++j) out[ch * l + j] = t[ch * l + perm[j]];
      return out;
    };
    perm_err = std::max(perm_err, max_abs_diff(nl_forward(permute(x), p).y, permute(nl_forward(x, p).y)));
  }
  o.require(col_err <= 1e-12, "attention column does not sum to 1");
  o.require(perm_err <= 1e-10, "permutation equivariance violated");
  if (o.pass) o.detail = fmt("column err %.1e, permutation err %.1e", col_err, perm_err);
  return o;
}

Outcome ccam_linearity() {
  Outcome o;
  Rng rng(4);
  const std::vector<CombinationFn> fns = {Polynomial{0, {}}, Polynomial{1, {}}, Polynomial{2, {}},
                                          Polynomial{3, {}}, TopBottom{1, 0},   TopBottom{1, 1},
                                          TopBottom{1, 3},   TopBottom{2, 2}};
  double worst = 0.0;
  bool cam_exact = true;
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = static_cast<std::size_t>(rng.between(1, 16));
    const auto k = static_cast<std::size_t>(rng.between(5, 20));
    const Tensor f = random_tensor({n, 7, 6}, rng);
    const Tensor w = random_tensor({n, k}, rng);
    const ClassRanking r = rank_classes(spatial_mean(f), w);
    for (const auto& g : fns) {
      Tensor naive({7, 6});
      for (std::size_t rank = 1; rank <= k; ++rank) {
        const Tensor m = class_map(f, w, r.order[rank - 1]);
        const double gk = weight(g, rank, k);
        for (std::size_t i = 0; i < naive.size(); ++i) naive[i] += gk * m[i];
      }
      worst = std::max(worst, max_abs_diff(ccam(f, w, r, g), naive) / std::max(1.0, max_abs(naive)));
    }
    cam_exact = cam_exact && ccam(f, w, r, TopBottom{1, 0}) == class_map(f, w, r.top());
  }
  o.require(worst <= 1e-10, "fast path disagrees with per-map sum");
  o.require(cam_exact, "TopBottom(1,0) is not the top-1 class map");
  if (o.pass) o.detail = fmt("max rel diff %.1e, CAM reduction exact", worst);
  return o;
}

Outcome combination_values() {
  Outcome o;
  const Tensor w = weights_vector(Polynomial{2, 3.0}, 5);
  const double want[5] = {1, 0.25, 0, -0.25, -1};
  for (std::size_t i = 0; i < 5; ++i) o.require(std::abs(w[i] - want[i]) <= 1e-12, "quadratic K=5 values");
  std::size_t checked = 0;
  for (int eta = 1; eta <= 3; ++eta) {
    for (std::size_t k = 3; k <= 201; k += 2, ++checked) {
      o.require(std::abs(weight(Polynomial{eta, {}}, 1, k) - 1.0) <= 1e-12, "g(1) != 1");
      o.require(std::abs(weight(Polynomial{eta, {}}, k, k) + 1.0) <= 1e-12, "g(K) != -1");
    }
  }
  if (o.pass) o.detail = fmt("(1,0.25,0,-0.25,-1) and %.0f endpoint pairs", static_cast<double>(checked));
  return o;
}

Outcome box_pipeline() {
  Outcome o;
  Tensor rect({32, 32});
  for (std::size_t y = 7; y < 17; ++y)
    for (std::size_t x = 12; x < 22; ++x) rect.at(y, x) = 1.0;
  o.require(bbox_from_map(rect, 0.2, 32, 32) == Box{12, 7, 22, 17}, "bright rectangle");

  Tensor two({10, 10});
  two.at(1, 1) = 1.0;
  for (std::size_t y = 5; y < 8; ++y)
    for (std::size_t x = 4; x < 9; ++x) two.at(y, x) = 0.6;
  o.require(bbox_from_map(two, 0.5, 10, 10) == Box{4, 5, 9, 8}, "two components");

  o.require(bbox_from_map(Tensor::filled({4, 4}, 2.0), 0.2, 16, 24) == Box{0, 0, 24, 16}, "constant map");

  Rng rng(6);
  std::size_t same = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor m = random_tensor({6, 6}, rng);
    Tensor t = m;
    const double a = rng.uniform(0.1, 10.0), c = rng.uniform(-5.0, 5.0);
    for (auto& v : t.data()) v = a * v + c;
    same += bbox_from_map(t, 0.2, 24, 24) == bbox_from_map(m, 0.2, 24, 24);
  }
  o.require(same == 50, "affine rescaling changed a box");
  if (o.pass) o.detail = "3 fixtures exact, 50/50 rescalings invariant";
  return o;
}

EvalRecord rec(std::size_t label, std::vector<std::size_t> top, Box pred, Box gtk,
               std::vector<Box> gt = {{0, 0, 10, 10}}) {
  EvalRecord r;
  r.label = label;
  r.top_classes = std::move(top);
  r.top_probs.assign(r.top_classes.size(), 0.2);
  r.pred_box = pred;
  r.gt_known_box = gtk;
  r.gt_boxes = std::move(gt);
  return r;
}

Outcome metric_oracle() {
  Outcome o;
  const Box exact{0, 0, 10, 10}, half{0, 0, 10, 5}, far{20, 20, 30, 30}, most{0, 0, 10, 8};
  const ErrorReport r = aggregate({
      rec(0, {0, 1, 2, 3, 4}, exact, exact),
      rec(1, {0, 1, 2, 3, 4}, exact, exact),
      rec(2, {2, 0, 1, 3, 4}, half, most),
      rec(7, {0, 1, 2, 3, 4}, exact, far),
      rec(3, {3, 0, 1, 2, 4}, far, far),
      rec(4, {1, 2, 3, 0, 4}, Box{20, 20, 30, 28}, most, {exact, far}),
  });
  // Hand counts: cls1 3/6, cls5 5/6, loc1 1/6, loc5 3/6, gt-known 4/6 correct.
  o.require(r.cls_top1.error_percent == 300.0 / 6.0, "top-1 cls");
  o.require(r.cls_top5.error_percent == 100.0 / 6.0, "top-5 cls");
  o.require(r.loc_top1.error_percent == 500.0 / 6.0, "top-1 loc");
  o.require(r.loc_top5.error_percent == 300.0 / 6.0, "top-5 loc");
  o.require(r.gt_known.error_percent == 200.0 / 6.0, "gt-known loc");
  o.require(iou(exact, half) == 0.5 && !box_correct(half, {exact}), "IoU 0.5 accepted");
  if (o.pass) o.detail = "6-record fixture exact, IoU=0.5 rejected";
  return o;
}

// Classification accuracy plus localization comparisons on a synthetic set.
Outcome synthetic_experiment() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  SynthConfig sc;  // 8 classes, 250/50 per class, 32 px
  sc.seed = 0;
  const SynthDataset data = generate(sc);

  ModelConfig mc;
  mc.num_classes = sc.num_classes;
  mc.seed = 0;
  TrainOptions opt;  // 30 epochs
  opt.seed = 0;
  opt.on_epoch = [](std::size_t e, double loss) { std::fprintf(stderr, "  epoch %2zu loss %.4f\n", e + 1, loss); };
  const Model model = train(data.train, Model::initialize(mc), opt).model;

  const TopBottom cam{1, 0}, combined{1, 3};
  std::size_t correct = 0, cam_hits = 0, ccam_hits = 0;
  std::vector<double> cam_bg, ccam_bg;
  for (const Sample& s : data.test) {
    const Localization lc = localize(model, s, cam, kDefaultThreshold);
    if (lc.ranking.top() != s.label) continue;
    ++correct;
    const Localization lx = localize(model, s, combined, kDefaultThreshold);
    cam_hits += box_correct(lc.gt_known_box, s.boxes);
    ccam_hits += box_correct(lx.gt_known_box, s.boxes);
    const std::size_t h = s.image.extent(1), w = s.image.extent(2);
    cam_bg.push_back(background_suppression_score(normalize_map(bilinear_resize(lc.gt_known_map, h, w)), s.boxes[0]));
    ccam_bg.push_back(background_suppression_score(normalize_map(bilinear_resize(lx.gt_known_map, h, w)), s.boxes[0]));
  }
  auto median = [](std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  const double acc = 100.0 * static_cast<double>(correct) / static_cast<double>(data.test.size());
  const double denom = std::max<double>(1.0, static_cast<double>(correct));
  const double cam_loc = 100.0 * static_cast<double>(cam_hits) / denom;
  const double ccam_loc = 100.0 * static_cast<double>(ccam_hits) / denom;
  const double cam_med = median(cam_bg), ccam_med = median(ccam_bg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  o.require(acc >= 90.0, "test accuracy below 90%");
  o.require(ccam_loc >= cam_loc - 2.0, "CCAM GT-known localization more than 2pp below CAM");
  o.require(ccam_med < cam_med, "CCAM median background score not below CAM");
  o.detail = (o.pass ? std::string{} : o.detail + "; ") +
             fmt("acc %.2f%%, gt-known CAM %.2f%% vs CCAM(1,3) %.2f%%, ", acc, cam_loc, ccam_loc) +
             fmt("median bg CAM %.4f vs CCAM %.4f, %.0fs", cam_med, ccam_med, secs);
  return o;
}

Outcome format_round_trips() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / ("nlccam_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(9);

  const Tensor t = random_tensor({2, 3, 4}, rng, -10, 10);
  save_tensor(dir / "a.tensor", t);
  save_tensor(dir / "b.tensor", t);
  o.require(load_tensor(dir / "a.tensor") == to_stored_precision(t), "tensor round trip");
  o.require(read_file(dir / "a.tensor") == read_file(dir / "b.tensor"), "tensor bytes differ");

  ModelConfig mc = small_config(3);
  const Checkpoint ck = Model::initialize(mc).to_checkpoint({{"k", "v"}});
  save_checkpoint(dir / "a.ckpt", ck);
  save_checkpoint(dir / "b.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  bool same = back.metadata == ck.metadata && back.tensors.size() == ck.tensors.size();
  for (const auto& [name, v] : ck.tensors) same = same && back.get(name) == to_stored_precision(v);
  o.require(same, "checkpoint round trip");
  o.require(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"), "checkpoint bytes differ");
  save_checkpoint(dir / "c.ckpt", back);
  o.require(read_file(dir / "c.ckpt") == read_file(dir / "a.ckpt"), "checkpoint re-save differs");

  const std::vector<ManifestEntry> entries = {{"a", "a.tensor", 0, {{1, 2, 11, 12}}},
                                              {"b", "b.tensor", 3, {{0, 0, 4, 4}, {5, 5, 9, 10}}}};
  write_manifest(dir / "m.tsv", entries);
  o.require(read_manifest(dir / "m.tsv") == entries, "manifest round trip");

  ErrorReport rep = aggregate({rec(0, {0, 1}, {0, 0, 10, 10}, {0, 0, 10, 10}), rec(1, {0, 1}, {0, 0, 3, 3}, {0, 0, 3, 3})});
  write_report_csv(dir / "a.csv", {{"", rep, true}});
  write_report_csv(dir / "b.csv", {{"", rep, true}});
  const Bytes csv = read_file(dir / "a.csv");
  const auto rows = parse_report_csv(std::string(csv.begin(), csv.end()));
  o.require(rows.size() == 5 && rows[0].correct == rep.cls_top1.correct && rows[4].total == 2, "report round trip");
  o.require(format_report_csv(rows) == std::string(csv.begin(), csv.end()), "report re-format differs");
  o.require(csv == read_file(dir / "b.csv"), "report bytes differ");

  Bytes bad = read_file(dir / "a.tensor");
  bad[1] ^= 0xff;
  auto throws = [](auto&& fn) {
    try {
      fn();
    } catch (const BadMagicError&) {
      return 1;
    } catch (const TruncatedError&) {
      return 2;
    } catch (...) {
      return 3;
    }
    return 0;
  };
  o.require(throws([&] { decode_tensor(bad); }) == 1, "tensor bad magic");
  const Bytes tb = read_file(dir / "a.tensor");
  o.require(throws([&] { decode_tensor(Bytes(tb.begin(), tb.end() - 1)); }) == 2, "tensor truncation");
  Bytes cb = read_file(dir / "a.ckpt");
  o.require(throws([&] { decode_checkpoint(Bytes(cb.begin(), cb.begin() + 40)); }) == 2, "checkpoint truncation");
  cb[0] = 'X';
  o.require(throws([&] { decode_checkpoint(cb); }) == 1, "checkpoint bad magic");

  fs::remove_all(dir);
  if (o.pass) o.detail = "tensor, checkpoint, manifest, report; corrupt fixtures rejected";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"identity at initialization", identity_at_init},
      {"attention normalization and equivariance", attention_properties},
      {"combined map linearity", ccam_linearity},
      {"combination function values", combination_values},
      {"box pipeline", box_pipeline},
      {"metric oracle", metric_oracle},
      {"synthetic end-to-end experiment", synthetic_experiment},
      {"format round trips", format_round_trips},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
