// Acceptance run: one PASS/FAIL line per criterion.
//
//   camix_acceptance [--work DIR] [criterion numbers...]
//
// With no numbers every criterion runs. Criteria 6-9 train on the toy
// benchmark and take most of the time; 7 and 8 reuse the runs of 6.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "test_util.hpp"

namespace camix {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1. Full-step gradients vs central differences, 3x8x8, C=4, double.
Outcome gradient_soundness() {
  const auto t0 = Clock::now();
  TrainConfig cfg;
  cfg.num_classes = 4;
  cfg.iterations = 100;
  cfg.seed = 3;
  SeededRng rng(3, 77);
  std::vector<LabelMap> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(testing::random_labels(8, 8, 4, rng));
  auto st = TrainerState<double>::create(cfg, build_spatial_prior(maps, 4, 0.5), MetaClassList{{{1, 2}}});
  st.models.teacher = init_params<double>(st.models.teacher.arch, SeededRng(3, 0x7EAC));
  st.t = 40;  // inside the ramp, so both loss terms carry weight
  const auto x_s = testing::random_tensor<double>({3, 8, 8}, rng, 0, 1);
  const auto x_t = testing::random_tensor<double>({3, 8, 8}, rng, 0, 1);
  const auto y_s = testing::random_labels(8, 8, 4, rng);

  const auto out = compute_step(st, x_s, y_s, x_t);
  const std::vector<const Tensor<double>*> images{&x_s, &out.x_m};
  auto loss = [&] { return step_total_loss(st, x_s, y_s, x_t); };
  auto pattern = [&] { return testing::relu_pattern(st.models.student, images); };
  const testing::FdBase base{out.losses.l_total, pattern()};
  double worst = 0.0;
  std::size_t checked = 0, one_sided = 0;
  for (std::size_t li = 0; li < st.models.student.layers.size(); ++li)
    for (int which = 0; which < 2; ++which) {
      auto& p = which ? st.models.student.layers[li].bias : st.models.student.layers[li].kernel;
      const auto& g = which ? out.grads.layers[li].bias : out.grads.layers[li].kernel;
      for (std::size_t j = 0; j < p.size(); ++j) {
        const auto fd = testing::fd_derivative(p[j], 1e-5, loss, pattern, base);
        worst = std::max(worst, testing::rel_err(g[j], fd.value, 1e-6));
        one_sided += fd.kink;
        ++checked;
      }
    }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          std::to_string(checked) + " params, max rel err " + fmt("%.2e", worst) + " (" + std::to_string(one_sided) +
              " one-sided at ReLU switches), " + fmt("%.1f s", secs)};
}

// 2. Every mixed pixel comes from exactly one input, as selected by M.
Outcome mixup_exactness() {
  SeededRng rng(2, 2);
  std::size_t bad = 0, pixels = 0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t H = 1 + rng.below(16), W = 1 + rng.below(16);
    const auto xs = testing::random_tensor<float>({3, H, W}, rng, 0.0, 0.5);
    const auto xt = testing::random_tensor<float>({3, H, W}, rng, 0.5001, 1.0);
    auto ys = testing::random_labels(H, W, 4, rng);
    auto yt = testing::random_labels(H, W, 4, rng);
    for (auto& v : yt.cells) v = static_cast<std::uint8_t>(v + 4);
    const ContextualMask m{testing::random_binary(H, W, rng, rng.uniform()), {}};
    const SignificanceMask ut{testing::random_binary(H, W, rng)};
    const auto xm = mix_images(xs, xt, m);
    const auto ym = mix_labels(ys, yt, m);
    const auto um = mix_significance(ut, m);
    for (std::size_t i = 0; i < H * W; ++i) {
      ++pixels;
      bool ok = true;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t j = c * H * W + i;
        const bool from_t = xm[j] == xt[j], from_s = xm[j] == xs[j];
        ok = ok && from_t != from_s && from_t == (m.m[i] == 1);
      }
      ok = ok && ym[i] == (m.m[i] ? yt[i] : ys[i]);
      ok = ok && um.u[i] == (m.m[i] ? ut.u[i] : 1);
      bad += !ok;
    }
  }
  return {bad == 0, "1000 triples, " + std::to_string(pixels) + " pixels scanned, " + std::to_string(bad) + " wrong"};
}

// 3. Library mask generation vs the straight-line oracle on 200 fixtures.
Outcome oracle_equivalence() {
  SeededRng fx(7, 1);
  std::size_t mismatches = 0, with_groups = 0, grew = 0;
  for (int k = 0; k < 200; ++k) {
    const auto f = testing::random_mask_fixture(fx);
    with_groups += !f.meta.groups.empty();
    SeededRng a(5000 + k, 3), b(5000 + k, 3);
    const auto got = generate_contextual_mask(f.probs, f.prior, f.meta, a);
    const auto want = oracle::contextual_mask(f.probs, f.prior.q, f.meta.groups, b);
    const auto present = present_classes(spatially_modulated_pseudolabel(f.probs, f.prior));
    grew += want.selected.size() > (present.size() + 1) / 2;
    mismatches += got.m.cells != want.m || got.selected_classes != want.selected || a.next_u64() != b.next_u64();
  }
  return {mismatches == 0, "200 fixtures (" + std::to_string(with_groups) + " with groups, " + std::to_string(grew) +
                               " grown by closure), " + std::to_string(mismatches) + " mismatches"};
}

// 4. Entropy bounds, threshold schedule, strict mask.
Outcome entropy_threshold() {
  SeededRng rng(4, 4);
  std::size_t violations = 0;
  for (int k = 0; k < 500; ++k) {
    const std::size_t C = 2 + rng.below(15);
    const double lnc = std::log(static_cast<double>(C));
    const auto pd = testing::random_probs<double>(C, 6, 6, rng, rng.uniform(0.0, 12.0));
    const auto zd = predictive_entropy(pd);
    for (double z : zd.values()) violations += !(z >= 0.0 && z <= lnc);
    const auto pf = testing::random_probs<float>(C, 6, 6, rng, rng.uniform(0.0, 12.0));
    const auto zf = predictive_entropy(pf);
    for (float z : zf.values()) violations += !(z >= 0.0f && z <= static_cast<float>(lnc));
    const auto zu = predictive_entropy(Tensor<double>({C, 2, 2}, 1.0 / static_cast<double>(C)));
    for (double z : zu.values()) violations += !(z >= 0.0 && z <= lnc);
  }
  std::size_t schedule_bad = 0;
  for (int k = 0; k < 200; ++k) {
    const auto zeta = testing::random_tensor<double>({8, 8}, rng, 0.0, std::log(8.0));
    const std::size_t t_max = 1 + rng.below(5000);
    double prev = -1.0, k_sup = 0.0;
    for (double z : zeta.values()) k_sup = std::max(k_sup, z);
    for (std::size_t t = 0; t <= t_max; t += 1 + t_max / 97) {
      const double h = dynamic_threshold(zeta, {0.75, -5.0, t, t_max}).h;
      schedule_bad += h < prev;
      prev = h;
    }
    schedule_bad += dynamic_threshold(zeta, {0.75, -5.0, t_max, t_max}).h != 0.75 + 0.25 * k_sup;
  }
  const Tensor<double> boundary({1, 3}, std::vector<double>{0.5, 0.5 - 1e-12, 0.5 + 1e-12});
  const auto u = significance_mask(boundary, 0.5).u;
  const bool strict = u[0] == 0 && u[1] == 1 && u[2] == 0;
  return {violations == 0 && schedule_bad == 0 && strict,
          std::to_string(violations) + " entropy bound violations, " + std::to_string(schedule_bad) +
              " schedule violations, boundary pixel " + (strict ? "rejected" : "accepted")};
}

// 5. EMA closed form and teacher isolation from the optimizer.
Outcome ema_closed_form() {
  SeededRng rng(5, 5);
  const auto arch = Architecture::standard(4, 3, 6);
  auto w = SegmenterParams<double>::zeros(arch), w0 = SegmenterParams<double>::zeros(arch);
  w.for_each_tensor([&](Tensor<double>& t) { for (auto& v : t.values()) v = rng.uniform(-1, 1); });
  w0.for_each_tensor([&](Tensor<double>& t) { for (auto& v : t.values()) v = rng.uniform(-1, 1); });
  double worst = 0.0;
  for (double alpha : {0.9, 0.99})
    for (int k : {1, 10, 100}) {
      StudentTeacher<double> st{w, w0, alpha};
      for (int i = 0; i < k; ++i) st.ema_step();
      const double ak = std::pow(alpha, k);
      for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        for (std::size_t j = 0; j < w.layers[li].kernel.size(); ++j)
          worst = std::max(worst, std::abs(st.teacher.layers[li].kernel[j] -
                                           (ak * w0.layers[li].kernel[j] + (1 - ak) * w.layers[li].kernel[j])));
        for (std::size_t j = 0; j < w.layers[li].bias.size(); ++j)
          worst = std::max(worst, std::abs(st.teacher.layers[li].bias[j] -
                                           (ak * w0.layers[li].bias[j] + (1 - ak) * w.layers[li].bias[j])));
      }
    }
  // Hash the teacher right before the EMA stage of real training steps.
  TrainConfig cfg;
  cfg.num_classes = 8;
  cfg.iterations = 20;
  cfg.hidden_channels = 8;
  const auto ds = generate_dataset(SceneSpec::for_domain(Domain::source, 32, 32), 4, 9);
  const auto dt = generate_dataset(SceneSpec::for_domain(Domain::target, 32, 32), 4, 10);
  auto st = TrainerState<float>::create(cfg, build_spatial_prior(ds.labels, 8, 1.0), MetaClassList::scene_default());
  std::size_t hash_bad = 0;
  std::uint64_t before = 0;
  st.trace = [&](std::string_view stage) {
    if (stage == "ema") hash_bad += params_digest(st.models.teacher) != before;
  };
  for (std::size_t t = 0; t < 20; ++t) {
    before = params_digest(st.models.teacher);
    train_step(st, ds.images[t % 4], ds.labels[t % 4], dt.images[(t + 1) % 4]);
    hash_bad += params_digest(st.models.teacher) == before;  // EMA must have moved it
  }
  return {worst < 1e-10 && hash_bad == 0, "max closed-form error " + fmt("%.2e", worst) +
                                              ", teacher hash changed outside EMA " + std::to_string(hash_bad) + " times"};
}

struct Benchmark {
  fs::path root;
  std::map<std::string, std::vector<TrainResult>> runs;  // method -> per seed
  double seconds = 0.0;
};

void build_benchmark_data(const fs::path& root) {
  if (fs::exists(root / "target_eval" / "manifest.json")) return;
  build_dataset(SceneSpec::for_domain(Domain::source, 64, 64), 200, root / "source", 1);
  build_dataset(SceneSpec::for_domain(Domain::target, 64, 64), 200, root / "target", 2, true);
  build_dataset(SceneSpec::for_domain(Domain::target, 64, 64), 100, root / "target_eval", 3);
}

TrainConfig benchmark_config(const fs::path& root) {
  auto cfg = load_config(CAMIX_SOURCE_DIR "/configs/toy.json");
  cfg.source_dir = (root / "source").string();
  cfg.target_dir = (root / "target").string();
  cfg.target_eval_dir = (root / "target_eval").string();
  return cfg;
}

double mean(const std::vector<TrainResult>& rs) {
  double s = 0;
  for (const auto& r : rs) s += r.final_miou;
  return s / static_cast<double>(rs.size());
}

// 6. Three seeds of source_only, classmix and camix on the default benchmark.
Outcome adaptation_gain(Benchmark& b) {
  const auto t0 = Clock::now();
  build_benchmark_data(b.root);
  for (const char* m : {"source_only", "classmix", "camix"})
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto cfg = benchmark_config(b.root);
      cfg.method = parse_method(m);
      cfg.seed = seed;
      b.runs[m].push_back(train(cfg, b.root / "runs" / (std::string(m) + "_" + std::to_string(seed))));
      std::printf("  %-11s seed %llu: final target mIoU %.4f (best %.4f)\n", m, static_cast<unsigned long long>(seed),
                  b.runs[m].back().final_miou, b.runs[m].back().best_miou);
      std::fflush(stdout);
    }
  b.seconds = seconds_since(t0);
  const double so = mean(b.runs["source_only"]), cm = mean(b.runs["classmix"]), ca = mean(b.runs["camix"]);
  const bool pass = ca - so >= 0.05 && ca >= cm && b.seconds <= 1800.0;
  return {pass, "mean final mIoU source_only " + fmt("%.4f", so) + ", classmix " + fmt("%.4f", cm) + ", camix " +
                    fmt("%.4f", ca) + " (gain " + fmt("%+.2f", 100 * (ca - so)) + " points), " +
                    fmt("%.0f s", b.seconds)};
}

// 7. No late drop of more than 10 points below the running best in the camix runs.
Outcome src_stability(const Benchmark& b) {
  double worst = 0.0;
  for (const auto& r : b.runs.at("camix")) {
    std::vector<double> evals;
    for (const auto& row : r.history)
      if (row.miou_target) evals.push_back(*row.miou_target);
    double best = -1.0;
    for (std::size_t i = 0; i < evals.size(); ++i) {
      best = std::max(best, evals[i]);
      if (2 * i >= evals.size()) worst = std::max(worst, best - evals[i]);
    }
  }
  return {worst <= 0.10, "largest drop below running best in the final half: " + fmt("%.2f", 100 * worst) + " points"};
}

// 8. Rerun camix seed 0 and compare metrics.csv bytes.
Outcome determinism(const Benchmark& b) {
  auto cfg = benchmark_config(b.root);
  cfg.method = Method::camix;
  cfg.seed = 0;
  const auto again = train(cfg, b.root / "runs" / "camix_0_repeat");
  const auto first = testing::slurp(b.runs.at("camix").front().metrics_csv);
  const auto second = testing::slurp(again.metrics_csv);
  return {first == second, std::to_string(first.size()) + " bytes, " + (first == second ? "identical" : "different")};
}

// 9. ce and mse train cleanly; with U forced to ones src and ce agree step by step.
Outcome ablation_wiring(const Benchmark& b) {
  std::string detail;
  bool pass = true;
  for (const char* loss : {"ce", "mse"}) {
    auto cfg = benchmark_config(b.root);
    cfg.consistency_loss = parse_consistency(loss);
    try {
      const auto r = train(cfg, b.root / "runs" / (std::string("camix_") + loss));
      bool finite = true;
      for (const auto& row : r.history) finite = finite && std::isfinite(row.losses.l_total);
      pass = pass && finite;
      detail += std::string(loss) + " final mIoU " + fmt("%.4f", r.final_miou) + (finite ? "" : " NON-FINITE") + "; ";
    } catch (const NanAbort& e) {
      pass = false;
      detail += std::string(loss) + " aborted: " + e.what() + "; ";
    }
  }
  const auto& src_runs = b.runs.at("camix");
  bool src_finite = true;
  for (const auto& r : src_runs)
    for (const auto& row : r.history) src_finite = src_finite && std::isfinite(row.losses.l_total);
  pass = pass && src_finite;
  detail += std::string("src ") + (src_finite ? "finite" : "NON-FINITE") + "; ";

  // Same stream, forced U_M = 1, 300 steps in lock step.
  const auto cfg0 = benchmark_config(b.root);
  const auto source = load_dataset(cfg0.source_dir, true);
  const auto target = load_dataset(cfg0.target_dir);
  auto make = [&](ConsistencyLoss l) {
    auto c = cfg0;
    c.consistency_loss = l;
    c.force_full_significance = true;
    return TrainerState<float>::create(c, build_spatial_prior(source.labels, c.num_classes, c.prior_eps),
                                       MetaClassList::scene_default());
  };
  auto a = make(ConsistencyLoss::src), c = make(ConsistencyLoss::ce);
  double worst = 0.0;
  for (std::size_t step = 0; step < 300; ++step) {
    SeededRng sample = step_rng(cfg0.seed, a.t).fork(1);
    const std::size_t si = sample.below(source.size()), ti = sample.below(target.size());
    const auto oa = train_step(a, source.images[si], source.labels[si], target.images[ti]);
    const auto oc = train_step(c, source.images[si], source.labels[si], target.images[ti]);
    worst = std::max({worst, std::abs(oa.losses.l_total - oc.losses.l_total), std::abs(oa.losses.l_con - oc.losses.l_con)});
  }
  pass = pass && worst <= 1e-10;
  detail += "forced-U src vs ce over 300 steps: max |diff| " + fmt("%.1e", worst);
  return {pass, detail};
}

}  // namespace
}  // namespace camix

int main(int argc, char** argv) {
  using namespace camix;
  std::set<int> wanted;
  std::optional<testing::TempDir> scratch;
  fs::path work;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      wanted.insert(std::stoi(a));
    }
  }
  if (work.empty()) {
    scratch.emplace("acceptance");
    work = scratch->path();
  }
  auto want = [&](int k) { return wanted.empty() || wanted.count(k); };
  // 7, 8 and 9 need the runs of 6.
  if (!wanted.empty() && (want(7) || want(8) || want(9))) wanted.insert(6);

  static const char* names[] = {"",
                                "gradient soundness",
                                "mixup exactness",
                                "mask oracle equivalence",
                                "entropy/threshold properties",
                                "EMA closed form",
                                "adaptation gain",
                                "SRC stability",
                                "determinism",
                                "ablation wiring"};
  int failures = 0;
  Benchmark bench{work, {}, 0.0};
  auto report = [&](int k, const Outcome& o) {
    std::printf("[%s] criterion %d %s: %s\n", o.pass ? "PASS" : "FAIL", k, names[k], o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  auto guarded = [&](int k, auto&& fn) {
    if (!want(k)) return;
    try {
      report(k, fn());
    } catch (const std::exception& e) {
      report(k, {false, std::string("exception: ") + e.what()});
    }
  };
  guarded(1, gradient_soundness);
  guarded(2, mixup_exactness);
  guarded(3, oracle_equivalence);
  guarded(4, entropy_threshold);
  guarded(5, ema_closed_form);
  guarded(6, [&] { return adaptation_gain(bench); });
  const bool have_runs = bench.runs.count("camix") && bench.runs["camix"].size() == 3;
  guarded(7, [&] { return have_runs ? src_stability(bench) : Outcome{false, "criterion 6 runs unavailable"}; });
  guarded(8, [&] { return have_runs ? determinism(bench) : Outcome{false, "criterion 6 runs unavailable"}; });
  guarded(9, [&] { return have_runs ? ablation_wiring(bench) : Outcome{false, "criterion 6 runs unavailable"}; });
  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
