#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

namespace camix {
namespace {

using testing::random_tensor;

// Small double-precision fixture: 4 classes, prior from random maps, one group.
struct StepFixture {
  TrainerState<double> st;
  Tensor<double> x_s, x_t;
  LabelMap y_s;
};

StepFixture make_fixture(Method method, ConsistencyLoss loss, std::size_t hw, std::size_t hidden, std::size_t t,
                         std::uint64_t seed = 3) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.consistency_loss = loss;
  cfg.num_classes = 4;
  cfg.iterations = 100;
  cfg.seed = seed;
  cfg.hidden_channels = hidden;
  cfg.sigma = 0.1;
  SeededRng rng(seed, 77);
  std::vector<LabelMap> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(testing::random_labels(hw, hw, 4, rng));
  StepFixture f{TrainerState<double>::create(cfg, build_spatial_prior(maps, 4, 0.5), MetaClassList{{{1, 2}}}),
                random_tensor<double>({3, hw, hw}, rng, 0, 1), random_tensor<double>({3, hw, hw}, rng, 0, 1),
                testing::random_labels(hw, hw, 4, rng)};
  // Give the teacher its own weights so Y_T and U_T are not a copy of the student's view.
  f.st.models.teacher = init_params<double>(f.st.models.teacher.arch, SeededRng(seed, 0x7EAC));
  f.st.t = t;
  return f;
}

// Central differences of the whole step loss (teacher, masks and noise fixed by the step stream).
void expect_step_gradients_match(StepFixture& f) {
  const auto out = compute_step(f.st, f.x_s, f.y_s, f.x_t);
  ASSERT_GT(out.losses.lambda_con, 0.0);
  auto& student = f.st.models.student;
  const std::vector<const Tensor<double>*> images{&f.x_s, &out.x_m};
  auto loss = [&] { return step_total_loss(f.st, f.x_s, f.y_s, f.x_t); };
  auto pattern = [&] { return testing::relu_pattern(student, images); };
  for (std::size_t li = 0; li < student.layers.size(); ++li)
    for (int which = 0; which < 2; ++which) {
      auto& p = which ? student.layers[li].bias : student.layers[li].kernel;
      const auto& g = which ? out.grads.layers[li].bias : out.grads.layers[li].kernel;
      for (std::size_t j = 0; j < p.size(); ++j) {
        const auto fd = testing::fd_derivative(p[j], 1e-5, loss, pattern);
        ASSERT_LT(testing::rel_err(g[j], fd.value, 1e-6), 1e-4)
            << "layer " << li << (which ? " bias " : " kernel ") << j << (fd.kink ? " (one-sided)" : "");
      }
    }
}

TEST(ComputeStep, FullPipelineGradientCamixSrc) {
  auto f = make_fixture(Method::camix, ConsistencyLoss::src, 8, 16, 40);
  const auto out = compute_step(f.st, f.x_s, f.y_s, f.x_t);
  EXPECT_GT(out.u_fraction, 0.0);
  expect_step_gradients_match(f);
}

TEST(ComputeStep, FullPipelineGradientOtherModes) {
  for (auto loss : {ConsistencyLoss::ce, ConsistencyLoss::mse}) {
    auto f = make_fixture(Method::camix, loss, 8, 4, 60);
    expect_step_gradients_match(f);
  }
  auto f = make_fixture(Method::classmix, ConsistencyLoss::src, 8, 4, 60);
  expect_step_gradients_match(f);
}

TEST(ComputeStep, SourceOnlyHasNoConsistencyTerm) {
  auto f = make_fixture(Method::source_only, ConsistencyLoss::src, 8, 4, 50);
  const auto out = compute_step(f.st, f.x_s, f.y_s, f.x_t);
  EXPECT_EQ(out.losses.l_con, 0.0);
  EXPECT_EQ(out.losses.lambda_con, 0.0);
  EXPECT_EQ(out.losses.l_total, out.losses.l_seg);
  EXPECT_EQ(out.u_fraction, 1.0);
}

TEST(ComputeStep, ZeroLambdaCamixMatchesSourceOnlyGradients) {
  auto a = make_fixture(Method::camix, ConsistencyLoss::src, 8, 4, 50);
  auto b = make_fixture(Method::source_only, ConsistencyLoss::src, 8, 4, 50);
  a.st.config.lambda_max = 0.0;
  const auto ga = compute_step(a.st, a.x_s, a.y_s, a.x_t).grads;
  const auto gb = compute_step(b.st, b.x_s, b.y_s, b.x_t).grads;
  EXPECT_EQ(params_digest(ga), params_digest(gb));
}

TEST(ComputeStep, ForcedFullSignificanceMakesSrcEqualCe) {
  for (std::size_t t : {0u, 10u, 50u, 99u}) {
    auto a = make_fixture(Method::camix, ConsistencyLoss::src, 12, 4, t);
    auto b = make_fixture(Method::camix, ConsistencyLoss::ce, 12, 4, t);
    a.st.config.force_full_significance = true;
    b.st.config.force_full_significance = true;
    const auto oa = compute_step(a.st, a.x_s, a.y_s, a.x_t), ob = compute_step(b.st, b.x_s, b.y_s, b.x_t);
    EXPECT_NEAR(oa.losses.l_total, ob.losses.l_total, 1e-10);
    EXPECT_EQ(oa.u_fraction, 1.0);
  }
}

TEST(ComputeStep, CamixAndClassmixDifferOnlyInMaskAndSignificance) {
  std::vector<std::string> ca, cm, so;
  auto a = make_fixture(Method::camix, ConsistencyLoss::src, 8, 4, 5);
  auto b = make_fixture(Method::classmix, ConsistencyLoss::src, 8, 4, 5);
  auto c = make_fixture(Method::source_only, ConsistencyLoss::src, 8, 4, 5);
  a.st.trace = [&](std::string_view s) { ca.emplace_back(s); };
  b.st.trace = [&](std::string_view s) { cm.emplace_back(s); };
  c.st.trace = [&](std::string_view s) { so.emplace_back(s); };
  train_step(a.st, a.x_s, a.y_s, a.x_t);
  train_step(b.st, b.x_s, b.y_s, b.x_t);
  train_step(c.st, c.x_s, c.y_s, c.x_t);
  const std::vector<std::string> want_ca{"teacher_pass", "mask:contextual", "mix_images", "student_source",
                                         "student_mixed", "mix_labels", "significance:entropy", "mix_significance",
                                         "loss", "backward", "optimizer", "ema"};
  EXPECT_EQ(ca, want_ca);
  ASSERT_EQ(cm.size(), ca.size());
  for (std::size_t i = 0; i < ca.size(); ++i) {
    if (ca[i] == "mask:contextual") {
      EXPECT_EQ(cm[i], "mask:classmix");
    } else if (ca[i] == "significance:entropy") {
      EXPECT_EQ(cm[i], "significance:uniform");
    } else {
      EXPECT_EQ(cm[i], ca[i]);
    }
  }
  EXPECT_EQ(so, (std::vector<std::string>{"student_source", "loss", "backward", "optimizer", "ema"}));
}

TEST(TrainStep, TeacherMovesOnlyThroughEma) {
  auto f = make_fixture(Method::source_only, ConsistencyLoss::src, 8, 4, 0);
  const auto teacher0 = f.st.models.teacher;
  auto expect_teacher = teacher0;
  for (int k = 0; k < 3; ++k) {
    train_step(f.st, f.x_s, f.y_s, f.x_t);
    ema_update(expect_teacher, f.st.models.student, f.st.config.alpha_ema);
    EXPECT_EQ(params_digest(f.st.models.teacher), params_digest(expect_teacher));
  }
  EXPECT_NE(params_digest(f.st.models.teacher), params_digest(teacher0));
  EXPECT_EQ(f.st.t, 3u);
}

TEST(TrainStep, NonFiniteLossAbortsAndDumpsBatch) {
  testing::TempDir dir("nan");
  auto f = make_fixture(Method::camix, ConsistencyLoss::src, 8, 4, 7);
  f.st.models.student.layers.back().bias[0] = std::numeric_limits<double>::quiet_NaN();
  const auto before = params_digest(f.st.models.student);
  try {
    train_step(f.st, f.x_s, f.y_s, f.x_t, dir.path());
    FAIL() << "expected NanAbort";
  } catch (const NanAbort& e) {
    EXPECT_EQ(e.dump_dir(), dir.path() / "nan_dump_step_7");
    EXPECT_EQ(read_camx<double>(e.dump_dir() / "x_s.camx"), f.x_s);
    EXPECT_EQ(read_camx<double>(e.dump_dir() / "x_t.camx"), f.x_t);
    EXPECT_TRUE(std::filesystem::exists(e.dump_dir() / "y_s.camx"));
  }
  EXPECT_EQ(params_digest(f.st.models.student), before);
  EXPECT_EQ(f.st.t, 7u);
}

// One iteration rebuilt from primitives, following the algorithm line by line.
TEST(TrainStep, MatchesStraightLineIteration) {
  for (std::size_t t : {0u, 30u, 99u}) {
    auto f = make_fixture(Method::camix, ConsistencyLoss::src, 16, 4, t, 11 + t);
    const auto& cfg = f.st.config;
    const std::size_t C = 4, N = 16 * 16;
    auto student = f.st.models.student, teacher = f.st.models.teacher;
    auto adam = f.st.adam;
    const SeededRng rng = SeededRng(cfg.seed, SeededRng::mix(0x57E9, t));

    // Teacher pseudo-label and contextual mask.
    const auto pt = softmax_channelwise(forward(teacher, f.x_t));
    LabelMap y_hat(16, 16);
    for (std::size_t i = 0; i < N; ++i) {
      std::size_t b = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (pt[c * N + i] > pt[b * N + i]) b = c;
      y_hat[i] = static_cast<std::uint8_t>(b);
    }
    SeededRng mask_rng = rng.fork(2);
    const auto mask = oracle::contextual_mask(pt, f.st.prior.q, f.st.meta.groups, mask_rng);
    Tensor<double> x_m = f.x_s;
    LabelMap y_m = f.y_s;
    for (std::size_t i = 0; i < N; ++i)
      if (mask.m[i]) {
        for (std::size_t c = 0; c < 3; ++c) x_m[c * N + i] = f.x_t[c * N + i];
        y_m[i] = y_hat[i];
      }

    // Significance from n noisy teacher passes.
    Tensor<double> mean({C, 16, 16}, 0.0);
    for (std::size_t k = 0; k < cfg.n_copies; ++k) {
      SeededRng r = rng.fork(3).fork(k);
      Tensor<double> noisy = f.x_t;
      for (auto& v : noisy.values()) v += cfg.sigma * r.normal();
      const auto p = softmax_channelwise(forward(teacher, noisy));
      for (std::size_t j = 0; j < p.size(); ++j) mean[j] += p[j];
    }
    std::vector<double> zeta(N, 0.0);
    double k_sup = 0;
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        const double p = mean[c * N + i] / static_cast<double>(cfg.n_copies);
        if (p > 0) zeta[i] -= p * std::log(p);
      }
      k_sup = std::max(k_sup, zeta[i]);
    }
    const double frac = 1.0 - static_cast<double>(t) / static_cast<double>(cfg.iterations);
    const double h = cfg.beta + (1 - cfg.beta) * std::exp(cfg.gamma * frac * frac) * k_sup;
    std::vector<int> u_m(N);
    for (std::size_t i = 0; i < N; ++i) u_m[i] = mask.m[i] ? (zeta[i] < h ? 1 : 0) : 1;

    // Losses and their probability gradients.
    const auto cache_s = forward_cached(student, f.x_s), cache_m = forward_cached(student, x_m);
    const auto ps = softmax_channelwise(cache_s.logits()), pm = softmax_channelwise(cache_m.logits());
    double l_seg = 0, l_con = 0, n_seg = 0, n_con = 0;
    for (std::size_t i = 0; i < N; ++i) {
      l_seg -= std::log(ps[f.y_s[i] * N + i]);
      n_seg += 1;
      if (u_m[i]) {
        l_con -= std::log(pm[y_m[i] * N + i]);
        n_con += 1;
      }
    }
    l_seg /= n_seg;
    l_con = n_con > 0 ? l_con / n_con : 0.0;
    const double x = 1.0 - std::min(static_cast<double>(t) / (0.1 * 100.0), 1.0);
    const double lambda = cfg.lambda_max * std::exp(-5.0 * x * x);
    Tensor<double> gs(ps.shape()), gm(pm.shape());
    for (std::size_t i = 0; i < N; ++i) {
      gs[f.y_s[i] * N + i] = -1.0 / (n_seg * ps[f.y_s[i] * N + i]);
      if (u_m[i]) gm[y_m[i] * N + i] = -lambda / (n_con * pm[y_m[i] * N + i]);
    }
    auto grads = backward(student, cache_s, softmax_backward(ps, gs));
    accumulate(grads, backward(student, cache_m, softmax_backward(pm, gm)));
    AdamConfig ac{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay, cfg.poly_power};
    adam_step(student, grads, adam, ac, cfg.lr * std::pow(frac, cfg.poly_power));
    ema_update(teacher, student, cfg.alpha_ema);

    const auto out = train_step(f.st, f.x_s, f.y_s, f.x_t);
    EXPECT_NEAR(out.losses.l_seg, l_seg, 1e-12);
    EXPECT_NEAR(out.losses.l_con, l_con, 1e-12);
    EXPECT_NEAR(out.losses.lambda_con, lambda, 1e-15);
    EXPECT_NEAR(out.losses.l_total, l_seg + lambda * l_con, 1e-12);
    EXPECT_NEAR(out.threshold->h, h, 1e-12);
    EXPECT_EQ(out.mask.m.cells, mask.m);
    for (std::size_t i = 0; i < N; ++i) ASSERT_EQ(out.u_m.u[i], u_m[i]) << i;
    for (std::size_t li = 0; li < student.layers.size(); ++li)
      for (std::size_t j = 0; j < student.layers[li].kernel.size(); ++j) {
        ASSERT_NEAR(f.st.models.student.layers[li].kernel[j], student.layers[li].kernel[j], 1e-12);
        ASSERT_NEAR(f.st.models.teacher.layers[li].kernel[j], teacher.layers[li].kernel[j], 1e-12);
      }
  }
}

// Tiny on-disk benchmark shared by the loop tests.
class TrainLoop : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("loop");
    build_dataset(SceneSpec::for_domain(Domain::source, 32, 32), 6, dir_->path() / "src", 1);
    build_dataset(SceneSpec::for_domain(Domain::target, 32, 32), 6, dir_->path() / "tgt", 2, true);
    build_dataset(SceneSpec::for_domain(Domain::target, 32, 32), 3, dir_->path() / "tev", 3);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static TrainConfig config(Method m, std::size_t iterations) {
    TrainConfig c;
    c.method = m;
    c.iterations = iterations;
    c.hidden_channels = 6;
    c.n_copies = 2;
    c.eval_every = 5;
    c.source_dir = (dir_->path() / "src").string();
    c.target_dir = (dir_->path() / "tgt").string();
    c.target_eval_dir = (dir_->path() / "tev").string();
    return c;
  }

  static testing::TempDir* dir_;
};
testing::TempDir* TrainLoop::dir_ = nullptr;

TEST_F(TrainLoop, SingleIterationWritesOneRowAndCheckpoints) {
  testing::TempDir out("one");
  const auto r = train(config(Method::camix, 1), out.path());
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].t, 1u);
  ASSERT_TRUE(r.history[0].miou_target.has_value());
  EXPECT_EQ(r.final_miou, *r.history[0].miou_target);
  const auto csv = testing::slurp(r.metrics_csv);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), metrics_header());
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(load_checkpoint<float>(r.final_checkpoint).t, 1u);
  EXPECT_EQ(load_checkpoint<float>(r.best_checkpoint).t, 1u);
}

TEST_F(TrainLoop, EvaluationCadenceAndBestTracking) {
  testing::TempDir out("cad");
  std::vector<std::size_t> seen;
  const auto r = train(config(Method::classmix, 12), out.path(), [&](const MetricsRow& row) { seen.push_back(row.t); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{5, 10, 12}));
  double best = -1;
  for (const auto& row : r.history)
    if (row.miou_target) best = std::max(best, *row.miou_target);
  EXPECT_EQ(r.best_miou, best);
  const auto ck = load_checkpoint<float>(r.best_checkpoint);
  EXPECT_EQ(ck.t, r.best_t);
  EXPECT_NEAR(evaluate(ck.models.teacher, load_dataset(config(Method::classmix, 1).target_eval_dir)).miou, r.best_miou, 1e-12);
}

TEST_F(TrainLoop, SameSeedGivesByteIdenticalMetrics) {
  testing::TempDir a("da"), b("db"), c("dc");
  auto cfg = config(Method::camix, 10);
  const auto ra = train(cfg, a.path());
  const auto rb = train(cfg, b.path());
  EXPECT_EQ(testing::slurp(ra.metrics_csv), testing::slurp(rb.metrics_csv));
  cfg.seed = 1;
  const auto rc = train(cfg, c.path());
  EXPECT_NE(testing::slurp(ra.metrics_csv), testing::slurp(rc.metrics_csv));
}

TEST_F(TrainLoop, SourceOnlyLogsZeroConsistency) {
  testing::TempDir out("so");
  const auto r = train(config(Method::source_only, 6), out.path());
  for (const auto& row : r.history) {
    EXPECT_EQ(row.losses.l_con, 0.0);
    EXPECT_EQ(row.losses.lambda_con, 0.0);
    EXPECT_FALSE(row.h.has_value());
  }
  const auto ck = load_checkpoint<float>(r.final_checkpoint);
  const auto init = init_params<float>(ck.models.teacher.arch, SeededRng(0, 0x1A17));
  EXPECT_NE(params_digest(ck.models.teacher), params_digest(init));
}

TEST_F(TrainLoop, MissingDatasetIsIoError) {
  testing::TempDir out("miss");
  auto cfg = config(Method::camix, 2);
  cfg.target_dir = (out.path() / "nope").string();
  EXPECT_THROW(train(cfg, out.path() / "run"), IoError);
}

}  // namespace
}  // namespace camix
