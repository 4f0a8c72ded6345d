#pragma once

// One CAMix iteration and the outer training loop.
//
// Per step (camix): clean teacher pass on X_T -> Y_T_hat; contextual mask M from
// the prior-modulated teacher output; X_M; student passes on X_S and X_M; Y_M;
// U_T from noisy teacher passes; U_M; L_total; Adam on the student; EMA teacher.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "camix/checkpoint.hpp"
#include "camix/config.hpp"
#include "camix/context_mask.hpp"
#include "camix/dataset.hpp"
#include "camix/evaluation.hpp"
#include "camix/kernels.hpp"
#include "camix/losses.hpp"
#include "camix/mixup.hpp"
#include "camix/rng.hpp"
#include "camix/scene.hpp"
#include "camix/segmenter.hpp"
#include "camix/significance.hpp"
#include "camix/spatial_prior.hpp"

namespace camix {

// Raised when a step produces a non-finite loss; the offending batch has been dumped.
class NanAbort : public DataError {
 public:
  NanAbort(const std::string& what, std::filesystem::path dump_dir) : DataError(what), dump_dir_(std::move(dump_dir)) {}
  const std::filesystem::path& dump_dir() const noexcept { return dump_dir_; }

 private:
  std::filesystem::path dump_dir_;
};

// Receives the name of each stage as it executes, in order.
using StepTrace = std::function<void(std::string_view)>;

template <typename T>
struct TrainerState {
  TrainConfig config;
  StudentTeacher<T> models;
  AdamState<T> adam;
  SpatialPrior prior;
  MetaClassList meta = MetaClassList::scene_default();
  std::size_t t = 0;
  StepTrace trace;

  static TrainerState create(const TrainConfig& cfg, SpatialPrior prior, const MetaClassList& meta) {
    cfg.validate();
    const auto arch = Architecture::standard(cfg.num_classes, 3, cfg.hidden_channels);
    auto init = init_params<T>(arch, SeededRng(cfg.seed, 0x1A17));
    TrainerState s;
    s.config = cfg;
    s.models = StudentTeacher<T>::from_init(init, cfg.alpha_ema);
    s.adam = AdamState<T>::for_params(init);
    s.prior = std::move(prior);
    s.meta = meta;
    return s;
  }

  void emit(std::string_view stage) const {
    if (trace) trace(stage);
  }
};

// Stream layout for step t: fork(1) batch sampling, fork(2) mask selection, fork(3) teacher noise.
inline SeededRng step_rng(std::uint64_t seed, std::size_t t) { return SeededRng(seed, SeededRng::mix(0x57E9, t)); }

// Everything one iteration computes before touching any parameter.
template <typename T>
struct StepOutputs {
  LossBreakdown losses;
  SegmenterGrads<T> grads;
  LabelMap pseudo_label;               // Y_T_hat, clean teacher argmax
  ContextualMask mask;
  Tensor<T> x_m;
  LabelMap y_m;
  Tensor<T> zeta;                      // predictive entropy of the teacher on X_T
  std::optional<Threshold> threshold;
  SignificanceMask u_t;
  SignificanceMask u_m;
  double u_fraction = 1.0;             // share of ones in U_M
};

template <typename T>
StepOutputs<T> compute_step(const TrainerState<T>& st, const Tensor<T>& x_s, const LabelMap& y_s,
                            const Tensor<T>& x_t) {
  const auto& cfg = st.config;
  require_same_shape(x_s.shape(), x_t.shape(), "train_step: source/target image");
  if (!y_s.same_size(x_s.dim(1), x_s.dim(2))) throw ShapeError("train_step: source label size mismatch");
  const SeededRng rng = step_rng(cfg.seed, st.t);
  const auto& student = st.models.student;
  const auto& teacher = st.models.teacher;

  StepOutputs<T> out;
  const bool mixing = cfg.method != Method::source_only;

  std::optional<Tensor<T>> teacher_probs;
  if (mixing) {
    st.emit("teacher_pass");
    teacher_probs = softmax_channelwise(forward(teacher, x_t));
    out.pseudo_label = argmax_channels(*teacher_probs);

    SeededRng mask_rng = rng.fork(2);
    if (cfg.method == Method::camix) {
      st.emit("mask:contextual");
      out.mask = generate_contextual_mask(*teacher_probs, st.prior, st.meta, mask_rng);
    } else {
      st.emit("mask:classmix");
      out.mask = generate_classmix_mask(out.pseudo_label, mask_rng);
    }
    st.emit("mix_images");
    out.x_m = mix_images(x_s, x_t, out.mask);
  }

  st.emit("student_source");
  const auto cache_s = forward_cached(student, x_s);
  const auto probs_s = softmax_channelwise(cache_s.logits());

  std::optional<ForwardCache<T>> cache_m;
  std::optional<Tensor<T>> probs_m;
  if (mixing) {
    st.emit("student_mixed");
    cache_m = forward_cached(student, out.x_m);
    probs_m = softmax_channelwise(cache_m->logits());
    st.emit("mix_labels");
    out.y_m = mix_labels(y_s, out.pseudo_label, out.mask);

    if (cfg.method == Method::camix) {
      st.emit("significance:entropy");
      const auto p_hat = stochastic_mean_probs(teacher, x_t, cfg.n_copies, cfg.sigma, rng.fork(3));
      out.zeta = predictive_entropy(p_hat);
      out.threshold = dynamic_threshold(out.zeta, {cfg.beta, cfg.gamma, st.t, cfg.iterations});
      out.u_t = significance_mask(out.zeta, out.threshold->h);
    } else {
      st.emit("significance:uniform");
      out.u_t = {BinaryGrid(y_s.height, y_s.width, 1)};
    }
    st.emit("mix_significance");
    out.u_m = mix_significance(out.u_t, out.mask);
    if (cfg.force_full_significance) out.u_m.u = BinaryGrid(y_s.height, y_s.width, 1);
    std::size_t ones = 0;
    for (auto v : out.u_m.u.cells) ones += v;
    out.u_fraction = static_cast<double>(ones) / static_cast<double>(out.u_m.u.size());
  }

  st.emit("loss");
  const auto seg = seg_loss(probs_s, y_s);
  out.losses.l_seg = static_cast<double>(seg.value);
  std::optional<LossValue<T>> con;
  if (mixing) {
    switch (cfg.consistency_loss) {
      case ConsistencyLoss::src: con = src_loss(*probs_m, out.y_m, out.u_m); break;
      case ConsistencyLoss::ce: con = weighted_cross_entropy(*probs_m, out.y_m, nullptr); break;
      case ConsistencyLoss::mse: con = mse_consistency(*probs_m, out.y_m); break;
    }
    out.losses.lambda_con = consistency_weight(static_cast<double>(st.t), {cfg.lambda_max, cfg.t_ramp()});
    out.losses.l_con = static_cast<double>(con->value);
    out.losses.valid_pixel_fraction = con->weight_sum / static_cast<double>(y_s.size());
  }
  out.losses.l_total = static_cast<double>(
      total_loss(seg.value, static_cast<T>(out.losses.l_con), static_cast<T>(out.losses.lambda_con)));

  st.emit("backward");
  out.grads = backward(student, cache_s, softmax_backward(probs_s, seg.grad_probs));
  if (mixing) {
    auto g = con->grad_probs;
    const T lam = static_cast<T>(out.losses.lambda_con);
    for (auto& v : g.values()) v *= lam;
    accumulate(out.grads, backward(student, *cache_m, softmax_backward(*probs_m, g)));
  }
  return out;
}

// Loss of compute_step as a function of the student alone (teacher, masks and rng fixed).
template <typename T>
double step_total_loss(const TrainerState<T>& st, const Tensor<T>& x_s, const LabelMap& y_s, const Tensor<T>& x_t) {
  return compute_step(st, x_s, y_s, x_t).losses.l_total;
}

namespace detail {

template <typename T>
std::filesystem::path dump_batch(const std::filesystem::path& dir, std::size_t t, const Tensor<T>& x_s,
                                 const LabelMap& y_s, const Tensor<T>& x_t) {
  const auto d = dir / ("nan_dump_step_" + std::to_string(t));
  std::filesystem::create_directories(d);
  write_camx(d / "x_s.camx", x_s);
  write_camx(d / "x_t.camx", x_t);
  Tensor<float> ys({y_s.height, y_s.width});
  for (std::size_t i = 0; i < y_s.size(); ++i) ys[i] = y_s[i];
  write_camx(d / "y_s.camx", ys);
  return d;
}

}  // namespace detail

// compute_step, then one Adam step on the student, then the EMA teacher update.
template <typename T>
StepOutputs<T> train_step(TrainerState<T>& st, const Tensor<T>& x_s, const LabelMap& y_s, const Tensor<T>& x_t,
                          const std::filesystem::path& dump_dir = {}) {
  auto out = compute_step(st, x_s, y_s, x_t);
  if (!std::isfinite(out.losses.l_total)) {
    std::filesystem::path where;
    if (!dump_dir.empty()) where = detail::dump_batch(dump_dir, st.t, x_s, y_s, x_t);
    throw NanAbort("non-finite loss at step " + std::to_string(st.t) +
                       (where.empty() ? std::string() : "; batch dumped to " + where.string()),
                   where);
  }
  st.emit("optimizer");
  AdamConfig adam{st.config.lr, 0.9, 0.999, 1e-8, st.config.weight_decay, st.config.poly_power};
  adam_step(st.models.student, out.grads, st.adam, adam, poly_lr(adam.lr, st.t, st.config.iterations, adam.poly_power));
  st.emit("ema");
  st.models.ema_step();
  ++st.t;
  return out;
}

struct MetricsRow {
  std::size_t t = 0;  // iterations completed
  LossBreakdown losses;
  std::optional<double> h;
  double u_fraction = 1.0;
  std::optional<double> miou_target;
  std::optional<double> miou_source;
};

inline std::string metrics_header() { return "t,l_seg,l_con,lambda,l_total,H,sum_u_fraction,miou_target,miou_source"; }

inline std::string format_metrics_row(const MetricsRow& r) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  return std::to_string(r.t) + "," + num(r.losses.l_seg) + "," + num(r.losses.l_con) + "," + num(r.losses.lambda_con) +
         "," + num(r.losses.l_total) + "," + opt(r.h) + "," + num(r.u_fraction) + "," + opt(r.miou_target) + "," +
         opt(r.miou_source);
}

struct TrainResult {
  std::vector<MetricsRow> history;
  double final_miou = 0.0;
  double best_miou = -1.0;
  std::size_t best_t = 0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path metrics_csv;
};

// Runs config.iterations steps with float parameters. Evaluates the teacher every
// eval_every steps and after the last one; writes metrics.csv, checkpoints and the
// spatial prior into out_dir.
inline TrainResult train(const TrainConfig& cfg, const std::filesystem::path& out_dir,
                         const std::function<void(const MetricsRow&)>& on_eval = {}) {
  cfg.validate();
  const Dataset source = load_dataset(cfg.source_dir, true);
  const Dataset target = cfg.method == Method::source_only && cfg.target_dir.empty() ? Dataset{} : load_dataset(cfg.target_dir);
  const Dataset target_eval = load_dataset(cfg.target_eval_dir, true);
  const std::optional<Dataset> source_eval =
      cfg.source_eval_dir.empty() ? std::nullopt : std::optional<Dataset>(load_dataset(cfg.source_eval_dir, true));
  if (cfg.method != Method::source_only && target.size() == 0) throw ArgumentError("train: target dataset is empty");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  auto prior = build_spatial_prior(source.labels, cfg.num_classes, cfg.prior_eps);
  save_spatial_prior(out_dir, prior);
  auto st = TrainerState<float>::create(cfg, std::move(prior), MetaClassList::scene_default());

  TrainResult result;
  result.metrics_csv = out_dir / "metrics.csv";
  result.final_checkpoint = out_dir / "checkpoint_final";
  result.best_checkpoint = out_dir / "checkpoint_best";
  std::ofstream csv(result.metrics_csv, std::ios::trunc);
  if (!csv) throw IoError("cannot write " + result.metrics_csv.string());
  csv << metrics_header() << '\n';

  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    SeededRng sample = step_rng(cfg.seed, st.t).fork(1);
    const std::size_t si = sample.below(source.size());
    const std::size_t ti = target.size() ? sample.below(target.size()) : 0;
    const auto& x_t = target.size() ? target.images[ti] : source.images[si];
    const auto out = train_step(st, source.images[si], source.labels[si], x_t, out_dir);

    MetricsRow row{st.t, out.losses, out.threshold ? std::optional<double>(out.threshold->h) : std::nullopt,
                   out.u_fraction, std::nullopt, std::nullopt};
    if (st.t % cfg.eval_every == 0 || st.t == cfg.iterations) {
      row.miou_target = evaluate(st.models.teacher, target_eval).miou;
      if (source_eval) row.miou_source = evaluate(st.models.teacher, *source_eval).miou;
      if (*row.miou_target > result.best_miou) {
        result.best_miou = *row.miou_target;
        result.best_t = st.t;
        save_checkpoint(result.best_checkpoint, Checkpoint<float>{st.models, st.adam, st.t});
      }
      result.final_miou = *row.miou_target;
      if (on_eval) on_eval(row);
    }
    csv << format_metrics_row(row) << '\n';
    result.history.push_back(row);
  }
  if (!csv) throw IoError("write failed for " + result.metrics_csv.string());
  save_checkpoint(result.final_checkpoint, Checkpoint<float>{st.models, st.adam, st.t});
  return result;
}

}  // namespace camix
