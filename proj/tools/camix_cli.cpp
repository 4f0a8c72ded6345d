// camix_cli: dataset generation, training, evaluation and mix inspection.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "camix.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError : camix::Error {
  using camix::Error::Error;
};

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  std::size_t h = 0, w = 0;
  char x = 0;
  if (std::sscanf(s.c_str(), "%zu%c%zu", &h, &x, &w) != 3 || (x != 'x' && x != 'X'))
    throw UsageError("--size must look like HxW, got '" + s + "'");
  return {h, w};
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw camix::IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

camix::TrainConfig load_config_or_usage(const std::string& path, const std::vector<std::string>& overrides) {
  try {
    auto cfg = camix::load_config(path);
    for (const auto& o : overrides) camix::apply_override(cfg, o);
    cfg.validate();
    return cfg;
  } catch (const camix::Error& e) {
    throw UsageError(e.what());
  }
}

int run_gen_data(const std::string& out, const std::string& domain, std::size_t count, std::uint64_t seed,
                 const std::string& size, bool unlabeled) {
  const auto [h, w] = parse_size(size);
  auto spec = camix::SceneSpec::for_domain(camix::parse_domain(domain), h, w);
  try {
    spec.validate();
  } catch (const camix::ArgumentError& e) {
    throw UsageError(e.what());
  }
  camix::build_dataset(spec, count, out, seed, unlabeled);
  std::cout << (fs::path(out) / "manifest.json").string() << '\n';
  return 0;
}

int run_train(const std::string& config, const std::vector<std::string>& sets, const std::string& out) {
  const auto cfg = load_config_or_usage(config, sets);
  fs::create_directories(out);
  write_json(fs::path(out) / "config.json", camix::config_to_json(cfg));
  try {
    const auto r = camix::train(cfg, out, [](const camix::MetricsRow& row) {
      std::cerr << "t=" << row.t << " l_total=" << row.losses.l_total << " miou_target=" << *row.miou_target << '\n';
    });
    std::printf("final_miou %.6f\nbest_miou %.6f (t=%zu)\n", r.final_miou, r.best_miou, r.best_t);
  } catch (const camix::NanAbort& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (!e.dump_dir().empty()) std::cerr << "dump: " << e.dump_dir().string() << '\n';
    return kRuntime;
  }
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data, const std::string& out) {
  const auto ck = camix::load_checkpoint<float>(checkpoint);
  const auto ds = camix::load_dataset(data, true);
  const auto report = camix::evaluate(ck.models.teacher, ds);
  write_json(out, camix::report_to_json(report));
  std::printf("miou %.6f\n", report.miou);
  return 0;
}

int run_inspect_mix(const std::string& config, std::uint64_t seed, const std::string& checkpoint,
                    const std::string& out) {
  auto cfg = load_config_or_usage(config, {});
  cfg.seed = seed;
  cfg.method = camix::Method::camix;
  const auto source = camix::load_dataset(cfg.source_dir, true);
  const auto target = camix::load_dataset(cfg.target_dir);
  auto prior = camix::build_spatial_prior(source.labels, cfg.num_classes, cfg.prior_eps);
  auto st = camix::TrainerState<float>::create(cfg, std::move(prior), camix::MetaClassList::scene_default());
  if (!checkpoint.empty()) {
    auto ck = camix::load_checkpoint<float>(checkpoint);
    st.models = ck.models;
    st.t = std::min(ck.t, cfg.iterations);
  }
  camix::SeededRng sample = camix::step_rng(cfg.seed, st.t).fork(1);
  const std::size_t si = sample.below(source.size());
  const std::size_t ti = sample.below(target.size());
  const auto& x_s = source.images[si];
  const auto& x_t = target.images[ti];
  const auto step = camix::compute_step(st, x_s, source.labels[si], x_t);

  const fs::path dir(out);
  fs::create_directories(dir);
  camix::write_ppm(dir / "x_s.ppm", camix::quantize_rgb(x_s));
  camix::write_ppm(dir / "x_t.ppm", camix::quantize_rgb(x_t));
  camix::write_ppm(dir / "x_m.ppm", camix::quantize_rgb(step.x_m));
  camix::write_pgm(dir / "m.pgm", camix::grey_from_binary(step.mask.m));
  camix::write_pgm(dir / "y_m.pgm", step.y_m);
  camix::write_ppm(dir / "y_m.ppm", camix::render_labels(step.y_m, camix::default_palette()));
  camix::write_pgm(dir / "zeta.pgm", camix::grey_from_map(step.zeta, 0.0, std::log(static_cast<double>(cfg.num_classes))));
  camix::write_pgm(dir / "u_t.pgm", camix::grey_from_binary(step.u_t.u));
  camix::write_pgm(dir / "u_m.pgm", camix::grey_from_binary(step.u_m.u));

  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["t"] = st.t;
  j["source_index"] = si;
  j["target_index"] = ti;
  j["present_classes"] = camix::present_classes(camix::spatially_modulated_pseudolabel(
      camix::softmax_channelwise(camix::forward(st.models.teacher, x_t)), st.prior));
  j["selected_classes"] = step.mask.selected_classes;
  j["H"] = step.threshold->h;
  j["K_sup"] = step.threshold->k_sup;
  j["lambda"] = step.losses.lambda_con;
  j["u_m_fraction"] = step.u_fraction;
  write_json(dir / "step.json", j);
  std::cout << (dir / "step.json").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware domain mixup on procedural toy scenes"};
  app.require_subcommand(1);

  std::string out, domain, size = "64x64", config, checkpoint, data;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  bool unlabeled = false;
  std::vector<std::string> sets;

  auto* gen = app.add_subcommand("gen-data", "Generate a procedural dataset (PPM images, PGM labels, manifest.json)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--domain", domain, "Scene domain")->required()->check(CLI::IsMember({"source", "target"}));
  gen->add_option("--count", count, "Number of scenes")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Dataset seed")->required();
  gen->add_option("--size", size, "Scene size HxW (each side >= 32)")->capture_default_str();
  gen->add_flag("--unlabeled", unlabeled, "Omit label files");

  auto* tr = app.add_subcommand("train", "Train a student/teacher pair and write metrics and checkpoints");
  tr->add_option("--config", config, "JSON training config")->required();
  tr->add_option("--set", sets, "Override a config key: key=value (repeatable)");
  tr->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint's teacher on a labeled dataset");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  ev->add_option("--data", data, "Labeled dataset directory")->required();
  ev->add_option("--out", out, "Report JSON path")->required();

  auto* insp = app.add_subcommand("inspect-mix", "Run one camix step without optimization and render every stage");
  insp->add_option("--config", config, "JSON training config (dataset paths)")->required();
  insp->add_option("--seed", seed, "Seed for initialization and sampling")->required();
  insp->add_option("--checkpoint", checkpoint, "Use this checkpoint's teacher instead of a fresh one");
  insp->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (gen->parsed()) return run_gen_data(out, domain, count, seed, size, unlabeled);
    if (tr->parsed()) return run_train(config, sets, out);
    if (ev->parsed()) return run_eval(checkpoint, data, out);
    if (insp->parsed()) return run_inspect_mix(config, seed, checkpoint, out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
