#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "camix/errors.hpp"

namespace camix {

enum class Method { source_only, classmix, camix };
enum class ConsistencyLoss { src, ce, mse };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::source_only: return "source_only";
    case Method::classmix: return "classmix";
    case Method::camix: return "camix";
  }
  return "?";
}

inline const char* consistency_name(ConsistencyLoss l) {
  switch (l) {
    case ConsistencyLoss::src: return "src";
    case ConsistencyLoss::ce: return "ce";
    case ConsistencyLoss::mse: return "mse";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "source_only") return Method::source_only;
  if (s == "classmix") return Method::classmix;
  if (s == "camix") return Method::camix;
  throw ArgumentError("unknown method '" + s + "' (source_only, classmix, camix)");
}

inline ConsistencyLoss parse_consistency(const std::string& s) {
  if (s == "src") return ConsistencyLoss::src;
  if (s == "ce") return ConsistencyLoss::ce;
  if (s == "mse") return ConsistencyLoss::mse;
  throw ArgumentError("unknown consistency_loss '" + s + "' (src, ce, mse)");
}

struct TrainConfig {
  Method method = Method::camix;
  ConsistencyLoss consistency_loss = ConsistencyLoss::src;
  std::size_t num_classes = 8;
  std::size_t iterations = 3000;  // t_max
  std::uint64_t seed = 0;
  std::size_t n_copies = 8;
  double sigma = 0.1;
  double beta = 0.75;
  double gamma = -5.0;
  double alpha_ema = 0.99;
  double lr = 2.5e-4;
  double weight_decay = 5e-5;
  double poly_power = 0.9;
  double lambda_max = 1.0;
  double ramp_fraction = 0.1;  // t_ramp = ramp_fraction * iterations
  double prior_eps = 1.0;
  std::size_t hidden_channels = 16;
  bool force_full_significance = false;  // U_M := 1 everywhere (ablation switch)
  std::string source_dir;
  std::string target_dir;
  std::string target_eval_dir;
  std::string source_eval_dir;  // optional
  std::size_t eval_every = 100;

  double t_ramp() const { return ramp_fraction * static_cast<double>(iterations); }

  void validate() const {
    if (num_classes < 2 || num_classes > 254) throw ArgumentError("config: num_classes must be in [2, 254]");
    if (iterations == 0) throw ArgumentError("config: iterations must be >= 1");
    if (n_copies == 0) throw ArgumentError("config: n_copies must be >= 1");
    if (!(sigma >= 0.0)) throw ArgumentError("config: sigma must be >= 0");
    if (!(beta > 0.0 && beta <= 1.0)) throw ArgumentError("config: beta must be in (0, 1]");
    if (!(alpha_ema >= 0.0 && alpha_ema <= 1.0)) throw ArgumentError("config: alpha_ema must be in [0, 1]");
    if (!(lr > 0.0)) throw ArgumentError("config: lr must be positive");
    if (!(weight_decay >= 0.0)) throw ArgumentError("config: weight_decay must be >= 0");
    if (!(lambda_max >= 0.0)) throw ArgumentError("config: lambda_max must be >= 0");
    if (!(ramp_fraction > 0.0)) throw ArgumentError("config: ramp_fraction must be positive");
    if (!(prior_eps >= 0.0)) throw ArgumentError("config: prior_eps must be >= 0");
    if (hidden_channels == 0) throw ArgumentError("config: hidden_channels must be >= 1");
    if (eval_every == 0) throw ArgumentError("config: eval_every must be >= 1");
  }
};

inline nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["method"] = method_name(c.method);
  j["consistency_loss"] = consistency_name(c.consistency_loss);
  j["num_classes"] = c.num_classes;
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["n_copies"] = c.n_copies;
  j["sigma"] = c.sigma;
  j["beta"] = c.beta;
  j["gamma"] = c.gamma;
  j["alpha_ema"] = c.alpha_ema;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["poly_power"] = c.poly_power;
  j["lambda_max"] = c.lambda_max;
  j["ramp_fraction"] = c.ramp_fraction;
  j["prior_eps"] = c.prior_eps;
  j["hidden_channels"] = c.hidden_channels;
  j["force_full_significance"] = c.force_full_significance;
  j["source_dir"] = c.source_dir;
  j["target_dir"] = c.target_dir;
  j["target_eval_dir"] = c.target_eval_dir;
  j["source_eval_dir"] = c.source_eval_dir;
  j["eval_every"] = c.eval_every;
  return j;
}

// Sets one field from a JSON value; unknown keys are rejected.
inline void apply_config_value(TrainConfig& c, const std::string& key, const nlohmann::json& v) {
  try {
    if (key == "method") c.method = parse_method(v.get<std::string>());
    else if (key == "consistency_loss") c.consistency_loss = parse_consistency(v.get<std::string>());
    else if (key == "num_classes") c.num_classes = v.get<std::size_t>();
    else if (key == "iterations") c.iterations = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "n_copies") c.n_copies = v.get<std::size_t>();
    else if (key == "sigma") c.sigma = v.get<double>();
    else if (key == "beta") c.beta = v.get<double>();
    else if (key == "gamma") c.gamma = v.get<double>();
    else if (key == "alpha_ema") c.alpha_ema = v.get<double>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "poly_power") c.poly_power = v.get<double>();
    else if (key == "lambda_max") c.lambda_max = v.get<double>();
    else if (key == "ramp_fraction") c.ramp_fraction = v.get<double>();
    else if (key == "prior_eps") c.prior_eps = v.get<double>();
    else if (key == "hidden_channels") c.hidden_channels = v.get<std::size_t>();
    else if (key == "force_full_significance") c.force_full_significance = v.get<bool>();
    else if (key == "source_dir") c.source_dir = v.get<std::string>();
    else if (key == "target_dir") c.target_dir = v.get<std::string>();
    else if (key == "target_eval_dir") c.target_eval_dir = v.get<std::string>();
    else if (key == "source_eval_dir") c.source_eval_dir = v.get<std::string>();
    else if (key == "eval_every") c.eval_every = v.get<std::size_t>();
    else throw ArgumentError("config: unknown key '" + key + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError("config: bad value for '" + key + "': " + e.what());
  }
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ArgumentError("config: top level must be an object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) apply_config_value(c, key, value);
  c.validate();
  return c;
}

// Relative dataset paths in a config file resolve against the file's directory.
inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError("config " + path.string() + ": " + e.what());
  }
  auto c = config_from_json(j);
  const auto base = path.parent_path();
  for (auto* p : {&c.source_dir, &c.target_dir, &c.target_eval_dir, &c.source_eval_dir})
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  return c;
}

// "key=value"; the value is parsed as JSON when possible, otherwise taken as a string.
inline void apply_override(TrainConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ArgumentError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    v = raw;
  }
  apply_config_value(c, key, v);
}

}  // namespace camix
