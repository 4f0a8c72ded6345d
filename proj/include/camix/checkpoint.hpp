#pragma once

// Checkpoint directory: one CAMX file per parameter tensor plus checkpoint.json.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camix/camx_io.hpp"
#include "camix/errors.hpp"
#include "camix/segmenter.hpp"

namespace camix {

template <typename T>
struct Checkpoint {
  StudentTeacher<T> models;
  AdamState<T> adam;
  std::size_t t = 0;
};

namespace detail {

template <typename T>
nlohmann::ordered_json save_param_set(const std::filesystem::path& dir, const std::string& prefix,
                                      const SegmenterParams<T>& p) {
  auto files = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    char kname[64], bname[64];
    std::snprintf(kname, sizeof kname, "%s_%02zu_kernel.camx", prefix.c_str(), i);
    std::snprintf(bname, sizeof bname, "%s_%02zu_bias.camx", prefix.c_str(), i);
    write_camx(dir / kname, p.layers[i].kernel);
    write_camx(dir / bname, p.layers[i].bias);
    files.push_back(kname);
    files.push_back(bname);
  }
  return files;
}

template <typename T>
SegmenterParams<T> load_param_set(const std::filesystem::path& dir, const Architecture& arch,
                                  const nlohmann::json& files) {
  auto p = SegmenterParams<T>::zeros(arch);
  if (files.size() != 2 * arch.layers.size()) throw DataError("checkpoint: file list does not match architecture");
  std::size_t f = 0;
  p.for_each_tensor([&](Tensor<T>& t) {
    auto loaded = read_camx<T>(dir / files.at(f++).get<std::string>());
    require_same_shape(loaded.shape(), t.shape(), "checkpoint tensor");
    loaded.require_finite("checkpoint tensor");
    t = std::move(loaded);
  });
  return p;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint<T>& ck) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  nlohmann::ordered_json j;
  j["arch"] = ck.models.student.arch.describe();
  j["alpha"] = ck.models.alpha;
  j["t"] = ck.t;
  j["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  j["student"] = detail::save_param_set(dir, "student", ck.models.student);
  j["teacher"] = detail::save_param_set(dir, "teacher", ck.models.teacher);
  j["optimizer"] = {{"steps", ck.adam.steps},
                    {"m", detail::save_param_set(dir, "adam_m", ck.adam.m)},
                    {"v", detail::save_param_set(dir, "adam_v", ck.adam.v)}};
  std::ofstream f(dir / "checkpoint.json", std::ios::trunc);
  if (!f) throw IoError("cannot write " + (dir / "checkpoint.json").string());
  f << j.dump(2) << '\n';
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "checkpoint.json");
  if (!f) throw IoError("cannot open " + (dir / "checkpoint.json").string());
  try {
    const auto j = nlohmann::json::parse(f);
    const auto arch = Architecture::parse(j.at("arch").get<std::string>());
    Checkpoint<T> ck;
    ck.models.alpha = j.at("alpha").get<double>();
    ck.t = j.at("t").get<std::size_t>();
    ck.models.student = detail::load_param_set<T>(dir, arch, j.at("student"));
    ck.models.teacher = detail::load_param_set<T>(dir, arch, j.at("teacher"));
    const auto& opt = j.at("optimizer");
    ck.adam.steps = opt.at("steps").get<std::uint64_t>();
    ck.adam.m = detail::load_param_set<T>(dir, arch, opt.at("m"));
    ck.adam.v = detail::load_param_set<T>(dir, arch, opt.at("v"));
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "checkpoint.json").string() + ": " + e.what());
  }
}

}  // namespace camix
