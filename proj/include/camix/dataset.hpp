#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camix/errors.hpp"
#include "camix/grid.hpp"
#include "camix/netpbm.hpp"
#include "camix/rng.hpp"
#include "camix/scene.hpp"
#include "camix/tensor.hpp"

namespace camix {

inline constexpr int kManifestVersion = 1;

struct DatasetManifest {
  SceneSpec spec;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  bool labeled = true;
  std::vector<std::string> images;
  std::vector<std::string> labels;
};

struct Dataset {
  std::vector<Tensor<float>> images;
  std::vector<LabelMap> labels;  // empty for unlabeled data

  std::size_t size() const { return images.size(); }
  bool labeled() const { return !labels.empty(); }
};

// Scene i of a dataset draws from its own stream so datasets can be generated in any order.
inline SeededRng scene_rng(std::uint64_t seed, std::size_t index) {
  return SeededRng(seed, SeededRng::mix(0x5CE7E, index));
}

inline std::string indexed_name(const char* prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu.%s", prefix, i, ext);
  return buf;
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["version"] = kManifestVersion;
  j["domain"] = domain_name(m.spec.domain);
  j["num_classes"] = m.spec.num_classes;
  j["count"] = m.count;
  j["seed"] = m.seed;
  j["shift"] = {{"brightness_delta", m.spec.shift.brightness_delta},
                {"hue_rotation", m.spec.shift.hue_rotation},
                {"texture_noise_sigma", m.spec.shift.texture_noise_sigma}};
  j["height"] = m.spec.height;
  j["width"] = m.spec.width;
  j["labeled"] = m.labeled;
  j["instance_jitter"] = m.spec.instance_jitter;
  j["base_texture_sigma"] = m.spec.base_texture_sigma;
  auto pal = nlohmann::ordered_json::array();
  for (const auto& c : m.spec.palette) pal.push_back({c.r, c.g, c.b});
  j["palette"] = pal;
  j["images"] = m.images;
  j["labels"] = m.labels;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kManifestVersion) throw DataError("manifest: unsupported version");
    DatasetManifest m;
    m.spec.domain = parse_domain(j.at("domain").get<std::string>());
    m.spec.num_classes = j.at("num_classes").get<std::size_t>();
    m.count = j.at("count").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& s = j.at("shift");
    m.spec.shift = {s.at("brightness_delta").get<double>(), s.at("hue_rotation").get<double>(),
                    s.at("texture_noise_sigma").get<double>()};
    m.spec.height = j.at("height").get<std::size_t>();
    m.spec.width = j.at("width").get<std::size_t>();
    m.labeled = j.at("labeled").get<bool>();
    m.spec.instance_jitter = j.value("instance_jitter", m.spec.instance_jitter);
    m.spec.base_texture_sigma = j.value("base_texture_sigma", m.spec.base_texture_sigma);
    if (j.contains("palette")) {
      m.spec.palette.clear();
      for (const auto& c : j.at("palette")) m.spec.palette.push_back({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()});
    }
    m.images = j.at("images").get<std::vector<std::string>>();
    m.labels = j.at("labels").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

inline Dataset generate_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ArgumentError("dataset count must be >= 1");
  Dataset ds;
  for (std::size_t i = 0; i < count; ++i) {
    auto scene = generate_scene(spec, scene_rng(seed, i));
    ds.images.push_back(std::move(scene.image));
    ds.labels.push_back(std::move(scene.labels));
  }
  return ds;
}

// Writes img_%05d.ppm (+ lbl_%05d.pgm when labeled) and manifest.json into out_dir.
inline DatasetManifest build_dataset(const SceneSpec& spec, std::size_t count,
                                     const std::filesystem::path& out_dir, std::uint64_t seed,
                                     bool unlabeled = false) {
  if (count == 0) throw ArgumentError("dataset count must be >= 1");
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());

  DatasetManifest m{spec, count, seed, !unlabeled, {}, {}};
  for (std::size_t i = 0; i < count; ++i) {
    const auto scene = generate_scene(spec, scene_rng(seed, i));
    m.images.push_back(indexed_name("img", i, "ppm"));
    write_ppm(out_dir / m.images.back(), quantize_rgb(scene.image));
    if (!unlabeled) {
      m.labels.push_back(indexed_name("lbl", i, "pgm"));
      write_pgm(out_dir / m.labels.back(), scene.labels);
    }
  }
  std::ofstream f(out_dir / "manifest.json", std::ios::trunc);
  if (!f) throw IoError("cannot write " + (out_dir / "manifest.json").string());
  f << manifest_to_json(m).dump(2) << '\n';
  if (!f) throw IoError("write failed for " + (out_dir / "manifest.json").string());
  return m;
}

inline DatasetManifest regenerate_dataset(const std::filesystem::path& from_dir,
                                          const std::filesystem::path& out_dir) {
  const auto m = read_manifest(from_dir);
  return build_dataset(m.spec, m.count, out_dir, m.seed, !m.labeled);
}

// Loads images as float in [0, 1]. Labels are checked against num_classes.
inline Dataset load_dataset(const std::filesystem::path& dir, bool require_labels = false) {
  const auto m = read_manifest(dir);
  if (require_labels && !m.labeled) throw DataError(dir.string() + ": dataset has no labels");
  Dataset ds;
  for (const auto& name : m.images) ds.images.push_back(dequantize_rgb<float>(read_ppm(dir / name)));
  for (const auto& name : m.labels) {
    auto lab = read_pgm(dir / name);
    require_labels_below(lab, m.spec.num_classes, name.c_str());
    ds.labels.push_back(std::move(lab));
  }
  if (ds.labeled() && ds.labels.size() != ds.images.size())
    throw DataError(dir.string() + ": image/label count mismatch");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.images[i].dim(1) != m.spec.height || ds.images[i].dim(2) != m.spec.width)
      throw ShapeError(dir.string() + ": image " + m.images[i] + " has unexpected size");
    if (ds.labeled() && !ds.labels[i].same_size(m.spec.height, m.spec.width))
      throw ShapeError(dir.string() + ": label " + m.labels[i] + " has unexpected size");
  }
  return ds;
}

}  // namespace camix
