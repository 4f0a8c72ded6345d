#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "camix/dataset.hpp"
#include "camix/errors.hpp"
#include "camix/grid.hpp"
#include "camix/kernels.hpp"
#include "camix/segmenter.hpp"

namespace camix {

struct EvalReport {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> confusion;             // row = ground truth, column = prediction
  std::vector<std::optional<double>> per_class_iou; // nullopt when the class has an empty union
  double miou = 0.0;

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return confusion[truth * num_classes + pred]; }
};

// IoU_c = TP / (TP + FP + FN); mean over classes with a nonzero union.
inline EvalReport report_from_confusion(std::size_t num_classes, std::vector<std::uint64_t> confusion) {
  if (confusion.size() != num_classes * num_classes) throw ShapeError("confusion matrix has wrong size");
  EvalReport r{num_classes, std::move(confusion), {}, 0.0};
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::uint64_t tp = r.at(c, c), fp = 0, fn = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      if (k == c) continue;
      fp += r.at(k, c);
      fn += r.at(c, k);
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) {
      r.per_class_iou.push_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class_iou.push_back(iou);
    sum += iou;
    ++counted;
  }
  r.miou = counted ? sum / static_cast<double>(counted) : 0.0;
  return r;
}

inline void add_to_confusion(std::vector<std::uint64_t>& confusion, std::size_t num_classes, const LabelMap& truth,
                             const LabelMap& pred) {
  require_same_grid(truth, pred, "confusion");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kIgnoreId) continue;
    if (truth[i] >= num_classes || pred[i] >= num_classes) throw DataError("confusion: class id out of range");
    ++confusion[truth[i] * num_classes + pred[i]];
  }
}

inline EvalReport evaluate_predictions(std::size_t num_classes, const std::vector<LabelMap>& truth,
                                       const std::vector<LabelMap>& pred) {
  if (truth.empty()) throw ArgumentError("evaluate: empty dataset");
  if (truth.size() != pred.size()) throw ShapeError("evaluate: prediction count mismatch");
  std::vector<std::uint64_t> confusion(num_classes * num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) add_to_confusion(confusion, num_classes, truth[i], pred[i]);
  return report_from_confusion(num_classes, std::move(confusion));
}

template <typename T>
EvalReport evaluate(const SegmenterParams<T>& params, const Dataset& data) {
  if (data.size() == 0) throw ArgumentError("evaluate: empty dataset");
  if (!data.labeled()) throw ArgumentError("evaluate: dataset has no labels");
  const std::size_t C = params.num_classes();
  std::vector<std::uint64_t> confusion(C * C, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto pred = argmax_channels(forward(params, tensor_cast<T>(data.images[i])));
    add_to_confusion(confusion, C, data.labels[i], pred);
  }
  return report_from_confusion(C, std::move(confusion));
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["miou"] = r.miou;
  auto per = nlohmann::ordered_json::array();
  for (const auto& v : r.per_class_iou) per.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr));
  j["per_class_iou"] = per;
  auto conf = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < r.num_classes; ++t) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t p = 0; p < r.num_classes; ++p) row.push_back(r.at(t, p));
    conf.push_back(row);
  }
  j["confusion"] = conf;
  return j;
}

}  // namespace camix
