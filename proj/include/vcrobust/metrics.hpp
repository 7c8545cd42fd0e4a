#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vcrobust/errors.hpp"
#include "vcrobust/image.hpp"

namespace vcrobust {

struct JudgedAnswer {
  std::string sample_id;
  std::string prediction;
  std::string ground_truth;
  bool correct = false;
};

/// Fraction of answers judged correct.
inline double accuracy(std::span<const JudgedAnswer> answers) {
  if (answers.empty()) throw EmptySetError("accuracy of an empty answer set");
  std::size_t hits = 0;
  for (const auto& a : answers) hits += a.correct ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(answers.size());
}

/// Performance drop rate (acc_clean - acc_perturbed) / acc_clean. Negative
/// when the perturbation improved accuracy.
inline double pdr(double acc_clean, double acc_perturbed) {
  if (!(acc_clean > 0.0)) throw UndefinedPdrError("PDR undefined for clean accuracy <= 0");
  return (acc_clean - acc_perturbed) / acc_clean;
}

/// Intersection over union. The overlap runs from the max of the top-left
/// corners to the min of the bottom-right corners.
inline double iou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) throw ValidationError("iou: box has x1 > x2 or y1 > y2");
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double inter = std::max(0.0, ix2 - ix1) * std::max(0.0, iy2 - iy1);
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) throw DegenerateBoxError("iou: union of the boxes has zero area");
  return inter / uni;
}

struct AttentionMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> scores;  ///< row-major rows x cols
};

/// Shannon entropy (nats) of the map normalized to a distribution;
/// 0 * ln 0 is taken as 0.
inline double attention_entropy(const AttentionMap& map) {
  if (map.scores.empty()) throw EmptySetError("attention map is empty");
  double mass = 0.0;
  for (double s : map.scores) {
    if (!(s >= 0.0)) throw DomainError("attention scores must be nonnegative");
    mass += s;
  }
  if (!(mass > 0.0)) throw DomainError("attention map has zero mass");
  double h = 0.0;
  for (double s : map.scores) {
    if (s == 0.0) continue;
    const double p = s / mass;
    h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

/// mean(clean) - mean(perturbed).
inline double iou_degradation(std::span<const double> clean_ious,
                              std::span<const double> perturbed_ious) {
  if (clean_ious.empty() || perturbed_ious.empty()) {
    throw EmptySetError("iou_degradation needs nonempty inputs");
  }
  auto mean = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  return mean(clean_ious) - mean(perturbed_ious);
}

}  // namespace vcrobust
