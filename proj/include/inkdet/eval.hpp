/* Copyright (c) 2026 The inkdet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "inkdet/boxes.hpp"
#include "inkdet/detector.hpp"
#include "inkdet/error.hpp"
#include "inkdet/ink_data.hpp"
#include "inkdet/rasterizer.hpp"

namespace inkdet {

enum class ApInterpolation { kAllPoints, kElevenPoint };

/// PASCAL-style greedy matching within one image: per class, detections
/// in descending score order grab the unmatched truth box with the
/// highest IoU when it reaches the threshold. Returns one TP flag per
/// detection (input order).
inline std::vector<char> match_detections(const std::vector<Detection>& dets,
                                          const std::vector<TruthBox>& truth,
                                          double iou_threshold) {
  std::vector<char> tp(dets.size(), 0);
  std::vector<char> used(truth.size(), 0);

  std::vector<int> order(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score;
  });

  for (int di : order) {
    double best = 0.0;
    int best_t = -1;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (used[t] || truth[t].class_index != dets[di].class_index) continue;
      const double v = iou(dets[di].box, truth[t].box);
      if (v > best) {
        best = v;
        best_t = static_cast<int>(t);
      }
    }
    if (best_t >= 0 && best >= iou_threshold) {
      tp[di] = 1;
      used[best_t] = 1;
    }
  }
  return tp;
}

/// Average precision from (score, is_tp) pairs of one class. All-points
/// interpolation integrates the precision envelope over recall;
/// eleven-point averages the envelope at recalls 0, 0.1, ..., 1.
inline double average_precision(std::vector<std::pair<double, bool>> scored,
                                int num_truth,
                                ApInterpolation interp = ApInterpolation::kAllPoints) {
  if (num_truth <= 0) {
    throw BadCount("average_precision: num_truth must be positive");
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const std::size_t n = scored.size();
  std::vector<double> prec(n), rec(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (scored[i].second) ++tp;
    prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(tp) / num_truth;
  }
  // Precision envelope: max over all points at equal or higher recall.
  for (std::size_t i = n; i-- > 1;) {
    prec[i - 1] = std::max(prec[i - 1], prec[i]);
  }

  double ap = 0.0;
  if (interp == ApInterpolation::kAllPoints) {
    for (std::size_t i = 0; i < n; ++i) {
      const double prev = i == 0 ? 0.0 : rec[i - 1];
      ap += (rec[i] - prev) * prec[i];
    }
  } else {
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (rec[i] >= r) {
          p = prec[i];
          break;
        }
      }
      ap += p / 11.0;
    }
  }
  return ap;
}

struct PerClassEval {
  double ap = 0.0;
  int num_truth = 0;
  int num_detections = 0;
};

struct MatchedPair {
  int image = 0;
  int detection = 0;
  int truth = 0;
};

struct EvalReport {
  // (class name, stats) in vocabulary order; classes with neither truth
  // nor detections are omitted. Zero-truth classes carry ap = 0 and are
  // excluded from the mean.
  std::vector<std::pair<std::string, PerClassEval>> per_class;
  double map = 0.0;
  std::vector<MatchedPair> matches;
};

/// Detections pooled per class across images, matched at iou_threshold,
/// mAP over classes with ground truth.
inline EvalReport evaluate(const std::vector<std::vector<TruthBox>>& truth_per_image,
                           const std::vector<std::vector<Detection>>& dets_per_image,
                           const ClassVocabulary& vocab, double iou_threshold = 0.5,
                           ApInterpolation interp = ApInterpolation::kAllPoints) {
  if (truth_per_image.size() != dets_per_image.size()) {
    throw BadCount("evaluate: truth/detections image counts differ");
  }
  const int num_classes = vocab.size();
  auto check_class = [num_classes](int c) {
    if (c < 1 || c >= num_classes) {
      throw UnknownClass("class index " + std::to_string(c) +
                         " outside the vocabulary");
    }
  };

  std::vector<std::vector<std::pair<double, bool>>> pooled(num_classes);
  std::vector<int> truth_count(num_classes, 0);
  std::vector<int> det_count(num_classes, 0);
  EvalReport report;

  for (std::size_t img = 0; img < truth_per_image.size(); ++img) {
    for (const TruthBox& t : truth_per_image[img]) {
      check_class(t.class_index);
      ++truth_count[t.class_index];
    }
    const std::vector<Detection>& dets = dets_per_image[img];
    for (const Detection& d : dets) check_class(d.class_index);
    const std::vector<char> tp = match_detections(dets, truth_per_image[img],
                                                  iou_threshold);
    // Recover matched pairs for overlay rendering.
    std::vector<char> used(truth_per_image[img].size(), 0);
    std::vector<int> order(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return dets[a].score > dets[b].score;
    });
    for (int di : order) {
      pooled[dets[di].class_index].push_back({dets[di].score, tp[di] != 0});
      ++det_count[dets[di].class_index];
      if (!tp[di]) continue;
      double best = 0.0;
      int best_t = -1;
      for (std::size_t t = 0; t < truth_per_image[img].size(); ++t) {
        if (used[t] || truth_per_image[img][t].class_index != dets[di].class_index) {
          continue;
        }
        const double v = iou(dets[di].box, truth_per_image[img][t].box);
        if (v > best) {
          best = v;
          best_t = static_cast<int>(t);
        }
      }
      if (best_t >= 0) {
        used[best_t] = 1;
        report.matches.push_back(MatchedPair{static_cast<int>(img), di, best_t});
      }
    }
  }

  double ap_sum = 0.0;
  int ap_classes = 0;
  for (int c = 1; c < num_classes; ++c) {
    if (truth_count[c] == 0 && det_count[c] == 0) continue;
    PerClassEval e;
    e.num_truth = truth_count[c];
    e.num_detections = det_count[c];
    if (truth_count[c] > 0) {
      e.ap = average_precision(pooled[c], truth_count[c], interp);
      ap_sum += e.ap;
      ++ap_classes;
    }
    report.per_class.push_back({vocab.name(c), e});
  }
  report.map = ap_classes > 0 ? ap_sum / ap_classes : 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// Overlay rendering (binary PPM).

namespace detail {

struct Rgb {
  unsigned char r, g, b;
};

inline void draw_box_outline(std::vector<unsigned char>& rgb, int width, int height,
                             const BBox& box, Rgb color) {
  const int x0 = std::clamp(static_cast<int>(std::lround(box.xmin)), 0, width - 1);
  const int y0 = std::clamp(static_cast<int>(std::lround(box.ymin)), 0, height - 1);
  const int x1 = std::clamp(static_cast<int>(std::lround(box.xmax)), 0, width - 1);
  const int y1 = std::clamp(static_cast<int>(std::lround(box.ymax)), 0, height - 1);
  auto set = [&](int x, int y) {
    const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[o] = color.r;
    rgb[o + 1] = color.g;
    rgb[o + 2] = color.b;
  };
  for (int x = x0; x <= x1; ++x) {
    set(x, y0);
    set(x, y1);
  }
  for (int y = y0; y <= y1; ++y) {
    set(x0, y);
    set(x1, y);
  }
}

}  // namespace detail

/// Grayscale replicated to RGB with truth boxes in green and detection
/// boxes in red (drawn last, so they win overlaps).
inline void render_overlay(const RasterImage& image,
                           const std::vector<Detection>& detections,
                           const std::vector<TruthBox>& truth,
                           const std::string& path) {
  std::vector<unsigned char> rgb(static_cast<std::size_t>(image.width) *
                                 image.height * 3);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = image.pixels[i];
  }
  for (const TruthBox& t : truth) {
    detail::draw_box_outline(rgb, image.width, image.height, t.box, {0, 255, 0});
  }
  for (const Detection& d : detections) {
    detail::draw_box_outline(rgb, image.width, image.height, d.box, {255, 0, 0});
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open '" + path + "' for writing");
  char header[64];
  const int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n",
                              image.width, image.height);
  out.write(header, n);
  out.write(reinterpret_cast<const char*>(rgb.data()),
            static_cast<std::streamsize>(rgb.size()));
  if (!out) throw IoFailure("short write to '" + path + "'");
}

}  // namespace inkdet
