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
#include <vector>

#include "inkdet/error.hpp"

namespace inkdet {

/// Axis-aligned box in pixel units, (xmin, ymin) top-left.
struct BBox {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (xmin + xmax); }
  double center_y() const { return 0.5 * (ymin + ymax); }

  bool finite() const {
    return std::isfinite(xmin) && std::isfinite(ymin) && std::isfinite(xmax) &&
           std::isfinite(ymax);
  }
  bool valid() const { return finite() && xmin <= xmax && ymin <= ymax; }

  friend bool operator==(const BBox& a, const BBox& b) {
    return a.xmin == b.xmin && a.ymin == b.ymin && a.xmax == b.xmax &&
           a.ymax == b.ymax;
  }
};

/// Offsets from an anchor box to a target box (center shift in anchor
/// units, log size ratios).
struct BoxDelta {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;
};

/// Box with a confidence score; rank is the input position and breaks
/// score ties deterministically.
struct ScoredBox {
  BBox box;
  double score = 0.0;
  int class_index = 0;
  int rank = 0;
};

// Size ratios encoded as log deltas are clamped to this magnitude so an
// untrained regressor cannot produce overflowing boxes.
inline double delta_log_limit() {
  static const double kLimit = std::log(1000.0);
  return kLimit;
}

/// Intersection over union; 0 when the union has zero area.
inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(
      0.0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
  const double iy = std::max(
      0.0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// Encode `gt` relative to `anchor`. Ground-truth dimensions are clamped
/// to 1e-3 px before the log so degenerate targets stay finite.
inline BoxDelta encode(const BBox& gt, const BBox& anchor) {
  const double wa = anchor.width();
  const double ha = anchor.height();
  if (wa <= 0.0 || ha <= 0.0) {
    throw DegenerateAnchor("encode: anchor has non-positive size");
  }
  const double w = std::max(gt.width(), 1e-3);
  const double h = std::max(gt.height(), 1e-3);
  BoxDelta d;
  d.tx = (gt.center_x() - anchor.center_x()) / wa;
  d.ty = (gt.center_y() - anchor.center_y()) / ha;
  d.tw = std::log(w / wa);
  d.th = std::log(h / ha);
  return d;
}

/// Inverse of encode; tw/th are clamped to +/- log(1000).
inline BBox decode(const BoxDelta& delta, const BBox& anchor) {
  const double wa = anchor.width();
  const double ha = anchor.height();
  if (wa <= 0.0 || ha <= 0.0) {
    throw DegenerateAnchor("decode: anchor has non-positive size");
  }
  const double lim = delta_log_limit();
  const double cx = anchor.center_x() + delta.tx * wa;
  const double cy = anchor.center_y() + delta.ty * ha;
  const double w = std::exp(std::clamp(delta.tw, -lim, lim)) * wa;
  const double h = std::exp(std::clamp(delta.th, -lim, lim)) * ha;
  return BBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

/// Clamp a box to [0,width] x [0,height]. Zero-area results are allowed;
/// callers filter them.
inline BBox clip(const BBox& box, double width, double height) {
  BBox out;
  out.xmin = std::clamp(box.xmin, 0.0, width);
  out.ymin = std::clamp(box.ymin, 0.0, height);
  out.xmax = std::clamp(box.xmax, 0.0, width);
  out.ymax = std::clamp(box.ymax, 0.0, height);
  return out;
}

/// Greedy non-maximum suppression, class-blind. Ties in score are broken
/// by lower rank. Keeps at most `max_keep` boxes, sorted by descending
/// score.
inline std::vector<ScoredBox> nms(const std::vector<ScoredBox>& input,
                                  double iou_threshold, int max_keep) {
  std::vector<int> order(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (input[a].score != input[b].score) {
      return input[a].score > input[b].score;
    }
    return input[a].rank < input[b].rank;
  });

  std::vector<ScoredBox> kept;
  std::vector<char> suppressed(input.size(), 0);
  for (int idx : order) {
    if (suppressed[idx]) continue;
    kept.push_back(input[idx]);
    if (static_cast<int>(kept.size()) >= max_keep) break;
    for (int other : order) {
      if (other == idx || suppressed[other]) continue;
      if (iou(input[idx].box, input[other].box) > iou_threshold) {
        suppressed[other] = 1;
      }
    }
  }
  return kept;
}

}  // namespace inkdet
