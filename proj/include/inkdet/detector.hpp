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
#include <cstdint>
#include <cstdio>
#include <memory>
#include <ostream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "inkdet/autodiff.hpp"
#include "inkdet/boxes.hpp"
#include "inkdet/error.hpp"
#include "inkdet/rasterizer.hpp"
#include "inkdet/rng.hpp"
#include "inkdet/tensor.hpp"

namespace inkdet {

/// All detector knobs. Defaults target the synthetic desk-scale run; the
/// full ink corpora use min_dim 600 (flowcharts) / 300 (math) and step
/// budgets of 25k / 150k.
struct DetectorConfig {
  int min_dim = 300;            // rescale so min(H,W) equals this
  int feature_stride = 8;       // backbone downsampling factor
  std::vector<double> anchor_scales{16.0, 32.0, 64.0, 128.0};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  int rpn_pre_nms_top = 2000;
  double rpn_nms_iou = 0.7;
  int num_proposals = 300;      // RPN output cap after NMS
  int rpn_batch = 256;
  double rpn_pos_frac = 0.5;
  double rpn_pos_iou = 0.7;
  double rpn_neg_iou = 0.3;
  int roi_batch = 64;
  double roi_pos_frac = 0.25;
  double roi_fg_iou = 0.5;
  double roi_bg_iou_lo = 0.1;
  double roi_bg_iou_hi = 0.5;
  int crop_size = 7;
  double score_threshold = 0.5;
  double final_nms_iou = 0.5;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double grad_clip_norm = 10.0;
  int steps = 2000;
  int checkpoint_every = 0;     // 0 = only save at the end
  std::uint64_t seed = 0;

  int anchors_per_cell() const {
    return static_cast<int>(anchor_scales.size() * anchor_ratios.size());
  }

  void validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (min_dim < 16) throw BadConfig("min_dim must be >= 16");
    if (feature_stride != 8) {
      throw BadConfig("feature_stride must equal the backbone stride (8)");
    }
    if (anchor_scales.empty() || anchor_ratios.empty()) {
      throw BadConfig("anchor scales/ratios must be non-empty");
    }
    if (!in01(rpn_nms_iou) || !in01(rpn_pos_iou) || !in01(rpn_neg_iou) ||
        !in01(rpn_pos_frac) || !in01(roi_pos_frac) || !in01(roi_fg_iou) ||
        !in01(roi_bg_iou_lo) || !in01(roi_bg_iou_hi) || !in01(score_threshold) ||
        !in01(final_nms_iou)) {
      throw BadConfig("thresholds must lie in [0,1]");
    }
    if (rpn_neg_iou >= rpn_pos_iou) {
      throw BadConfig("rpn_neg_iou must be < rpn_pos_iou");
    }
    if (roi_bg_iou_lo >= roi_bg_iou_hi) {
      throw BadConfig("roi_bg_iou_lo must be < roi_bg_iou_hi");
    }
    if (num_proposals > rpn_pre_nms_top) {
      throw BadConfig("num_proposals must be <= rpn_pre_nms_top");
    }
    if (rpn_batch < 1 || roi_batch < 1 || crop_size < 1 || steps < 0) {
      throw BadConfig("rpn_batch, roi_batch, crop_size must be positive");
    }
  }
};

/// Anchors for one feature map, row-major over cells, then anchor index
/// (scale-major, ratio-minor). Coordinates are image units; anchors may
/// extend outside the image.
struct AnchorGrid {
  int feature_height = 0;
  int feature_width = 0;
  std::vector<BBox> anchors;
};

struct Proposal {
  BBox box;
  double objectness = 0.0;
};

struct Detection {
  BBox box;
  int class_index = 0;  // >= 1
  double score = 0.0;
};

inline AnchorGrid make_anchors(int feature_height, int feature_width,
                               const DetectorConfig& cfg) {
  AnchorGrid grid;
  grid.feature_height = feature_height;
  grid.feature_width = feature_width;
  grid.anchors.reserve(static_cast<std::size_t>(feature_height) * feature_width *
                       cfg.anchors_per_cell());
  const double stride = cfg.feature_stride;
  for (int i = 0; i < feature_height; ++i) {
    for (int j = 0; j < feature_width; ++j) {
      const double cx = (j + 0.5) * stride;
      const double cy = (i + 0.5) * stride;
      for (double s : cfg.anchor_scales) {
        for (double r : cfg.anchor_ratios) {
          const double w = s / std::sqrt(r);
          const double h = s * std::sqrt(r);
          grid.anchors.push_back(
              BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
        }
      }
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Model.

template <typename T>
struct DetectorModel {
  DetectorConfig config;
  ClassVocabulary vocab;
  std::vector<Parameter<T>> params;

  Parameter<T>& param(const std::string& name) {
    for (Parameter<T>& p : params) {
      if (p.name == name) return p;
    }
    throw BadCheckpoint("unknown parameter '" + name + "'");
  }

  std::vector<Parameter<T>*> param_ptrs() {
    std::vector<Parameter<T>*> out;
    out.reserve(params.size());
    for (Parameter<T>& p : params) out.push_back(&p);
    return out;
  }

  template <typename U>
  DetectorModel<U> cast() const {
    DetectorModel<U> m;
    m.config = config;
    m.vocab = vocab;
    for (const Parameter<T>& p : params) {
      m.params.emplace_back(p.name, p.value.template cast<U>());
    }
    return m;
  }
};

/// Fresh model with fan-in-scaled normal weights and zero biases,
/// deterministic in cfg.seed.
template <typename T>
DetectorModel<T> make_detector(const DetectorConfig& cfg,
                               const ClassVocabulary& vocab) {
  cfg.validate();
  DetectorModel<T> m;
  m.config = cfg;
  m.vocab = vocab;
  std::mt19937_64 g(rng::mix(cfg.seed, 0x12171A11));

  auto conv = [&](const std::string& name, int k, int c, int kh, int kw) {
    m.params.emplace_back(name + ".w",
                          he_normal<T>({k, c, kh, kw}, c * kh * kw, g));
    m.params.emplace_back(name + ".b", Tensor<T>::zeros({k}));
  };
  auto fc = [&](const std::string& name, int d, int e) {
    m.params.emplace_back(name + ".w", he_normal<T>({d, e}, d, g));
    m.params.emplace_back(name + ".b", Tensor<T>::zeros({e}));
  };

  const int k = cfg.anchors_per_cell();
  conv("backbone.conv1", 16, 1, 3, 3);
  conv("backbone.conv2", 32, 16, 3, 3);
  conv("backbone.conv3", 64, 32, 3, 3);
  conv("backbone.conv4", 64, 64, 3, 3);
  conv("rpn.conv", 64, 64, 3, 3);
  conv("rpn.cls", 2 * k, 64, 1, 1);
  conv("rpn.reg", 4 * k, 64, 1, 1);
  fc("roi.fc1", 64 * cfg.crop_size * cfg.crop_size, 256);
  fc("roi.fc2", 256, 256);
  fc("roi.cls", 256, vocab.size());
  fc("roi.reg", 256, 4);
  return m;
}

// ---------------------------------------------------------------------------
// Preprocessing.

template <typename T>
struct PreprocessedSample {
  Tensor<T> input;        // [1,1,H,W], ink = 1, background = 0, zero padded
  double scale = 1.0;     // min_dim / min(height, width)
  int content_width = 0;  // valid region before padding
  int content_height = 0;
  std::vector<TruthBox> truth;  // boxes in scaled coordinates
};

/// Inverts polarity (ink = 1), rescales so min(H,W) == min_dim keeping
/// aspect, scales truth boxes along, and zero-pads up to multiples of the
/// feature stride.
template <typename T>
PreprocessedSample<T> preprocess(const RasterSample& sample,
                                 const DetectorConfig& cfg) {
  const RasterImage& img = sample.image;
  const double r =
      static_cast<double>(cfg.min_dim) / std::min(img.width, img.height);
  const int cw = static_cast<int>(std::lround(img.width * r));
  const int ch = static_cast<int>(std::lround(img.height * r));
  const int stride = cfg.feature_stride;
  const int pw = (cw + stride - 1) / stride * stride;
  const int ph = (ch + stride - 1) / stride * stride;

  PreprocessedSample<T> out;
  out.scale = r;
  out.content_width = cw;
  out.content_height = ch;
  out.input = Tensor<T>::zeros({1, 1, ph, pw});

  auto sample_at = [&img](double x, double y) -> double {
    const double tx = x - 0.5, ty = y - 0.5;
    const int x0 = static_cast<int>(std::floor(tx));
    const int y0 = static_cast<int>(std::floor(ty));
    const double fx = tx - x0, fy = ty - y0;
    auto px = [&img](int xx, int yy) -> double {
      xx = std::clamp(xx, 0, img.width - 1);
      yy = std::clamp(yy, 0, img.height - 1);
      return img.at(xx, yy);
    };
    return (1 - fy) * ((1 - fx) * px(x0, y0) + fx * px(x0 + 1, y0)) +
           fy * ((1 - fx) * px(x0, y0 + 1) + fx * px(x0 + 1, y0 + 1));
  };

  for (int i = 0; i < ch; ++i) {
    for (int j = 0; j < cw; ++j) {
      const double v = sample_at((j + 0.5) / r, (i + 0.5) / r);
      out.input.at4(0, 0, i, j) = static_cast<T>((255.0 - v) / 255.0);
    }
  }
  out.truth.reserve(sample.truth.size());
  for (const TruthBox& t : sample.truth) {
    out.truth.push_back(TruthBox{
        t.class_index,
        BBox{t.box.xmin * r, t.box.ymin * r, t.box.xmax * r, t.box.ymax * r}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Network pieces (operate on an existing graph).

template <typename T>
using ParamNodes = std::unordered_map<std::string, typename Graph<T>::NodeId>;

template <typename T>
ParamNodes<T> bind_params(Graph<T>& g, const DetectorModel<T>& m) {
  ParamNodes<T> ids;
  for (const Parameter<T>& p : m.params) ids[p.name] = g.input(p.value);
  return ids;
}

template <typename T>
void accumulate_gradients(const Graph<T>& g, const ParamNodes<T>& ids,
                          DetectorModel<T>& m) {
  for (Parameter<T>& p : m.params) {
    const Tensor<T>& pg = g.grad(ids.at(p.name));
    if (pg.data.empty()) continue;  // backward not run or unreachable
    for (std::size_t i = 0; i < p.grad.data.size(); ++i) {
      p.grad.data[i] += pg.data[i];
    }
  }
}

/// conv(16)-pool-conv(32)-pool-conv(64)-pool-conv(64), all 3x3 pad 1 with
/// relu; total stride 8.
template <typename T>
typename Graph<T>::NodeId build_backbone(Graph<T>& g, const ParamNodes<T>& p,
                                         typename Graph<T>::NodeId x) {
  const Tensor<T>& in = g.value(x);
  if (in.rank() != 4 || in.dim(2) % 8 != 0 || in.dim(3) % 8 != 0) {
    throw ShapeMismatch("backbone: input H and W must be divisible by 8");
  }
  auto block = [&](typename Graph<T>::NodeId h, const std::string& name) {
    return g.relu(g.conv2d(h, p.at(name + ".w"), p.at(name + ".b"), 1, 1));
  };
  auto h = g.max_pool2(block(x, "backbone.conv1"));
  h = g.max_pool2(block(h, "backbone.conv2"));
  h = g.max_pool2(block(h, "backbone.conv3"));
  return block(h, "backbone.conv4");
}

template <typename T>
struct RpnOut {
  typename Graph<T>::NodeId logits = -1;  // [A,2]
  typename Graph<T>::NodeId deltas = -1;  // [A,4]
  int feature_height = 0;
  int feature_width = 0;
};

namespace detail {

// Maps [1, k*c, Hf, Wf] head output to per-anchor rows [Hf*Wf*k, c] in
// AnchorGrid order.
inline std::shared_ptr<std::vector<std::int64_t>> anchor_row_indices(int hf, int wf,
                                                                     int k, int c) {
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(hf) * wf * k * c);
  for (int i = 0; i < hf; ++i) {
    for (int j = 0; j < wf; ++j) {
      for (int t = 0; t < k; ++t) {
        for (int ch = 0; ch < c; ++ch) {
          idx->push_back(
              (static_cast<std::int64_t>(t * c + ch) * hf + i) * wf + j);
        }
      }
    }
  }
  return idx;
}

}  // namespace detail

/// Two-layer fully convolutional RPN: shared 3x3 conv + relu, then 1x1
/// objectness and regression heads, reshaped to per-anchor rows.
template <typename T>
RpnOut<T> build_rpn(Graph<T>& g, const ParamNodes<T>& p,
                    typename Graph<T>::NodeId features, int anchors_per_cell) {
  const int hf = g.value(features).dim(2);
  const int wf = g.value(features).dim(3);
  const int a = hf * wf * anchors_per_cell;
  auto shared = g.relu(g.conv2d(features, p.at("rpn.conv.w"), p.at("rpn.conv.b"), 1, 1));
  auto cls_map = g.conv2d(shared, p.at("rpn.cls.w"), p.at("rpn.cls.b"), 1, 0);
  auto reg_map = g.conv2d(shared, p.at("rpn.reg.w"), p.at("rpn.reg.b"), 1, 0);
  RpnOut<T> out;
  out.feature_height = hf;
  out.feature_width = wf;
  out.logits = g.gather(cls_map, detail::anchor_row_indices(hf, wf, anchors_per_cell, 2),
                        {a, 2});
  out.deltas = g.gather(reg_map, detail::anchor_row_indices(hf, wf, anchors_per_cell, 4),
                        {a, 4});
  return out;
}

/// Crop-resize each roi from the feature map, then two 256-wide fully
/// connected layers with sibling class / refinement heads.
template <typename T>
std::pair<typename Graph<T>::NodeId, typename Graph<T>::NodeId> build_roi_head(
    Graph<T>& g, const ParamNodes<T>& p, typename Graph<T>::NodeId features,
    const std::vector<BBox>& rois, const DetectorConfig& cfg) {
  const double s = cfg.feature_stride;
  std::vector<typename Graph<T>::NodeId> crops;
  crops.reserve(rois.size());
  for (const BBox& roi : rois) {
    const BBox fbox{roi.xmin / s, roi.ymin / s, roi.xmax / s, roi.ymax / s};
    crops.push_back(g.crop_resize(features, fbox, cfg.crop_size));
  }
  auto stacked = g.concat0(crops);
  const int r = static_cast<int>(rois.size());
  auto flat = g.reshape(stacked, {r, 64 * cfg.crop_size * cfg.crop_size});
  auto h = g.relu(g.linear(flat, p.at("roi.fc1.w"), p.at("roi.fc1.b")));
  h = g.relu(g.linear(h, p.at("roi.fc2.w"), p.at("roi.fc2.b")));
  auto cls = g.linear(h, p.at("roi.cls.w"), p.at("roi.cls.b"));
  auto reg = g.linear(h, p.at("roi.reg.w"), p.at("roi.reg.b"));
  return {cls, reg};
}

// ---------------------------------------------------------------------------
// Target assignment.

struct RpnTargets {
  std::vector<signed char> labels;  // 1 positive, 0 negative, -1 ignore
  std::vector<BoxDelta> deltas;     // meaningful where labels == 1
};

/// Label assignment before batch subsampling (deterministic, no RNG):
/// anchors crossing the image bounds by more than 25% of their area are
/// ignored; of the rest, IoU >= rpn_pos_iou or being a truth box's best
/// anchor makes a positive (ties all positive), max IoU < rpn_neg_iou a
/// negative, anything else ignore.
inline RpnTargets assign_rpn_labels(const AnchorGrid& grid,
                                    const std::vector<TruthBox>& truth,
                                    int image_width, int image_height,
                                    const DetectorConfig& cfg) {
  const std::size_t a = grid.anchors.size();
  RpnTargets out;
  out.labels.assign(a, -1);
  out.deltas.assign(a, BoxDelta{});

  std::vector<char> eligible(a, 0);
  for (std::size_t i = 0; i < a; ++i) {
    const BBox& an = grid.anchors[i];
    const double inside = clip(an, image_width, image_height).area();
    eligible[i] = (an.area() - inside) <= 0.25 * an.area() ? 1 : 0;
  }

  std::vector<double> best_iou(a, 0.0);
  std::vector<int> best_truth(a, -1);
  for (std::size_t i = 0; i < a; ++i) {
    if (!eligible[i]) continue;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      const double v = iou(grid.anchors[i], truth[t].box);
      if (v > best_iou[i]) {
        best_iou[i] = v;
        best_truth[i] = static_cast<int>(t);
      }
    }
    if (best_iou[i] < cfg.rpn_neg_iou) out.labels[i] = 0;
    if (best_iou[i] >= cfg.rpn_pos_iou) out.labels[i] = 1;
  }

  // Argmax rule: the best anchor(s) of each truth box are positive even
  // below the IoU threshold.
  for (std::size_t t = 0; t < truth.size(); ++t) {
    double best = 0.0;
    for (std::size_t i = 0; i < a; ++i) {
      if (!eligible[i]) continue;
      best = std::max(best, iou(grid.anchors[i], truth[t].box));
    }
    if (best <= 0.0) continue;
    for (std::size_t i = 0; i < a; ++i) {
      if (!eligible[i]) continue;
      if (iou(grid.anchors[i], truth[t].box) == best) {
        out.labels[i] = 1;
        if (best_truth[i] < 0) {
          best_iou[i] = best;
          best_truth[i] = static_cast<int>(t);
        }
      }
    }
  }

  for (std::size_t i = 0; i < a; ++i) {
    if (out.labels[i] == 1 && best_truth[i] >= 0) {
      out.deltas[i] = encode(truth[best_truth[i]].box, grid.anchors[i]);
    }
  }
  return out;
}

/// Deterministic batch subsampling keyed by `key`: at most
/// rpn_pos_frac * rpn_batch positives, negatives fill the rest; surplus
/// labels become ignore.
inline void subsample_rpn_targets(RpnTargets& targets, const DetectorConfig& cfg,
                                  std::uint64_t key) {
  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < targets.labels.size(); ++i) {
    if (targets.labels[i] == 1) pos.push_back(static_cast<int>(i));
    if (targets.labels[i] == 0) neg.push_back(static_cast<int>(i));
  }
  std::mt19937_64 g(rng::mix(key, 0xA55A));
  const int max_pos = static_cast<int>(cfg.rpn_pos_frac * cfg.rpn_batch);
  if (static_cast<int>(pos.size()) > max_pos) {
    std::shuffle(pos.begin(), pos.end(), g);
    for (std::size_t i = max_pos; i < pos.size(); ++i) targets.labels[pos[i]] = -1;
    pos.resize(max_pos);
  }
  const int max_neg = cfg.rpn_batch - static_cast<int>(pos.size());
  if (static_cast<int>(neg.size()) > max_neg) {
    std::shuffle(neg.begin(), neg.end(), g);
    for (std::size_t i = max_neg; i < neg.size(); ++i) targets.labels[neg[i]] = -1;
  }
}

inline RpnTargets assign_rpn_targets(const AnchorGrid& grid,
                                     const std::vector<TruthBox>& truth,
                                     int image_width, int image_height,
                                     const DetectorConfig& cfg, std::uint64_t key) {
  RpnTargets t = assign_rpn_labels(grid, truth, image_width, image_height, cfg);
  subsample_rpn_targets(t, cfg, key);
  return t;
}

/// Decode every anchor, clip, drop degenerate boxes, keep the
/// rpn_pre_nms_top best by objectness, NMS, cap at num_proposals.
template <typename T>
std::vector<Proposal> propose(const AnchorGrid& grid, const Tensor<T>& logits,
                              const Tensor<T>& deltas, int image_width,
                              int image_height, const DetectorConfig& cfg) {
  const int a = static_cast<int>(grid.anchors.size());
  std::vector<ScoredBox> candidates;
  candidates.reserve(a);
  for (int i = 0; i < a; ++i) {
    const double l0 = logits.at2(i, 0);
    const double l1 = logits.at2(i, 1);
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    const double obj = e1 / (e0 + e1);
    BoxDelta d{static_cast<double>(deltas.at2(i, 0)),
               static_cast<double>(deltas.at2(i, 1)),
               static_cast<double>(deltas.at2(i, 2)),
               static_cast<double>(deltas.at2(i, 3))};
    const BBox box = clip(decode(d, grid.anchors[i]), image_width, image_height);
    if (box.width() <= 0.0 || box.height() <= 0.0) continue;
    candidates.push_back(ScoredBox{box, obj, 0, i});
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const ScoredBox& x, const ScoredBox& y) {
              if (x.score != y.score) return x.score > y.score;
              return x.rank < y.rank;
            });
  if (static_cast<int>(candidates.size()) > cfg.rpn_pre_nms_top) {
    candidates.resize(cfg.rpn_pre_nms_top);
  }
  std::vector<Proposal> out;
  for (const ScoredBox& b : nms(candidates, cfg.rpn_nms_iou, cfg.num_proposals)) {
    out.push_back(Proposal{b.box, b.score});
  }
  return out;
}

/// Sampled roi with its classification / regression targets; class 0 is
/// background.
struct RoiExample {
  BBox box;
  int class_target = 0;
  BoxDelta delta;  // meaningful for foreground rois
};

/// Ground-truth boxes are appended to the proposals, foreground rois are
/// matched at roi_fg_iou, background rois fall in the bg IoU range, and a
/// deterministic subsample of at most roi_batch rois (max roi_pos_frac
/// foreground) is returned. With no truth boxes every roi is background.
inline std::vector<RoiExample> assign_roi_targets(
    const std::vector<Proposal>& proposals, const std::vector<TruthBox>& truth,
    const DetectorConfig& cfg, std::uint64_t key) {
  std::vector<BBox> candidates;
  candidates.reserve(proposals.size() + truth.size());
  for (const Proposal& p : proposals) candidates.push_back(p.box);
  for (const TruthBox& t : truth) candidates.push_back(t.box);

  std::vector<RoiExample> fg, bg;
  for (const BBox& c : candidates) {
    if (c.width() <= 0.0 || c.height() <= 0.0) continue;
    double best = 0.0;
    int best_t = -1;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      const double v = iou(c, truth[t].box);
      if (v > best) {
        best = v;
        best_t = static_cast<int>(t);
      }
    }
    if (truth.empty()) {
      bg.push_back(RoiExample{c, 0, {}});
    } else if (best >= cfg.roi_fg_iou && best_t >= 0) {
      fg.push_back(RoiExample{c, truth[best_t].class_index,
                              encode(truth[best_t].box, c)});
    } else if (best >= cfg.roi_bg_iou_lo && best < cfg.roi_bg_iou_hi) {
      bg.push_back(RoiExample{c, 0, {}});
    }
  }

  std::mt19937_64 g(rng::mix(key, 0xB0D1));
  const int max_fg = static_cast<int>(cfg.roi_pos_frac * cfg.roi_batch);
  if (static_cast<int>(fg.size()) > max_fg) {
    std::shuffle(fg.begin(), fg.end(), g);
    fg.resize(max_fg);
  }
  const int max_bg = cfg.roi_batch - static_cast<int>(fg.size());
  if (static_cast<int>(bg.size()) > max_bg) {
    std::shuffle(bg.begin(), bg.end(), g);
    bg.resize(max_bg);
  }
  fg.insert(fg.end(), bg.begin(), bg.end());
  return fg;
}

// ---------------------------------------------------------------------------
// Joint forward pass with loss.

struct LossBreakdown {
  double total = 0.0;
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double roi_cls = 0.0;
  double roi_reg = 0.0;
};

/// Structural decisions of one training step (targets and sampled rois).
/// Finite-difference checks re-evaluate the loss under a fixed structure.
struct StepStructure {
  std::vector<signed char> rpn_labels;
  std::vector<BoxDelta> rpn_deltas;
  std::vector<RoiExample> rois;
  int proposal_count = 0;
};

template <typename T>
struct ForwardTraining {
  Graph<T> graph;
  typename Graph<T>::NodeId loss = -1;
  ParamNodes<T> param_nodes;
  LossBreakdown parts;
  StepStructure structure;
};

namespace detail {

template <typename T>
typename Graph<T>::NodeId build_losses(Graph<T>& g, const RpnOut<T>& rpn,
                                       typename Graph<T>::NodeId roi_cls,
                                       typename Graph<T>::NodeId roi_reg,
                                       const StepStructure& st,
                                       LossBreakdown& parts) {
  const std::size_t a = st.rpn_labels.size();
  std::vector<int> rpn_targets(a, 0);
  std::vector<T> rpn_weights(a, T(0));
  Tensor<T> reg_target({static_cast<int>(a), 4});
  Tensor<T> reg_weight({static_cast<int>(a), 4});
  for (std::size_t i = 0; i < a; ++i) {
    if (st.rpn_labels[i] < 0) continue;
    rpn_weights[i] = T(1);
    if (st.rpn_labels[i] == 1) {
      rpn_targets[i] = 1;
      const BoxDelta& d = st.rpn_deltas[i];
      reg_target.at2(static_cast<int>(i), 0) = static_cast<T>(d.tx);
      reg_target.at2(static_cast<int>(i), 1) = static_cast<T>(d.ty);
      reg_target.at2(static_cast<int>(i), 2) = static_cast<T>(d.tw);
      reg_target.at2(static_cast<int>(i), 3) = static_cast<T>(d.th);
      for (int c = 0; c < 4; ++c) reg_weight.at2(static_cast<int>(i), c) = T(1);
    }
  }
  auto l_rpn_cls = g.softmax_cross_entropy(rpn.logits, std::move(rpn_targets),
                                           std::move(rpn_weights));
  auto l_rpn_reg = g.smooth_l1(rpn.deltas, std::move(reg_target), std::move(reg_weight));

  typename Graph<T>::NodeId l_roi_cls, l_roi_reg;
  if (!st.rois.empty()) {
    const int r = static_cast<int>(st.rois.size());
    std::vector<int> cls_targets(r);
    std::vector<T> cls_weights(r, T(1));
    Tensor<T> roi_tgt({r, 4});
    Tensor<T> roi_wt({r, 4});
    for (int i = 0; i < r; ++i) {
      cls_targets[i] = st.rois[i].class_target;
      if (st.rois[i].class_target > 0) {
        roi_tgt.at2(i, 0) = static_cast<T>(st.rois[i].delta.tx);
        roi_tgt.at2(i, 1) = static_cast<T>(st.rois[i].delta.ty);
        roi_tgt.at2(i, 2) = static_cast<T>(st.rois[i].delta.tw);
        roi_tgt.at2(i, 3) = static_cast<T>(st.rois[i].delta.th);
        for (int c = 0; c < 4; ++c) roi_wt.at2(i, c) = T(1);
      }
    }
    l_roi_cls = g.softmax_cross_entropy(roi_cls, std::move(cls_targets),
                                        std::move(cls_weights));
    l_roi_reg = g.smooth_l1(roi_reg, std::move(roi_tgt), std::move(roi_wt));
  } else {
    l_roi_cls = g.input(Tensor<T>::scalar(T(0)));
    l_roi_reg = g.input(Tensor<T>::scalar(T(0)));
  }

  parts.rpn_cls = g.value(l_rpn_cls).data[0];
  parts.rpn_reg = g.value(l_rpn_reg).data[0];
  parts.roi_cls = g.value(l_roi_cls).data[0];
  parts.roi_reg = g.value(l_roi_reg).data[0];
  auto total = g.add(g.add(l_rpn_cls, l_rpn_reg), g.add(l_roi_cls, l_roi_reg));
  parts.total = g.value(total).data[0];
  return total;
}

}  // namespace detail

/// One full training forward pass: backbone, RPN, proposals from the
/// current outputs, target assignment, roi head, joint loss. Gradients do
/// not flow through proposal boxes.
template <typename T>
ForwardTraining<T> forward_training(DetectorModel<T>& model,
                                    const PreprocessedSample<T>& pre,
                                    std::uint64_t key) {
  const DetectorConfig& cfg = model.config;
  ForwardTraining<T> out;
  Graph<T>& g = out.graph;
  out.param_nodes = bind_params(g, model);
  auto x = g.input(pre.input);
  auto features = build_backbone(g, out.param_nodes, x);
  RpnOut<T> rpn = build_rpn(g, out.param_nodes, features, cfg.anchors_per_cell());

  const AnchorGrid grid =
      make_anchors(rpn.feature_height, rpn.feature_width, cfg);
  RpnTargets targets = assign_rpn_targets(grid, pre.truth, pre.content_width,
                                          pre.content_height, cfg, key);
  const std::vector<Proposal> proposals =
      propose(grid, g.value(rpn.logits), g.value(rpn.deltas), pre.content_width,
              pre.content_height, cfg);
  std::vector<RoiExample> rois =
      assign_roi_targets(proposals, pre.truth, cfg, rng::mix(key, 0x501));

  out.structure.rpn_labels = std::move(targets.labels);
  out.structure.rpn_deltas = std::move(targets.deltas);
  out.structure.rois = std::move(rois);
  out.structure.proposal_count = static_cast<int>(proposals.size());

  typename Graph<T>::NodeId roi_cls = -1, roi_reg = -1;
  if (!out.structure.rois.empty()) {
    std::vector<BBox> roi_boxes;
    roi_boxes.reserve(out.structure.rois.size());
    for (const RoiExample& r : out.structure.rois) roi_boxes.push_back(r.box);
    std::tie(roi_cls, roi_reg) =
        build_roi_head(g, out.param_nodes, features, roi_boxes, cfg);
  }
  out.loss = detail::build_losses(g, rpn, roi_cls, roi_reg, out.structure, out.parts);
  return out;
}

/// Re-evaluates the joint loss under a previously captured structure.
/// Used by the finite-difference oracle; the network forward is live, the
/// targets are frozen.
template <typename T>
LossBreakdown evaluate_loss_with_structure(DetectorModel<T>& model,
                                           const PreprocessedSample<T>& pre,
                                           const StepStructure& st) {
  Graph<T> g;
  ParamNodes<T> ids = bind_params(g, model);
  auto x = g.input(pre.input);
  auto features = build_backbone(g, ids, x);
  RpnOut<T> rpn = build_rpn(g, ids, features, model.config.anchors_per_cell());
  typename Graph<T>::NodeId roi_cls = -1, roi_reg = -1;
  if (!st.rois.empty()) {
    std::vector<BBox> roi_boxes;
    for (const RoiExample& r : st.rois) roi_boxes.push_back(r.box);
    std::tie(roi_cls, roi_reg) = build_roi_head(g, ids, features, roi_boxes,
                                                model.config);
  }
  LossBreakdown parts;
  detail::build_losses(g, rpn, roi_cls, roi_reg, st, parts);
  return parts;
}

// ---------------------------------------------------------------------------
// Training loop.

/// Batch-size-1 SGD over the dataset, shuffled per epoch, deterministic in
/// cfg.seed. Writes one metrics record per step. The save callback runs at
/// checkpoint_every intervals and after the final step.
template <typename T, typename SaveFn>
LossBreakdown train_detector(DetectorModel<T>& model,
                             const std::vector<RasterSample>& dataset,
                             std::ostream* metrics, SaveFn&& save) {
  if (dataset.empty()) throw MissingData("train: empty dataset");
  const DetectorConfig& cfg = model.config;
  cfg.validate();

  std::vector<PreprocessedSample<T>> pre;
  pre.reserve(dataset.size());
  for (const RasterSample& s : dataset) pre.push_back(preprocess<T>(s, cfg));

  auto params = model.param_ptrs();
  std::vector<int> order(dataset.size());
  LossBreakdown last;
  if (metrics) (*metrics) << "step,total,rpn_cls,rpn_reg,roi_cls,roi_reg\n";

  for (int step = 1; step <= cfg.steps; ++step) {
    const std::size_t pos = static_cast<std::size_t>(step - 1) % dataset.size();
    if (pos == 0) {
      const std::uint64_t epoch = static_cast<std::uint64_t>(step - 1) / dataset.size();
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::mt19937_64 g(rng::mix(cfg.seed, 0xE90C0000ULL + epoch));
      std::shuffle(order.begin(), order.end(), g);
    }

    ForwardTraining<T> fwd =
        forward_training(model, pre[order[pos]], rng::mix(cfg.seed, step));
    last = fwd.parts;
    fwd.graph.backward(fwd.loss);
    accumulate_gradients(fwd.graph, fwd.param_nodes, model);
    try {
      sgd_step(params, cfg.learning_rate, cfg.momentum, cfg.grad_clip_norm);
    } catch (const NonFiniteGradient& e) {
      throw NonFiniteGradient(std::string(e.what()) + " at step " +
                              std::to_string(step));
    }

    if (metrics) {
      char line[160];
      std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", step,
                    fwd.parts.total, fwd.parts.rpn_cls, fwd.parts.rpn_reg,
                    fwd.parts.roi_cls, fwd.parts.roi_reg);
      (*metrics) << line;
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
        step != cfg.steps) {
      save(model, step);
    }
  }
  save(model, cfg.steps);
  return last;
}

// ---------------------------------------------------------------------------
// Inference.

/// Single forward pass: proposals, roi classification, class-agnostic box
/// refinement, score threshold, per-class NMS, boxes mapped back to the
/// original image.
template <typename T>
std::vector<Detection> detect(const RasterImage& image, DetectorModel<T>& model) {
  const DetectorConfig& cfg = model.config;
  if (model.vocab.size() < 2) return {};  // background-only vocabulary
  RasterSample s;
  s.image = image;
  PreprocessedSample<T> pre = preprocess<T>(s, cfg);

  Graph<T> g;
  ParamNodes<T> ids = bind_params(g, model);
  auto x = g.input(pre.input);
  auto features = build_backbone(g, ids, x);
  RpnOut<T> rpn = build_rpn(g, ids, features, cfg.anchors_per_cell());
  const AnchorGrid grid = make_anchors(rpn.feature_height, rpn.feature_width, cfg);
  const std::vector<Proposal> proposals =
      propose(grid, g.value(rpn.logits), g.value(rpn.deltas), pre.content_width,
              pre.content_height, cfg);
  if (proposals.empty()) return {};

  std::vector<BBox> roi_boxes;
  roi_boxes.reserve(proposals.size());
  for (const Proposal& p : proposals) roi_boxes.push_back(p.box);
  auto [cls_node, reg_node] = build_roi_head(g, ids, features, roi_boxes, cfg);
  const Tensor<T>& cls = g.value(cls_node);
  const Tensor<T>& reg = g.value(reg_node);

  const int num_classes = model.vocab.size();
  std::vector<ScoredBox> scored;
  for (std::size_t i = 0; i < roi_boxes.size(); ++i) {
    double mx = cls.at2(static_cast<int>(i), 0);
    for (int c = 1; c < num_classes; ++c) {
      mx = std::max(mx, static_cast<double>(cls.at2(static_cast<int>(i), c)));
    }
    double z = 0.0;
    std::vector<double> p(num_classes);
    for (int c = 0; c < num_classes; ++c) {
      p[c] = std::exp(static_cast<double>(cls.at2(static_cast<int>(i), c)) - mx);
      z += p[c];
    }
    int best = 1;
    for (int c = 2; c < num_classes; ++c) {
      if (p[c] > p[best]) best = c;
    }
    const double score = p[best] / z;
    if (score < cfg.score_threshold) continue;

    BoxDelta d{static_cast<double>(reg.at2(static_cast<int>(i), 0)),
               static_cast<double>(reg.at2(static_cast<int>(i), 1)),
               static_cast<double>(reg.at2(static_cast<int>(i), 2)),
               static_cast<double>(reg.at2(static_cast<int>(i), 3))};
    BBox box = clip(decode(d, roi_boxes[i]), pre.content_width, pre.content_height);
    if (box.width() <= 0.0 || box.height() <= 0.0) continue;
    scored.push_back(ScoredBox{box, score, best, static_cast<int>(i)});
  }

  // Per-class suppression via the class-blind kernel.
  std::vector<ScoredBox> kept;
  for (int c = 1; c < num_classes; ++c) {
    std::vector<ScoredBox> cls_boxes;
    for (const ScoredBox& b : scored) {
      if (b.class_index == c) cls_boxes.push_back(b);
    }
    if (cls_boxes.empty()) continue;
    for (const ScoredBox& b :
         nms(cls_boxes, cfg.final_nms_iou, static_cast<int>(cls_boxes.size()))) {
      kept.push_back(b);
    }
  }
  std::sort(kept.begin(), kept.end(), [](const ScoredBox& a, const ScoredBox& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.rank < b.rank;
  });

  std::vector<Detection> out;
  out.reserve(kept.size());
  for (const ScoredBox& b : kept) {
    BBox orig{b.box.xmin / pre.scale, b.box.ymin / pre.scale,
              b.box.xmax / pre.scale, b.box.ymax / pre.scale};
    orig = clip(orig, image.width, image.height);
    out.push_back(Detection{orig, b.class_index, b.score});
  }
  return out;
}

}  // namespace inkdet
