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

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "inkdet/detector.hpp"
#include "inkdet/error.hpp"
#include "inkdet/rasterizer.hpp"

namespace inkdet {

/// Full run configuration: raster + detector knobs, split, evaluation
/// options and default paths. Every key has a default, so an empty config
/// file is valid.
struct RunConfig {
  RasterConfig raster;
  DetectorConfig detector;
  double split_fraction = 0.8;
  std::string ap_interpolation = "all_points";  // or "eleven_point"
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint_path;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_double_list(const std::vector<double>& vs) {
  std::string out;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(vs[i]);
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw BadConfig("config key '" + key + "': bad number '" + v + "'");
  }
  return d;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long d = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw BadConfig("config key '" + key + "': bad integer '" + v + "'");
  }
  return d;
}

inline std::vector<double> parse_double_list(const std::string& key,
                                             const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, item));
  if (out.empty()) throw BadConfig("config key '" + key + "': empty list");
  return out;
}

/// Applies one key to the detector config; false when the key is unknown.
inline bool apply_detector_key(DetectorConfig& c, const std::string& key,
                               const std::string& v) {
  if (key == "min_dim") c.min_dim = static_cast<int>(parse_int(key, v));
  else if (key == "feature_stride") c.feature_stride = static_cast<int>(parse_int(key, v));
  else if (key == "anchor_scales") c.anchor_scales = parse_double_list(key, v);
  else if (key == "anchor_ratios") c.anchor_ratios = parse_double_list(key, v);
  else if (key == "rpn_pre_nms_top") c.rpn_pre_nms_top = static_cast<int>(parse_int(key, v));
  else if (key == "rpn_nms_iou") c.rpn_nms_iou = parse_double(key, v);
  else if (key == "num_proposals") c.num_proposals = static_cast<int>(parse_int(key, v));
  else if (key == "rpn_batch") c.rpn_batch = static_cast<int>(parse_int(key, v));
  else if (key == "rpn_pos_frac") c.rpn_pos_frac = parse_double(key, v);
  else if (key == "rpn_pos_iou") c.rpn_pos_iou = parse_double(key, v);
  else if (key == "rpn_neg_iou") c.rpn_neg_iou = parse_double(key, v);
  else if (key == "roi_batch") c.roi_batch = static_cast<int>(parse_int(key, v));
  else if (key == "roi_pos_frac") c.roi_pos_frac = parse_double(key, v);
  else if (key == "roi_fg_iou") c.roi_fg_iou = parse_double(key, v);
  else if (key == "roi_bg_iou_lo") c.roi_bg_iou_lo = parse_double(key, v);
  else if (key == "roi_bg_iou_hi") c.roi_bg_iou_hi = parse_double(key, v);
  else if (key == "crop_size") c.crop_size = static_cast<int>(parse_int(key, v));
  else if (key == "score_threshold") c.score_threshold = parse_double(key, v);
  else if (key == "final_nms_iou") c.final_nms_iou = parse_double(key, v);
  else if (key == "learning_rate") c.learning_rate = parse_double(key, v);
  else if (key == "momentum") c.momentum = parse_double(key, v);
  else if (key == "grad_clip_norm") c.grad_clip_norm = parse_double(key, v);
  else if (key == "steps") c.steps = static_cast<int>(parse_int(key, v));
  else if (key == "checkpoint_every") c.checkpoint_every = static_cast<int>(parse_int(key, v));
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, v));
  else return false;
  return true;
}

inline bool apply_raster_key(RasterConfig& c, const std::string& key,
                             const std::string& v) {
  if (key == "max_dim") c.max_dim = static_cast<int>(parse_int(key, v));
  else if (key == "stroke_thickness") c.stroke_thickness = static_cast<int>(parse_int(key, v));
  else if (key == "min_box_dim") c.min_box_dim = static_cast<int>(parse_int(key, v));
  else if (key == "margin") c.margin = static_cast<int>(parse_int(key, v));
  else return false;
  return true;
}

}  // namespace detail

/// Canonical key=value snapshot of a detector config (sorted keys); the
/// text embedded in checkpoints. Round-trips doubles exactly.
inline std::string detector_config_to_text(const DetectorConfig& c) {
  using detail::fmt_double;
  std::string out;
  out += "anchor_ratios=" + detail::fmt_double_list(c.anchor_ratios) + "\n";
  out += "anchor_scales=" + detail::fmt_double_list(c.anchor_scales) + "\n";
  out += "checkpoint_every=" + std::to_string(c.checkpoint_every) + "\n";
  out += "crop_size=" + std::to_string(c.crop_size) + "\n";
  out += "feature_stride=" + std::to_string(c.feature_stride) + "\n";
  out += "final_nms_iou=" + fmt_double(c.final_nms_iou) + "\n";
  out += "grad_clip_norm=" + fmt_double(c.grad_clip_norm) + "\n";
  out += "learning_rate=" + fmt_double(c.learning_rate) + "\n";
  out += "min_dim=" + std::to_string(c.min_dim) + "\n";
  out += "momentum=" + fmt_double(c.momentum) + "\n";
  out += "num_proposals=" + std::to_string(c.num_proposals) + "\n";
  out += "roi_batch=" + std::to_string(c.roi_batch) + "\n";
  out += "roi_bg_iou_hi=" + fmt_double(c.roi_bg_iou_hi) + "\n";
  out += "roi_bg_iou_lo=" + fmt_double(c.roi_bg_iou_lo) + "\n";
  out += "roi_fg_iou=" + fmt_double(c.roi_fg_iou) + "\n";
  out += "roi_pos_frac=" + fmt_double(c.roi_pos_frac) + "\n";
  out += "rpn_batch=" + std::to_string(c.rpn_batch) + "\n";
  out += "rpn_neg_iou=" + fmt_double(c.rpn_neg_iou) + "\n";
  out += "rpn_nms_iou=" + fmt_double(c.rpn_nms_iou) + "\n";
  out += "rpn_pos_frac=" + fmt_double(c.rpn_pos_frac) + "\n";
  out += "rpn_pos_iou=" + fmt_double(c.rpn_pos_iou) + "\n";
  out += "rpn_pre_nms_top=" + std::to_string(c.rpn_pre_nms_top) + "\n";
  out += "score_threshold=" + fmt_double(c.score_threshold) + "\n";
  out += "seed=" + std::to_string(c.seed) + "\n";
  out += "steps=" + std::to_string(c.steps) + "\n";
  return out;
}

inline DetectorConfig detector_config_from_text(const std::string& text) {
  DetectorConfig cfg;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw BadConfig("config line without '=': " + line);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!detail::apply_detector_key(cfg, key, value)) {
      throw BadConfig("unknown detector config key '" + key + "'");
    }
  }
  return cfg;
}

/// Loads a key=value run config file. '#' starts a comment; unknown keys
/// are rejected.
inline RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (detail::trim(line).empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw BadConfig("config line without '=': " + line);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (detail::apply_detector_key(cfg.detector, key, value)) continue;
    if (detail::apply_raster_key(cfg.raster, key, value)) continue;
    if (key == "split_fraction") {
      cfg.split_fraction = detail::parse_double(key, value);
    } else if (key == "ap_interpolation") {
      if (value != "all_points" && value != "eleven_point") {
        throw BadConfig("ap_interpolation must be all_points or eleven_point");
      }
      cfg.ap_interpolation = value;
    } else if (key == "data_dir") {
      cfg.data_dir = value;
    } else if (key == "out_dir") {
      cfg.out_dir = value;
    } else if (key == "checkpoint_path") {
      cfg.checkpoint_path = value;
    } else {
      throw BadConfig("unknown config key '" + key + "'");
    }
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace inkdet
