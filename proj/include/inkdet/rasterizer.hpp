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
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "inkdet/boxes.hpp"
#include "inkdet/error.hpp"
#include "inkdet/ink_data.hpp"
#include "inkdet/rng.hpp"

namespace inkdet {

struct RasterConfig {
  int max_dim = 768;          // target size of the largest image dimension
  int stroke_thickness = 3;   // pen width in pixels
  int min_box_dim = 3;        // ground-truth boxes never get thinner than this
  int margin = 4;             // blank border so stroke discs never clip
};

/// Grayscale image, 255 = background, 0 = ink.
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  RasterImage() = default;
  RasterImage(int w, int h, std::uint8_t fill = 255)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int x, int y) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  bool contains(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
};

struct TruthBox {
  int class_index = 0;  // >= 1, never background
  BBox box;
};

/// One offline training example: image plus labeled ground-truth boxes.
struct RasterSample {
  RasterImage image;
  std::vector<TruthBox> truth;
  std::string source_id;
};

namespace detail {

struct Extent {
  double xmin = std::numeric_limits<double>::infinity();
  double ymin = std::numeric_limits<double>::infinity();
  double xmax = -std::numeric_limits<double>::infinity();
  double ymax = -std::numeric_limits<double>::infinity();
  bool empty = true;

  void add(const Point& p) {
    xmin = std::min(xmin, p.x);
    ymin = std::min(ymin, p.y);
    xmax = std::max(xmax, p.x);
    ymax = std::max(ymax, p.y);
    empty = false;
  }
};

inline Extent graphic_extent(const InkGraphic& g) {
  Extent e;
  for (const Stroke& s : g.strokes) {
    for (const Point& p : s.points) e.add(p);
  }
  return e;
}

inline void stamp_disc(RasterImage& img, double x, double y, int thickness) {
  const int cx = static_cast<int>(std::lround(x));
  const int cy = static_cast<int>(std::lround(y));
  const double r = thickness / 2.0;
  const int reach = static_cast<int>(std::floor(r));
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) {
      if (dx * dx + dy * dy > r * r) continue;
      if (img.contains(cx + dx, cy + dy)) img.at(cx + dx, cy + dy) = 0;
    }
  }
}

}  // namespace detail

/// Stamps one stroke: every segment is traversed in steps of at most
/// 0.5 px and a filled disc of diameter `thickness` is written at each
/// step. Exposed so tests can rasterize per-symbol subsets.
inline void stamp_stroke(RasterImage& img, const Stroke& stroke, int thickness) {
  const auto& pts = stroke.points;
  if (pts.size() == 1) {
    detail::stamp_disc(img, pts[0].x, pts[0].y, thickness);
    return;
  }
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const Point& a = pts[i];
    const Point& b = pts[i + 1];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.5)));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      detail::stamp_disc(img, a.x + t * (b.x - a.x), a.y + t * (b.y - a.y),
                         thickness);
    }
  }
}

/// Translates the graphic so its bounding-box corner sits at
/// (margin, margin) and scales both axes by the single factor that makes
/// the largest extent equal max_dim - 2*margin. A single point keeps
/// scale 1 and is only translated.
inline InkGraphic scale_graphic(const InkGraphic& g, const RasterConfig& cfg) {
  const detail::Extent e = detail::graphic_extent(g);
  if (e.empty) throw EmptyGraphic("scale_graphic: graphic has no points");

  const double extent = std::max(e.xmax - e.xmin, e.ymax - e.ymin);
  const double scale =
      extent > 0.0 ? (cfg.max_dim - 2.0 * cfg.margin) / extent : 1.0;

  InkGraphic out = g;
  for (Stroke& s : out.strokes) {
    for (Point& p : s.points) {
      p.x = (p.x - e.xmin) * scale + cfg.margin;
      p.y = (p.y - e.ymin) * scale + cfg.margin;
    }
  }
  return out;
}

/// Draws a scaled graphic. Image dimensions derive from the maximum
/// coordinates plus margin, clamped to [stroke_thickness, max_dim].
inline RasterImage render(const InkGraphic& g, const RasterConfig& cfg) {
  const detail::Extent e = detail::graphic_extent(g);
  if (e.empty) throw EmptyGraphic("render: graphic has no points");
  if (e.xmin < 0.0 || e.ymin < 0.0) {
    throw NegativeCoordinate("render: graphic must be scaled to >= 0 coordinates");
  }

  const int w = std::clamp(static_cast<int>(std::ceil(e.xmax)) + cfg.margin + 1,
                           cfg.stroke_thickness, cfg.max_dim);
  const int h = std::clamp(static_cast<int>(std::ceil(e.ymax)) + cfg.margin + 1,
                           cfg.stroke_thickness, cfg.max_dim);
  RasterImage img(w, h);
  for (const Stroke& s : g.strokes) stamp_stroke(img, s, cfg.stroke_thickness);
  return img;
}

namespace detail {

// Clamp to the image without shrinking: the box is shifted inward first
// and only truncated when larger than the image itself.
inline BBox clip_box_keep_size(const BBox& b, double width, double height) {
  const double w = std::min(b.width(), width);
  const double h = std::min(b.height(), height);
  const double xmin = std::clamp(b.xmin, 0.0, width - w);
  const double ymin = std::clamp(b.ymin, 0.0, height - h);
  return BBox{xmin, ymin, xmin + w, ymin + h};
}

inline BBox expand_to_min_dim(BBox b, double min_dim) {
  if (b.width() < min_dim) {
    const double cx = b.center_x();
    b.xmin = cx - min_dim / 2.0;
    b.xmax = cx + min_dim / 2.0;
  }
  if (b.height() < min_dim) {
    const double cy = b.center_y();
    b.ymin = cy - min_dim / 2.0;
    b.ymax = cy + min_dim / 2.0;
  }
  return b;
}

}  // namespace detail

/// Per symbol: coordinate extent, expanded by half the stroke thickness,
/// then raised to the minimum box dimension, then clamped to the image.
inline std::vector<TruthBox> extract_truth_boxes(const InkGraphic& g,
                                                 const RasterImage& image,
                                                 const ClassVocabulary& vocab,
                                                 const RasterConfig& cfg) {
  std::vector<TruthBox> out;
  for (const SymbolAnnotation& sym : g.symbols) {
    const int cls = vocab.lookup(sym.label);
    if (cls <= 0) {
      throw UnknownLabel("symbol label '" + sym.label + "' not in vocabulary");
    }
    detail::Extent e;
    for (const std::string& sid : sym.stroke_ids) {
      const Stroke* s = g.find_stroke(sid);
      if (s == nullptr) {
        throw DanglingRef("annotation references unknown stroke '" + sid + "'");
      }
      for (const Point& p : s->points) e.add(p);
    }
    if (e.empty) continue;

    const double half = cfg.stroke_thickness / 2.0;
    BBox box{e.xmin - half, e.ymin - half, e.xmax + half, e.ymax + half};
    box = detail::expand_to_min_dim(box, cfg.min_box_dim);
    box = detail::clip_box_keep_size(box, image.width, image.height);
    out.push_back(TruthBox{cls, box});
  }
  return out;
}

/// scale -> render -> extract ground truth, as one call.
inline RasterSample make_sample(const InkGraphic& g, const ClassVocabulary& vocab,
                                const RasterConfig& cfg) {
  const InkGraphic scaled = scale_graphic(g, cfg);
  RasterSample sample;
  sample.image = render(scaled, cfg);
  sample.truth = extract_truth_boxes(scaled, sample.image, vocab, cfg);
  sample.source_id = g.id;
  return sample;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5) I/O.

inline void write_pgm(const RasterImage& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open '" + path + "' for writing");
  char header[64];
  const int n = std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n",
                              image.width, image.height);
  out.write(header, n);
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoFailure("short write to '" + path + "'");
}

namespace detail {

// Next whitespace-delimited token, skipping '#' comment lines.
inline std::string pgm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

inline int pgm_int(std::istream& in, const char* what) {
  const std::string tok = pgm_token(in);
  int value = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (tok.empty() || ec != std::errc() || p != tok.data() + tok.size()) {
    throw BadHeader(std::string("PGM header: bad ") + what);
  }
  return value;
}

}  // namespace detail

inline RasterImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open '" + path + "' for reading");
  std::string magic = detail::pgm_token(in);
  if (magic != "P5") throw BadMagic("not a binary PGM: magic '" + magic + "'");
  const int w = detail::pgm_int(in, "width");
  const int h = detail::pgm_int(in, "height");
  const int maxval = detail::pgm_int(in, "maxval");
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) {
    throw BadHeader("PGM header: unsupported dimensions or maxval");
  }
  RasterImage img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw IoFailure("PGM pixel data truncated in '" + path + "'");
  }
  return img;
}

// ---------------------------------------------------------------------------
// Synthetic dataset: desk-scale stand-in for real ink corpora.

/// Fixed vocabulary of the synthetic generator: box, cross, disc.
inline ClassVocabulary synthetic_vocabulary() {
  return ClassVocabulary::from_symbol_names({"box", "cross", "disc"});
}

namespace detail {

using rng::uniform;
using rng::uniform_int;

struct SymbolDraft {
  int cls = 0;  // 0 box, 1 cross, 2 disc
  double cx = 0, cy = 0, w = 0, h = 0;
  BBox padded() const {
    return BBox{cx - w / 2 - 2, cy - h / 2 - 2, cx + w / 2 + 2, cy + h / 2 + 2};
  }
};

inline void append_symbol_strokes(InkGraphic& g, SymbolAnnotation& sym,
                                  const SymbolDraft& d, std::mt19937_64& rng) {
  auto jitter = [&rng]() { return uniform(rng, -1.2, 1.2); };
  auto add_stroke = [&g, &sym](std::vector<Point> pts) {
    Stroke s;
    s.id = std::to_string(g.strokes.size());
    s.points = std::move(pts);
    sym.stroke_ids.insert(s.id);
    g.strokes.push_back(std::move(s));
  };

  const double x0 = d.cx - d.w / 2, x1 = d.cx + d.w / 2;
  const double y0 = d.cy - d.h / 2, y1 = d.cy + d.h / 2;
  if (d.cls == 0) {
    // Rectangle as one closed 4-segment stroke.
    std::vector<Point> pts = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}};
    for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
      pts[i].x += jitter();
      pts[i].y += jitter();
    }
    add_stroke(std::move(pts));
  } else if (d.cls == 1) {
    // Two crossing diagonal segments.
    add_stroke({{x0 + jitter(), y0 + jitter()}, {x1 + jitter(), y1 + jitter()}});
    add_stroke({{x1 + jitter(), y0 + jitter()}, {x0 + jitter(), y1 + jitter()}});
  } else {
    // Closed 24-segment polyline circle.
    std::vector<Point> pts;
    const double rx = d.w / 2, ry = d.h / 2;
    for (int k = 0; k <= 24; ++k) {
      const double a = 2.0 * 3.14159265358979323846 * k / 24.0;
      const double wobble = (k == 0 || k == 24) ? 0.0 : uniform(rng, -0.015, 0.015);
      pts.push_back(Point{d.cx + rx * (1.0 + wobble) * std::cos(a),
                          d.cy + ry * (1.0 + wobble) * std::sin(a)});
    }
    add_stroke(std::move(pts));
  }
}

}  // namespace detail

/// Deterministic synthetic graphics: 3-8 non-overlapping symbols from the
/// classes box / cross / disc, sizes 20-120 px. The graphics are returned
/// before rasterization so property tests can drive the raster pipeline.
inline std::vector<InkGraphic> generate_synthetic_graphics(
    int n, std::uint64_t seed, const RasterConfig& cfg) {
  if (n < 1) throw BadCount("generate_synthetic_graphics: n must be >= 1");
  const ClassVocabulary vocab = synthetic_vocabulary();
  std::mt19937_64 rng(seed);

  std::vector<InkGraphic> out;
  out.reserve(n);
  for (int idx = 0; idx < n; ++idx) {
    const double canvas_w = cfg.max_dim - 2.0 * cfg.margin;
    const double canvas_h = canvas_w * detail::uniform(rng, 0.62, 1.0);

    std::vector<detail::SymbolDraft> placed;
    const int want = detail::uniform_int(rng, 3, 8);
    for (int s = 0; s < want; ++s) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        detail::SymbolDraft d;
        d.cls = detail::uniform_int(rng, 0, 2);
        d.w = detail::uniform(rng, 20.0, 120.0);
        d.h = d.cls == 2 ? d.w : detail::uniform(rng, 20.0, 120.0);
        // The first two symbols pin the canvas corners so the graphic's
        // extent (and with it the symbol scale) stays close to the canvas.
        if (s == 0) {
          d.cx = d.w / 2 + detail::uniform(rng, 2.0, 16.0);
          d.cy = d.h / 2 + detail::uniform(rng, 2.0, 16.0);
        } else if (s == 1) {
          d.cx = canvas_w - d.w / 2 - detail::uniform(rng, 2.0, 16.0);
          d.cy = canvas_h - d.h / 2 - detail::uniform(rng, 2.0, 16.0);
        } else {
          d.cx = detail::uniform(rng, d.w / 2 + 4, canvas_w - d.w / 2 - 4);
          d.cy = detail::uniform(rng, d.h / 2 + 4, canvas_h - d.h / 2 - 4);
        }
        bool clear = true;
        for (const auto& other : placed) {
          if (iou(d.padded(), other.padded()) >= 0.05) {
            clear = false;
            break;
          }
        }
        if (clear) {
          placed.push_back(d);
          break;
        }
      }
    }

    InkGraphic g;
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", idx);
    g.id = name;
    for (const auto& d : placed) {
      SymbolAnnotation sym;
      sym.label = vocab.name(d.cls + 1);
      detail::append_symbol_strokes(g, sym, d, rng);
      g.symbols.push_back(std::move(sym));
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Rasterized form of generate_synthetic_graphics. Class indices follow
/// synthetic_vocabulary().
inline std::vector<RasterSample> generate_synthetic_dataset(
    int n, std::uint64_t seed, const RasterConfig& cfg) {
  if (n < 1) throw BadCount("generate_synthetic_dataset: n must be >= 1");
  const ClassVocabulary vocab = synthetic_vocabulary();
  std::vector<RasterSample> samples;
  samples.reserve(n);
  for (const InkGraphic& g : generate_synthetic_graphics(n, seed, cfg)) {
    samples.push_back(make_sample(g, vocab, cfg));
  }
  return samples;
}

}  // namespace inkdet
