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
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "inkdet/boxes.hpp"
#include "inkdet/detector.hpp"
#include "inkdet/error.hpp"
#include "inkdet/ink_data.hpp"
#include "inkdet/rasterizer.hpp"

namespace inkdet {

// Annotation files are line-delimited text:
//   image <filename> <width> <height>
//   object <class name> <xmin> <ymin> <xmax> <ymax>
// Lines starting with '#' are comments. The class name may contain spaces;
// the final four fields of an object line are always the coordinates.

struct AnnotatedObject {
  std::string class_name;
  BBox box;
};

struct AnnotationRecord {
  std::string image_file;
  int width = 0;
  int height = 0;
  std::vector<AnnotatedObject> objects;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> toks;
  std::stringstream ss(line);
  std::string t;
  while (ss >> t) toks.push_back(t);
  return toks;
}

inline std::string join(const std::vector<std::string>& toks, std::size_t first,
                        std::size_t last) {
  std::string out;
  for (std::size_t i = first; i < last; ++i) {
    if (i > first) out += " ";
    out += toks[i];
  }
  return out;
}

inline double annotation_number(const std::string& tok, const std::string& path) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size()) {
    throw BadHeader("annotation file '" + path + "': bad number '" + tok + "'");
  }
  return v;
}

}  // namespace detail

inline void write_annotations(const std::vector<AnnotationRecord>& records,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open '" + path + "' for writing");
  out << "# inkdet annotations v1\n";
  char buf[256];
  for (const AnnotationRecord& r : records) {
    out << "image " << r.image_file << " " << r.width << " " << r.height << "\n";
    for (const AnnotatedObject& o : r.objects) {
      std::snprintf(buf, sizeof(buf), " %.6f %.6f %.6f %.6f\n", o.box.xmin,
                    o.box.ymin, o.box.xmax, o.box.ymax);
      out << "object " << o.class_name << buf;
    }
  }
  if (!out) throw IoFailure("short write to '" + path + "'");
}

inline std::vector<AnnotationRecord> read_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open annotation file '" + path + "'");
  std::vector<AnnotationRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::vector<std::string> toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "image") {
      if (toks.size() < 4) {
        throw BadHeader("annotation file '" + path + "': bad image line: " + line);
      }
      AnnotationRecord r;
      r.image_file = detail::join(toks, 1, toks.size() - 2);
      r.width = static_cast<int>(detail::annotation_number(toks[toks.size() - 2], path));
      r.height = static_cast<int>(detail::annotation_number(toks[toks.size() - 1], path));
      records.push_back(std::move(r));
    } else if (toks[0] == "object") {
      if (records.empty() || toks.size() < 6) {
        throw BadHeader("annotation file '" + path + "': bad object line: " + line);
      }
      AnnotatedObject o;
      o.class_name = detail::join(toks, 1, toks.size() - 4);
      const std::size_t n = toks.size();
      o.box = BBox{detail::annotation_number(toks[n - 4], path),
                   detail::annotation_number(toks[n - 3], path),
                   detail::annotation_number(toks[n - 2], path),
                   detail::annotation_number(toks[n - 1], path)};
      records.back().objects.push_back(std::move(o));
    } else {
      throw BadHeader("annotation file '" + path + "': unknown record: " + line);
    }
  }
  return records;
}

inline void write_vocabulary(const ClassVocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open '" + path + "' for writing");
  for (const std::string& name : vocab.names()) out << name << "\n";
  if (!out) throw IoFailure("short write to '" + path + "'");
}

inline ClassVocabulary read_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open vocabulary file '" + path + "'");
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  if (names.empty() || names[0] != "background") {
    throw BadHeader("vocabulary file '" + path + "' must start with 'background'");
  }
  names.erase(names.begin());
  return ClassVocabulary::from_symbol_names(std::move(names));
}

/// Builds a training sample from an annotation record: reads the PGM,
/// checks dimensions and maps class names through the vocabulary.
inline RasterSample load_sample(const AnnotationRecord& record,
                                const std::string& image_dir,
                                const ClassVocabulary& vocab) {
  RasterSample s;
  s.image = read_pgm(image_dir + "/" + record.image_file);
  if (s.image.width != record.width || s.image.height != record.height) {
    throw BadHeader("image '" + record.image_file +
                    "' dimensions do not match its annotation record");
  }
  s.source_id = record.image_file;
  for (const AnnotatedObject& o : record.objects) {
    const int cls = vocab.lookup(o.class_name);
    if (cls <= 0) throw UnknownLabel("class '" + o.class_name + "' not in vocabulary");
    s.truth.push_back(TruthBox{cls, o.box});
  }
  return s;
}

/// Converts a raster sample back to an annotation record.
inline AnnotationRecord to_annotation(const RasterSample& sample,
                                      const ClassVocabulary& vocab,
                                      const std::string& image_file) {
  AnnotationRecord r;
  r.image_file = image_file;
  r.width = sample.image.width;
  r.height = sample.image.height;
  for (const TruthBox& t : sample.truth) {
    r.objects.push_back(AnnotatedObject{vocab.name(t.class_index), t.box});
  }
  return r;
}

// ---------------------------------------------------------------------------
// Detection record files ("class score xmin ymin xmax ymax" per line, the
// format printed by the detect command).

struct NamedDetection {
  std::string class_name;
  double score = 0.0;
  BBox box;
};

inline std::vector<NamedDetection> read_detection_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open detection file '" + path + "'");
  std::vector<NamedDetection> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::vector<std::string> toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() < 6) {
      throw BadHeader("detection file '" + path + "': bad line: " + line);
    }
    NamedDetection d;
    const std::size_t n = toks.size();
    d.class_name = detail::join(toks, 0, n - 5);
    d.score = detail::annotation_number(toks[n - 5], path);
    d.box = BBox{detail::annotation_number(toks[n - 4], path),
                 detail::annotation_number(toks[n - 3], path),
                 detail::annotation_number(toks[n - 2], path),
                 detail::annotation_number(toks[n - 1], path)};
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace inkdet
