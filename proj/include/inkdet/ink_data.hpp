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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "inkdet/error.hpp"

namespace inkdet {

/// One pen coordinate in device units.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// One pen-down-to-pen-up polyline.
struct Stroke {
  std::string id;
  std::vector<Point> points;
};

/// A labeled subset of a graphic's strokes.
struct SymbolAnnotation {
  std::string label;
  std::set<std::string> stroke_ids;
};

/// Online handwritten graphic: ordered strokes plus symbol annotations.
struct InkGraphic {
  std::string id;
  std::vector<Stroke> strokes;
  std::vector<SymbolAnnotation> symbols;

  const Stroke* find_stroke(const std::string& stroke_id) const {
    for (const Stroke& s : strokes) {
      if (s.id == stroke_id) return &s;
    }
    return nullptr;
  }
};

/// Class name table. Index 0 is always the background class.
class ClassVocabulary {
 public:
  ClassVocabulary() { rebuild_index(); }

  /// Builds a vocabulary from symbol names; "background" is prepended.
  /// Names must not contain duplicates.
  static ClassVocabulary from_symbol_names(std::vector<std::string> names) {
    ClassVocabulary v;
    for (std::string& n : names) v.names_.push_back(std::move(n));
    v.rebuild_index();
    return v;
  }

  int size() const { return static_cast<int>(names_.size()); }

  /// Index of a class name, or -1 when absent.
  int lookup(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  const std::string& name(int index) const { return names_.at(index); }
  const std::vector<std::string>& names() const { return names_; }

  friend bool operator==(const ClassVocabulary& a, const ClassVocabulary& b) {
    return a.names_ == b.names_;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (int i = 0; i < static_cast<int>(names_.size()); ++i) {
      index_[names_[i]] = i;
    }
  }

  std::vector<std::string> names_{"background"};
  std::unordered_map<std::string, int> index_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_double_token(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

// "x y [extra...]" pairs separated by commas; extra channels are dropped.
inline std::vector<Point> parse_trace_points(const std::string& text,
                                             const std::string& trace_id) {
  std::vector<Point> points;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    std::string_view chunk(text.data() + pos,
                           (comma == std::string::npos ? text.size() : comma) -
                               pos);
    std::vector<std::string_view> toks;
    std::size_t i = 0;
    while (i < chunk.size()) {
      while (i < chunk.size() && std::isspace(static_cast<unsigned char>(chunk[i]))) ++i;
      std::size_t j = i;
      while (j < chunk.size() && !std::isspace(static_cast<unsigned char>(chunk[j]))) ++j;
      if (j > i) toks.push_back(chunk.substr(i, j - i));
      i = j;
    }
    if (!toks.empty()) {
      if (toks.size() < 2) {
        throw BadTrace("trace '" + trace_id + "': coordinate pair expected, got '" +
                       std::string(chunk) + "'");
      }
      Point p;
      if (!parse_double_token(toks[0], p.x) || !parse_double_token(toks[1], p.y)) {
        throw BadTrace("trace '" + trace_id + "': unparsable coordinate token in '" +
                       std::string(chunk) + "'");
      }
      points.push_back(p);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return points;
}

struct GroupClaim {
  int group = -1;  // index into pending symbol list
  int depth = 0;   // nesting depth of labeled groups; deeper wins
};

struct InkmlWalkState {
  std::vector<Stroke> strokes;
  std::unordered_map<std::string, int> stroke_index;
  std::vector<SymbolAnnotation> groups;         // document order, refs filled later
  std::map<std::string, GroupClaim> claims;     // trace id -> owning group
  std::vector<int> labeled_stack;               // open labeled groups
  std::string graphic_id;
};

inline std::string element_attr(const boost::property_tree::ptree& node,
                                const char* name) {
  if (auto attrs = node.get_child_optional("<xmlattr>")) {
    if (auto v = attrs->get_optional<std::string>(name)) return *v;
  }
  return "";
}

inline void walk_inkml(const boost::property_tree::ptree& node,
                       InkmlWalkState& st) {
  for (const auto& [key, child] : node) {
    if (key == "<xmlattr>" || key == "<xmlcomment>" || key == "<xmltext>") {
      continue;
    }
    if (key == "trace") {
      std::string id = element_attr(child, "id");
      if (id.empty()) id = element_attr(child, "xml:id");
      if (id.empty()) id = std::to_string(st.strokes.size());
      if (st.stroke_index.count(id)) {
        throw BadTrace("trace '" + id + "': duplicate id");
      }
      Stroke s;
      s.id = id;
      s.points = parse_trace_points(child.get_value<std::string>(), id);
      if (s.points.empty()) {
        throw BadTrace("trace '" + id + "': no coordinates");
      }
      st.stroke_index[id] = static_cast<int>(st.strokes.size());
      st.strokes.push_back(std::move(s));
    } else if (key == "traceGroup") {
      std::string label;
      bool labeled = false;
      for (const auto& [ck, cc] : child) {
        if (ck == "annotation" && element_attr(cc, "type") == "truth") {
          label = trim(cc.get_value<std::string>());
          labeled = true;
          break;
        }
      }
      if (labeled) {
        st.labeled_stack.push_back(static_cast<int>(st.groups.size()));
        st.groups.push_back(SymbolAnnotation{label, {}});
      }
      walk_inkml(child, st);
      if (labeled) st.labeled_stack.pop_back();
    } else if (key == "traceView") {
      std::string ref = element_attr(child, "traceDataRef");
      if (!ref.empty() && ref.front() == '#') ref.erase(ref.begin());
      if (ref.empty()) {
        throw DanglingRef("traceView without traceDataRef");
      }
      if (!st.labeled_stack.empty()) {
        const int depth = static_cast<int>(st.labeled_stack.size());
        auto it = st.claims.find(ref);
        if (it == st.claims.end() || depth > it->second.depth) {
          st.claims[ref] = GroupClaim{st.labeled_stack.back(), depth};
        }
      } else {
        // Reference outside any labeled group; still validated below.
        st.claims.emplace(ref, GroupClaim{-1, 0});
      }
    } else if (key == "annotation") {
      if (st.labeled_stack.empty() && st.graphic_id.empty() &&
          element_attr(child, "type") == "UI") {
        st.graphic_id = trim(child.get_value<std::string>());
      }
    } else {
      // Unknown InkML elements are skipped, but their children may still
      // hold traces or groups.
      walk_inkml(child, st);
    }
  }
}

}  // namespace detail

/// Parses an InkML document (trace / traceGroup / annotation / traceView
/// subset). Strokes keep document order; nested truth-labeled traceGroups
/// are flattened with the innermost label winning.
inline InkGraphic parse_inkml(const std::string& document) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(document);
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw MalformedXml(e.what());
  }

  detail::InkmlWalkState st;
  detail::walk_inkml(tree, st);

  if (st.strokes.empty()) {
    throw EmptyGraphic("document contains no traces");
  }
  for (const auto& [ref, claim] : st.claims) {
    if (!st.stroke_index.count(ref)) {
      throw DanglingRef("traceView references unknown trace '" + ref + "'");
    }
    if (claim.group >= 0) {
      st.groups[claim.group].stroke_ids.insert(ref);
    }
  }

  InkGraphic g;
  g.id = st.graphic_id;
  g.strokes = std::move(st.strokes);
  for (SymbolAnnotation& sym : st.groups) {
    if (!sym.stroke_ids.empty()) g.symbols.push_back(std::move(sym));
  }
  return g;
}

/// "background" followed by all distinct labels in lexicographic order.
inline ClassVocabulary build_vocabulary(const std::vector<InkGraphic>& graphics) {
  std::set<std::string> labels;
  for (const InkGraphic& g : graphics) {
    for (const SymbolAnnotation& s : g.symbols) labels.insert(s.label);
  }
  labels.erase("background");  // reserved name stays at index 0
  return ClassVocabulary::from_symbol_names(
      std::vector<std::string>(labels.begin(), labels.end()));
}

/// Seeded random split; ceil(fraction * N) graphics go to the train set.
inline std::pair<std::vector<InkGraphic>, std::vector<InkGraphic>>
split_train_val(const std::vector<InkGraphic>& graphics, double fraction,
                std::uint32_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw BadFraction("split fraction must lie in (0,1)");
  }
  std::vector<int> order(graphics.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::mt19937 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(graphics.size())));
  std::pair<std::vector<InkGraphic>, std::vector<InkGraphic>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(graphics[order[i]]);
  }
  return out;
}

}  // namespace inkdet
