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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "inkdet/checkpoint.hpp"
#include "inkdet/config.hpp"
#include "inkdet/dataset.hpp"
#include "inkdet/detector.hpp"
#include "inkdet/error.hpp"
#include "inkdet/eval.hpp"
#include "inkdet/ink_data.hpp"
#include "inkdet/rasterizer.hpp"

namespace inkdet::cli {

// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

namespace fs = std::filesystem;

namespace detail {

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const NonFiniteGradient& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NonScalarLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const BadConfig& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const BadFraction& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const BadCount& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}

inline RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_dataset_stats(const std::vector<AnnotationRecord>& records,
                                const ClassVocabulary& vocab,
                                const std::string& path) {
  std::map<std::string, int> class_hist;
  for (int c = 1; c < vocab.size(); ++c) class_hist[vocab.name(c)] = 0;
  // 16 px box-dimension buckets, final bucket is open-ended.
  std::vector<int> dim_hist(17, 0);
  int boxes = 0;
  double min_dim = 0, max_dim = 0, sum_dim = 0;
  for (const AnnotationRecord& r : records) {
    for (const AnnotatedObject& o : r.objects) {
      ++class_hist[o.class_name];
      for (double d : {o.box.width(), o.box.height()}) {
        if (boxes == 0 && sum_dim == 0) {
          min_dim = max_dim = d;
        }
        min_dim = std::min(min_dim, d);
        max_dim = std::max(max_dim, d);
        sum_dim += d;
        ++dim_hist[std::min<std::size_t>(static_cast<std::size_t>(d / 16.0), 16)];
      }
      ++boxes;
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open '" + path + "' for writing");
  out << "images " << records.size() << "\n";
  out << "boxes " << boxes << "\n";
  char buf[128];
  if (boxes > 0) {
    std::snprintf(buf, sizeof(buf), "box_dim_min %.2f\nbox_dim_mean %.2f\nbox_dim_max %.2f\n",
                  min_dim, sum_dim / (2.0 * boxes), max_dim);
    out << buf;
  }
  for (const auto& [name, count] : class_hist) {
    out << "class " << name << " " << count << "\n";
  }
  for (std::size_t b = 0; b < dim_hist.size(); ++b) {
    if (dim_hist[b] == 0) continue;
    if (b < 16) {
      out << "box_dim_bucket " << b * 16 << "-" << (b + 1) * 16 << " " << dim_hist[b] << "\n";
    } else {
      out << "box_dim_bucket 256+ " << dim_hist[b] << "\n";
    }
  }
}

inline std::vector<RasterSample> load_dataset(const std::string& data_dir,
                                              const std::string& annotation_file,
                                              const ClassVocabulary& vocab) {
  const std::vector<AnnotationRecord> records =
      read_annotations(data_dir + "/" + annotation_file);
  std::vector<RasterSample> samples;
  samples.reserve(records.size());
  for (const AnnotationRecord& r : records) {
    samples.push_back(load_sample(r, data_dir, vocab));
  }
  return samples;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// convert: InkML directory -> PGM images + annotations + vocabulary.

struct ConvertOptions {
  std::string input_dir;
  std::string out_dir;
  std::string config_path;
  bool no_split = false;
};

inline int run_convert(const ConvertOptions& opt) {
  return detail::guarded([&]() -> int {
    const RunConfig cfg = detail::config_or_default(opt.config_path);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(opt.input_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".inkml") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      throw MissingData("no .inkml files in '" + opt.input_dir + "'");
    }

    std::vector<InkGraphic> graphics;
    int failures = 0;
    for (const fs::path& f : files) {
      try {
        InkGraphic g = parse_inkml(detail::read_file(f.string()));
        g.id = f.stem().string();
        graphics.push_back(std::move(g));
      } catch (const Error& e) {
        std::cerr << "warning: " << f.filename().string() << ": " << e.what() << "\n";
        ++failures;
      }
    }
    if (graphics.empty()) {
      std::cerr << "error: all " << failures << " input files failed to parse\n";
      return kExitData;
    }

    const ClassVocabulary vocab = build_vocabulary(graphics);
    fs::create_directories(opt.out_dir);

    auto rasterize_all = [&](const std::vector<InkGraphic>& gs) {
      std::vector<AnnotationRecord> records;
      records.reserve(gs.size());
      for (const InkGraphic& g : gs) {
        const RasterSample sample = make_sample(g, vocab, cfg.raster);
        const std::string file = g.id + ".pgm";
        write_pgm(sample.image, opt.out_dir + "/" + file);
        records.push_back(to_annotation(sample, vocab, file));
      }
      return records;
    };

    std::vector<AnnotationRecord> all_records;
    if (opt.no_split) {
      all_records = rasterize_all(graphics);
      write_annotations(all_records, opt.out_dir + "/annotations.txt");
    } else {
      const auto [train, val] = split_train_val(
          graphics, cfg.split_fraction, static_cast<std::uint32_t>(cfg.detector.seed));
      const std::vector<AnnotationRecord> train_records = rasterize_all(train);
      const std::vector<AnnotationRecord> val_records = rasterize_all(val);
      write_annotations(train_records, opt.out_dir + "/train.txt");
      write_annotations(val_records, opt.out_dir + "/val.txt");
      all_records = train_records;
      all_records.insert(all_records.end(), val_records.begin(), val_records.end());
      std::cout << "train " << train_records.size() << " val " << val_records.size()
                << "\n";
    }
    write_vocabulary(vocab, opt.out_dir + "/vocab.txt");
    detail::write_dataset_stats(all_records, vocab, opt.out_dir + "/stats.txt");
    std::cout << "converted " << graphics.size() << " graphics ("
              << failures << " failed), " << vocab.size() - 1 << " classes\n";
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// synth: generated dataset.

struct SynthOptions {
  int n = 8;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string config_path;
  int split_train = -1;  // < 0: single annotations.txt
};

inline int run_synth(const SynthOptions& opt) {
  return detail::guarded([&]() -> int {
    const RunConfig cfg = detail::config_or_default(opt.config_path);
    if (opt.split_train >= 0 && opt.split_train > opt.n) {
      throw BadCount("--split-train exceeds --n");
    }
    const ClassVocabulary vocab = synthetic_vocabulary();
    const std::vector<RasterSample> samples =
        generate_synthetic_dataset(opt.n, opt.seed, cfg.raster);
    fs::create_directories(opt.out_dir);

    std::vector<AnnotationRecord> records;
    for (const RasterSample& s : samples) {
      const std::string file = s.source_id + ".pgm";
      write_pgm(s.image, opt.out_dir + "/" + file);
      records.push_back(to_annotation(s, vocab, file));
    }
    if (opt.split_train >= 0) {
      write_annotations({records.begin(), records.begin() + opt.split_train},
                        opt.out_dir + "/train.txt");
      write_annotations({records.begin() + opt.split_train, records.end()},
                        opt.out_dir + "/val.txt");
    } else {
      write_annotations(records, opt.out_dir + "/annotations.txt");
    }
    write_vocabulary(vocab, opt.out_dir + "/vocab.txt");
    detail::write_dataset_stats(records, vocab, opt.out_dir + "/stats.txt");
    std::cout << "generated " << samples.size() << " synthetic samples\n";
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// train.

struct TrainOptions {
  std::string data_dir;
  std::string config_path;
  std::string out_checkpoint;
};

inline int run_train(const TrainOptions& opt) {
  return detail::guarded([&]() -> int {
    const RunConfig cfg = detail::config_or_default(opt.config_path);
    const std::string data_dir = !opt.data_dir.empty() ? opt.data_dir : cfg.data_dir;
    const std::string out = !opt.out_checkpoint.empty() ? opt.out_checkpoint
                                                        : cfg.checkpoint_path;
    if (data_dir.empty() || out.empty()) {
      throw BadConfig("train requires --data and --out (or config defaults)");
    }
    const ClassVocabulary vocab = read_vocabulary(data_dir + "/vocab.txt");
    std::string annotation_file = "train.txt";
    if (!fs::exists(data_dir + "/train.txt")) {
      if (!fs::exists(data_dir + "/annotations.txt")) {
        throw MissingData("no train.txt or annotations.txt in '" + data_dir + "'");
      }
      annotation_file = "annotations.txt";
    }
    const std::vector<RasterSample> samples =
        detail::load_dataset(data_dir, annotation_file, vocab);

    DetectorModel<float> model = make_detector<float>(cfg.detector, vocab);
    const std::string metrics_path = out + ".metrics.csv";
    std::ofstream metrics(metrics_path, std::ios::binary);
    if (!metrics) throw IoFailure("cannot open '" + metrics_path + "' for writing");

    const LossBreakdown final_loss = train_detector(
        model, samples, &metrics,
        [&out](const DetectorModel<float>& m, int) { save_checkpoint(m, out); });

    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "final_loss total=%.6f rpn_cls=%.6f rpn_reg=%.6f roi_cls=%.6f "
                  "roi_reg=%.6f\n",
                  final_loss.total, final_loss.rpn_cls, final_loss.rpn_reg,
                  final_loss.roi_cls, final_loss.roi_reg);
    std::cout << buf << "checkpoint " << out << "\nmetrics " << metrics_path << "\n";
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// detect.

struct DetectOptions {
  std::string image_path;
  std::string checkpoint_path;
  std::string overlay_path;
  std::string json_path;
};

inline int run_detect(const DetectOptions& opt, std::ostream& out = std::cout) {
  return detail::guarded([&]() -> int {
    DetectorModel<float> model = load_checkpoint(opt.checkpoint_path);
    const RasterImage image = read_pgm(opt.image_path);
    const std::vector<Detection> dets = detect(image, model);

    char buf[192];
    for (const Detection& d : dets) {
      std::snprintf(buf, sizeof(buf), "%s %.6f %.2f %.2f %.2f %.2f\n",
                    model.vocab.name(d.class_index).c_str(), d.score, d.box.xmin,
                    d.box.ymin, d.box.xmax, d.box.ymax);
      out << buf;
    }
    if (!opt.overlay_path.empty()) {
      render_overlay(image, dets, {}, opt.overlay_path);
    }
    if (!opt.json_path.empty()) {
      std::ofstream js(opt.json_path, std::ios::binary);
      if (!js) throw IoFailure("cannot open '" + opt.json_path + "' for writing");
      js << "{\n  \"image\": \"" << opt.image_path << "\",\n  \"detections\": [";
      for (std::size_t i = 0; i < dets.size(); ++i) {
        std::snprintf(buf, sizeof(buf),
                      "%s\n    {\"class\": \"%s\", \"score\": %.6f, "
                      "\"box\": [%.2f, %.2f, %.2f, %.2f]}",
                      i ? "," : "", model.vocab.name(dets[i].class_index).c_str(),
                      dets[i].score, dets[i].box.xmin, dets[i].box.ymin,
                      dets[i].box.xmax, dets[i].box.ymax);
        js << buf;
      }
      js << (dets.empty() ? "]\n}\n" : "\n  ]\n}\n");
    }
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// eval.

struct EvalOptions {
  std::string truth_path;       // annotation file
  std::string detections_path;  // directory of <stem>.det files or one file
  std::string report_path = "eval_report.csv";
  std::string config_path;
  double iou_threshold = 0.5;
};

inline int run_eval(const EvalOptions& opt, std::ostream& out = std::cout) {
  return detail::guarded([&]() -> int {
    const RunConfig cfg = detail::config_or_default(opt.config_path);
    if (!(opt.iou_threshold > 0.0 && opt.iou_threshold <= 1.0)) {
      throw BadConfig("--iou must lie in (0,1]");
    }
    const std::vector<AnnotationRecord> records = read_annotations(opt.truth_path);

    // Vocabulary: vocab.txt next to the truth file when present, else the
    // class names appearing in the truth.
    ClassVocabulary vocab;
    const fs::path vocab_file = fs::path(opt.truth_path).parent_path() / "vocab.txt";
    if (fs::exists(vocab_file)) {
      vocab = read_vocabulary(vocab_file.string());
    } else {
      std::set<std::string> names;
      for (const AnnotationRecord& r : records) {
        for (const AnnotatedObject& o : r.objects) names.insert(o.class_name);
      }
      vocab = ClassVocabulary::from_symbol_names({names.begin(), names.end()});
    }

    // Per-image detections, keyed by image file stem.
    std::map<std::string, std::vector<NamedDetection>> dets_by_stem;
    if (fs::is_directory(opt.detections_path)) {
      for (const auto& entry : fs::directory_iterator(opt.detections_path)) {
        if (entry.is_regular_file() && entry.path().extension() == ".det") {
          dets_by_stem[entry.path().stem().string()] =
              read_detection_lines(entry.path().string());
        }
      }
    } else {
      // Single file with "image <name>" group headers.
      std::ifstream in(opt.detections_path);
      if (!in) throw IoFailure("cannot open '" + opt.detections_path + "'");
      std::string line, current;
      std::vector<std::string> block;
      auto flush = [&]() {
        if (current.empty()) return;
        std::string text;
        for (const std::string& l : block) text += l + "\n";
        std::stringstream ss(text);
        std::vector<NamedDetection> ds;
        std::string dl;
        while (std::getline(ss, dl)) {
          if (dl.empty()) continue;
          const auto toks = inkdet::detail::split_ws(dl);
          if (toks.empty()) continue;
          const std::size_t n = toks.size();
          if (n < 6) throw BadHeader("bad detection line: " + dl);
          NamedDetection d;
          d.class_name = inkdet::detail::join(toks, 0, n - 5);
          d.score = inkdet::detail::annotation_number(toks[n - 5], opt.detections_path);
          d.box = BBox{inkdet::detail::annotation_number(toks[n - 4], opt.detections_path),
                       inkdet::detail::annotation_number(toks[n - 3], opt.detections_path),
                       inkdet::detail::annotation_number(toks[n - 2], opt.detections_path),
                       inkdet::detail::annotation_number(toks[n - 1], opt.detections_path)};
          ds.push_back(std::move(d));
        }
        dets_by_stem[fs::path(current).stem().string()] = std::move(ds);
        block.clear();
      };
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto toks = inkdet::detail::split_ws(line);
        if (!toks.empty() && toks[0] == "image") {
          flush();
          current = inkdet::detail::join(toks, 1, toks.size());
        } else if (!toks.empty() && toks[0] == "detection") {
          block.push_back(inkdet::detail::join(toks, 1, toks.size()));
        } else {
          block.push_back(line);
        }
      }
      flush();
    }

    std::vector<std::vector<TruthBox>> truth_per_image;
    std::vector<std::vector<Detection>> dets_per_image;
    for (const AnnotationRecord& r : records) {
      std::vector<TruthBox> truth;
      for (const AnnotatedObject& o : r.objects) {
        const int cls = vocab.lookup(o.class_name);
        if (cls <= 0) throw UnknownClass("truth class '" + o.class_name + "' not in vocabulary");
        truth.push_back(TruthBox{cls, o.box});
      }
      truth_per_image.push_back(std::move(truth));

      std::vector<Detection> dets;
      const auto it = dets_by_stem.find(fs::path(r.image_file).stem().string());
      if (it != dets_by_stem.end()) {
        for (const NamedDetection& d : it->second) {
          const int cls = vocab.lookup(d.class_name);
          if (cls <= 0) {
            throw UnknownClass("detection class '" + d.class_name + "' not in vocabulary");
          }
          dets.push_back(Detection{d.box, cls, d.score});
        }
      }
      dets_per_image.push_back(std::move(dets));
    }

    const ApInterpolation interp = cfg.ap_interpolation == "eleven_point"
                                       ? ApInterpolation::kElevenPoint
                                       : ApInterpolation::kAllPoints;
    const EvalReport report =
        evaluate(truth_per_image, dets_per_image, vocab, opt.iou_threshold, interp);

    char buf[160];
    out << "class                        AP    truth     dets\n";
    for (const auto& [name, e] : report.per_class) {
      std::snprintf(buf, sizeof(buf), "%-24s %6.1f %8d %8d\n", name.c_str(),
                    e.num_truth > 0 ? e.ap * 100.0 : 0.0, e.num_truth,
                    e.num_detections);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), "mAP %.1f\n", report.map * 100.0);
    out << buf;

    if (!opt.report_path.empty()) {
      std::ofstream rep(opt.report_path, std::ios::binary);
      if (!rep) throw IoFailure("cannot open '" + opt.report_path + "' for writing");
      rep << "class,AP,num_truth,num_dets\n";
      for (const auto& [name, e] : report.per_class) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%d,%d\n", name.c_str(), e.ap,
                      e.num_truth, e.num_detections);
        rep << buf;
      }
      std::snprintf(buf, sizeof(buf), "mAP,%.6f\n", report.map);
      rep << buf;
    }
    return kExitOk;
  });
}

}  // namespace inkdet::cli
