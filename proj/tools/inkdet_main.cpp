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

#include <CLI11.hpp>

#include "inkdet/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"inkdet: symbol detection in online handwritten graphics"};
  app.require_subcommand(1);

  using namespace inkdet::cli;

  ConvertOptions convert_opt;
  auto* convert = app.add_subcommand(
      "convert", "Rasterize a directory of InkML files into a detection dataset");
  convert->add_option("--input", convert_opt.input_dir, "Directory of .inkml files")
      ->required();
  convert->add_option("--out", convert_opt.out_dir, "Output dataset directory")
      ->required();
  convert->add_option("--config", convert_opt.config_path, "key=value config file");
  convert->add_flag("--no-split", convert_opt.no_split,
                    "Write one annotations.txt instead of a train/val split");

  SynthOptions synth_opt;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic shape dataset");
  synth->add_option("--n", synth_opt.n, "Number of samples")->required();
  synth->add_option("--seed", synth_opt.seed, "Generator seed");
  synth->add_option("--out", synth_opt.out_dir, "Output dataset directory")
      ->required();
  synth->add_option("--config", synth_opt.config_path, "key=value config file");
  synth->add_option("--split-train", synth_opt.split_train,
                    "Put the first N samples into train.txt, the rest into val.txt");

  TrainOptions train_opt;
  auto* train = app.add_subcommand("train", "Train the detector");
  train->add_option("--data", train_opt.data_dir, "Dataset directory");
  train->add_option("--config", train_opt.config_path, "key=value config file");
  train->add_option("--out", train_opt.out_checkpoint, "Output checkpoint path");

  DetectOptions detect_opt;
  auto* det = app.add_subcommand("detect", "Detect symbols in a PGM image");
  det->add_option("--image", detect_opt.image_path, "Input PGM image")->required();
  det->add_option("--checkpoint", detect_opt.checkpoint_path, "Trained checkpoint")
      ->required();
  det->add_option("--overlay", detect_opt.overlay_path, "Write a PPM overlay here");
  det->add_option("--json", detect_opt.json_path, "Write detections as JSON here");

  EvalOptions eval_opt;
  auto* ev = app.add_subcommand("eval", "Score detections against ground truth");
  ev->add_option("--truth", eval_opt.truth_path, "Ground-truth annotation file")
      ->required();
  ev->add_option("--detections", eval_opt.detections_path,
                 "Directory of <image>.det files, or one grouped file")
      ->required();
  ev->add_option("--iou", eval_opt.iou_threshold, "Matching IoU threshold");
  ev->add_option("--report", eval_opt.report_path, "Machine-readable report path");
  ev->add_option("--config", eval_opt.config_path, "key=value config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (convert->parsed()) return run_convert(convert_opt);
  if (synth->parsed()) return run_synth(synth_opt);
  if (train->parsed()) return run_train(train_opt);
  if (det->parsed()) return run_detect(detect_opt);
  if (ev->parsed()) return run_eval(eval_opt);
  return kExitUsage;
}
