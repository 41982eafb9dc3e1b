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

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "inkdet/config.hpp"
#include "inkdet/detector.hpp"
#include "inkdet/error.hpp"

namespace inkdet {

// Checkpoint layout (little-endian):
//   magic "FRCN" | u32 version=1
//   u32 vocab count | per name: u32 length, bytes
//   u32 config length | canonical key=value text
//   u32 tensor count | per tensor: u32 name length, name, u8 rank,
//                      u32 dims[rank], f32 data
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xff),
      static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_str(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw TruncatedFile("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::string read_str(std::istream& in) {
  const std::uint32_t n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw TruncatedFile("checkpoint truncated");
  }
  return s;
}

}  // namespace detail

inline void save_checkpoint(const DetectorModel<float>& model,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open '" + path + "' for writing");
  out.write("FRCN", 4);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(model.vocab.size()));
  for (const std::string& name : model.vocab.names()) detail::write_str(out, name);
  detail::write_str(out, detector_config_to_text(model.config));
  detail::write_u32(out, static_cast<std::uint32_t>(model.params.size()));
  for (const Parameter<float>& p : model.params) {
    detail::write_str(out, p.name);
    const unsigned char rank = static_cast<unsigned char>(p.value.rank());
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (int d : p.value.shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(p.value.data.data()),
              static_cast<std::streamsize>(p.value.data.size() * sizeof(float)));
  }
  if (!out) throw IoFailure("short write to '" + path + "'");
}

inline DetectorModel<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open '" + path + "' for reading");

  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4) throw TruncatedFile("checkpoint truncated");
  if (std::memcmp(magic, "FRCN", 4) != 0) {
    throw BadMagic("not a checkpoint: bad magic");
  }
  const std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion) {
    throw VersionMismatch("unsupported checkpoint version " + std::to_string(version));
  }

  const std::uint32_t vocab_count = detail::read_u32(in);
  std::vector<std::string> names;
  names.reserve(vocab_count);
  for (std::uint32_t i = 0; i < vocab_count; ++i) names.push_back(detail::read_str(in));
  if (names.empty() || names[0] != "background") {
    throw BadCheckpoint("checkpoint vocabulary must start with 'background'");
  }
  names.erase(names.begin());
  const ClassVocabulary vocab = ClassVocabulary::from_symbol_names(std::move(names));

  const DetectorConfig cfg = detector_config_from_text(detail::read_str(in));

  // Build the expected parameter set, then overwrite values from the file.
  DetectorModel<float> model = make_detector<float>(cfg, vocab);
  const std::uint32_t tensor_count = detail::read_u32(in);
  if (tensor_count != model.params.size()) {
    throw BadCheckpoint("checkpoint holds " + std::to_string(tensor_count) +
                        " tensors, model expects " +
                        std::to_string(model.params.size()));
  }
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    const std::string name = detail::read_str(in);
    if (!seen.insert(name).second) {
      throw DuplicateTensorName("duplicate tensor '" + name + "'");
    }
    unsigned char rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 1);
    if (in.gcount() != 1) throw TruncatedFile("checkpoint truncated");
    std::vector<int> shape(rank);
    for (int d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(detail::read_u32(in));
    }
    Parameter<float>& p = model.param(name);  // BadCheckpoint when unknown
    if (p.value.shape != shape) {
      throw BadCheckpoint("tensor '" + name + "' has shape " + shape_str(shape) +
                          ", model expects " + shape_str(p.value.shape));
    }
    in.read(reinterpret_cast<char*>(p.value.data.data()),
            static_cast<std::streamsize>(p.value.data.size() * sizeof(float)));
    if (in.gcount() !=
        static_cast<std::streamsize>(p.value.data.size() * sizeof(float))) {
      throw TruncatedFile("checkpoint truncated");
    }
  }
  return model;
}

}  // namespace inkdet
