// SPDX-License-Identifier: Apache-2.0
//
// Flat binary tensor archive with a JSON manifest.
//
//   <stem>.bin   8-byte magic "PEFTLAB1" followed by every tensor's values as
//                little-endian float64, in manifest order
//   <stem>.json  {"format": "peftlab-tensor-archive", "version": 1,
//                 "tensors": [{"name", "shape", "offset", "count"}...],
//                 "meta": {...}}
//
// "offset" counts float64 values after the magic.
#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "peftlab/tensor.hpp"

namespace peftlab::archive {

static_assert(std::endian::native == std::endian::little, "archive layout assumes little-endian");

inline constexpr char kMagic[8] = {'P', 'E', 'F', 'T', 'L', 'A', 'B', '1'};
inline constexpr const char* kFormat = "peftlab-tensor-archive";

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Archive {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  }

  const Tensor& at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw InputError("archive: no tensor named " + name);
  }
};

inline std::filesystem::path bin_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".bin");
}

inline std::filesystem::path json_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".json");
}

inline void save(const std::filesystem::path& stem, const Archive& archive) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ofstream bin(bin_path(stem), std::ios::binary | std::ios::trunc);
  if (!bin) throw InputError("archive: cannot write " + bin_path(stem).string());
  bin.write(kMagic, sizeof(kMagic));
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : archive.tensors) {
    const auto d = t.tensor.data();
    bin.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
    entries.push_back({{"name", t.name},
                       {"shape", t.tensor.shape()},
                       {"offset", offset},
                       {"count", d.size()}});
    offset += d.size();
  }
  if (!bin) throw InputError("archive: write failed for " + bin_path(stem).string());
  nlohmann::json manifest = {
      {"format", kFormat}, {"version", 1}, {"tensors", entries}, {"meta", archive.meta}};
  std::ofstream js(json_path(stem), std::ios::trunc);
  js << manifest.dump(2) << '\n';
  if (!js) throw InputError("archive: write failed for " + json_path(stem).string());
}

inline Archive load(const std::filesystem::path& stem) {
  std::ifstream js(json_path(stem));
  if (!js) throw InputError("archive: cannot read " + json_path(stem).string());
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("archive: bad manifest " + json_path(stem).string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) {
    throw ParseError("archive: " + json_path(stem).string() + " is not a tensor archive");
  }
  std::ifstream bin(bin_path(stem), std::ios::binary);
  if (!bin) throw InputError("archive: cannot read " + bin_path(stem).string());
  char magic[sizeof(kMagic)];
  bin.read(magic, sizeof(magic));
  if (!bin || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("archive: bad magic in " + bin_path(stem).string());
  }
  std::vector<double> all((std::filesystem::file_size(bin_path(stem)) - sizeof(kMagic)) /
                          sizeof(double));
  bin.read(reinterpret_cast<char*>(all.data()),
           static_cast<std::streamsize>(all.size() * sizeof(double)));

  Archive out;
  out.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& e : manifest.at("tensors")) {
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto count = e.at("count").get<std::size_t>();
    if (count != numel(shape) || offset + count > all.size()) {
      throw ParseError("archive: entry " + e.at("name").get<std::string>() + " out of bounds");
    }
    std::vector<double> values(all.begin() + static_cast<std::ptrdiff_t>(offset),
                               all.begin() + static_cast<std::ptrdiff_t>(offset + count));
    out.tensors.push_back({e.at("name").get<std::string>(), Tensor(shape, std::move(values))});
  }
  return out;
}

inline Archive from_parameters(const ParameterList& params) {
  Archive a;
  for (const auto* p : params) a.tensors.push_back({p->name, p->tensor.detach()});
  return a;
}

// Copies archived values into matching parameters (by name and shape).
inline void load_into(const Archive& a, const ParameterList& params) {
  for (auto* p : params) {
    const Tensor& src = a.at(p->name);
    if (src.shape() != p->tensor.shape()) {
      throw InputError("archive: " + p->name + " has shape " + shape_str(src.shape()) +
                       ", model expects " + shape_str(p->tensor.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), p->tensor.mutable_data().begin());
  }
}

}  // namespace peftlab::archive
