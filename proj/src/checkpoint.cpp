// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#include "cprgcn/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>

namespace cprgcn {

namespace {

// Payloads are written on little-endian hosts only; the manifest records the
// byte order so a reader can reject a mismatch.
void write_doubles(std::ofstream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const NamedTensors& tensors,
                     const std::filesystem::path& manifest_path,
                     const std::filesystem::path& payload_path) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["dtype"] = "float64";
  manifest["byte_order"] = "little";
  manifest["payload"] = payload_path.filename().string();
  auto& entries = manifest["tensors"];
  entries = nlohmann::json::array();

  std::ofstream payload(payload_path, std::ios::binary | std::ios::trunc);
  if (!payload)
    throw std::runtime_error("cannot open payload file " +
                             payload_path.string());
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    entries.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", offset}});
    write_doubles(payload, t.values());
    offset += t.size() * sizeof(double);
  }
  manifest["payload_bytes"] = offset;

  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf)
    throw std::runtime_error("cannot open manifest file " +
                             manifest_path.string());
  mf << manifest.dump(2) << "\n";
}

void load_checkpoint(NamedTensors& tensors,
                     const std::filesystem::path& manifest_path,
                     const std::filesystem::path& payload_path) {
  std::ifstream mf(manifest_path);
  if (!mf)
    throw std::runtime_error("cannot open manifest file " +
                             manifest_path.string());
  nlohmann::json manifest;
  mf >> manifest;
  if (manifest.value("byte_order", "little") != std::string("little"))
    throw std::runtime_error("checkpoint byte order is not little-endian");
  if (manifest.value("dtype", "float64") != std::string("float64"))
    throw std::runtime_error("checkpoint dtype is not float64");

  struct Entry {
    Shape shape;
    std::size_t offset;
  };
  std::map<std::string, Entry> index;
  for (const auto& e : manifest.at("tensors"))
    index[e.at("name").get<std::string>()] = {
        e.at("shape").get<Shape>(), e.at("offset").get<std::size_t>()};

  std::ifstream payload(payload_path, std::ios::binary);
  if (!payload)
    throw std::runtime_error("cannot open payload file " +
                             payload_path.string());
  for (auto& [name, t] : tensors) {
    auto it = index.find(name);
    if (it == index.end())
      throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape != t.shape())
      throw DimensionError("checkpoint tensor '" + name + "' has shape " +
                           shape_string(it->second.shape) + ", expected " +
                           shape_string(t.shape()));
    payload.seekg(static_cast<std::streamoff>(it->second.offset));
    payload.read(reinterpret_cast<char*>(t.values().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!payload)
      throw std::runtime_error("checkpoint payload truncated at tensor '" +
                               name + "'");
  }
}

}  // namespace cprgcn
