// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#ifndef CPRGCN_CHECKPOINT_HPP
#define CPRGCN_CHECKPOINT_HPP

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cprgcn/tensor.hpp"

namespace cprgcn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Writes a JSON manifest (name, shape, byte offset per tensor) and a flat
/// little-endian float64 payload. Round-trip is bit-exact.
void save_checkpoint(const NamedTensors& tensors,
                     const std::filesystem::path& manifest_path,
                     const std::filesystem::path& payload_path);

/// Loads values back into the given tensors; every name must be present in
/// the manifest with a matching shape.
void load_checkpoint(NamedTensors& tensors,
                     const std::filesystem::path& manifest_path,
                     const std::filesystem::path& payload_path);

}  // namespace cprgcn

#endif  // CPRGCN_CHECKPOINT_HPP
