// Copyright 2026 The specemo Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SPECEMO_NN_WEIGHTS_H_
#define SPECEMO_NN_WEIGHTS_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "specemo/nn/tensor.h"

namespace specemo::nn {

using TensorMap = std::map<std::string, Tensor>;

/// Layout: u64 little-endian header length, a JSON header, then raw
/// little-endian float32 payloads in name order. The header lists, per
/// tensor, dtype, shape, payload byte range and a SHA-256 of the payload.
struct WeightFile {
  TensorMap tensors;
  nlohmann::json metadata = nlohmann::json::object();
};

std::vector<uint8_t> EncodeWeights(const WeightFile& file);
WeightFile DecodeWeights(const std::vector<uint8_t>& bytes, const std::string& what = "weights");

void SaveWeights(const std::filesystem::path& path, const WeightFile& file);
WeightFile LoadWeights(const std::filesystem::path& path);

/// Returns the tensor or throws MissingTensor / ShapeMismatch.
const Tensor& RequireTensor(const TensorMap& tensors, const std::string& name, const Shape& shape);

}  // namespace specemo::nn

#endif  // SPECEMO_NN_WEIGHTS_H_
