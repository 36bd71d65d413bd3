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

#include "specemo/nn/weights.h"

#include <bit>
#include <cstring>

#include "specemo/util.h"

namespace specemo::nn {
namespace {

constexpr const char* kFormat = "specemo-weights";
constexpr int kVersion = 1;

void PutF32(std::vector<uint8_t>& out, float v) {
  uint32_t bits = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
}

float GetF32(const uint8_t* p) {
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

std::vector<uint8_t> EncodeWeights(const WeightFile& file) {
  std::vector<uint8_t> payload;
  nlohmann::json entries = nlohmann::json::object();
  for (const auto& [name, t] : file.tensors) {
    const size_t begin = payload.size();
    for (float v : t.values()) PutF32(payload, v);
    const std::span<const uint8_t> bytes(payload.data() + begin, payload.size() - begin);
    entries[name] = {{"dtype", "F32"},
                     {"shape", t.shape()},
                     {"offsets", {begin, payload.size()}},
                     {"sha256", Sha256Hex(bytes)}};
  }
  nlohmann::json header = {{"format", kFormat},
                           {"version", kVersion},
                           {"metadata", file.metadata},
                           {"tensors", entries}};
  const std::string text = header.dump();
  std::vector<uint8_t> out;
  out.reserve(8 + text.size() + payload.size());
  const uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

WeightFile DecodeWeights(const std::vector<uint8_t>& bytes, const std::string& what) {
  auto bad = [&](const std::string& msg) {
    return Error(ErrorKind::kMalformedHeader, what + ": " + msg);
  };
  if (bytes.size() < 8) throw bad("truncated header length");
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(bytes[i]) << (8 * i);
  if (len > bytes.size() - 8) throw bad("header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw bad(std::string("header is not valid JSON (") + e.what() + ")");
  }
  if (header.value("format", "") != kFormat) throw bad("not a weights file");
  if (header.value("version", 0) != kVersion) throw bad("unsupported version");

  const uint8_t* payload = bytes.data() + 8 + len;
  const size_t payload_size = bytes.size() - 8 - len;
  WeightFile file;
  file.metadata = header.value("metadata", nlohmann::json::object());
  try {
    for (const auto& [name, e] : header.at("tensors").items()) {
      if (e.at("dtype").get<std::string>() != "F32")
        throw Error(ErrorKind::kUnsupportedEncoding, what + ": tensor '" + name + "' has dtype " +
                                                         e.at("dtype").get<std::string>());
      const Shape shape = e.at("shape").get<Shape>();
      const size_t begin = e.at("offsets").at(0).get<size_t>();
      const size_t end = e.at("offsets").at(1).get<size_t>();
      if (begin > end || end > payload_size || end - begin != ShapeSize(shape) * 4)
        throw bad("tensor '" + name + "' has inconsistent offsets");
      const std::span<const uint8_t> raw(payload + begin, end - begin);
      if (Sha256Hex(raw) != e.at("sha256").get<std::string>())
        throw Error(ErrorKind::kChecksumMismatch, what + ": tensor '" + name + "' checksum mismatch");
      Tensor t(shape);
      for (size_t i = 0; i < t.size(); ++i) t[i] = GetF32(raw.data() + 4 * i);
      file.tensors.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw bad(std::string("malformed tensor entry (") + e.what() + ")");
  }
  return file;
}

void SaveWeights(const std::filesystem::path& path, const WeightFile& file) {
  WriteFileBytes(path, EncodeWeights(file));
}

WeightFile LoadWeights(const std::filesystem::path& path) {
  return DecodeWeights(ReadFileBytes(path), path.string());
}

const Tensor& RequireTensor(const TensorMap& tensors, const std::string& name, const Shape& shape) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(ErrorKind::kMissingTensor, "missing tensor '" + name + "'");
  if (it->second.shape() != shape)
    throw Error(ErrorKind::kShapeMismatch, "tensor '" + name + "' has shape " +
                                               ShapeString(it->second.shape()) + ", expected " +
                                               ShapeString(shape));
  return it->second;
}

}  // namespace specemo::nn
