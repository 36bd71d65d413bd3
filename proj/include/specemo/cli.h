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

// Experiment configuration and the command implementations behind the
// `specemo` tool.

#ifndef SPECEMO_CLI_H_
#define SPECEMO_CLI_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "specemo/audio_io.h"
#include "specemo/backbone.h"
#include "specemo/error.h"
#include "specemo/eval.h"
#include "specemo/heads.h"
#include "specemo/spectro.h"

namespace specemo {

inline constexpr int kConfigSchemaVersion = 1;

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitInternal = 3 };

int ExitCodeFor(ErrorKind kind);

struct ExperimentConfig {
  std::string experiment = "experiment";
  uint64_t seed = 0;
  std::filesystem::path config_dir;  // relative paths resolve against this

  std::string manifest;
  std::string test_manifest;  // cross only
  bool collapse_neutral = true;

  SpectroParams spectro;
  BackboneConfig backbone = BackboneConfig::Mini();
  std::string backbone_weights;  // optional pretrained trunk

  std::string preset = "scratch";
  TrainConfig train;  // train.mode is the head; train.seed mirrors seed

  FoldKind fold_kind = FoldKind::kBySpeaker;
  size_t folds = 10;

  size_t attention_samples = 4;
  std::string output_dir = "runs";

  std::filesystem::path resolve(const std::string& path) const;

  /// Throws Config with the offending key path, e.g. "dataset.manifest: ...".
  static ExperimentConfig FromJson(const nlohmann::json& j, const std::filesystem::path& config_dir);
  static ExperimentConfig Load(const std::filesystem::path& path);

  void set_seed(uint64_t s);

  /// Normalized form with the SHA-256 of every referenced input file. The
  /// output directory is not part of it.
  nlohmann::json ToJson() const;
  /// SHA-256 of ToJson().dump().
  std::string Digest() const;
};

/// Flags shared by the subcommands.
struct CommandOptions {
  std::optional<std::filesystem::path> out;
  std::optional<uint64_t> seed;
  size_t jobs = 1;
  std::optional<std::string> run_id;
};

/// SPECEMO_CACHE when set, else <output_dir>/.cache.
std::filesystem::path CacheRoot(const std::filesystem::path& output_dir);

struct ExtractOutcome {
  std::vector<std::filesystem::path> images;  // per sample; empty on failure
  std::vector<std::pair<size_t, std::string>> failures;
  size_t cache_hits = 0;
  size_t computed = 0;
};

/// Spectrogram for every manifest row, cached under
/// <cache_root>/spectro/<key>.ppm with key = SHA-256(audio digest, params).
ExtractOutcome ExtractToCache(const DatasetManifest& manifest, const SpectroParams& params,
                              const std::filesystem::path& cache_root, size_t jobs);

/// Each command returns an exit code; library errors propagate as Error.
int CmdSynth(const SynthSpec& spec, const std::filesystem::path& out);
int CmdExtract(const ExperimentConfig& config, const CommandOptions& options,
               const std::optional<std::filesystem::path>& manifest_override = std::nullopt);
int CmdTrain(const ExperimentConfig& config, const CommandOptions& options);
int CmdEval(const ExperimentConfig& config, const CommandOptions& options);
int CmdCross(const ExperimentConfig& config, const CommandOptions& options);
int CmdReport(const std::filesystem::path& run_dir);

/// Run directory the train/eval/cross commands write to.
std::filesystem::path RunDirectory(const ExperimentConfig& config, const CommandOptions& options);

/// Full argument parsing and dispatch. Never throws.
int RunCli(int argc, const char* const* argv);

}  // namespace specemo

#endif  // SPECEMO_CLI_H_
