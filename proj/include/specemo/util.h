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

// Small shared pieces: a portable seeded RNG, SHA-256 digests, file helpers
// and a minimal logger.

#ifndef SPECEMO_UTIL_H_
#define SPECEMO_UTIL_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace specemo {

// mt19937_64 is fully specified by the standard, but the std distributions
// are not; every draw goes through the explicit conversions below so that
// seeded runs are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n);

  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer; used to derive independent seeds for sub-streams.
uint64_t SplitMix64(uint64_t x);
inline uint64_t DeriveSeed(uint64_t seed, uint64_t stream) { return SplitMix64(SplitMix64(seed) ^ stream); }

std::string Sha256Hex(std::span<const uint8_t> bytes);
std::string Sha256Hex(std::string_view text);
std::string FileSha256Hex(const std::filesystem::path& path);

std::vector<uint8_t> ReadFileBytes(const std::filesystem::path& path);
std::string ReadFileText(const std::filesystem::path& path);
void WriteFileBytes(const std::filesystem::path& path,
                    std::span<const uint8_t> bytes);
void WriteFileText(const std::filesystem::path& path, std::string_view text);

// Runs f(0..n-1) on up to `jobs` threads. Every index runs even when some
// fail; the failure with the lowest index is rethrown afterwards.
void ParallelFor(size_t n, size_t jobs, const std::function<void(size_t)>& f);

std::string ToLower(std::string_view s);
std::string Trim(std::string_view s);
std::vector<std::string> SplitString(std::string_view s, char sep);

// Stderr logging with a process-wide threshold.
enum class LogLevel { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3, kOff = 4 };
void SetLogLevel(LogLevel level);
LogLevel GetLogLevel();
void LogMessage(LogLevel level, std::string_view message);

class LogStream {
 public:
  explicit LogStream(LogLevel level) : level_(level) {}
  ~LogStream() { LogMessage(level_, buf_.str()); }
  template <typename T>
  LogStream& operator<<(const T& v) {
    buf_ << v;
    return *this;
  }

 private:
  LogLevel level_;
  std::ostringstream buf_;
};

#define SPECEMO_LOG(level) ::specemo::LogStream(::specemo::LogLevel::level)

}  // namespace specemo

#endif  // SPECEMO_UTIL_H_
