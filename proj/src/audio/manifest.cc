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

#include <algorithm>
#include <map>
#include <set>

#include "specemo/audio_io.h"
#include "specemo/error.h"
#include "specemo/util.h"

namespace specemo {

const std::array<Emotion, kNumEmotions>& AllEmotions() {
  static const std::array<Emotion, kNumEmotions> kAll = {
      Emotion::kAnger,   Emotion::kDisgust, Emotion::kFear,    Emotion::kJoy,
      Emotion::kNeutral, Emotion::kSadness, Emotion::kSurprise};
  return kAll;
}

std::string_view EmotionName(Emotion e) {
  switch (e) {
    case Emotion::kAnger: return "ANGER";
    case Emotion::kDisgust: return "DISGUST";
    case Emotion::kFear: return "FEAR";
    case Emotion::kJoy: return "JOY";
    case Emotion::kNeutral: return "NEUTRAL";
    case Emotion::kSadness: return "SADNESS";
    case Emotion::kSurprise: return "SURPRISE";
  }
  return "?";
}

std::string_view StyleName(Style s) {
  switch (s) {
    case Style::kNone: return "";
    case Style::kFast: return "fast";
    case Style::kSlow: return "slow";
    case Style::kSoft: return "soft";
    case Style::kLoud: return "loud";
    case Style::kNormal: return "normal";
  }
  return "";
}

Emotion ParseEmotion(std::string_view text) {
  const std::string t = ToLower(Trim(text));
  // EmoMatch names the positive class "happiness"; ELRA calls it "joy".
  if (t == "happiness") return Emotion::kJoy;
  for (Emotion e : AllEmotions())
    if (ToLower(EmotionName(e)) == t) return e;
  throw Error(ErrorKind::kUnknownLabel, "unknown emotion label '" + std::string(text) + "'");
}

Style ParseStyle(std::string_view text) {
  const std::string t = ToLower(Trim(text));
  if (t.empty() || t == "none") return Style::kNone;
  for (Style s : {Style::kFast, Style::kSlow, Style::kSoft, Style::kLoud, Style::kNormal})
    if (StyleName(s) == t) return s;
  throw Error(ErrorKind::kInvalidStyle, "unknown style '" + std::string(text) + "'");
}

std::filesystem::path DatasetManifest::resolve(const LabeledSample& s) const {
  std::filesystem::path p(s.path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

int DatasetManifest::label_index(Emotion e) const {
  auto it = std::find(label_set.begin(), label_set.end(), e);
  return it == label_set.end() ? -1 : static_cast<int>(it - label_set.begin());
}

void DatasetManifest::refresh_label_set() {
  std::set<Emotion> present;
  for (const auto& s : samples) present.insert(s.label);
  label_set.assign(present.begin(), present.end());
}

DatasetManifest ParseManifest(std::string_view csv_text, std::string name,
                              std::filesystem::path base_dir) {
  std::vector<std::string> lines = SplitString(csv_text, '\n');
  size_t li = 0;
  while (li < lines.size() && Trim(lines[li]).empty()) ++li;
  if (li == lines.size()) throw Error(ErrorKind::kMissingColumn, "manifest has no header");

  std::map<std::string, size_t> column;
  {
    auto header = SplitString(lines[li], ',');
    for (size_t i = 0; i < header.size(); ++i) column[ToLower(Trim(header[i]))] = i;
    ++li;
  }
  for (const char* required : {"path", "label", "speaker"})
    if (!column.count(required))
      throw Error(ErrorKind::kMissingColumn, std::string("manifest lacks column '") + required + "'");
  const bool has_style = column.count("style") > 0;

  DatasetManifest m;
  m.name = std::move(name);
  m.base_dir = std::move(base_dir);
  std::set<std::string> seen;
  for (; li < lines.size(); ++li) {
    if (Trim(lines[li]).empty()) continue;
    auto fields = SplitString(lines[li], ',');
    const auto field = [&](const char* col) -> std::string {
      size_t idx = column.at(col);
      return idx < fields.size() ? Trim(fields[idx]) : std::string();
    };
    LabeledSample s;
    s.path = field("path");
    if (s.path.empty())
      throw Error(ErrorKind::kMissingColumn, "empty path on manifest line " + std::to_string(li + 1));
    s.label = ParseEmotion(field("label"));
    s.speaker_id = field("speaker");
    if (s.speaker_id.empty())
      throw Error(ErrorKind::kMissingColumn, "empty speaker for '" + s.path + "'");
    s.style = has_style ? ParseStyle(field("style")) : Style::kNone;
    if (s.style != Style::kNone && s.label != Emotion::kNeutral)
      throw Error(ErrorKind::kInvalidStyle, "style on non-neutral sample '" + s.path + "'");
    if (!seen.insert(s.path).second)
      throw Error(ErrorKind::kDuplicatePath, "duplicate path '" + s.path + "'");
    m.samples.push_back(std::move(s));
  }
  m.refresh_label_set();
  return m;
}

DatasetManifest LoadManifest(const std::filesystem::path& path) {
  return ParseManifest(ReadFileText(path), path.stem().string(), path.parent_path());
}

std::string SerializeManifest(const DatasetManifest& manifest) {
  std::string out = "path,label,speaker,style\n";
  for (const auto& s : manifest.samples) {
    out += s.path;
    out += ',';
    out += ToLower(EmotionName(s.label));
    out += ',';
    out += s.speaker_id;
    out += ',';
    out += StyleName(s.style);
    out += '\n';
  }
  return out;
}

void SaveManifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  WriteFileText(path, SerializeManifest(manifest));
}

}  // namespace specemo
