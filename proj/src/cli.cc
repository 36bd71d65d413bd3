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

#include "specemo/cli.h"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "specemo/attention.h"
#include "specemo/nn/weights.h"
#include "specemo/util.h"

namespace specemo {

namespace fs = std::filesystem;
using nlohmann::json;

int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kDegenerateFilter:
    case ErrorKind::kMissingReport:
      return kExitUsage;
    case ErrorKind::kIo:
    case ErrorKind::kMalformedHeader:
    case ErrorKind::kUnsupportedEncoding:
    case ErrorKind::kEmptyAudio:
    case ErrorKind::kUnknownLabel:
    case ErrorKind::kInvalidStyle:
    case ErrorKind::kMissingColumn:
    case ErrorKind::kDuplicatePath:
    case ErrorKind::kMissingTensor:
    case ErrorKind::kChecksumMismatch:
    case ErrorKind::kDigestMismatch:
    case ErrorKind::kLabelSpaceMismatch:
    case ErrorKind::kTooFewSpeakers:
    case ErrorKind::kTooFewSamplesPerClass:
    case ErrorKind::kSingleClass:
    case ErrorKind::kEmptySplit:
      return kExitData;
    default:
      return kExitInternal;
  }
}

// ---------------------------------------------------------------- config

namespace {

[[noreturn]] void ConfigError(const std::string& key, const std::string& msg) {
  throw Error(ErrorKind::kConfig, key + ": " + msg);
}

// Typed access to one JSON object that remembers which keys were read, so
// leftovers can be rejected by name.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) ConfigError(path_, "must be an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  const json* find(const std::string& k) {
    used_.insert(k);
    if (!j_) return nullptr;
    auto it = j_->find(k);
    return it == j_->end() || it->is_null() ? nullptr : &*it;
  }

  std::string str(const std::string& k, const std::string& def) {
    const json* v = find(k);
    if (!v) return def;
    if (!v->is_string()) ConfigError(key(k), "expected a string");
    return v->get<std::string>();
  }

  double num(const std::string& k, double def) {
    const json* v = find(k);
    if (!v) return def;
    if (!v->is_number()) ConfigError(key(k), "expected a number");
    return v->get<double>();
  }

  uint64_t uint(const std::string& k, uint64_t def) {
    const json* v = find(k);
    if (!v) return def;
    if (!v->is_number_integer() || v->get<int64_t>() < 0) ConfigError(key(k), "expected a non-negative integer");
    return v->get<uint64_t>();
  }

  bool flag(const std::string& k, bool def) {
    const json* v = find(k);
    if (!v) return def;
    if (!v->is_boolean()) ConfigError(key(k), "expected true or false");
    return v->get<bool>();
  }

  template <typename T, size_t N>
  std::array<T, N> array(const std::string& k, const std::array<T, N>& def) {
    const json* v = find(k);
    if (!v) return def;
    if (!v->is_array() || v->size() != N) ConfigError(key(k), "expected an array of " + std::to_string(N) + " numbers");
    std::array<T, N> out{};
    for (size_t i = 0; i < N; ++i) {
      if (!(*v)[i].is_number()) ConfigError(key(k), "expected an array of " + std::to_string(N) + " numbers");
      if constexpr (std::is_integral_v<T>) {
        if (!(*v)[i].is_number_integer() || (*v)[i].get<int64_t>() < 0) ConfigError(key(k), "entries must be non-negative integers");
      }
      out[i] = (*v)[i].get<T>();
    }
    return out;
  }

  Section child(const std::string& k) { return Section(find(k), key(k)); }

  void finish() const {
    if (!j_) return;
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!used_.count(it.key())) ConfigError(key(it.key()), "unknown key");
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

json BackboneToJson(const BackboneConfig& b) {
  return {{"variant", b.variant},     {"block_channels", b.block_channels},
          {"convs_per_block", b.convs_per_block}, {"input_hw", b.input_hw},
          {"fc_dim", b.fc_dim},       {"mean", b.mean},
          {"scale", b.scale}};
}

BackboneConfig BackboneFromSection(Section& s) {
  const std::string variant = s.str("variant", "mini");
  BackboneConfig b;
  try {
    b = BackboneConfig::ForVariant(variant);
  } catch (const Error& e) {
    ConfigError(s.key("variant"), e.what());
  }
  b.block_channels = s.array("block_channels", b.block_channels);
  b.convs_per_block = s.array("convs_per_block", b.convs_per_block);
  b.input_hw = s.uint("input_hw", b.input_hw);
  b.fc_dim = s.uint("fc_dim", b.fc_dim);
  b.mean = s.array("mean", b.mean);
  b.scale = s.array("scale", b.scale);
  return b;
}

std::string FileDigestOrEmpty(const fs::path& p) { return p.empty() ? "" : FileSha256Hex(p); }

}  // namespace

fs::path ExperimentConfig::resolve(const std::string& path) const {
  if (path.empty()) return {};
  fs::path p(path);
  return p.is_absolute() ? p : config_dir / p;
}

void ExperimentConfig::set_seed(uint64_t s) {
  seed = s;
  train.seed = s;
  train.svc.seed = s;
}

ExperimentConfig ExperimentConfig::FromJson(const json& j, const fs::path& config_dir) {
  ExperimentConfig c;
  c.config_dir = config_dir;
  Section root(&j, "");
  const json* version = root.find("schema_version");
  if (!version) ConfigError("schema_version", "required");
  if (!version->is_number_integer() || version->get<int64_t>() != kConfigSchemaVersion)
    ConfigError("schema_version", "unsupported version " + version->dump() + ", expected " +
                                      std::to_string(kConfigSchemaVersion));
  root.find("inputs");  // recorded file digests in a normalized config
  c.experiment = root.str("experiment", c.experiment);
  const uint64_t seed = root.uint("seed", 0);
  c.output_dir = root.str("output_dir", c.output_dir);

  {
    Section d = root.child("dataset");
    c.manifest = d.str("manifest", "");
    c.test_manifest = d.str("test_manifest", "");
    c.collapse_neutral = d.flag("collapse_neutral", c.collapse_neutral);
    d.finish();
    if (c.manifest.empty()) ConfigError("dataset.manifest", "required");
    if (!fs::is_regular_file(c.resolve(c.manifest)))
      ConfigError("dataset.manifest", "no such file '" + c.resolve(c.manifest).string() + "'");
    if (!c.test_manifest.empty() && !fs::is_regular_file(c.resolve(c.test_manifest)))
      ConfigError("dataset.test_manifest", "no such file '" + c.resolve(c.test_manifest).string() + "'");
  }
  {
    Section s = root.child("spectro");
    SpectroParams& p = c.spectro;
    p.window_ms = s.num("window_ms", p.window_ms);
    p.hop_ms = s.num("hop_ms", p.hop_ms);
    p.fft_len = static_cast<int>(s.uint("fft_len", static_cast<uint64_t>(p.fft_len)));
    p.n_mels = static_cast<int>(s.uint("n_mels", static_cast<uint64_t>(p.n_mels)));
    p.fmin_hz = s.num("fmin_hz", p.fmin_hz);
    p.fmax_hz = s.num("fmax_hz", p.fmax_hz);
    p.db_floor = s.num("db_floor", p.db_floor);
    p.image_height = static_cast<int>(s.uint("image_height", static_cast<uint64_t>(p.image_height)));
    p.image_width = static_cast<int>(s.uint("image_width", static_cast<uint64_t>(p.image_width)));
    p.colormap = s.str("colormap", p.colormap);
    s.finish();
  }
  {
    Section s = root.child("backbone");
    c.backbone = BackboneFromSection(s);
    c.backbone_weights = s.str("weights", "");
    s.finish();
    if (!c.backbone_weights.empty() && !fs::is_regular_file(c.resolve(c.backbone_weights)))
      ConfigError("backbone.weights", "no such file '" + c.resolve(c.backbone_weights).string() + "'");
  }
  try {
    c.train.mode = ParseHeadMode(root.str("head", "fc"));
  } catch (const Error& e) {
    ConfigError("head", e.what());
  }
  {
    Section s = root.child("train");
    c.preset = s.str("preset", c.preset);
    const HeadMode mode = c.train.mode;
    if (c.preset == "scratch") {
      c.train = TrainConfig::Scratch();
    } else if (c.preset == "finetune") {
      c.train = TrainConfig::Finetune();
    } else {
      ConfigError("train.preset", "expected scratch or finetune, got '" + c.preset + "'");
    }
    c.train.mode = mode;
    TrainConfig& t = c.train;
    t.epochs = s.uint("epochs", t.epochs);
    t.batch_size = s.uint("batch_size", t.batch_size);
    try {
      t.optim.kind = nn::ParseOptimKind(s.str("optimizer", nn::OptimKindName(t.optim.kind)));
    } catch (const Error& e) {
      ConfigError("train.optimizer", e.what());
    }
    t.optim.momentum = s.num("momentum", t.optim.momentum);
    t.optim.beta1 = s.num("beta1", t.optim.beta1);
    t.optim.beta2 = s.num("beta2", t.optim.beta2);
    t.optim.eps = s.num("eps", t.optim.eps);
    t.lr_trunk = s.num("lr_trunk", t.lr_trunk);
    t.lr_head = s.num("lr_head", t.lr_head);
    t.early_stop_patience = s.uint("early_stop_patience", t.early_stop_patience);
    t.freeze_trunk = s.flag("freeze_trunk", t.freeze_trunk);
    t.fc_hidden = s.uint("fc_hidden", t.fc_hidden);
    t.am_dim = s.uint("am_dim", t.am_dim);
    t.svc.c = s.num("svc_c", t.svc.c);
    t.svc.tol = s.num("svc_tol", t.svc.tol);
    t.svc.max_epochs = s.uint("svc_max_epochs", t.svc.max_epochs);
    s.finish();
  }
  {
    Section s = root.child("eval");
    try {
      c.fold_kind = ParseFoldKind(s.str("folds", FoldKindName(c.fold_kind)));
    } catch (const Error& e) {
      ConfigError("eval.folds", e.what());
    }
    c.folds = s.uint("k", c.folds);
    s.finish();
    if (c.folds < 2) ConfigError("eval.k", "must be at least 2");
  }
  {
    Section s = root.child("report");
    c.attention_samples = s.uint("attention_samples", c.attention_samples);
    s.finish();
  }
  root.finish();
  c.set_seed(seed);

  // Library validation messages already carry the section.key prefix.
  try {
    c.spectro.validate(kCanonicalRateHz);
    c.backbone.validate();
    c.train.validate();
  } catch (const Error& e) {
    const std::string msg = e.what();
    const std::string prefix = std::string(ErrorKindName(e.kind())) + ": ";
    throw Error(ErrorKind::kConfig, msg.rfind(prefix, 0) == 0 ? msg.substr(prefix.size()) : msg);
  }
  if (static_cast<size_t>(c.spectro.image_height) != c.backbone.input_hw ||
      static_cast<size_t>(c.spectro.image_width) != c.backbone.input_hw)
    ConfigError("spectro.image_height", "image must be " + std::to_string(c.backbone.input_hw) + "x" +
                                            std::to_string(c.backbone.input_hw) + " to match backbone.input_hw");
  return c;
}

ExperimentConfig ExperimentConfig::Load(const fs::path& path) {
  if (!fs::is_regular_file(path)) ConfigError("--config", "no such file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(ReadFileText(path));
  } catch (const json::parse_error& e) {
    ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
  return FromJson(j, fs::absolute(path).parent_path());
}

json ExperimentConfig::ToJson() const {
  const SpectroParams& p = spectro;
  const TrainConfig& t = train;
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["experiment"] = experiment;
  j["seed"] = seed;
  j["dataset"] = {{"manifest", manifest}, {"test_manifest", test_manifest}, {"collapse_neutral", collapse_neutral}};
  j["spectro"] = {{"window_ms", p.window_ms}, {"hop_ms", p.hop_ms},         {"fft_len", p.fft_len},
                  {"n_mels", p.n_mels},       {"fmin_hz", p.fmin_hz},       {"fmax_hz", p.fmax_hz},
                  {"db_floor", p.db_floor},   {"image_height", p.image_height}, {"image_width", p.image_width},
                  {"colormap", p.colormap}};
  j["backbone"] = BackboneToJson(backbone);
  j["backbone"]["weights"] = backbone_weights;
  j["head"] = HeadModeName(t.mode);
  j["train"] = {{"preset", preset},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"optimizer", nn::OptimKindName(t.optim.kind)},
                {"momentum", t.optim.momentum},
                {"beta1", t.optim.beta1},
                {"beta2", t.optim.beta2},
                {"eps", t.optim.eps},
                {"lr_trunk", t.lr_trunk},
                {"lr_head", t.lr_head},
                {"early_stop_patience", t.early_stop_patience},
                {"freeze_trunk", t.freeze_trunk},
                {"fc_hidden", t.fc_hidden},
                {"am_dim", t.am_dim},
                {"svc_c", t.svc.c},
                {"svc_tol", t.svc.tol},
                {"svc_max_epochs", t.svc.max_epochs}};
  j["eval"] = {{"folds", FoldKindName(fold_kind)}, {"k", folds}};
  j["report"] = {{"attention_samples", attention_samples}};
  j["inputs"] = {{"manifest_sha256", FileDigestOrEmpty(resolve(manifest))},
                 {"test_manifest_sha256", FileDigestOrEmpty(resolve(test_manifest))},
                 {"backbone_weights_sha256", FileDigestOrEmpty(resolve(backbone_weights))}};
  return j;
}

std::string ExperimentConfig::Digest() const { return Sha256Hex(ToJson().dump()); }

// ---------------------------------------------------------------- extraction

fs::path CacheRoot(const fs::path& output_dir) {
  if (const char* env = std::getenv("SPECEMO_CACHE"); env && *env) return fs::path(env);
  return output_dir / ".cache";
}

ExtractOutcome ExtractToCache(const DatasetManifest& manifest, const SpectroParams& params,
                              const fs::path& cache_root, size_t jobs) {
  params.validate(kCanonicalRateHz);
  const std::string params_key = params.canonical();
  const size_t n = manifest.samples.size();
  ExtractOutcome out;
  out.images.assign(n, {});
  std::vector<std::string> errors(n);
  std::vector<char> hit(n, 0);
  fs::create_directories(cache_root / "spectro");

  ParallelFor(n, jobs, [&](size_t i) {
    const fs::path audio = manifest.resolve(manifest.samples[i]);
    try {
      const std::string key = Sha256Hex(FileSha256Hex(audio) + "|" + params_key);
      const fs::path target = cache_root / "spectro" / (key + ".ppm");
      if (fs::is_regular_file(target)) {
        hit[i] = 1;
        SPECEMO_LOG(kDebug) << "cache hit: " << audio.string();
      } else {
        const SpecImage img = Extract(LoadCanonical(audio), params);
        std::ostringstream tid;
        tid << std::this_thread::get_id();
        const fs::path tmp = target.string() + ".tmp" + tid.str();
        WritePpm(tmp, img);
        fs::rename(tmp, target);
      }
      out.images[i] = target;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  for (size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) {
      out.failures.emplace_back(i, errors[i]);
    } else if (hit[i]) {
      ++out.cache_hits;
    } else {
      ++out.computed;
    }
  }
  return out;
}

// ---------------------------------------------------------------- commands

namespace {

std::string Timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path OutputDir(const ExperimentConfig& config, const CommandOptions& options) {
  return options.out ? *options.out : config.resolve(config.output_dir);
}

ExperimentConfig Effective(const ExperimentConfig& config, const CommandOptions& options) {
  ExperimentConfig c = config;
  if (options.seed) c.set_seed(*options.seed);
  return c;
}

DatasetManifest LoadDataset(const ExperimentConfig& config, const std::string& path) {
  DatasetManifest m = LoadManifest(config.resolve(path));
  return config.collapse_neutral ? CollapseNeutral(m) : m;
}

// Extraction for a training/evaluation command: any failure aborts with a
// data error after listing every failed clip.
std::vector<fs::path> ExtractOrFail(const DatasetManifest& m, const ExperimentConfig& config,
                                    const CommandOptions& options) {
  ExtractOutcome ext = ExtractToCache(m, config.spectro, CacheRoot(OutputDir(config, options)), options.jobs);
  for (const auto& [i, msg] : ext.failures) std::cerr << "extract failed: " << m.samples[i].path << ": " << msg << "\n";
  if (!ext.failures.empty())
    throw Error(ErrorKind::kIo, std::to_string(ext.failures.size()) + " of " + std::to_string(m.samples.size()) +
                                    " clips in '" + m.name + "' failed to extract");
  return ext.images;
}

std::string CacheRelative(const fs::path& image, const fs::path& cache_root) {
  return fs::relative(image, cache_root).generic_string();
}

std::shared_ptr<const nn::TensorMap> Pretrained(const ExperimentConfig& config) {
  if (config.backbone_weights.empty()) return nullptr;
  return std::make_shared<const nn::TensorMap>(nn::LoadWeights(config.resolve(config.backbone_weights)).tensors);
}

LearnerFactory Factory(const ExperimentConfig& config, size_t num_classes) {
  ModelSpec spec;
  spec.train = config.train;
  spec.backbone = config.backbone;
  spec.num_classes = num_classes;
  spec.pretrained = Pretrained(config);
  return MakeLearnerFactory(spec);
}

void WriteCheckpoint(const fs::path& path, const nn::TensorMap& tensors, const ExperimentConfig& config,
                     const std::string& digest, const std::vector<std::string>& labels) {
  nn::WeightFile f;
  f.tensors = tensors;
  f.metadata = {{"config_digest", digest},
                {"head", HeadModeName(config.train.mode)},
                {"labels", labels},
                {"backbone", BackboneToJson(config.backbone)},
                {"fc_hidden", config.train.fc_hidden},
                {"am_dim", config.train.am_dim}};
  nn::SaveWeights(path, f);
}

struct PredictionRow {
  size_t index = 0;
  std::string path;
  int truth = 0;
  int predicted = 0;
  int fold = -1;
  std::string checkpoint;
  std::string image;  // relative to the cache root
};

std::string PredictionsCsv(const std::vector<PredictionRow>& rows, const std::vector<std::string>& labels,
                           const std::string& digest) {
  std::string out = "# config_digest: " + digest + "\nindex,path,label,predicted,fold,checkpoint,image\n";
  for (const auto& r : rows)
    out += std::to_string(r.index) + "," + r.path + "," + labels.at(r.truth) + "," + labels.at(r.predicted) + "," +
           std::to_string(r.fold) + "," + r.checkpoint + "," + r.image + "\n";
  return out;
}

void WriteRunFiles(const fs::path& run_dir, const ExperimentConfig& config, const std::string& command,
                   const json& report, const std::string& predictions, const fs::path& cache_root) {
  WriteFileText(run_dir / "config.json", config.ToJson().dump(2) + "\n");
  WriteFileText(run_dir / "report.json", report.dump(2) + "\n");
  WriteFileText(run_dir / "predictions.csv", predictions);
  // Run provenance that is allowed to differ between re-runs.
  const json run = {{"command", command},
                    {"run_dir", fs::absolute(run_dir).string()},
                    {"cache_root", fs::absolute(cache_root).string()},
                    {"config_dir", fs::absolute(config.config_dir).string()}};
  WriteFileText(run_dir / "run.json", run.dump(2) + "\n");
}

void PrintSummary(const fs::path& run_dir, const EvalReport& report) {
  std::cout << FormatReportTable(report) << "\nrun directory: " << run_dir.string() << "\n";
}

}  // namespace

fs::path RunDirectory(const ExperimentConfig& config, const CommandOptions& options) {
  const ExperimentConfig c = Effective(config, options);
  const std::string id = options.run_id ? *options.run_id : Timestamp() + "-" + c.Digest().substr(0, 12);
  return OutputDir(config, options) / id;
}

int CmdSynth(const SynthSpec& spec, const fs::path& out) {
  fs::create_directories(out);
  const DatasetManifest m = SynthDataset(spec, out);
  std::cout << "wrote " << m.samples.size() << " clips and " << (out / "manifest.csv").string() << "\n";
  return kExitOk;
}

int CmdExtract(const ExperimentConfig& config, const CommandOptions& options,
               const std::optional<fs::path>& manifest_override) {
  const ExperimentConfig c = Effective(config, options);
  const std::string digest = c.Digest();
  DatasetManifest m = manifest_override ? LoadManifest(*manifest_override) : LoadManifest(c.resolve(c.manifest));
  const fs::path out = options.out ? *options.out : c.resolve(c.output_dir) / "spectrograms";
  const fs::path cache_root = CacheRoot(options.out ? *options.out : c.resolve(c.output_dir));
  ExtractOutcome ext = ExtractToCache(m, c.spectro, cache_root, options.jobs);

  fs::create_directories(out / "images");
  std::string index = "# config_digest: " + digest + "\nindex,path,image,label,speaker,style\n";
  std::string errors = "index,path,error\n";
  char name[32];
  for (size_t i = 0; i < m.samples.size(); ++i) {
    const auto& s = m.samples[i];
    if (ext.images[i].empty()) continue;
    std::snprintf(name, sizeof(name), "%05zu.ppm", i);
    fs::copy_file(ext.images[i], out / "images" / name, fs::copy_options::overwrite_existing);
    index += std::to_string(i) + "," + s.path + ",images/" + name + "," + std::string(EmotionName(s.label)) + "," +
             s.speaker_id + "," + std::string(StyleName(s.style)) + "\n";
  }
  for (const auto& [i, msg] : ext.failures) {
    std::cerr << "extract failed: " << m.samples[i].path << ": " << msg << "\n";
    std::string clean = msg;
    std::replace(clean.begin(), clean.end(), ',', ';');
    std::replace(clean.begin(), clean.end(), '\n', ' ');
    errors += std::to_string(i) + "," + m.samples[i].path + "," + clean + "\n";
  }
  WriteFileText(out / "index.csv", index);
  if (ext.failures.empty()) {
    fs::remove(out / "errors.csv");
  } else {
    WriteFileText(out / "errors.csv", errors);
  }
  std::cout << "extracted " << m.samples.size() - ext.failures.size() << " of " << m.samples.size() << " clips ("
            << ext.computed << " computed, " << ext.cache_hits << " cache hits) into " << out.string() << "\n";
  return ext.failures.empty() ? kExitOk : kExitData;
}

int CmdTrain(const ExperimentConfig& config, const CommandOptions& options) {
  const ExperimentConfig c = Effective(config, options);
  const std::string digest = c.Digest();
  const DatasetManifest m = LoadDataset(c, c.manifest);
  const fs::path cache_root = CacheRoot(OutputDir(c, options));
  const std::vector<fs::path> images = ExtractOrFail(m, c, options);
  const EvalData data =
      MakeEvalData(m, m.label_set, MakeFileLoader(images, c.backbone.input_hw));

  std::vector<size_t> all(data.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto [fit_idx, val_idx] = SplitTrainVal(all, data.targets, DeriveSeed(c.seed, 0x5452));
  auto learner = Factory(c, data.labels.size())(DeriveSeed(c.seed, 1));
  learner->Fit(data.Load(fit_idx), data.Load(val_idx));

  const LabeledImages val = data.Load(val_idx);
  const std::vector<int> pred = learner->Predict(val.images);
  const EvalReport report = ComputeMetrics(val.labels, pred, data.labels);

  const fs::path run_dir = RunDirectory(config, options);
  fs::create_directories(run_dir);
  WriteCheckpoint(run_dir / "model.weights", learner->ExportTensors(), c, digest, data.labels);
  std::vector<PredictionRow> rows;
  for (size_t i = 0; i < val_idx.size(); ++i)
    rows.push_back({val_idx[i], m.samples[val_idx[i]].path, val.labels[i], pred[i], -1, "model.weights",
                    CacheRelative(images[val_idx[i]], cache_root)});
  json j = ReportToJson(report, c.experiment + "/train", digest);
  j["split"] = {{"train", fit_idx.size()}, {"validation", val_idx.size()}};
  WriteRunFiles(run_dir, c, "train", j, PredictionsCsv(rows, data.labels, digest), cache_root);
  PrintSummary(run_dir, report);
  return kExitOk;
}

int CmdEval(const ExperimentConfig& config, const CommandOptions& options) {
  const ExperimentConfig c = Effective(config, options);
  const std::string digest = c.Digest();
  const DatasetManifest m = LoadDataset(c, c.manifest);
  const fs::path cache_root = CacheRoot(OutputDir(c, options));
  const std::vector<fs::path> images = ExtractOrFail(m, c, options);
  const EvalData data =
      MakeEvalData(m, m.label_set, MakeFileLoader(images, c.backbone.input_hw));

  const FoldPlan plan = MakeFolds(data.targets, data.speakers, c.fold_kind, c.folds, c.seed);
  CvOptions cv;
  cv.jobs = options.jobs;
  cv.keep_tensors = true;
  const CvResult result = RunCv(data, plan, Factory(c, data.labels.size()), cv);

  const fs::path run_dir = RunDirectory(config, options);
  fs::create_directories(run_dir);
  std::vector<PredictionRow> rows;
  json folds = json::array();
  for (const auto& f : result.folds) {
    const std::string ckpt = "fold" + std::to_string(f.fold) + ".weights";
    WriteCheckpoint(run_dir / ckpt, f.tensors, c, digest, data.labels);
    for (size_t i = 0; i < f.test_indices.size(); ++i) {
      const size_t s = f.test_indices[i];
      rows.push_back({s, m.samples[s].path, data.targets[s], f.predictions[i], static_cast<int>(f.fold), ckpt,
                      CacheRelative(images[s], cache_root)});
    }
    json fj = ReportToJson(f.report, c.experiment + "/cv/fold" + std::to_string(f.fold), digest);
    fj["train"] = plan.train[f.fold].size();
    fj["validation"] = plan.val[f.fold].size();
    folds.push_back(fj);
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  json j = ReportToJson(result.aggregate, c.experiment + "/cv", digest);
  j["protocol"] = {{"folds", FoldKindName(plan.kind)}, {"k", plan.k}, {"seed", plan.seed}};
  j["folds"] = folds;
  WriteRunFiles(run_dir, c, "eval", j, PredictionsCsv(rows, data.labels, digest), cache_root);
  PrintSummary(run_dir, result.aggregate);
  return kExitOk;
}

int CmdCross(const ExperimentConfig& config, const CommandOptions& options) {
  const ExperimentConfig c = Effective(config, options);
  if (c.test_manifest.empty()) ConfigError("dataset.test_manifest", "required by the cross command");
  const std::string digest = c.Digest();
  const CrossCorpusPlan plan = PrepareCrossCorpus(LoadDataset(c, c.manifest), LoadDataset(c, c.test_manifest));
  const fs::path cache_root = CacheRoot(OutputDir(c, options));
  const std::vector<fs::path> train_images = ExtractOrFail(plan.train, c, options);
  const std::vector<fs::path> test_images = ExtractOrFail(plan.test, c, options);
  const EvalData train = MakeEvalData(plan.train, plan.labels, MakeFileLoader(train_images, c.backbone.input_hw));
  const EvalData test = MakeEvalData(plan.test, plan.labels, MakeFileLoader(test_images, c.backbone.input_hw));

  const HoldOutResult result = RunHoldOut(train, test, Factory(c, plan.labels.size()), c.seed);

  const fs::path run_dir = RunDirectory(config, options);
  fs::create_directories(run_dir);
  WriteCheckpoint(run_dir / "model.weights", result.tensors, c, digest, train.labels);
  std::vector<PredictionRow> rows;
  for (size_t i = 0; i < test.size(); ++i)
    rows.push_back({i, plan.test.samples[i].path, test.targets[i], result.predictions[i], -1, "model.weights",
                    CacheRelative(test_images[i], cache_root)});
  json j = ReportToJson(result.report, c.experiment + "/cross", digest);
  j["corpora"] = {{"train", plan.train.name}, {"test", plan.test.name}, {"test_rows", plan.test.samples.size()}};
  WriteRunFiles(run_dir, c, "cross", j, PredictionsCsv(rows, train.labels, digest), cache_root);
  PrintSummary(run_dir, result.report);
  return kExitOk;
}

// ---------------------------------------------------------------- report

namespace {

json ReadJsonOr(const fs::path& path, ErrorKind missing_kind) {
  if (!fs::is_regular_file(path)) throw Error(missing_kind, "no " + path.filename().string() + " in " + path.parent_path().string());
  try {
    return json::parse(ReadFileText(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kMalformedHeader, path.string() + ": " + e.what());
  }
}

std::vector<PredictionRow> ReadPredictions(const fs::path& path, const std::vector<std::string>& labels) {
  std::vector<PredictionRow> rows;
  if (!fs::is_regular_file(path)) return rows;
  auto label_index = [&](const std::string& name) {
    auto it = std::find(labels.begin(), labels.end(), name);
    if (it == labels.end()) throw Error(ErrorKind::kMalformedHeader, "unknown label '" + name + "' in " + path.string());
    return static_cast<int>(it - labels.begin());
  };
  std::istringstream in(ReadFileText(path));
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto f = SplitString(line, ',');
    if (f.size() != 7) throw Error(ErrorKind::kMalformedHeader, "bad row in " + path.string() + ": " + line);
    rows.push_back({std::stoul(f[0]), f[1], label_index(f[2]), label_index(f[3]), std::stoi(f[4]), f[5], f[6]});
  }
  return rows;
}

void Blit(SpecImage& dst, const SpecImage& src, int x0) {
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c)
        dst.pixels[(static_cast<size_t>(y) * dst.width + x0 + x) * 3 + c] = src.at(y, x, c);
}

}  // namespace

int CmdReport(const fs::path& run_dir) {
  const json report_json = ReadJsonOr(run_dir / "report.json", ErrorKind::kMissingReport);
  const json config_json = ReadJsonOr(run_dir / "config.json", ErrorKind::kMissingReport);
  const std::string digest = Sha256Hex(config_json.dump());
  const std::string recorded = report_json.value("config_digest", "");
  if (recorded != digest)
    throw Error(ErrorKind::kDigestMismatch, "report.json was produced by config " + recorded.substr(0, 12) +
                                                ", config.json hashes to " + digest.substr(0, 12));

  // Every checkpoint in the run must come from the same config.
  std::vector<fs::path> checkpoints;
  for (const auto& e : fs::directory_iterator(run_dir))
    if (e.path().extension() == ".weights") checkpoints.push_back(e.path());
  std::sort(checkpoints.begin(), checkpoints.end());
  std::map<std::string, nn::WeightFile> loaded;
  for (const auto& p : checkpoints) {
    nn::WeightFile f = nn::LoadWeights(p);
    if (f.metadata.value("config_digest", "") != digest)
      throw Error(ErrorKind::kDigestMismatch, p.filename().string() + " does not match config.json");
    loaded.emplace(p.filename().string(), std::move(f));
  }

  const EvalReport report = ReportFromJson(report_json);
  const fs::path out = run_dir / "rendered";
  fs::remove_all(out);
  fs::create_directories(out);

  std::string text = "# experiment: " + report_json.value("experiment", "") + "\n# config_digest: " + digest + "\n\n";
  text += FormatReportTable(report);
  if (report_json.contains("folds")) {
    text += "\n";
    for (const auto& f : report_json["folds"]) {
      char line[160];
      std::snprintf(line, sizeof(line), "%-24s accuracy %.3f  macro f1 %.3f  n=%lld\n",
                    f.value("experiment", "").c_str(), f.value("accuracy", 0.0), f.value("macro_f1", 0.0),
                    static_cast<long long>(f.value("total", 0)));
      text += line;
    }
  }
  WriteFileText(out / "report.txt", text);
  WriteFileText(out / "confusion.csv", "# config_digest: " + digest + "\n" + ConfusionCsv(report));
  WritePpm(out / "confusion.ppm", ConfusionHeatmap(report), "config_digest " + digest);

  size_t gallery = 0;
  if (config_json.value("head", "") == "am") {
    const json run = ReadJsonOr(run_dir / "run.json", ErrorKind::kMissingReport);
    const fs::path cache_root = run.value("cache_root", "");
    const size_t limit = config_json.at("report").value("attention_samples", 0);
    const auto rows = ReadPredictions(run_dir / "predictions.csv", report.labels);
    fs::create_directories(out / "attention");
    std::map<std::string, std::unique_ptr<DeepModel<float>>> models;
    for (size_t r = 0; r < rows.size() && r < limit; ++r) {
      const PredictionRow& row = rows[r];
      auto it = loaded.find(row.checkpoint);
      if (it == loaded.end()) throw Error(ErrorKind::kMissingTensor, "checkpoint " + row.checkpoint + " not found");
      auto& model = models[row.checkpoint];
      if (!model) {
        const json& meta = it->second.metadata;
        Section s(&meta.at("backbone"), "backbone");
        const BackboneConfig bc = BackboneFromSection(s);
        model = std::make_unique<DeepModel<float>>(HeadMode::kAm, bc, report.labels.size(),
                                                   meta.at("fc_hidden").get<size_t>(), meta.at("am_dim").get<size_t>(),
                                                   0);
        model->ImportTensors(it->second.tensors);
      }
      const size_t hw = model->backbone().config().input_hw;
      const SpecImage spec = ReadPpm(cache_root / row.image);
      const AttentionOutput<float> att = model->Attend(ImageBatch({&spec}, hw));
      const auto map_image = [&](const GateResult<float>& g) {
        return AttentionMapImage(g.map.values(), g.map.dim(1), g.map.dim(2), hw);
      };
      SpecImage panel;
      panel.height = static_cast<int>(hw);
      panel.width = static_cast<int>(3 * hw);
      panel.pixels.assign(static_cast<size_t>(panel.height) * panel.width * 3, 0.0f);
      Blit(panel, spec, 0);
      Blit(panel, map_image(att.gate4), static_cast<int>(hw));
      Blit(panel, map_image(att.gate5), static_cast<int>(2 * hw));
      char name[48];
      std::snprintf(name, sizeof(name), "sample%05zu.ppm", row.index);
      WritePpm(out / "attention" / name, panel,
               "config_digest " + digest + " true " + report.labels[row.truth] + " predicted " +
                   report.labels[row.predicted]);
      ++gallery;
    }
  }
  std::cout << FormatReportTable(report) << "\nrendered into " << out.string();
  if (gallery) std::cout << " (" << gallery << " attention maps)";
  std::cout << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- entry point

int RunCli(int argc, const char* const* argv) {
  CLI::App app{"specemo: speech emotion recognition on spectrogram images"};
  app.require_subcommand(1);

  std::string config_path, out, run_id, manifest, run_dir;
  uint64_t seed = 0;
  size_t jobs = 1;
  SynthSpec synth;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--out", out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "Seed (overrides the config)");
    sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--run-id", run_id, "Run directory name (default: timestamp and digest prefix)");
  };
  CLI::App* extract = app.add_subcommand("extract", "Render spectrogram images for a manifest");
  common(extract);
  extract->add_option("--manifest", manifest, "Manifest to extract (default: dataset.manifest)");
  CLI::App* train = app.add_subcommand("train", "Train one model on a 70/30 split");
  common(train);
  CLI::App* eval = app.add_subcommand("eval", "Cross-validate with the configured fold plan");
  common(eval);
  CLI::App* cross = app.add_subcommand("cross", "Train on dataset.manifest, test on dataset.test_manifest");
  common(cross);
  CLI::App* report = app.add_subcommand("report", "Render tables, heatmap and attention maps for a run");
  report->add_option("--run", run_dir, "Run directory")->required();
  CLI::App* synth_cmd = app.add_subcommand("synth", "Write the synthetic test corpus");
  synth_cmd->add_option("--out", out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Corpus seed");
  synth_cmd->add_option("--classes", synth.classes, "Classes (2-7)");
  synth_cmd->add_option("--speakers", synth.speakers, "Speakers");
  synth_cmd->add_option("--clips", synth.clips, "Clips per class and speaker");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return CmdSynth(synth, out);
    if (report->parsed()) return CmdReport(run_dir);

    CommandOptions options;
    options.jobs = jobs;
    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--out")) options.out = fs::path(out);
    if (sub->count("--seed")) options.seed = seed;
    if (sub->count("--run-id")) options.run_id = run_id;
    const ExperimentConfig config = ExperimentConfig::Load(config_path);
    if (extract->parsed())
      return CmdExtract(config, options, extract->count("--manifest") ? std::optional<fs::path>(manifest) : std::nullopt);
    if (train->parsed()) return CmdTrain(config, options);
    if (eval->parsed()) return CmdEval(config, options);
    if (cross->parsed()) return CmdCross(config, options);
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace specemo
