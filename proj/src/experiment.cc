/* Copyright 2026 The MistLab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "mistlab/experiment.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "CLI11.hpp"
#include "json.hpp"
#include "mistlab/checkpoint.h"

namespace mistlab {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using Json = nlohmann::ordered_json;

namespace {

std::string Num(double v) {
  if (v == 0.0) return "0";  // also folds -0
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string Lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string_view TaskName(TaskKind task) {
  return task == TaskKind::kCopy ? "copy" : "pmnist";
}

// Reads typed values out of one INI section and remembers which keys were
// consumed so leftovers can be reported.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  template <typename V>
  void Get(const std::string& key, V& value) {
    const auto raw = Raw(key);
    if (!raw) return;
    if constexpr (std::is_same_v<V, std::string>) {
      value = *raw;
    } else if constexpr (std::is_same_v<V, bool>) {
      const std::string v = Lower(*raw);
      if (v == "true" || v == "1" || v == "yes" || v == "on") value = true;
      else if (v == "false" || v == "0" || v == "no" || v == "off") value = false;
      else Fail(key, *raw);
    } else {
      std::istringstream in(*raw);
      V parsed{};
      if (!(in >> parsed) || !(in >> std::ws).eof()) Fail(key, *raw);
      value = parsed;
    }
  }

  template <typename V>
  void Get(const std::string& key, std::optional<V>& value) {
    if (!Raw(key)) return;
    V v{};
    Get(key, v);
    value = v;
  }

  void Get(const std::string& key, fs::path& value) {
    std::string s;
    Get(key, s);
    if (Raw(key)) value = s;
  }

  std::optional<std::string> Raw(const std::string& key) {
    seen_.insert(key);
    if (tree_ == nullptr) return std::nullopt;
    const auto child = tree_->get_child_optional(pt::ptree::path_type(key, '\0'));
    if (!child) return std::nullopt;
    std::string v = child->data();
    v.erase(0, v.find_first_not_of(" \t"));
    v.erase(v.find_last_not_of(" \t") + 1);
    return v;
  }

  void RejectUnknown() const {
    if (tree_ == nullptr) return;
    for (const auto& [key, _] : *tree_)
      if (!seen_.count(key))
        throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
  }

 private:
  [[noreturn]] void Fail(const std::string& key, const std::string& raw) const {
    throw ConfigError("bad value '" + raw + "' for " + name_ + "." + key);
  }

  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> seen_;
};

// A stand-in for pMNIST when the images are unavailable: standard-normal
// pixels and random labels, generated on demand from (seed, split, row).
class RandomPixelDataset final : public Dataset {
 public:
  RandomPixelDataset(std::uint64_t seed, int steps) : seed_(seed), steps_(steps) {}
  std::string Describe() const override {
    return "random pixel sequences, " + std::to_string(steps_) + " steps";
  }
  int input_size() const override { return 1; }
  int num_classes() const override { return 10; }
  int steps() const override { return steps_; }
  HeadMode head_mode() const override { return HeadMode::kFinalStep; }
  Index size(Split split) const override { return split == Split::kTrain ? 10000 : 1000; }
  TaskBatch<float> Batch(Split split, std::span<const Index> rows) const override {
    TaskBatch<float> batch;
    const Index b = static_cast<Index>(rows.size());
    batch.inputs.assign(steps_, Matrix<float>::Zero(1, b));
    batch.targets = IndexMatrix::Constant(steps_, b, -1);
    batch.mask = Matrix<float>::Zero(steps_, b);
    for (Index j = 0; j < b; ++j) {
      Rng rng(MixSeed(seed_, (static_cast<std::uint64_t>(split) << 40) + rows[j]));
      for (int t = 0; t < steps_; ++t) batch.inputs[t](0, j) = static_cast<float>(rng.Normal());
      batch.targets(steps_ - 1, j) = static_cast<int>(rng.Below(10));
      batch.mask(steps_ - 1, j) = 1.0f;
    }
    return batch;
  }

 private:
  std::uint64_t seed_;
  int steps_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::Validate() const {
  try {
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (top_k < 1 || top_k > trials) throw ConfigError("top_k must lie in [1, trials]");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (train.precision != 32 && train.precision != 64)
      throw ConfigError("precision must be 32 or 64");
    if (train.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (train.max_updates < 1) throw ConfigError("max_updates must be >= 1");
    if (!(train.log10_lr_min <= train.log10_lr_max))
      throw ConfigError("lr_min must not exceed lr_max");
    if (train.momentum < 0.0 || train.momentum >= 1.0)
      throw ConfigError("momentum must lie in [0, 1)");
    if (!(train.clip > 0.0)) throw ConfigError("clip must be positive");
    if (task == TaskKind::kCopy) copy.Validate();
    if (pixel.last_steps < 0 || pixel.last_steps > 784)
      throw ConfigError("last_steps must lie in [0, 784]");
    if (probe.batch < 1) throw ConfigError("probe batch must be >= 1");
    if (probe.steps < 2) throw ConfigError("probe steps must be >= 2");
    if (probe.updates < 0) throw ConfigError("probe updates must be >= 0");
    Cell().Validate();
    for (Arch a : probe.archs)
      CellConfig::Make(a, 1, probe.n_h.at(a)).Validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

int ExperimentConfig::input_size() const {
  return task == TaskKind::kCopy ? copy_symbols::kInputSymbols : 1;
}

int ExperimentConfig::num_classes() const {
  return task == TaskKind::kCopy ? copy_symbols::kOutputClasses : 10;
}

CellConfig ExperimentConfig::Cell() const {
  CellConfig c = CellConfig::Make(arch, input_size(), n_h, n_d);
  c.forget_bias_init = forget_bias;
  return c;
}

std::string ExperimentConfig::Canonical() const {
  std::ostringstream s;
  s << "task=" << TaskName(task) << "\ntrials=" << trials << "\ntop_k=" << top_k
    << "\nseed=" << seed << "\narch=" << ArchName(arch) << "\nn_h=" << n_h
    << "\nn_d=" << n_d << "\nforget_bias=" << Num(forget_bias)
    << "\nbatch_size=" << train.batch_size << "\nmax_updates=" << train.max_updates
    << "\nmax_epochs=" << Num(train.max_epochs) << "\neval_every=" << train.eval_every
    << "\nlr_min=" << Num(train.log10_lr_min) << "\nlr_max=" << Num(train.log10_lr_max)
    << "\nlog10_lr=" << (train.log10_lr ? Num(*train.log10_lr) : "sampled")
    << "\nmomentum=" << Num(train.momentum) << "\nclip=" << Num(train.clip)
    << "\npatience=" << train.patience << "\nmin_improvement=" << Num(train.min_improvement)
    << "\ntarget_val_error="
    << (train.target_val_error ? Num(*train.target_val_error) : "none")
    << "\nmax_eval_examples=" << train.max_eval_examples
    << "\ntest_every_eval=" << train.test_every_eval << "\nprecision=" << train.precision;
  if (task == TaskKind::kCopy) {
    s << "\ndelay=" << copy.delay << "\nn_train=" << copy.n_train << "\nn_val=" << copy.n_val
      << "\nn_test=" << copy.n_test << "\ndata_seed=" << copy.seed;
  } else {
    s << "\npermutation_seed=" << pixel.permutation_seed << "\npermute=" << pixel.permute
      << "\nstandardize=" << pixel.standardize << "\nn_train=" << pixel.n_train
      << "\nn_val=" << pixel.n_val << "\nlast_steps=" << pixel.last_steps;
  }
  s << "\nprobe_archs=";
  for (Arch a : probe.archs)
    s << ArchName(a) << ':' << probe.n_h.at(a) << ':' << Num(probe.log10_lr.at(a)) << ' ';
  s << "\nprobe_updates=" << probe.updates << "\nprobe_batch=" << probe.batch
    << "\nprobe_random_inputs=" << probe.random_inputs << "\nprobe_steps=" << probe.steps
    << "\n";
  return s.str();
}

std::uint64_t ExperimentConfig::Hash() const {
  // FNV-1a, 64-bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : Canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ExperimentConfig ParseExperimentConfig(std::istream& in) {
  static const std::set<std::string> kSections = {"experiment", "model", "train",
                                                  "copy",       "pmnist", "probe"};
  // read_ini drops empty sections, so headers are checked on the raw text.
  std::stringstream text;
  text << in.rdbuf();
  for (std::string line; std::getline(text, line);) {
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] != '[') continue;
    const auto close = line.find(']', first);
    const std::string name =
        close == std::string::npos ? line.substr(first) : line.substr(first + 1, close - first - 1);
    if (!kSections.count(name)) throw ConfigError("unknown config section [" + name + "]");
  }
  text.clear();
  text.seekg(0);
  pt::ptree tree;
  try {
    pt::read_ini(text, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const auto& [name, child] : tree) {
    if (!kSections.count(name)) throw ConfigError("unknown config section [" + name + "]");
    if (!child.data().empty()) throw ConfigError("config key '" + name + "' outside a section");
  }
  auto section = [&](const std::string& name) {
    const auto child = tree.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };

  ExperimentConfig c;
  {
    Section s = section("experiment");
    std::string task = "copy";
    s.Get("task", task);
    task = Lower(task);
    if (task == "copy") c.task = TaskKind::kCopy;
    else if (task == "pmnist" || task == "mnist") c.task = TaskKind::kPixel;
    else throw ConfigError("unknown task '" + task + "'");
    s.Get("trials", c.trials);
    c.top_k = c.trials;
    s.Get("top_k", c.top_k);
    s.Get("seed", c.seed);
    s.Get("workers", c.workers);
    s.Get("precision", c.train.precision);
    s.Get("save_checkpoints", c.save_checkpoints);
    s.Get("out", c.out);
    s.RejectUnknown();
  }
  {
    Section s = section("model");
    std::string arch(ArchName(c.arch));
    s.Get("arch", arch);
    try {
      c.arch = ParseArch(arch);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    s.Get("n_h", c.n_h);
    s.Get("n_d", c.n_d);
    s.Get("forget_bias", c.forget_bias);
    s.RejectUnknown();
  }
  {
    Section s = section("train");
    TrainOptions& t = c.train;
    s.Get("batch_size", t.batch_size);
    s.Get("max_updates", t.max_updates);
    s.Get("max_epochs", t.max_epochs);
    s.Get("eval_every", t.eval_every);
    s.Get("lr_min", t.log10_lr_min);
    s.Get("lr_max", t.log10_lr_max);
    s.Get("log10_lr", t.log10_lr);
    s.Get("momentum", t.momentum);
    s.Get("clip", t.clip);
    s.Get("patience", t.patience);
    s.Get("min_improvement", t.min_improvement);
    s.Get("target_val_error", t.target_val_error);
    s.Get("max_eval_examples", t.max_eval_examples);
    s.Get("test_every_eval", t.test_every_eval);
    s.RejectUnknown();
  }
  {
    Section s = section("copy");
    s.Get("delay", c.copy.delay);
    s.Get("n_train", c.copy.n_train);
    s.Get("n_val", c.copy.n_val);
    s.Get("n_test", c.copy.n_test);
    s.Get("seed", c.copy.seed);
    s.Get("cache", c.copy_cache);
    s.RejectUnknown();
  }
  {
    Section s = section("pmnist");
    s.Get("data_dir", c.mnist_dir);
    s.Get("permutation_seed", c.pixel.permutation_seed);
    s.Get("permute", c.pixel.permute);
    s.Get("standardize", c.pixel.standardize);
    s.Get("n_train", c.pixel.n_train);
    s.Get("n_val", c.pixel.n_val);
    s.Get("last_steps", c.pixel.last_steps);
    s.RejectUnknown();
  }
  {
    Section s = section("probe");
    ProbeConfig& p = c.probe;
    if (auto archs = s.Raw("archs")) {
      p.archs.clear();
      for (const auto& name : SplitList(*archs)) {
        try {
          p.archs.push_back(ParseArch(name));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(e.what());
        }
      }
    }
    for (Arch a : {Arch::kSimple, Arch::kLstm, Arch::kClockwork, Arch::kNarx, Arch::kMist}) {
      const std::string suffix = "_" + std::string(ArchName(a));
      if (!p.n_h.count(a)) p.n_h[a] = 64;
      if (!p.log10_lr.count(a)) p.log10_lr[a] = -2.0;
      s.Get("n_h" + suffix, p.n_h[a]);
      s.Get("log10_lr" + suffix, p.log10_lr[a]);
      fs::path ckpt;
      s.Get("checkpoint" + suffix, ckpt);
      if (!ckpt.empty()) p.checkpoint[a] = ckpt;
    }
    s.Get("updates", p.updates);
    s.Get("batch", p.batch);
    s.Get("random_inputs", p.random_inputs);
    s.Get("steps", p.steps);
    s.RejectUnknown();
  }
  c.Validate();
  return c;
}

ExperimentConfig LoadExperimentConfig(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  return ParseExperimentConfig(in);
}

std::unique_ptr<Dataset> MakeDataset(const ExperimentConfig& config) {
  if (config.task == TaskKind::kPixel)
    return std::make_unique<PixelDataset>(LoadMnist(config.mnist_dir), config.pixel);
  if (!config.copy_cache.empty() && fs::exists(config.copy_cache)) {
    auto cached = std::make_unique<CopyDataset>(CopyDataset::Load(config.copy_cache));
    const CopySpec& s = cached->spec();
    if (s.delay != config.copy.delay || s.seed != config.copy.seed ||
        s.n_train != config.copy.n_train || s.n_val != config.copy.n_val ||
        s.n_test != config.copy.n_test)
      throw DataError("copy cache " + config.copy_cache.string() +
                      " was generated with different settings");
    return cached;
  }
  auto data = std::make_unique<CopyDataset>(config.copy);
  if (!config.copy_cache.empty()) data->Save(config.copy_cache);
  return data;
}

std::string OutputHeader(const ExperimentConfig& config) {
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(config.Hash()));
  return std::string("# mistlab ") + kVersion + " config=" + hash;
}

// ---------------------------------------------------------------------------
// Outputs

void WriteTrialsCsv(std::ostream& out, const ExperimentConfig& config,
                    const std::vector<TrialRecord>& records) {
  out << OutputHeader(config) << "\n";
  out << "trial_id,seed,log10_lr,epoch,updates,train_loss,val_loss,val_err,val_err_full,"
         "test_err\n";
  for (const auto& r : records) {
    for (const auto& p : r.history) {
      out << r.trial_id << ',' << r.seed << ',' << Num(r.log10_lr) << ',' << Num(p.epoch)
          << ',' << p.updates << ',' << Num(p.train_loss) << ',' << Num(p.val_loss) << ','
          << Num(p.val_error) << ',' << Num(p.val_error_full) << ','
          << (p.test_error ? Num(*p.test_error) : "") << "\n";
    }
  }
}

void WriteSummaryCsv(std::ostream& out, const ExperimentConfig& config,
                     const std::vector<TrialRecord>& records, const TopTrials& top) {
  std::vector<int> rank(records.size(), 0);
  for (std::size_t i = 0; i < top.ranked.size(); ++i) rank[top.ranked[i]] = static_cast<int>(i) + 1;
  out << OutputHeader(config) << "\n";
  out << "row,trial_id,seed,log10_lr,n_h,params,best_val_err,test_err,test_err_std,updates,"
         "rank,status\n";
  const CellConfig cell = config.Cell();
  const long params = ParamCount(cell, config.num_classes());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out << "trial," << r.trial_id << ',' << r.seed << ',' << Num(r.log10_lr) << ','
        << config.n_h << ',' << params << ',' << Num(r.best_val_error) << ','
        << Num(r.test_error) << ",," << r.updates << ',' << rank[i] << ','
        << (r.failed ? "failed" : "ok") << "\n";
  }
  if (top.ranked.empty()) return;
  const auto& best = records[top.ranked.front()];
  out << "summary," << best.trial_id << ',' << best.seed << ',' << Num(top.best_log10_lr)
      << ',' << config.n_h << ',' << params << ',' << Num(best.best_val_error) << ','
      << Num(top.mean_test_error) << ',' << Num(top.std_test_error) << ",," << top.k
      << ",top_k\n";
}

void WriteSummaryJson(std::ostream& out, const ExperimentConfig& config,
                      const std::vector<TrialRecord>& records, const TopTrials& top,
                      double wall_seconds) {
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(config.Hash()));
  Json j;
  j["version"] = kVersion;
  j["config_hash"] = hash;
  j["task"] = TaskName(config.task);
  if (config.task == TaskKind::kCopy) {
    j["delay"] = config.copy.delay;
    j["blank_baseline_error"] = CopyBlankBaselineError(config.copy);
  } else {
    j["permutation_seed"] = config.pixel.permutation_seed;
  }
  j["arch"] = ArchName(config.arch);
  j["n_h"] = config.n_h;
  j["params"] = ParamCount(config.Cell(), config.num_classes());
  j["precision"] = config.train.precision;
  j["trials"] = records.size();
  j["top_k"] = top.k;
  j["best_log10_lr"] = top.best_log10_lr;
  j["mean_test_error"] = top.mean_test_error;
  j["std_test_error"] = top.std_test_error;
  j["population_std_test_error"] = top.population_std_test_error;
  j["mean_log10_lr"] = top.mean_log10_lr;
  j["std_log10_lr"] = top.std_log10_lr;
  if (!top.ranked.empty()) {
    const auto& best = records[top.ranked.front()];
    j["best_trial"] = best.trial_id;
    j["best_val_error"] = best.best_val_error;
    j["best_test_error"] = best.test_error;
    // Companion metric of the best trial at its best evaluation.
    for (const auto& p : best.history)
      if (p.val_error == best.best_val_error) {
        j["best_val_error_full"] = p.val_error_full;
        break;
      }
  }
  Json trials = Json::array();
  for (const auto& r : records) {
    Json t;
    t["trial_id"] = r.trial_id;
    t["seed"] = r.seed;
    t["log10_lr"] = r.log10_lr;
    t["best_val_error"] = r.best_val_error;
    t["test_error"] = r.test_error;
    t["updates"] = r.updates;
    t["failed"] = r.failed;
    if (r.failed) t["failure"] = r.failure;
    t["wall_seconds"] = r.wall_seconds;
    trials.push_back(std::move(t));
  }
  j["trial_results"] = std::move(trials);
  j["wall_seconds"] = wall_seconds;
  out << j.dump(2) << "\n";
}

namespace {

void WriteFile(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  body(out);
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

RunResult RunExperiment(const ExperimentConfig& config, std::ostream* log) {
  config.Validate();
  const auto start = std::chrono::steady_clock::now();
  auto data = MakeDataset(config);
  fs::create_directories(config.out);
  if (log) *log << "task: " << data->Describe() << "\n";

  EvalCallback progress;
  if (log) {
    progress = [log](const TrialRecord& r, const EvalPoint& p) {
      *log << "trial " << r.trial_id << " lr 10^" << Num(r.log10_lr) << " upd " << p.updates
           << " train_loss " << Num(p.train_loss) << " val_loss " << Num(p.val_loss)
           << " val_err " << Num(p.val_error) << "\n";
      log->flush();
    };
  }
  std::function<fs::path(int)> checkpoint_for;
  if (config.save_checkpoints) {
    checkpoint_for = [&](int id) {
      char name[32];
      std::snprintf(name, sizeof(name), "trial_%03d.ckpt", id);
      return config.out / name;
    };
  }

  RunResult result;
  result.records = RunTrials(config.Cell(), *data, config.train, config.trials, config.seed,
                             config.workers, progress, checkpoint_for);
  result.top = SelectTopTrials(result.records, config.top_k);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  WriteFile(config.out / "trials.csv",
            [&](std::ostream& o) { WriteTrialsCsv(o, config, result.records); });
  WriteFile(config.out / "summary.csv",
            [&](std::ostream& o) { WriteSummaryCsv(o, config, result.records, result.top); });
  WriteFile(config.out / "summary.json", [&](std::ostream& o) {
    WriteSummaryJson(o, config, result.records, result.top, result.wall_seconds);
  });
  return result;
}

// ---------------------------------------------------------------------------
// Probe

std::vector<GradientProfile> RunProbe(const ExperimentConfig& config, std::ostream* log) {
  config.Validate();
  const ProbeConfig& probe = config.probe;
  std::unique_ptr<Dataset> data;
  if (probe.random_inputs) {
    data = std::make_unique<RandomPixelDataset>(config.seed, probe.steps);
  } else {
    data = std::make_unique<PixelDataset>(LoadMnist(config.mnist_dir), config.pixel);
  }
  fs::create_directories(config.out);

  // One fixed batch of examples for every architecture.
  Rng pick(MixSeed(config.seed, 0x70726f6265ULL));
  std::vector<Index> rows(probe.batch);
  for (auto& r : rows)
    r = static_cast<Index>(pick.Below(static_cast<std::uint64_t>(data->size(Split::kTrain))));
  const TaskBatch<double> batch = data->Batch(Split::kTrain, rows).Cast<double>();

  std::vector<GradientProfile> profiles;
  for (Arch arch : probe.archs) {
    Model<double> model;
    long updates = 0;
    if (auto it = probe.checkpoint.find(arch); it != probe.checkpoint.end()) {
      if (!fs::exists(it->second)) throw DataError("checkpoint " + it->second.string() + " not found");
      model = LoadCheckpoint<double>(it->second);
      if (model.config.arch != arch)
        throw ConfigError("checkpoint " + it->second.string() + " holds a " +
                          std::string(ArchName(model.config.arch)) + " model, expected " +
                          std::string(ArchName(arch)));
      if (model.config.n_x != 1 || model.head.n_out != 10)
        throw ConfigError("checkpoint " + it->second.string() + " is not a pixel-sequence model");
    } else {
      CellConfig cell = CellConfig::Make(arch, 1, probe.n_h.at(arch));
      cell.forget_bias_init = config.forget_bias;
      const std::uint64_t seed = TrialSeed(config.seed, static_cast<int>(arch));
      if (probe.updates > 0) {
        TrainOptions opt = config.train;
        opt.log10_lr = probe.log10_lr.at(arch);
        opt.max_updates = probe.updates;
        opt.max_epochs = 0;
        opt.eval_every = probe.updates;
        opt.max_eval_examples = probe.batch;
        opt.patience = 0;
        opt.target_val_error.reset();
        opt.checkpoint = config.out / ("probe_" + std::string(ArchName(arch)) + ".ckpt");
        const TrialRecord rec = RunTrial(cell, *data, opt, static_cast<int>(arch), seed);
        if (rec.failed)
          throw NumericError(std::string(ArchName(arch)) + " warm-up diverged: " + rec.failure);
        model = LoadCheckpoint<double>(opt.checkpoint);
        updates = rec.updates;
      } else {
        Rng rng(seed);
        model = InitModel<double>(cell, LossHead{HeadMode::kFinalStep, 10}, rng);
      }
    }
    GradientProfile profile = ProbeGradientNorms(model, batch, updates);
    if (log) {
      *log << ArchName(arch) << ": norm(1) " << Num(profile.At(1));
      for (int tau : {10, 100, 500})
        if (tau < batch.steps()) *log << " norm(" << tau << ") " << Num(profile.At(tau));
      *log << "\n";
    }
    WriteFile(config.out / ("profile_" + std::string(ArchName(arch)) + ".csv"),
              [&](std::ostream& o) { WriteProfileCsv(o, config, profile); });
    profiles.push_back(std::move(profile));
  }
  WriteFile(config.out / "profiles.csv",
            [&](std::ostream& o) { WriteCombinedProfilesCsv(o, config, profiles); });
  return profiles;
}

void WriteProfileCsv(std::ostream& out, const ExperimentConfig& config,
                     const GradientProfile& profile) {
  out << OutputHeader(config) << " arch=" << ArchName(profile.arch)
      << " updates=" << profile.checkpoint_updates << "\n";
  out << "tau,mean_norm\n";
  for (std::size_t i = 0; i < profile.tau.size(); ++i)
    out << profile.tau[i] << ',' << Num(profile.mean_norm[i]) << "\n";
}

void WriteCombinedProfilesCsv(std::ostream& out, const ExperimentConfig& config,
                              const std::vector<GradientProfile>& profiles) {
  out << OutputHeader(config) << "\n";
  out << "tau";
  std::size_t rows = 0;
  for (const auto& p : profiles) {
    out << ',' << ArchName(p.arch);
    rows = std::max(rows, p.tau.size());
  }
  out << "\n";
  for (std::size_t i = 0; i < rows; ++i) {
    out << i + 1;
    for (const auto& p : profiles) out << ',' << (i < p.mean_norm.size() ? Num(p.mean_norm[i]) : "");
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Paths and reports

void WritePathTable(std::ostream& out, const std::vector<int>& delays, int tau_max) {
  const auto lengths = ShortestPathLengths(DelayGraph{delays, tau_max}, tau_max);
  out << "tau,bfs_length,closed_form,match\n";
  for (int tau = 1; tau <= tau_max; ++tau) {
    const auto closed = ClosedFormLength(delays, tau);
    out << tau << ',' << (lengths[tau] ? std::to_string(*lengths[tau]) : "unreachable") << ','
        << (closed ? std::to_string(*closed) : "") << ','
        << (closed ? (lengths[tau] == closed ? "true" : "false") : "") << "\n";
  }
}

void WriteReport(std::ostream& out, const std::vector<fs::path>& run_dirs) {
  out << "| run | task | arch | n_h | params | log10 lr* | error (top-k) | k |\n";
  out << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& dir : run_dirs) {
    const fs::path path = dir / "summary.json";
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
    char err[64];
    std::snprintf(err, sizeof(err), "%.2f%% ± %.2f", 100.0 * j.value("mean_test_error", 0.0),
                  100.0 * j.value("std_test_error", 0.0));
    char lr[32];
    std::snprintf(lr, sizeof(lr), "%.2f", j.value("best_log10_lr", 0.0));
    std::string task = j.value("task", "?");
    if (j.contains("delay")) task += " D=" + std::to_string(j["delay"].get<int>());
    out << "| " << dir.filename().string() << " | " << task << " | "
        << j.value("arch", "?") << " | " << j.value("n_h", 0) << " | " << j.value("params", 0L)
        << " | " << lr << " | " << err << " | " << j.value("top_k", 0) << " |\n";
  }
}

// ---------------------------------------------------------------------------
// Command line

int RunCommandLine(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"mistlab: recurrent networks with long delays"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir;
  std::optional<int> workers, precision;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", out_dir, "Output directory");
    cmd->add_option("--workers", workers, "Concurrent trials")->check(CLI::PositiveNumber);
    cmd->add_option("--precision", precision, "32 or 64")->check(CLI::IsMember({32, 64}));
    cmd->add_option("--seed", seed, "Experiment seed");
    cmd->add_option("--data-dir", data_dir, "Directory with the MNIST IDX files");
  };

  CLI::App* run = app.add_subcommand("run", "Run a randomized trial sweep");
  run->add_option("--config", config_path, "Experiment config")->required();
  add_common(run);

  CLI::App* probe = app.add_subcommand("probe", "Gradient-norm profiles");
  probe->add_option("--config", config_path, "Experiment config");
  std::string probe_arch, probe_checkpoint;
  probe->add_option("--arch", probe_arch, "Probe only this architecture");
  probe->add_option("--checkpoint", probe_checkpoint, "Probe this checkpoint")->needs("--arch");
  add_common(probe);

  CLI::App* paths = app.add_subcommand("paths", "Shortest paths through a delay graph");
  std::string delay_list = "1,2,4,8,16,32,64,128";
  int tau_max = 1024;
  std::string paths_out;
  paths->add_option("--delays", delay_list, "Comma-separated delays");
  paths->add_option("--tau-max", tau_max, "Largest distance")->check(CLI::PositiveNumber);
  paths->add_option("--out", paths_out, "Write the table here instead of stdout");
  paths->add_option("--config", config_path, "Ignored; accepted for uniformity");

  CLI::App* report = app.add_subcommand("report", "Summarize finished runs");
  std::vector<std::string> report_dirs;
  report->add_option("dirs", report_dirs, "Run output directories")->required();
  std::string report_out;
  report->add_option("--out", report_out, "Write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    auto load = [&](bool required) {
      ExperimentConfig c;
      if (!config_path.empty()) c = LoadExperimentConfig(config_path);
      else if (required) throw ConfigError("--config is required");
      if (!out_dir.empty()) c.out = out_dir;
      if (!data_dir.empty()) c.mnist_dir = data_dir;
      if (workers) c.workers = *workers;
      if (precision) c.train.precision = *precision;
      if (seed) c.seed = *seed;
      c.Validate();
      return c;
    };

    if (run->parsed()) {
      const ExperimentConfig c = load(true);
      const RunResult r = RunExperiment(c, &err);
      const bool all_failed = std::all_of(r.records.begin(), r.records.end(),
                                          [](const TrialRecord& t) { return t.failed; });
      char line[160];
      std::snprintf(line, sizeof(line),
                    "top-%d test error %.4f ± %.4f, best log10 lr %.3f (%s)\n", r.top.k,
                    r.top.mean_test_error, r.top.std_test_error, r.top.best_log10_lr,
                    c.out.string().c_str());
      out << line;
      if (all_failed) {
        err << "every trial diverged\n";
        return 3;
      }
      return 0;
    }
    if (probe->parsed()) {
      ExperimentConfig c = load(false);
      if (!probe_arch.empty()) {
        const Arch a = ParseArch(probe_arch);
        c.probe.archs = {a};
        if (!probe_checkpoint.empty()) c.probe.checkpoint[a] = probe_checkpoint;
      }
      const auto profiles = RunProbe(c, &err);
      out << "wrote " << profiles.size() << " profiles to " << c.out.string() << "\n";
      return 0;
    }
    if (paths->parsed()) {
      std::vector<int> delays;
      for (const auto& item : SplitList(delay_list)) {
        try {
          std::size_t used = 0;
          delays.push_back(std::stoi(item, &used));
          if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
          throw ConfigError("bad delay '" + item + "'");
        }
      }
      try {
        DelayGraph{delays, tau_max}.Validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      if (paths_out.empty()) {
        WritePathTable(out, delays, tau_max);
      } else {
        WriteFile(paths_out, [&](std::ostream& o) { WritePathTable(o, delays, tau_max); });
      }
      return 0;
    }
    if (report->parsed()) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      if (report_out.empty()) {
        WriteReport(out, dirs);
      } else {
        WriteFile(report_out, [&](std::ostream& o) { WriteReport(o, dirs); });
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace mistlab
