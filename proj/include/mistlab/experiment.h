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

// Experiment orchestration behind the `mistlab` command: config files,
// trial sweeps, gradient probes, path tables and the CSV/JSON they emit.
//
// Config files are key = value lines grouped in [sections]:
//
//   [experiment]
//   task = copy            ; copy | pmnist
//   trials = 10
//   top_k = 10
//   seed = 1
//
//   [model]
//   arch = mist
//   n_h = 64
//
//   [copy]
//   delay = 50
//
// Every key has a default; see ExperimentConfig.

#ifndef MISTLAB_EXPERIMENT_H_
#define MISTLAB_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mistlab/cells.h"
#include "mistlab/diagnostics.h"
#include "mistlab/tasks.h"
#include "mistlab/trainer.h"

namespace mistlab {

inline constexpr const char* kVersion = "0.3.1";

// Invalid configuration or command line (exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TaskKind { kCopy, kPixel };

struct ProbeConfig {
  std::vector<Arch> archs = {Arch::kSimple, Arch::kLstm, Arch::kClockwork, Arch::kMist};
  std::map<Arch, int> n_h = {{Arch::kSimple, 198}, {Arch::kLstm, 100},
                             {Arch::kClockwork, 256}, {Arch::kNarx, 64},
                             {Arch::kMist, 139}};
  // Learning rate used for the warm-up updates before probing.
  std::map<Arch, double> log10_lr = {{Arch::kSimple, -2.27}, {Arch::kLstm, -1.11},
                                     {Arch::kClockwork, -1.91}, {Arch::kNarx, -2.0},
                                     {Arch::kMist, -1.35}};
  std::map<Arch, std::filesystem::path> checkpoint;  // probe these instead
  long updates = 100;  // training updates before the probe (0 = untrained)
  Index batch = 100;
  bool random_inputs = false;  // standard-normal pixels instead of MNIST
  int steps = 784;             // sequence length for random inputs
};

struct ExperimentConfig {
  TaskKind task = TaskKind::kCopy;
  int trials = 10;
  int top_k = 10;
  std::uint64_t seed = 1;
  int workers = 1;
  bool save_checkpoints = false;
  std::filesystem::path out = "results";

  Arch arch = Arch::kMist;
  int n_h = 64;
  int n_d = 0;  // 0 = architecture default
  double forget_bias = 1.0;

  TrainOptions train;
  CopySpec copy;
  std::filesystem::path copy_cache;  // optional binary cache of the digits
  PixelSequenceSpec pixel;
  std::filesystem::path mnist_dir = "data/mnist";
  ProbeConfig probe;

  // Throws ConfigError.
  void Validate() const;
  int input_size() const;
  int num_classes() const;
  CellConfig Cell() const;
  // Stable text form of every setting that affects results (not workers or
  // output locations).
  std::string Canonical() const;
  std::uint64_t Hash() const;
};

// Unknown sections/keys and malformed values raise ConfigError.
ExperimentConfig ParseExperimentConfig(std::istream& in);
ExperimentConfig LoadExperimentConfig(const std::filesystem::path& path);

std::unique_ptr<Dataset> MakeDataset(const ExperimentConfig& config);

// "# mistlab <version> config=<16 hex digits>"
std::string OutputHeader(const ExperimentConfig& config);

void WriteTrialsCsv(std::ostream& out, const ExperimentConfig& config,
                    const std::vector<TrialRecord>& records);
void WriteSummaryCsv(std::ostream& out, const ExperimentConfig& config,
                     const std::vector<TrialRecord>& records, const TopTrials& top);
void WriteSummaryJson(std::ostream& out, const ExperimentConfig& config,
                      const std::vector<TrialRecord>& records, const TopTrials& top,
                      double wall_seconds);

struct RunResult {
  std::vector<TrialRecord> records;
  TopTrials top;
  double wall_seconds = 0.0;
};

// Runs the sweep and writes trials.csv, summary.csv and summary.json into
// config.out. Progress lines go to `log` when given.
RunResult RunExperiment(const ExperimentConfig& config, std::ostream* log = nullptr);

// Gradient profiles for config.probe.archs on pMNIST-shaped batches; writes
// profile_<arch>.csv and profiles.csv (all series side by side) into
// config.out.
std::vector<GradientProfile> RunProbe(const ExperimentConfig& config,
                                      std::ostream* log = nullptr);
void WriteProfileCsv(std::ostream& out, const ExperimentConfig& config,
                     const GradientProfile& profile);
void WriteCombinedProfilesCsv(std::ostream& out, const ExperimentConfig& config,
                              const std::vector<GradientProfile>& profiles);

// tau, BFS length, closed-form prediction, match flag.
void WritePathTable(std::ostream& out, const std::vector<int>& delays, int tau_max);

// Table-1 style rows from summary.json files.
void WriteReport(std::ostream& out, const std::vector<std::filesystem::path>& run_dirs);

// Command-line entry point; returns the process exit code
// (0 ok, 1 usage, 2 data, 3 numeric failure).
int RunCommandLine(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mistlab

#endif  // MISTLAB_EXPERIMENT_H_
