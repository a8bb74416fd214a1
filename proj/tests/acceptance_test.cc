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

// End-to-end acceptance checks. Prints one PASS/FAIL line per check and exits
// non-zero if any check fails.
//
// The training-based checks (copy, gradient profiles, pMNIST) read the
// experiment configs under configs/ and reuse results in the results
// directory when the recorded config hash matches; otherwise they run the
// experiment first, which takes hours on one core.
//
//   acceptance_test [--results DIR] [--configs DIR] [--mnist DIR] [--only NAME]

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mistlab/cells.h"
#include "mistlab/diagnostics.h"
#include "mistlab/engine.h"
#include "mistlab/experiment.h"
#include "test_util.h"

namespace mistlab {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;

struct Paths {
  fs::path results = MISTLAB_RESULTS_DIR;
  fs::path configs = MISTLAB_CONFIG_DIR;
  fs::path mnist = MISTLAB_MNIST_DIR;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Gradient exactness

double WorstFiniteDifferenceError(Model<double> model, const TaskBatch<double>& batch) {
  const double eps = 1e-3, floor = 1e-7;
  ParamSet<double> grads;
  BackwardSequence(model, ForwardSequence(model, batch).tape, batch, grads);
  auto loss = [&] { return ForwardSequence(model, batch).metrics.loss(); };
  double worst = 0.0;
  for (Index k = 0; k < model.params.size(); ++k) {
    Matrix<double>& w = model.params[k];
    const Matrix<double>* mask = model.params.mask(k);
    for (Index i = 0; i < w.size(); ++i) {
      if (mask != nullptr && mask->data()[i] == 0.0) continue;
      const double saved = w.data()[i];
      double f[4];
      const double offsets[4] = {2, 1, -1, -2};
      for (int j = 0; j < 4; ++j) {
        w.data()[i] = saved + offsets[j] * eps;
        f[j] = loss();
      }
      w.data()[i] = saved;
      const double numeric = (-f[0] + 8 * f[1] - 8 * f[2] + f[3]) / (12 * eps);
      worst = std::max(worst, testing::RelativeError(grads[k].data()[i], numeric, floor));
    }
  }
  return worst;
}

Outcome GradientExactness() {
  // Random shapes within n_h <= 8, n_x <= 4, T <= 20.
  Rng shapes(2026);
  double worst = 0.0;
  int instances = 0;
  for (Arch arch : {Arch::kSimple, Arch::kLstm, Arch::kClockwork, Arch::kNarx, Arch::kMist}) {
    for (int rep = 0; rep < 4; ++rep) {
      const HeadMode mode = rep % 2 ? HeadMode::kFinalStep : HeadMode::kPerStep;
      const int n_x = 1 + static_cast<int>(shapes.Below(4));
      const int steps = 2 + static_cast<int>(shapes.Below(19));
      int n_h = 2 + static_cast<int>(shapes.Below(7));
      int n_d = 0;
      if (arch == Arch::kClockwork) {
        n_d = n_h % 2 == 0 ? 2 : 1;
        if (n_h == 8) n_d = 4;
      } else if (arch == Arch::kMist || arch == Arch::kNarx) {
        n_d = 1 + static_cast<int>(shapes.Below(5));
      }
      Rng rng(shapes.NextU64());
      auto model = InitModel<double>(CellConfig::Make(arch, n_x, n_h, n_d), LossHead{mode, 3}, rng);
      for (Index k = 0; k < model.params.size(); ++k)
        if (model.params[k].cols() == 1)
          model.params[k] += InitNormal<double>(rng, model.params[k].rows(), 1, 0.3);
      const auto batch = testing::RandomBatch<double>(rng, n_x, 2, steps, 3, mode);
      worst = std::max(worst, WorstFiniteDifferenceError(model, batch));
      ++instances;
    }
  }
  return {worst <= 1e-5, Format("%d instances, worst relative error %.2e (<= 1e-5)", instances, worst)};
}

// ---------------------------------------------------------------------------
// Decomposition identity

Outcome DecompositionIdentity() {
  double worst = 0.0;
  int instances = 0;
  for (Arch arch : {Arch::kSimple, Arch::kLstm, Arch::kClockwork, Arch::kNarx, Arch::kMist}) {
    for (HeadMode mode : {HeadMode::kPerStep, HeadMode::kFinalStep}) {
      Rng rng(31 + instances);
      const int n_d = arch == Arch::kSimple || arch == Arch::kLstm ? 0 : 4;
      const auto model =
          InitModel<double>(CellConfig::Make(arch, 3, 8, n_d), LossHead{mode, 5}, rng);
      const auto batch = testing::RandomBatch<double>(rng, 3, 4, 50, 5, mode);
      worst = std::max(worst, DecomposeGradient(model, batch).MaxRelativeResidual());
      ++instances;
    }
  }
  return {worst <= 1e-10,
          Format("%d instances at T = 50, worst relative residual %.2e (<= 1e-10)", instances, worst)};
}

// ---------------------------------------------------------------------------
// Shortest paths

Outcome ShortestPaths() {
  std::vector<int> delays;
  for (int k = 0; k < 8; ++k) delays.push_back(1 << k);
  const int tau_max = 4096;
  const auto bfs = ShortestPathLengths(DelayGraph{delays, tau_max}, tau_max);
  const auto dp = testing::CoinChangeLengths(delays, tau_max);
  int mismatches = 0, bound_violations = 0;
  for (int tau = 1; tau <= tau_max; ++tau) {
    if (!bfs[tau] || *bfs[tau] != dp[tau]) ++mismatches;
    const int len = bfs[tau].value_or(1 << 30);
    const int bound = tau <= 128 ? static_cast<int>(std::ceil(std::log2(tau))) + 1
                                 : (tau + 127) / 128 + 7;
    if (len > bound) ++bound_violations;
  }
  return {mismatches == 0 && bound_violations == 0,
          Format("tau 1..%d: %d BFS/DP mismatches, %d bound violations; length(4096) = %d",
                 tau_max, mismatches, bound_violations, *bfs[tau_max])};
}

// ---------------------------------------------------------------------------
// Parameter parity

Outcome ParameterParity() {
  struct Pairing {
    const char* table;
    int n_x, n_out;
    Arch arch;
    int n_h;
  };
  // n_x / n_out: Table 1 is pMNIST (1 input, 10 classes). Tables 3 and 4 use
  // 13 MFCC inputs / 40 phone classes and 6 motion channels / 16 activities.
  const std::vector<Pairing> pairings = {
      {"T1", 1, 10, Arch::kSimple, 198},     {"T1", 1, 10, Arch::kClockwork, 256},
      {"T1", 1, 10, Arch::kMist, 139},       {"T3", 13, 40, Arch::kSimple, 197},
      {"T3", 13, 40, Arch::kClockwork, 248}, {"T3", 13, 40, Arch::kMist, 139},
      {"T4", 6, 16, Arch::kSimple, 203},     {"T4", 6, 16, Arch::kClockwork, 256},
      {"T4", 6, 16, Arch::kMist, 141},
  };
  const long lstm_t1 = ParamCount(CellConfig::Make(Arch::kLstm, 1, 100), 10);
  bool pass = lstm_t1 == 41810;
  std::string detail = Format("LSTM(100) = %ld", lstm_t1);
  for (const auto& p : pairings) {
    const long lstm = ParamCount(CellConfig::Make(Arch::kLstm, p.n_x, 100), p.n_out);
    const long other = ParamCount(CellConfig::Make(p.arch, p.n_x, p.n_h), p.n_out);
    const double rel = static_cast<double>(other - lstm) / lstm;
    pass = pass && std::abs(rel) <= 0.05;
    detail += Format("; %s %s(%d) = %ld (%+.1f%%)", p.table, std::string(ArchName(p.arch)).c_str(),
                     p.n_h, other, 100 * rel);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// Reduction identities

template <typename T>
bool SameOutputs(const Model<T>& a, const Model<T>& b, const TaskBatch<T>& batch) {
  const auto fa = ForwardSequence(a, batch), fb = ForwardSequence(b, batch);
  for (int t = 1; t <= batch.steps(); ++t) {
    if (fa.tape.H(t) != fb.tape.H(t)) return false;
    if (fa.tape.probs[t - 1] != fb.tape.probs[t - 1]) return false;
  }
  return fa.metrics.loss_sum == fb.metrics.loss_sum;
}

// Same tensors in the same order; only the names differ between cells.
template <typename T>
Model<T> WithParams(const CellConfig& config, const Model<T>& source) {
  Rng unused(0);
  Model<T> model = InitModel<T>(config, source.head, unused);
  for (Index k = 0; k < model.params.size(); ++k) model.params[k] = source.params[k];
  return model;
}

template <typename T>
int ReductionMismatches(int sequences) {
  int mismatches = 0;
  Rng rng(sizeof(T) * 1000 + 7);
  for (int n = 0; n < sequences; ++n) {
    const int n_x = 1 + static_cast<int>(rng.Below(4));
    const int n_h = 1 + static_cast<int>(rng.Below(16));
    const int steps = 1 + static_cast<int>(rng.Below(60));
    const auto simple = InitModel<T>(CellConfig::Make(Arch::kSimple, n_x, n_h),
                                     LossHead{HeadMode::kPerStep, 4}, rng);
    const auto batch = testing::RandomBatch<T>(rng, n_x, 1, steps, 4, HeadMode::kPerStep);
    const auto narx = WithParams(CellConfig::Make(Arch::kNarx, n_x, n_h, 1), simple);
    const auto clockwork = WithParams(CellConfig::Make(Arch::kClockwork, n_x, n_h, 1), simple);
    if (!SameOutputs(simple, narx, batch)) ++mismatches;
    if (!SameOutputs(simple, clockwork, batch)) ++mismatches;
  }
  return mismatches;
}

Outcome ReductionIdentities() {
  const int m32 = ReductionMismatches<float>(100);
  const int m64 = ReductionMismatches<double>(100);
  return {m32 == 0 && m64 == 0,
          Format("100 sequences each in 32/64-bit: %d / %d sequences differ bitwise", m32, m64)};
}

// ---------------------------------------------------------------------------
// Experiments backed by configs

ExperimentConfig LoadConfig(const Paths& paths, const std::string& name) {
  ExperimentConfig c = LoadExperimentConfig(paths.configs / (name + ".ini"));
  c.out = paths.results / name;
  c.mnist_dir = paths.mnist;
  return c;
}

std::string HashString(const ExperimentConfig& c) {
  return Format("%016llx", static_cast<unsigned long long>(c.Hash()));
}

// summary.json for the config, running the sweep if nothing matching exists.
Json SweepSummary(const Paths& paths, const std::string& name) {
  const ExperimentConfig c = LoadConfig(paths, name);
  const fs::path summary = c.out / "summary.json";
  if (fs::exists(summary)) {
    std::ifstream in(summary);
    Json j = Json::parse(in);
    if (j.value("config_hash", "") == HashString(c)) return j;
    std::cerr << name << ": cached results are for another config; rerunning\n";
  }
  std::cerr << name << ": running " << c.trials << " trials into " << c.out << "\n";
  RunExperiment(c, &std::cerr);
  std::ifstream in(summary);
  return Json::parse(in);
}

double TrialWindowError(const Json& j) { return j.value("best_test_error", 1.0); }

Outcome CopyDeskScale(const Paths& paths) {
  const Json l50 = SweepSummary(paths, "copy_d50_lstm");
  const Json m50 = SweepSummary(paths, "copy_d50_mist");
  const Json l200 = SweepSummary(paths, "copy_d200_lstm");
  const Json m200 = SweepSummary(paths, "copy_d200_mist");
  const double baseline = l200.value("blank_baseline_error", 1.0 / 12.0);
  const double lstm200_full = l200.value("best_val_error_full", 1.0);
  const bool d50 = TrialWindowError(l50) < 0.01 && TrialWindowError(m50) < 0.01;
  const bool mist200 = TrialWindowError(m200) < 0.02;
  const bool lstm200 = std::abs(lstm200_full - baseline) <= 0.2 * baseline;
  return {d50 && mist200 && lstm200,
          Format("D=50 window error LSTM %.2f%% MIST %.2f%% (< 1%%); D=200 MIST %.2f%% (< 2%%), "
                 "LSTM full-sequence %.2f%% vs blank baseline %.2f%% (within 20%%)",
                 100 * TrialWindowError(l50), 100 * TrialWindowError(m50),
                 100 * TrialWindowError(m200), 100 * lstm200_full, 100 * baseline)};
}

Outcome GradientSeparation(const Paths& paths) {
  const ExperimentConfig c = LoadConfig(paths, "probe_pmnist");
  const fs::path combined = c.out / "profiles.csv";
  auto cached = [&] {
    std::ifstream in(combined);
    std::string header;
    return std::getline(in, header) && header.find("config=" + HashString(c)) != std::string::npos;
  };
  std::vector<GradientProfile> profiles;
  if (cached()) {
    for (Arch arch : c.probe.archs) {
      std::ifstream in(c.out / ("profile_" + std::string(ArchName(arch)) + ".csv"));
      GradientProfile p;
      p.arch = arch;
      std::string line;
      std::getline(in, line);
      std::getline(in, line);
      while (std::getline(in, line)) {
        const auto comma = line.find(',');
        p.tau.push_back(std::stoi(line.substr(0, comma)));
        p.mean_norm.push_back(std::stod(line.substr(comma + 1)));
      }
      profiles.push_back(std::move(p));
    }
  } else {
    profiles = RunProbe(c, &std::cerr);
  }
  auto ratio = [&](Arch arch) {
    for (const auto& p : profiles)
      if (p.arch == arch) return p.At(500) / p.At(1);
    return std::nan("");
  };
  const double simple = ratio(Arch::kSimple), lstm = ratio(Arch::kLstm), mist = ratio(Arch::kMist);
  const double over_simple = std::log10(mist / simple), over_lstm = std::log10(mist / lstm);
  // A zero ratio (no signal at all) counts as infinitely far below.
  const bool pass = mist > 0 && (simple == 0 || over_simple >= 3) && (lstm == 0 || over_lstm >= 3);
  return {pass, Format("norm(500)/norm(1) after %ld updates: simple %.2e, LSTM %.2e, MIST %.2e; "
                       "MIST is 10^%.1f above simple and 10^%.1f above LSTM (>= 10^3)",
                       c.probe.updates, simple, lstm, mist, over_simple, over_lstm)};
}

Outcome PixelMnistSmoke(const Paths& paths) {
  if (!fs::exists(paths.mnist / "train-images-idx3-ubyte"))
    return {false, "MNIST files not found in " + paths.mnist.string()};
  const ExperimentConfig c = LoadConfig(paths, "pmnist_mist_smoke");
  const Json j = SweepSummary(paths, "pmnist_mist_smoke");
  const double val = j.value("best_val_error", 1.0);
  long updates = 0;
  for (const auto& t : j["trial_results"])
    if (t.value("trial_id", -1) == j.value("best_trial", 0)) updates = t.value("updates", 0L);
  const double epochs = static_cast<double>(updates) * c.train.batch_size / c.pixel.n_train;
  return {j.value("arch", "") == "mist" && j.value("n_h", 0) == 139 && val < 0.2 && epochs <= 20.0,
          Format("MIST n_h=139, log10 lr %.2f: best validation error %.2f%% (< 20%%) after %.2f "
                 "epochs (<= 20), test error %.2f%%",
                 j.value("best_log10_lr", 0.0), 100 * val, epochs,
                 100 * j.value("best_test_error", 1.0))};
}

}  // namespace
}  // namespace mistlab

int main(int argc, char** argv) {
  using namespace mistlab;
  Paths paths;
  std::string only;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--results") paths.results = argv[i + 1];
    else if (flag == "--configs") paths.configs = argv[i + 1];
    else if (flag == "--mnist") paths.mnist = argv[i + 1];
    else if (flag == "--only") only = argv[i + 1];
    else {
      std::cerr << "unknown flag " << flag << "\n";
      return 2;
    }
  }
  if (const char* env = std::getenv("MISTLAB_MNIST_DIR"); env != nullptr && *env) paths.mnist = env;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"gradient_exactness", GradientExactness},
      {"decomposition_identity", DecompositionIdentity},
      {"shortest_paths", ShortestPaths},
      {"parameter_parity", ParameterParity},
      {"copy_desk_scale", [&] { return CopyDeskScale(paths); }},
      {"gradient_norm_separation", [&] { return GradientSeparation(paths); }},
      {"pmnist_smoke", [&] { return PixelMnistSmoke(paths); }},
      {"reduction_identities", ReductionIdentities},
  };
  int failures = 0;
  for (const auto& [name, check] : checks) {
    if (!only.empty() && name != only) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
