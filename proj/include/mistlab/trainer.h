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

// Randomized training trials: each trial draws a learning rate log-uniformly,
// initializes fresh weights, trains with minibatch SGD + momentum and tracks
// validation/test metrics. Trials are ranked by validation error.

#ifndef MISTLAB_TRAINER_H_
#define MISTLAB_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mistlab/cells.h"
#include "mistlab/engine.h"
#include "mistlab/tasks.h"

namespace mistlab {

struct TrainOptions {
  int batch_size = 100;
  long max_updates = 30000;
  double max_epochs = 0.0;     // 0 = no epoch limit
  long eval_every = 0;         // updates between evaluations; 0 = once per epoch
  double log10_lr_min = -4.0;
  double log10_lr_max = 1.0;
  std::optional<double> log10_lr;  // fixed learning rate instead of sampling
  double momentum = 0.9;
  double clip = 1.0;
  // Stop after this many evaluations without a relative val-loss improvement
  // of at least min_improvement. 0 disables.
  int patience = 0;
  double min_improvement = 0.01;
  // Stop as soon as validation error is at or below this value.
  std::optional<double> target_val_error;
  Index max_eval_examples = 0;  // cap on val/test examples scored (0 = all)
  bool test_every_eval = true;  // otherwise only when validation improves
  int precision = 32;           // 32 or 64
  std::filesystem::path checkpoint;  // best model is written here if set
};

struct EvalPoint {
  int index = 0;
  long updates = 0;
  double epoch = 0.0;
  double train_loss = 0.0;  // mean minibatch loss since the previous evaluation
  double val_loss = 0.0;
  double val_error = 0.0;       // task metric (copy: target window)
  double val_error_full = 0.0;  // over every loss-bearing step
  std::optional<double> test_error;
};

struct TrialRecord {
  int trial_id = 0;
  std::uint64_t seed = 0;
  double log10_lr = 0.0;
  std::vector<EvalPoint> history;
  // Taken at the evaluation with the lowest validation error.
  double best_val_error = 1.0;
  double best_val_loss = 0.0;
  double test_error = 1.0;
  long updates = 0;
  bool failed = false;
  std::string failure;
  double wall_seconds = 0.0;
};

using EvalCallback = std::function<void(const TrialRecord&, const EvalPoint&)>;

// Log-uniform draw on [lo, hi], returned as log10.
double SampleLog10LearningRate(Rng& rng, double lo, double hi);

// Deterministic in (config, dataset, options, trial_seed). Divergence marks
// the record failed instead of throwing.
TrialRecord RunTrial(const CellConfig& config, const Dataset& dataset,
                     const TrainOptions& options, int trial_id,
                     std::uint64_t trial_seed, const EvalCallback& on_eval = {});

// Seed of trial i in an experiment seeded with `seed`.
std::uint64_t TrialSeed(std::uint64_t seed, int trial_id);

// Runs trials 0..count-1 on up to `workers` threads. Output order is by id.
std::vector<TrialRecord> RunTrials(const CellConfig& config, const Dataset& dataset,
                                   const TrainOptions& options, int count,
                                   std::uint64_t seed, int workers = 1,
                                   const EvalCallback& on_eval = {},
                                   const std::function<std::filesystem::path(int)>&
                                       checkpoint_for_trial = {});

struct TopTrials {
  std::vector<std::size_t> ranked;  // indices into the input, best first
  int k = 0;
  double mean_test_error = 0.0;
  double std_test_error = 0.0;             // sample (n - 1)
  double population_std_test_error = 0.0;  // population (n)
  double best_log10_lr = 0.0;              // of the best-validation trial
  double mean_log10_lr = 0.0;
  double std_log10_lr = 0.0;  // sample (n - 1)
};

// Ranks by best validation error (failed trials last, ties by seed) and
// summarizes test error over the top k.
TopTrials SelectTopTrials(const std::vector<TrialRecord>& records, int k);

}  // namespace mistlab

#endif  // MISTLAB_TRAINER_H_
