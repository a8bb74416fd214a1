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

#include "mistlab/trainer.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "mistlab/checkpoint.h"

namespace mistlab {

double SampleLog10LearningRate(Rng& rng, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("learning-rate range is empty");
  return rng.Uniform(lo, hi);
}

std::uint64_t TrialSeed(std::uint64_t seed, int trial_id) {
  return MixSeed(seed, 0x7269616cULL + static_cast<std::uint64_t>(trial_id));
}

namespace {

constexpr Index kEvalBatch = 500;

struct SplitScore {
  Metrics metrics;
  double task_error() const {
    return metrics.window_steps ? metrics.window_error_rate() : metrics.error_rate();
  }
};

template <typename T>
SplitScore Score(const Model<T>& model, const Dataset& data, Split split, Index cap) {
  Index n = data.size(split);
  if (cap > 0) n = std::min(n, cap);
  SplitScore score;
  std::vector<Index> rows;
  for (Index begin = 0; begin < n; begin += kEvalBatch) {
    const Index end = std::min(n, begin + kEvalBatch);
    rows.resize(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    const TaskBatch<float> batch = data.Batch(split, rows);
    if constexpr (std::is_same_v<T, float>) {
      score.metrics.Merge(Evaluate(model, batch));
    } else {
      score.metrics.Merge(Evaluate(model, batch.template Cast<T>()));
    }
  }
  return score;
}

template <typename T>
void Train(const CellConfig& config, const Dataset& data, const TrainOptions& opt,
           TrialRecord& record, const EvalCallback& on_eval) {
  Rng rng(record.seed);
  Rng lr_rng = rng.Fork(1);
  Rng init_rng = rng.Fork(2);
  Rng order_rng = rng.Fork(3);

  record.log10_lr = opt.log10_lr ? *opt.log10_lr
                                 : SampleLog10LearningRate(lr_rng, opt.log10_lr_min,
                                                           opt.log10_lr_max);
  const LossHead head{data.head_mode(), data.num_classes()};
  Model<T> model = InitModel<T>(config, head, init_rng);
  ParamSet<T> grads = model.params.ZerosLike();
  SgdMomentum<T> optimizer(
      OptimizerConfig{std::pow(10.0, record.log10_lr), opt.momentum, opt.clip},
      model.params);

  const Index n_train = data.size(Split::kTrain);
  const Index b = std::min<Index>(opt.batch_size, n_train);
  if (b <= 0) throw DataError("training split is empty");
  const long per_epoch = static_cast<long>(n_train / b);
  const long eval_every = opt.eval_every > 0 ? opt.eval_every : per_epoch;
  long max_updates = opt.max_updates;
  if (opt.max_epochs > 0)
    max_updates = std::min<long>(max_updates,
                                 static_cast<long>(std::ceil(opt.max_epochs * per_epoch)));

  std::vector<Index> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  long cursor = per_epoch;  // forces a shuffle on the first update

  double best_val_loss = std::numeric_limits<double>::infinity();
  int stale = 0;
  double train_loss_sum = 0.0;
  long train_batches = 0;
  record.best_val_error = std::numeric_limits<double>::infinity();

  for (long update = 1; update <= max_updates; ++update) {
    if (cursor == per_epoch) {
      for (Index i = n_train - 1; i > 0; --i)
        std::swap(order[i], order[order_rng.Below(static_cast<std::uint64_t>(i) + 1)]);
      cursor = 0;
    }
    std::span<const Index> rows(order.data() + cursor * b, static_cast<std::size_t>(b));
    ++cursor;

    TaskBatch<T> batch;
    if constexpr (std::is_same_v<T, float>) {
      batch = data.Batch(Split::kTrain, rows);
    } else {
      batch = data.Batch(Split::kTrain, rows).template Cast<T>();
    }
    ForwardResult<T> fwd = ForwardSequence(model, batch);
    const double loss = fwd.metrics.loss();
    if (!std::isfinite(loss)) {
      record.failed = true;
      record.failure = "non-finite training loss at update " + std::to_string(update);
      record.updates = update - 1;
      return;
    }
    BackwardSequence(model, fwd.tape, batch, grads);
    try {
      optimizer.ClipAndUpdate(model.params, grads);
    } catch (const NumericError& e) {
      record.failed = true;
      record.failure = std::string(e.what()) + " at update " + std::to_string(update);
      record.updates = update - 1;
      return;
    }
    record.updates = update;
    train_loss_sum += loss;
    ++train_batches;

    if (update % eval_every != 0 && update != max_updates) continue;

    EvalPoint point;
    point.index = static_cast<int>(record.history.size());
    point.updates = update;
    point.epoch = static_cast<double>(update) / per_epoch;
    point.train_loss = train_loss_sum / train_batches;
    train_loss_sum = 0.0;
    train_batches = 0;
    const SplitScore val = Score(model, data, Split::kValidation, opt.max_eval_examples);
    point.val_loss = val.metrics.loss();
    point.val_error = val.task_error();
    point.val_error_full = val.metrics.error_rate();
    if (!std::isfinite(point.val_loss)) {
      record.history.push_back(point);
      record.failed = true;
      record.failure = "non-finite validation loss at update " + std::to_string(update);
      return;
    }
    const bool improved = point.val_error < record.best_val_error;
    if (improved || opt.test_every_eval) {
      point.test_error =
          Score(model, data, Split::kTest, opt.max_eval_examples).task_error();
    }
    if (improved) {
      record.best_val_error = point.val_error;
      record.best_val_loss = point.val_loss;
      record.test_error = *point.test_error;
      if (!opt.checkpoint.empty()) SaveCheckpoint(opt.checkpoint, model);
    }
    record.history.push_back(point);
    if (on_eval) on_eval(record, point);

    if (opt.target_val_error && point.val_error <= *opt.target_val_error) return;
    if (opt.patience > 0) {
      if (point.val_loss < best_val_loss * (1.0 - opt.min_improvement)) {
        best_val_loss = point.val_loss;
        stale = 0;
      } else if (++stale >= opt.patience) {
        return;
      }
    }
  }
}

}  // namespace

TrialRecord RunTrial(const CellConfig& config, const Dataset& dataset,
                     const TrainOptions& options, int trial_id,
                     std::uint64_t trial_seed, const EvalCallback& on_eval) {
  config.Validate();
  if (config.n_x != dataset.input_size())
    throw DimensionError("cell n_x " + std::to_string(config.n_x) +
                         " does not match dataset input size " +
                         std::to_string(dataset.input_size()));
  TrialRecord record;
  record.trial_id = trial_id;
  record.seed = trial_seed;
  const auto start = std::chrono::steady_clock::now();
  if (options.precision == 64) {
    Train<double>(config, dataset, options, record, on_eval);
  } else if (options.precision == 32) {
    Train<float>(config, dataset, options, record, on_eval);
  } else {
    throw std::invalid_argument("precision must be 32 or 64");
  }
  if (record.history.empty() || !std::isfinite(record.best_val_error)) {
    record.best_val_error = 1.0;
    record.test_error = 1.0;
  }
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

std::vector<TrialRecord> RunTrials(
    const CellConfig& config, const Dataset& dataset, const TrainOptions& options,
    int count, std::uint64_t seed, int workers, const EvalCallback& on_eval,
    const std::function<std::filesystem::path(int)>& checkpoint_for_trial) {
  std::vector<TrialRecord> records(std::max(count, 0));
  std::atomic<int> next{0};
  std::mutex callback_mutex;
  std::exception_ptr error;
  EvalCallback guarded;
  if (on_eval) {
    guarded = [&](const TrialRecord& r, const EvalPoint& p) {
      std::lock_guard<std::mutex> lock(callback_mutex);
      on_eval(r, p);
    };
  }
  auto work = [&] {
    for (int id = next++; id < count; id = next++) {
      try {
        TrainOptions opt = options;
        if (checkpoint_for_trial) opt.checkpoint = checkpoint_for_trial(id);
        records[id] = RunTrial(config, dataset, opt, id, TrialSeed(seed, id), guarded);
      } catch (...) {
        std::lock_guard<std::mutex> lock(callback_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int n_threads = std::clamp(workers, 1, std::max(count, 1));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return records;
}

TopTrials SelectTopTrials(const std::vector<TrialRecord>& records, int k) {
  TopTrials top;
  top.ranked.resize(records.size());
  std::iota(top.ranked.begin(), top.ranked.end(), std::size_t{0});
  std::stable_sort(top.ranked.begin(), top.ranked.end(), [&](std::size_t a, std::size_t b) {
    const TrialRecord& ra = records[a];
    const TrialRecord& rb = records[b];
    if (ra.failed != rb.failed) return !ra.failed;
    if (ra.best_val_error != rb.best_val_error) return ra.best_val_error < rb.best_val_error;
    return ra.seed < rb.seed;
  });
  top.k = std::clamp(k, 0, static_cast<int>(records.size()));
  if (top.k == 0) return top;

  double sum = 0.0, lr_sum = 0.0;
  for (int i = 0; i < top.k; ++i) {
    sum += records[top.ranked[i]].test_error;
    lr_sum += records[top.ranked[i]].log10_lr;
  }
  top.mean_test_error = sum / top.k;
  top.mean_log10_lr = lr_sum / top.k;
  double ss = 0.0, lr_ss = 0.0;
  for (int i = 0; i < top.k; ++i) {
    const double d = records[top.ranked[i]].test_error - top.mean_test_error;
    const double dl = records[top.ranked[i]].log10_lr - top.mean_log10_lr;
    ss += d * d;
    lr_ss += dl * dl;
  }
  top.population_std_test_error = std::sqrt(ss / top.k);
  top.std_test_error = top.k > 1 ? std::sqrt(ss / (top.k - 1)) : 0.0;
  top.std_log10_lr = top.k > 1 ? std::sqrt(lr_ss / (top.k - 1)) : 0.0;
  top.best_log10_lr = records[top.ranked[0]].log10_lr;
  return top;
}

}  // namespace mistlab
