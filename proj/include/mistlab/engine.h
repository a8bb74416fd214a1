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

// Sequence-level forward/backward: a recurrent cell unrolled over a batch,
// a linear softmax head, full backpropagation through time, and SGD with
// momentum and global-norm clipping.

#ifndef MISTLAB_ENGINE_H_
#define MISTLAB_ENGINE_H_

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "mistlab/batch.h"
#include "mistlab/cells.h"
#include "mistlab/numkernel.h"

namespace mistlab {

enum class HeadMode { kPerStep, kFinalStep };

std::string_view HeadModeName(HeadMode mode);
HeadMode ParseHeadMode(std::string_view name);

// Linear layer + softmax cross-entropy. The weights W_out / b_out live in the
// model's ParamSet right after the cell tensors.
struct LossHead {
  HeadMode mode = HeadMode::kPerStep;
  int n_out = 2;
};

template <typename T>
struct Model {
  CellConfig config;
  LossHead head;
  std::shared_ptr<const Cell<T>> cell;
  ParamSet<T> params;

  Index head_weight() const { return cell->TensorCount(); }
  Index head_bias() const { return cell->TensorCount() + 1; }

  template <typename U>
  Model<U> Cast() const;
};

// Cell weights and W_out ~ N(0, 1/n_h); biases zero; LSTM forget bias from
// the config.
template <typename T>
Model<T> InitModel(const CellConfig& config, const LossHead& head, Rng& rng);

// Wraps existing parameters (e.g. from a checkpoint). Validates tensor shapes.
template <typename T>
Model<T> AssembleModel(const CellConfig& config, const LossHead& head,
                       ParamSet<T> params);

// Sums over a batch; combine across batches with Merge.
struct Metrics {
  double loss_sum = 0.0;   // sum over sequences of the normalized masked CE
  long sequences = 0;
  long scored_steps = 0;   // steps with nonzero mask
  long scored_errors = 0;
  long window_steps = 0;   // steps in the task window
  long window_errors = 0;

  double loss() const { return sequences ? loss_sum / sequences : 0.0; }
  // Fraction of loss-bearing steps misclassified; 0 if nothing is scored.
  double error_rate() const {
    return scored_steps ? static_cast<double>(scored_errors) / scored_steps : 0.0;
  }
  double window_error_rate() const {
    return window_steps ? static_cast<double>(window_errors) / window_steps : 0.0;
  }
  bool empty_mask() const { return scored_steps == 0; }
  void Merge(const Metrics& other);
};

template <typename T>
struct UnrolledTape {
  std::vector<StepTrace<T>> steps;  // steps[t - 1] holds step t
  std::vector<Matrix<T>> probs;     // softmax outputs; empty where unused
  Matrix<T> zeros;                  // h_s and c_s for s <= 0

  int length() const { return static_cast<int>(steps.size()); }
  const Matrix<T>& H(int s) const { return s <= 0 ? zeros : steps[s - 1].h; }
  const Matrix<T>& C(int s) const { return s <= 0 ? zeros : steps[s - 1].c; }
};

template <typename T>
struct ForwardResult {
  Metrics metrics;
  UnrolledTape<T> tape;
};

// Adds `delta` to h_step right after it is computed. Finite-difference tests
// use this to measure dloss/dh_step directly.
template <typename T>
struct StateNudge {
  int step = 0;
  Matrix<T> delta;
};

// Loss is sum_{t,b} mask * CE / (B * S) where S is the number of loss-bearing
// steps of the head mode (T for per-step, 1 for final-step). Doubling the
// mask doubles the loss; an all-zero mask gives zero.
template <typename T>
ForwardResult<T> ForwardSequence(const Model<T>& model, const TaskBatch<T>& batch,
                                 const StateNudge<T>* nudge = nullptr);

// Forward pass without a tape, using a ring buffer over recent states.
template <typename T>
Metrics Evaluate(const Model<T>& model, const TaskBatch<T>& batch);

// Called during the reverse sweep once dloss/dh_t is complete, with the
// gradient flowing into c_t for LSTM (nullptr otherwise or when zero).
template <typename T>
using StateGradientObserver =
    std::function<void(int t, const Matrix<T>& dh, const Matrix<T>* dc)>;

template <typename T>
struct BackwardOptions {
  StateGradientObserver<T> observer;
  // When set, receives dloss/dx_t for every step.
  std::vector<Matrix<T>>* input_grads = nullptr;
};

// Exact gradient of ForwardSequence's loss with respect to every tensor in
// model.params. `grads` is overwritten.
template <typename T>
void BackwardSequence(const Model<T>& model, const UnrolledTape<T>& tape,
                      const TaskBatch<T>& batch, ParamSet<T>& grads,
                      const BackwardOptions<T>& options = {});

// Scales grads so their joint L2 norm is at most `threshold`. Returns the norm
// before clipping.
template <typename T>
double ClipGlobalNorm(ParamSet<T>& grads, double threshold);

struct OptimizerConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double clip = 1.0;
};

// Classical momentum: v <- mu v - lr g_clipped; theta <- theta + v.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(OptimizerConfig config, const ParamSet<T>& like);

  // Clips `grads` in place and applies one update. Throws NumericError on a
  // non-finite gradient, leaving params untouched. Returns the unclipped norm.
  double ClipAndUpdate(ParamSet<T>& params, ParamSet<T>& grads);

  const OptimizerConfig& config() const { return config_; }
  const ParamSet<T>& velocity() const { return velocity_; }

 private:
  OptimizerConfig config_;
  ParamSet<T> velocity_;
};

}  // namespace mistlab

#endif  // MISTLAB_ENGINE_H_
