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

// Gradient-flow instruments: how much learning signal reaches a state tau
// steps before the loss, and how short the paths through a delay graph are.

#ifndef MISTLAB_DIAGNOSTICS_H_
#define MISTLAB_DIAGNOSTICS_H_

#include <optional>
#include <string>
#include <vector>

#include "mistlab/engine.h"

namespace mistlab {

// Mean over the batch of ||dl/dh_{T-tau}||, where l is one example's loss at
// the final step T. For the LSTM only the hidden-state gradient is measured.
struct GradientProfile {
  Arch arch = Arch::kSimple;
  long checkpoint_updates = 0;  // training updates behind the parameters
  std::vector<int> tau;         // 1..T-1
  std::vector<double> mean_norm;

  // mean_norm at tau, or 0 when tau is out of range.
  double At(int tau) const;
};

// The batch must carry its loss on the final step only (mask rows 1..T-1 all
// zero). Norms undo the 1/B loss normalization so they are per example.
template <typename T>
GradientProfile ProbeGradientNorms(const Model<T>& model, const TaskBatch<T>& batch,
                                   long checkpoint_updates = 0);

// Splits the parameter gradient by the step whose update the parameters
// entered through: total = head + sum_t per_step[t - 1].
template <typename T>
struct GradientDecomposition {
  ParamSet<T> head;                 // the output layer's own gradient
  std::vector<ParamSet<T>> per_step;
  ParamSet<T> total;                // as returned by BackwardSequence

  // Contribution of the state tau steps before the final step.
  const ParamSet<T>& AtDistance(int tau) const {
    return per_step.at(per_step.size() - 1 - tau);
  }
  ParamSet<T> Sum() const;
  // max over tensors of ||Sum - total|| / ||total|| (tensors with a zero
  // total use the absolute difference).
  double MaxRelativeResidual() const;
};

template <typename T>
GradientDecomposition<T> DecomposeGradient(const Model<T>& model, const TaskBatch<T>& batch);

// Least-squares fit of log(mean_norm) against tau on [tau_lo, tau_hi],
// skipping zero norms.
struct LogLinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  int points = 0;
};
LogLinearFit FitLogNorms(const GradientProfile& profile, int tau_lo, int tau_hi);

// ---------------------------------------------------------------------------
// Delay graphs: edges t-d -> t for every delay d at every t.

struct DelayGraph {
  std::vector<int> delays;
  int horizon = 0;  // number of steps in the unrolled graph

  void Validate() const;  // delays >= 1, horizon >= 0
};

// length[tau] for tau = 0..tau_max: the fewest edges from t-tau to t, or
// nullopt when unreachable. Breadth-first search on the unrolled graph.
std::vector<std::optional<int>> ShortestPathLengths(const DelayGraph& graph, int tau_max);

// Closed form for delay sets {1}, {1..n} and {1, 2, 4, ..., 2^k}; nullopt
// for anything else.
std::optional<int> ClosedFormLength(const std::vector<int>& delays, int tau);

// lambda^length per entry (nullopt stays nullopt). Requires lambda > 0.
std::vector<std::optional<double>> DecayBound(double lambda,
                                              const std::vector<std::optional<int>>& lengths);

}  // namespace mistlab

#endif  // MISTLAB_DIAGNOSTICS_H_
