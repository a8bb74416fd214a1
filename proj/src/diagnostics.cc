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

#include "mistlab/diagnostics.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace mistlab {

double GradientProfile::At(int t) const {
  if (t < 1 || t > static_cast<int>(mean_norm.size())) return 0.0;
  return mean_norm[t - 1];
}

template <typename T>
GradientProfile ProbeGradientNorms(const Model<T>& model, const TaskBatch<T>& batch,
                                   long checkpoint_updates) {
  batch.Validate(model.config.n_x);
  const int steps = batch.steps();
  const Index b_count = batch.batch();
  for (int row = 0; row + 1 < steps; ++row)
    if ((batch.mask.row(row).array() != T(0)).any())
      throw std::invalid_argument("gradient probe expects a loss on the final step only");

  GradientProfile profile;
  profile.arch = model.config.arch;
  profile.checkpoint_updates = checkpoint_updates;
  profile.tau.resize(std::max(steps - 1, 0));
  profile.mean_norm.assign(profile.tau.size(), 0.0);
  for (std::size_t i = 0; i < profile.tau.size(); ++i) profile.tau[i] = static_cast<int>(i) + 1;

  // The loss is divided by B (and by T for per-step heads); undo that so the
  // norms refer to a single example's loss.
  const double per_example =
      static_cast<double>(b_count) * (model.head.mode == HeadMode::kPerStep ? steps : 1);

  ForwardResult<T> fwd = ForwardSequence(model, batch);
  ParamSet<T> grads;
  BackwardOptions<T> options;
  options.observer = [&](int t, const Matrix<T>& dh, const Matrix<T>*) {
    const int tau = steps - t;
    if (tau < 1) return;
    double sum = 0.0;
    for (Index b = 0; b < b_count; ++b)
      sum += std::sqrt(dh.col(b).template cast<double>().squaredNorm());
    profile.mean_norm[tau - 1] = per_example * sum / static_cast<double>(b_count);
  };
  BackwardSequence(model, fwd.tape, batch, grads, options);
  return profile;
}

template <typename T>
ParamSet<T> GradientDecomposition<T>::Sum() const {
  ParamSet<T> sum = head;
  for (const auto& part : per_step) sum.AddScaled(part, T(1));
  return sum;
}

template <typename T>
double GradientDecomposition<T>::MaxRelativeResidual() const {
  const ParamSet<T> sum = Sum();
  double worst = 0.0;
  for (Index i = 0; i < total.size(); ++i) {
    const double diff = (sum[i] - total[i]).template cast<double>().norm();
    const double ref = total[i].template cast<double>().norm();
    worst = std::max(worst, ref > 0.0 ? diff / ref : diff);
  }
  return worst;
}

template <typename T>
GradientDecomposition<T> DecomposeGradient(const Model<T>& model, const TaskBatch<T>& batch) {
  const CellConfig& config = model.config;
  ForwardResult<T> fwd = ForwardSequence(model, batch);
  const UnrolledTape<T>& tape = fwd.tape;
  const auto& taps = model.cell->taps();
  const bool lstm = config.HasCellState();

  GradientDecomposition<T> out;
  out.per_step.assign(batch.steps(), model.params.ZerosLike());
  std::vector<const Matrix<T>*> tap_ptrs(taps.size());
  std::vector<Matrix<T>*> no_sinks(taps.size(), nullptr);

  // Each step's immediate parameter gradient given the complete dl/dh_t
  // (and dl/dc_t) arriving from everything downstream.
  BackwardOptions<T> options;
  options.observer = [&](int t, const Matrix<T>& dh, const Matrix<T>* dc) {
    for (std::size_t k = 0; k < taps.size(); ++k) tap_ptrs[k] = &tape.H(t - taps[k]);
    StepInput<T> in{batch.inputs[t - 1], tap_ptrs, lstm ? &tape.C(t - 1) : nullptr, t};
    StepGradSinks<T> sinks{no_sinks, nullptr, nullptr};
    model.cell->Backward(model.params, in, tape.steps[t - 1], dh, dc, out.per_step[t - 1],
                         sinks);
  };
  BackwardSequence(model, tape, batch, out.total, options);

  out.head = model.params.ZerosLike();
  out.head[model.head_weight()] = out.total[model.head_weight()];
  out.head[model.head_bias()] = out.total[model.head_bias()];
  return out;
}

LogLinearFit FitLogNorms(const GradientProfile& profile, int tau_lo, int tau_hi) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  LogLinearFit fit;
  for (std::size_t i = 0; i < profile.tau.size(); ++i) {
    const int tau = profile.tau[i];
    const double norm = profile.mean_norm[i];
    if (tau < tau_lo || tau > tau_hi || !(norm > 0.0)) continue;
    const double x = tau, y = std::log(norm);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
    ++fit.points;
  }
  if (fit.points < 2) return fit;
  const double n = fit.points;
  const double vxx = sxx - sx * sx / n;
  const double vxy = sxy - sx * sy / n;
  const double vyy = syy - sy * sy / n;
  if (vxx <= 0.0) return fit;
  fit.slope = vxy / vxx;
  fit.intercept = (sy - fit.slope * sx) / n;
  fit.r_squared = vyy > 0.0 ? (vxy * vxy) / (vxx * vyy) : 1.0;
  return fit;
}

void DelayGraph::Validate() const {
  if (horizon < 0) throw std::invalid_argument("delay graph horizon must be >= 0");
  if (delays.empty()) throw std::invalid_argument("delay graph needs at least one delay");
  for (int d : delays)
    if (d < 1) throw std::invalid_argument("delays must be >= 1");
}

std::vector<std::optional<int>> ShortestPathLengths(const DelayGraph& graph, int tau_max) {
  graph.Validate();
  if (tau_max < 0) throw std::invalid_argument("tau_max must be >= 0");
  if (graph.horizon > 0 && tau_max > graph.horizon)
    throw std::invalid_argument("tau_max exceeds the graph horizon");
  // Edges are identical at every step, so the distance from t-tau to t
  // depends only on tau: search outward from offset 0.
  std::vector<std::optional<int>> length(tau_max + 1);
  length[0] = 0;
  std::deque<int> frontier{0};
  while (!frontier.empty()) {
    const int at = frontier.front();
    frontier.pop_front();
    for (int d : graph.delays) {
      const long next = static_cast<long>(at) + d;
      if (next > tau_max || length[next]) continue;
      length[next] = *length[at] + 1;
      frontier.push_back(static_cast<int>(next));
    }
  }
  return length;
}

std::optional<int> ClosedFormLength(const std::vector<int>& delays, int tau) {
  if (delays.empty() || tau < 0) return std::nullopt;
  const int n = static_cast<int>(delays.size());
  bool consecutive = true, powers = true;
  for (int i = 0; i < n; ++i) {
    consecutive = consecutive && delays[i] == i + 1;
    powers = powers && i < 31 && delays[i] == (1 << i);
  }
  if (consecutive) return (tau + n - 1) / n;
  if (powers) {
    const int k = n - 1;
    const unsigned low = static_cast<unsigned>(tau) & ((1u << k) - 1u);
    return (tau >> k) + std::popcount(low);
  }
  return std::nullopt;
}

std::vector<std::optional<double>> DecayBound(double lambda,
                                              const std::vector<std::optional<int>>& lengths) {
  if (!(lambda > 0.0)) throw std::invalid_argument("decay bound needs lambda > 0");
  std::vector<std::optional<double>> bound(lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i)
    if (lengths[i]) bound[i] = std::pow(lambda, *lengths[i]);
  return bound;
}

template GradientProfile ProbeGradientNorms<float>(const Model<float>&,
                                                   const TaskBatch<float>&, long);
template GradientProfile ProbeGradientNorms<double>(const Model<double>&,
                                                    const TaskBatch<double>&, long);
template struct GradientDecomposition<float>;
template struct GradientDecomposition<double>;
template GradientDecomposition<float> DecomposeGradient<float>(const Model<float>&,
                                                               const TaskBatch<float>&);
template GradientDecomposition<double> DecomposeGradient<double>(const Model<double>&,
                                                                 const TaskBatch<double>&);

}  // namespace mistlab
