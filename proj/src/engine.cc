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

#include "mistlab/engine.h"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mistlab {

std::string_view HeadModeName(HeadMode mode) {
  return mode == HeadMode::kPerStep ? "per_step" : "final_step";
}

HeadMode ParseHeadMode(std::string_view name) {
  if (name == "per_step") return HeadMode::kPerStep;
  if (name == "final_step") return HeadMode::kFinalStep;
  throw std::invalid_argument("unknown head mode '" + std::string(name) + "'");
}

void Metrics::Merge(const Metrics& other) {
  loss_sum += other.loss_sum;
  sequences += other.sequences;
  scored_steps += other.scored_steps;
  scored_errors += other.scored_errors;
  window_steps += other.window_steps;
  window_errors += other.window_errors;
}

template <typename T>
template <typename U>
Model<U> Model<T>::Cast() const {
  Model<U> out;
  out.config = config;
  out.head = head;
  out.cell = MakeCell<U>(config);
  out.params = params.template Cast<U>();
  return out;
}

template <typename T>
Model<T> InitModel(const CellConfig& config, const LossHead& head, Rng& rng) {
  if (head.n_out < 1) throw std::invalid_argument("loss head needs n_out >= 1");
  Model<T> model;
  model.config = config;
  model.head = head;
  model.cell = MakeCell<T>(config);
  model.params = model.cell->InitParams(rng);
  const double std = 1.0 / std::sqrt(static_cast<double>(config.n_h));
  model.params.Add("W_out", InitNormal<T>(rng, head.n_out, config.n_h, std));
  model.params.Add("b_out", Matrix<T>::Zero(head.n_out, 1));
  return model;
}

template <typename T>
Model<T> AssembleModel(const CellConfig& config, const LossHead& head,
                       ParamSet<T> params) {
  Rng scratch(0);
  Model<T> model = InitModel<T>(config, head, scratch);
  if (params.size() != model.params.size()) {
    std::ostringstream msg;
    msg << ArchName(config.arch) << " model expects " << model.params.size()
        << " tensors, got " << params.size();
    throw DimensionError(msg.str());
  }
  for (Index i = 0; i < params.size(); ++i) {
    if (params.name(i) != model.params.name(i))
      throw DimensionError("tensor " + std::to_string(i) + " is named '" +
                           params.name(i) + "', expected '" + model.params.name(i) + "'");
    const Matrix<T>& want = model.params[i];
    RequireShape(params[i], want.rows(), want.cols(), model.params.name(i).c_str());
    if (const Matrix<T>* mask = model.params.mask(i)) {
      params[i] = params[i].cwiseProduct(*mask);
      params.SetMask(i, *mask);
    }
  }
  model.params = std::move(params);
  return model;
}

namespace {

template <typename T>
T StepNormalizer(const LossHead& head, int steps, Index batch) {
  const int loss_steps = head.mode == HeadMode::kPerStep ? steps : 1;
  return static_cast<T>(loss_steps) * static_cast<T>(batch);
}

template <typename T>
bool NeedsOutput(const TaskBatch<T>& batch, int row) {
  if ((batch.mask.row(row).array() != T(0)).any()) return true;
  return batch.window.size() != 0 && (batch.window.row(row).array() != 0).any();
}

template <typename T>
void CheckTarget(int target, int n_out, int step) {
  if (target < 0 || target >= n_out) {
    std::ostringstream msg;
    msg << "target " << target << " at step " << step << " outside [0, " << n_out << ")";
    throw DimensionError(msg.str());
  }
}

// Computes logits for step t, scores them into `metrics`, and returns the
// softmax probabilities.
template <typename T>
Matrix<T> ScoreStep(const Model<T>& model, const TaskBatch<T>& batch, int t,
                    const Matrix<T>& h, Metrics& metrics) {
  const int row = t - 1;
  const Index b_count = batch.batch();
  Matrix<T> logits;
  logits.noalias() = model.params[model.head_weight()] * h;
  logits.colwise() += model.params[model.head_bias()].col(0);
  const auto lse = LogSumExpColumns(logits);
  const double norm = static_cast<double>(model.head.mode == HeadMode::kPerStep
                                              ? batch.steps() : 1);
  const bool has_window = batch.window.size() != 0;
  for (Index b = 0; b < b_count; ++b) {
    const T weight = batch.mask(row, b);
    const bool in_window = has_window ? batch.window(row, b) != 0 : weight != T(0);
    if (weight == T(0) && !in_window) continue;
    const int target = batch.targets(row, b);
    CheckTarget<T>(target, model.head.n_out, t);
    Index predicted = 0;
    logits.col(b).maxCoeff(&predicted);
    const bool wrong = predicted != target;
    if (weight != T(0)) {
      metrics.loss_sum +=
          static_cast<double>(weight) * static_cast<double>(lse(b) - logits(target, b)) / norm;
      ++metrics.scored_steps;
      metrics.scored_errors += wrong;
    }
    if (in_window) {
      ++metrics.window_steps;
      metrics.window_errors += wrong;
    }
  }
  Matrix<T> probs = (logits.rowwise() - lse).array().exp();
  return probs;
}

}  // namespace

template <typename T>
ForwardResult<T> ForwardSequence(const Model<T>& model, const TaskBatch<T>& batch,
                                 const StateNudge<T>* nudge) {
  const CellConfig& config = model.config;
  batch.Validate(config.n_x);
  const int steps = batch.steps();
  const Index b_count = batch.batch();
  const auto& taps = model.cell->taps();

  ForwardResult<T> result;
  result.metrics.sequences = b_count;
  UnrolledTape<T>& tape = result.tape;
  tape.zeros = Matrix<T>::Zero(config.n_h, b_count);
  tape.steps.resize(steps);
  tape.probs.resize(steps);

  std::vector<const Matrix<T>*> tap_ptrs(taps.size());
  for (int t = 1; t <= steps; ++t) {
    for (std::size_t k = 0; k < taps.size(); ++k) tap_ptrs[k] = &tape.H(t - taps[k]);
    StepInput<T> in{batch.inputs[t - 1], tap_ptrs,
                    config.HasCellState() ? &tape.C(t - 1) : nullptr, t};
    StepTrace<T>& trace = tape.steps[t - 1];
    model.cell->Forward(model.params, in, trace);
    if (nudge != nullptr && nudge->step == t) trace.h += nudge->delta;
    if (NeedsOutput(batch, t - 1))
      tape.probs[t - 1] = ScoreStep(model, batch, t, trace.h, result.metrics);
  }
  return result;
}

template <typename T>
Metrics Evaluate(const Model<T>& model, const TaskBatch<T>& batch) {
  const CellConfig& config = model.config;
  batch.Validate(config.n_x);
  const Index b_count = batch.batch();
  const auto& taps = model.cell->taps();

  Metrics metrics;
  metrics.sequences = b_count;
  StateHistory<T> history(config.n_h, b_count, config.MaxDelay(), config.HasCellState());
  StepTrace<T> trace;
  std::vector<const Matrix<T>*> tap_ptrs(taps.size());
  for (int t = 1; t <= batch.steps(); ++t) {
    for (std::size_t k = 0; k < taps.size(); ++k) tap_ptrs[k] = &history.Back(taps[k]);
    StepInput<T> in{batch.inputs[t - 1], tap_ptrs,
                    config.HasCellState() ? &history.CellState() : nullptr, t};
    model.cell->Forward(model.params, in, trace);
    if (NeedsOutput(batch, t - 1)) ScoreStep(model, batch, t, trace.h, metrics);
    history.Push(trace.h, config.HasCellState() ? &trace.c : nullptr);
  }
  return metrics;
}

template <typename T>
void BackwardSequence(const Model<T>& model, const UnrolledTape<T>& tape,
                      const TaskBatch<T>& batch, ParamSet<T>& grads,
                      const BackwardOptions<T>& options) {
  const CellConfig& config = model.config;
  const int steps = batch.steps();
  if (tape.length() != steps) {
    std::ostringstream msg;
    msg << "BackwardSequence: tape has " << tape.length() << " steps, batch has " << steps;
    throw DimensionError(msg.str());
  }
  const Index b_count = batch.batch();
  if (tape.zeros.cols() != b_count)
    throw DimensionError("BackwardSequence: tape and batch disagree on batch size");
  const auto& taps = model.cell->taps();
  const bool lstm = config.HasCellState();

  if (grads.SameShapeAs(model.params)) {
    grads.SetZero();
  } else {
    grads = model.params.ZerosLike();
  }
  if (options.input_grads != nullptr)
    options.input_grads->assign(steps, Matrix<T>::Zero(config.n_x, b_count));

  const Matrix<T>& w_out = model.params[model.head_weight()];
  const T scale = T(1) / StepNormalizer<T>(model.head, steps, b_count);

  std::vector<Matrix<T>> dh(steps + 1);
  for (int t = 1; t <= steps; ++t) dh[t] = Matrix<T>::Zero(config.n_h, b_count);
  Matrix<T> dc_carry, dc_prev;
  if (lstm) {
    dc_carry = Matrix<T>::Zero(config.n_h, b_count);
    dc_prev = dc_carry;
  }

  std::vector<const Matrix<T>*> tap_ptrs(taps.size());
  std::vector<Matrix<T>*> sink_ptrs(taps.size());
  for (int t = steps; t >= 1; --t) {
    const int row = t - 1;
    const Matrix<T>& h = tape.H(t);
    if ((batch.mask.row(row).array() != T(0)).any()) {
      const Matrix<T>& probs = tape.probs[row];
      if (probs.size() == 0) throw std::logic_error("BackwardSequence: tape lacks outputs");
      Matrix<T> d_logits = probs;
      for (Index b = 0; b < b_count; ++b) {
        const T weight = batch.mask(row, b);
        if (weight == T(0)) {
          d_logits.col(b).setZero();
          continue;
        }
        d_logits(batch.targets(row, b), b) -= T(1);
        d_logits.col(b) *= weight * scale;
      }
      grads[model.head_weight()].noalias() += d_logits * h.transpose();
      grads[model.head_bias()].col(0) += d_logits.rowwise().sum();
      dh[t].noalias() += w_out.transpose() * d_logits;
    }
    if (options.observer) options.observer(t, dh[t], lstm ? &dc_carry : nullptr);

    for (std::size_t k = 0; k < taps.size(); ++k) {
      tap_ptrs[k] = &tape.H(t - taps[k]);
      sink_ptrs[k] = t - taps[k] >= 1 ? &dh[t - taps[k]] : nullptr;
    }
    StepInput<T> in{batch.inputs[row], tap_ptrs, lstm ? &tape.C(t - 1) : nullptr, t};
    StepGradSinks<T> sinks{sink_ptrs, nullptr,
                           options.input_grads ? &(*options.input_grads)[row] : nullptr};
    if (lstm) {
      dc_prev.setZero();
      sinks.d_c_prev = &dc_prev;
    }
    model.cell->Backward(model.params, in, tape.steps[row], dh[t],
                         lstm ? &dc_carry : nullptr, grads, sinks);
    if (lstm) dc_carry.swap(dc_prev);
    dh[t].resize(0, 0);
  }
}

template <typename T>
double ClipGlobalNorm(ParamSet<T>& grads, double threshold) {
  const double norm = std::sqrt(grads.SquaredNorm());
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm > threshold) grads.Scale(static_cast<T>(threshold / norm));
  return norm;
}

template <typename T>
SgdMomentum<T>::SgdMomentum(OptimizerConfig config, const ParamSet<T>& like)
    : config_(config), velocity_(like.ZerosLike()) {
  if (!(config_.learning_rate > 0.0) || !std::isfinite(config_.learning_rate))
    throw std::invalid_argument("learning rate must be positive and finite");
  if (config_.momentum < 0.0 || config_.momentum >= 1.0)
    throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(config_.clip > 0.0)) throw std::invalid_argument("clip threshold must be positive");
}

template <typename T>
double SgdMomentum<T>::ClipAndUpdate(ParamSet<T>& params, ParamSet<T>& grads) {
  if (!grads.SameShapeAs(params) || !velocity_.SameShapeAs(params))
    throw DimensionError("SgdMomentum: gradient/parameter shapes differ");
  const double norm = ClipGlobalNorm(grads, config_.clip);
  velocity_.Scale(static_cast<T>(config_.momentum));
  velocity_.AddScaled(grads, static_cast<T>(-config_.learning_rate));
  params.AddScaled(velocity_, T(1));
  return norm;
}

#define MISTLAB_INSTANTIATE(T)                                                       \
  template struct Model<T>;                                                          \
  template Model<T> InitModel<T>(const CellConfig&, const LossHead&, Rng&);          \
  template Model<T> AssembleModel<T>(const CellConfig&, const LossHead&, ParamSet<T>); \
  template ForwardResult<T> ForwardSequence<T>(const Model<T>&, const TaskBatch<T>&, \
                                               const StateNudge<T>*);                \
  template Metrics Evaluate<T>(const Model<T>&, const TaskBatch<T>&);                \
  template void BackwardSequence<T>(const Model<T>&, const UnrolledTape<T>&,         \
                                    const TaskBatch<T>&, ParamSet<T>&,               \
                                    const BackwardOptions<T>&);                      \
  template double ClipGlobalNorm<T>(ParamSet<T>&, double);                           \
  template class SgdMomentum<T>;

MISTLAB_INSTANTIATE(float)
MISTLAB_INSTANTIATE(double)
#undef MISTLAB_INSTANTIATE

template Model<double> Model<float>::Cast<double>() const;
template Model<float> Model<double>::Cast<float>() const;

}  // namespace mistlab
