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

// Recurrent cells: simple RNN, LSTM (forget gates, no peepholes), simple NARX,
// Clockwork and MIST (mixed history). Every cell exposes one forward step and
// the exact analytic backward step for that forward step.
//
// All steps are batched: x is (n_x x B), every state is (n_h x B).

#ifndef MISTLAB_CELLS_H_
#define MISTLAB_CELLS_H_

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mistlab/numkernel.h"

namespace mistlab {

enum class Arch { kSimple, kLstm, kClockwork, kNarx, kMist };

std::string_view ArchName(Arch arch);
// Accepts "simple", "lstm", "clockwork", "narx", "mist" (and a few aliases).
Arch ParseArch(std::string_view name);

struct CellConfig {
  Arch arch = Arch::kSimple;
  int n_x = 1;
  int n_h = 1;
  // Delay count for MIST / simple NARX, partition count for Clockwork.
  // Ignored by simple RNN and LSTM.
  int n_d = 1;
  // Strictly increasing delays. MIST defaults to {1, 2, 4, ..., 2^(n_d-1)},
  // simple NARX to {1, ..., n_d}. Other architectures read h_{t-1} only.
  std::vector<int> delays;
  double forget_bias_init = 1.0;

  // Builds a config with the architecture's default delay set. n_d <= 0 picks
  // the default of 8 delays / partitions (1 for simple NARX).
  static CellConfig Make(Arch arch, int n_x, int n_h, int n_d = 0);

  // Throws std::invalid_argument on an inconsistent config.
  void Validate() const;

  // Delays d for which the cell reads h_{t-d}, in the order passed to steps.
  std::vector<int> Taps() const;
  int MaxDelay() const;
  // Clockwork periods 2^0 .. 2^(n_d-1).
  std::vector<int> Periods() const;
  bool HasCellState() const { return arch == Arch::kLstm; }
};

// Ordered collection of named tensors (biases are n x 1 matrices). Parameters,
// gradients and optimizer velocities all use this shape.
template <typename T>
class ParamSet {
 public:
  Index Add(std::string name, Matrix<T> value);

  Index size() const { return static_cast<Index>(values_.size()); }
  const std::string& name(Index i) const { return names_[i]; }
  Matrix<T>& operator[](Index i) { return values_[i]; }
  const Matrix<T>& operator[](Index i) const { return values_[i]; }

  std::optional<Index> Find(std::string_view name) const;
  // Throws std::out_of_range for unknown names.
  Matrix<T>& at(std::string_view name);
  const Matrix<T>& at(std::string_view name) const;

  // Entries where the mask is zero are structurally absent (always zero and
  // never learned). Used for Clockwork's block-triangular recurrence.
  void SetMask(Index i, Matrix<T> mask);
  const Matrix<T>* mask(Index i) const;

  ParamSet ZerosLike() const;
  void SetZero();
  // Learnable scalars, i.e. unmasked entries.
  Index LearnableCount() const;
  double SquaredNorm() const;
  bool AllFinite() const;
  // this += alpha * other; shapes must match.
  void AddScaled(const ParamSet& other, T alpha);
  void Scale(T factor);
  bool SameShapeAs(const ParamSet& other) const;

  template <typename U>
  ParamSet<U> Cast() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<T>> values_;
  std::vector<std::optional<Matrix<T>>> masks_;
};

// Everything the backward step needs from one forward step. Unused members
// stay empty for architectures that do not have them. Gates hold
// post-activation values; derivative factors are recomputed from them.
template <typename T>
struct StepTrace {
  int t = 0;
  Matrix<T> h;
  // LSTM.
  Matrix<T> f, i, o, g, c, tanh_c;
  // MIST: attention coefficients (n_d x B), reset gate and the mixed history
  // sum_i a_i * h_{t-d_i} before the reset is applied.
  Matrix<T> a, r, mix;
  // Clockwork: leading rows that were recomputed this tick.
  Index updated_rows = 0;
};

template <typename T>
struct StepInput {
  const Matrix<T>& x;
  // One entry per CellConfig::Taps() delay; zero states for t - d <= 0.
  std::span<const Matrix<T>* const> taps;
  const Matrix<T>* c_prev = nullptr;
  int t = 1;
};

// Backward outputs are accumulated (+=) into these; nullptr discards.
template <typename T>
struct StepGradSinks {
  std::span<Matrix<T>* const> d_taps;
  Matrix<T>* d_c_prev = nullptr;
  Matrix<T>* d_x = nullptr;
};

template <typename T>
class Cell {
 public:
  explicit Cell(CellConfig config);
  virtual ~Cell() = default;

  const CellConfig& config() const { return config_; }
  const std::vector<int>& taps() const { return taps_; }
  // Number of tensors this cell contributes to a ParamSet (they come first).
  virtual Index TensorCount() const = 0;

  // Weights ~ N(0, 1/n_h), biases 0 except the LSTM forget bias.
  ParamSet<T> InitParams(Rng& rng) const;

  virtual void Forward(const ParamSet<T>& p, const StepInput<T>& in,
                       StepTrace<T>& trace) const = 0;

  // dh is dloss/dh_t in full (all downstream paths); dc likewise for the LSTM
  // cell state, nullptr meaning zero. Parameter gradients are accumulated
  // into `grads`.
  virtual void Backward(const ParamSet<T>& p, const StepInput<T>& in,
                        const StepTrace<T>& trace, const Matrix<T>& dh,
                        const Matrix<T>* dc, ParamSet<T>& grads,
                        const StepGradSinks<T>& sinks) const = 0;

 protected:
  virtual void AddTensors(Rng& rng, ParamSet<T>& p) const = 0;
  void CheckInput(const StepInput<T>& in) const;
  T InitStd() const;

  CellConfig config_;
  std::vector<int> taps_;
};

template <typename T>
std::unique_ptr<Cell<T>> MakeCell(const CellConfig& config);

// Ring buffer over the most recent states. Before step t it serves h_{t-d}
// for d = 1..capacity and c_{t-1}; reads before t = 1 return zeros.
template <typename T>
class StateHistory {
 public:
  StateHistory(Index n_h, Index batch, int capacity, bool with_cell_state);

  // Time index of the newest stored state (0 before any push).
  int time() const { return time_; }
  int capacity() const { return static_cast<int>(slots_.size()); }
  const Matrix<T>& Back(int delay) const;
  const Matrix<T>& CellState() const;
  // Stores h_t (and c_t) as the newest state; the arguments are swapped out.
  void Push(Matrix<T>& h, Matrix<T>* c = nullptr);
  void Reset();

 private:
  Matrix<T> zeros_;
  std::vector<Matrix<T>> slots_;
  Matrix<T> cell_;
  bool with_cell_state_;
  int time_ = 0;
};

// Result of a standalone backward step, for inspection and testing.
template <typename T>
struct StepGradients {
  ParamSet<T> params;
  std::vector<Matrix<T>> d_taps;
  Matrix<T> d_c_prev;
  Matrix<T> d_x;
};

template <typename T>
StepGradients<T> BackwardStep(const Cell<T>& cell, const ParamSet<T>& p,
                              const StepInput<T>& in, const StepTrace<T>& trace,
                              const Matrix<T>& dh, const Matrix<T>* dc = nullptr);

// Learnable scalars in the cell plus a linear output layer of n_out classes.
long ParamCount(const CellConfig& config, int n_out);

}  // namespace mistlab

#endif  // MISTLAB_CELLS_H_
