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

#include "mistlab/cells.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cell_impl.h"

namespace mistlab {

std::string_view ArchName(Arch arch) {
  switch (arch) {
    case Arch::kSimple: return "simple";
    case Arch::kLstm: return "lstm";
    case Arch::kClockwork: return "clockwork";
    case Arch::kNarx: return "narx";
    case Arch::kMist: return "mist";
  }
  return "unknown";
}

Arch ParseArch(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "simple" || lower == "rnn" || lower == "simple_rnn") return Arch::kSimple;
  if (lower == "lstm") return Arch::kLstm;
  if (lower == "clockwork" || lower == "cw" || lower == "cwrnn") return Arch::kClockwork;
  if (lower == "narx" || lower == "simple_narx") return Arch::kNarx;
  if (lower == "mist") return Arch::kMist;
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

CellConfig CellConfig::Make(Arch arch, int n_x, int n_h, int n_d) {
  CellConfig config;
  config.arch = arch;
  config.n_x = n_x;
  config.n_h = n_h;
  switch (arch) {
    case Arch::kSimple:
    case Arch::kLstm:
      config.n_d = 1;
      break;
    case Arch::kNarx:
      config.n_d = n_d > 0 ? n_d : 1;
      for (int d = 1; d <= config.n_d; ++d) config.delays.push_back(d);
      break;
    case Arch::kMist:
      config.n_d = n_d > 0 ? n_d : 8;
      for (int i = 0; i < config.n_d; ++i) config.delays.push_back(1 << i);
      break;
    case Arch::kClockwork:
      config.n_d = n_d > 0 ? n_d : 8;
      break;
  }
  return config;
}

void CellConfig::Validate() const {
  std::ostringstream err;
  if (n_x < 1 || n_h < 1) err << "n_x and n_h must be positive; ";
  if (n_d < 1) err << "n_d must be positive; ";
  for (std::size_t k = 0; k < delays.size(); ++k) {
    if (delays[k] < 1) err << "delays must be >= 1; ";
    if (k > 0 && delays[k] <= delays[k - 1]) err << "delays must be strictly increasing; ";
  }
  switch (arch) {
    case Arch::kSimple:
    case Arch::kLstm:
      break;
    case Arch::kNarx:
      if (static_cast<int>(delays.size()) != n_d) {
        err << "simple NARX needs n_d delays; ";
      } else {
        for (int k = 0; k < n_d; ++k)
          if (delays[k] != k + 1) {
            err << "simple NARX delays must be 1..n_d; ";
            break;
          }
      }
      break;
    case Arch::kMist:
      if (static_cast<int>(delays.size()) != n_d) err << "MIST needs n_d delays; ";
      if (delays.empty() || delays.front() != 1) err << "MIST delays must start at 1; ";
      break;
    case Arch::kClockwork:
      if (n_d > 30) err << "too many clockwork partitions; ";
      if (n_d >= 1 && n_h % n_d != 0) err << "n_h must be divisible by the partition count; ";
      break;
  }
  const std::string problems = err.str();
  if (!problems.empty())
    throw std::invalid_argument("invalid " + std::string(ArchName(arch)) +
                                " config: " + problems.substr(0, problems.size() - 2));
}

std::vector<int> CellConfig::Taps() const {
  if (arch == Arch::kNarx || arch == Arch::kMist) return delays;
  return {1};
}

int CellConfig::MaxDelay() const {
  const std::vector<int> taps = Taps();
  return *std::max_element(taps.begin(), taps.end());
}

std::vector<int> CellConfig::Periods() const {
  std::vector<int> periods;
  if (arch != Arch::kClockwork) return periods;
  for (int i = 0; i < n_d; ++i) periods.push_back(1 << i);
  return periods;
}

// ---------------------------------------------------------------------------
// ParamSet

template <typename T>
Index ParamSet<T>::Add(std::string name, Matrix<T> value) {
  if (Find(name)) throw std::invalid_argument("duplicate tensor name " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  masks_.emplace_back();
  return size() - 1;
}

template <typename T>
std::optional<Index> ParamSet<T>::Find(std::string_view name) const {
  for (Index i = 0; i < size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

template <typename T>
Matrix<T>& ParamSet<T>::at(std::string_view name) {
  if (auto i = Find(name)) return values_[*i];
  throw std::out_of_range("no tensor named " + std::string(name));
}

template <typename T>
const Matrix<T>& ParamSet<T>::at(std::string_view name) const {
  if (auto i = Find(name)) return values_[*i];
  throw std::out_of_range("no tensor named " + std::string(name));
}

template <typename T>
void ParamSet<T>::SetMask(Index i, Matrix<T> mask) {
  RequireShape(mask, values_[i].rows(), values_[i].cols(), "ParamSet::SetMask");
  masks_[i] = std::move(mask);
}

template <typename T>
const Matrix<T>* ParamSet<T>::mask(Index i) const {
  return masks_[i] ? &*masks_[i] : nullptr;
}

template <typename T>
ParamSet<T> ParamSet<T>::ZerosLike() const {
  ParamSet out = *this;
  out.SetZero();
  return out;
}

template <typename T>
void ParamSet<T>::SetZero() {
  for (auto& v : values_) v.setZero();
}

template <typename T>
Index ParamSet<T>::LearnableCount() const {
  Index count = 0;
  for (Index i = 0; i < size(); ++i)
    count += masks_[i] ? static_cast<Index>((masks_[i]->array() != T(0)).count())
                       : values_[i].size();
  return count;
}

template <typename T>
double ParamSet<T>::SquaredNorm() const {
  double total = 0.0;
  for (const auto& v : values_) total += static_cast<double>(v.squaredNorm());
  return total;
}

template <typename T>
bool ParamSet<T>::AllFinite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](const Matrix<T>& v) { return v.allFinite(); });
}

template <typename T>
void ParamSet<T>::AddScaled(const ParamSet& other, T alpha) {
  if (!SameShapeAs(other)) throw DimensionError("ParamSet::AddScaled: shape mismatch");
  for (Index i = 0; i < size(); ++i) values_[i] += alpha * other.values_[i];
}

template <typename T>
void ParamSet<T>::Scale(T factor) {
  for (auto& v : values_) v *= factor;
}

template <typename T>
bool ParamSet<T>::SameShapeAs(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (Index i = 0; i < size(); ++i)
    if (values_[i].rows() != other.values_[i].rows() ||
        values_[i].cols() != other.values_[i].cols())
      return false;
  return true;
}

template <typename T>
template <typename U>
ParamSet<U> ParamSet<T>::Cast() const {
  ParamSet<U> out;
  for (Index i = 0; i < size(); ++i) {
    out.Add(names_[i], values_[i].template cast<U>());
    if (masks_[i]) out.SetMask(i, masks_[i]->template cast<U>());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cell base

template <typename T>
Cell<T>::Cell(CellConfig config) : config_(std::move(config)) {
  config_.Validate();
  taps_ = config_.Taps();
}

template <typename T>
T Cell<T>::InitStd() const {
  return static_cast<T>(1.0 / std::sqrt(static_cast<double>(config_.n_h)));
}

template <typename T>
ParamSet<T> Cell<T>::InitParams(Rng& rng) const {
  ParamSet<T> p;
  AddTensors(rng, p);
  return p;
}

template <typename T>
void Cell<T>::CheckInput(const StepInput<T>& in) const {
  if (in.x.rows() != config_.n_x) {
    std::ostringstream msg;
    msg << ArchName(config_.arch) << " step: input has " << in.x.rows()
        << " rows, expected n_x = " << config_.n_x;
    throw DimensionError(msg.str());
  }
  if (in.taps.size() != taps_.size())
    throw DimensionError("cell step: wrong number of delayed states");
  for (const Matrix<T>* h : in.taps) {
    if (h == nullptr) throw DimensionError("cell step: missing delayed state");
    RequireShape(*h, config_.n_h, in.x.cols(), "cell step: delayed state");
  }
  if (config_.HasCellState()) {
    if (in.c_prev == nullptr) throw DimensionError("lstm step: missing c_{t-1}");
    RequireShape(*in.c_prev, config_.n_h, in.x.cols(), "lstm step: c_{t-1}");
  }
}

template <typename T>
std::unique_ptr<Cell<T>> MakeCell(const CellConfig& config) {
  switch (config.arch) {
    case Arch::kSimple: return std::make_unique<internal::SimpleCell<T>>(config);
    case Arch::kLstm: return std::make_unique<internal::LstmCell<T>>(config);
    case Arch::kNarx: return std::make_unique<internal::NarxCell<T>>(config);
    case Arch::kClockwork: return std::make_unique<internal::ClockworkCell<T>>(config);
    case Arch::kMist: return std::make_unique<internal::MistCell<T>>(config);
  }
  throw std::invalid_argument("MakeCell: unknown architecture");
}

// ---------------------------------------------------------------------------
// StateHistory

template <typename T>
StateHistory<T>::StateHistory(Index n_h, Index batch, int capacity,
                              bool with_cell_state)
    : zeros_(Matrix<T>::Zero(n_h, batch)),
      slots_(static_cast<std::size_t>(std::max(capacity, 1)), zeros_),
      cell_(zeros_),
      with_cell_state_(with_cell_state) {}

template <typename T>
const Matrix<T>& StateHistory<T>::Back(int delay) const {
  if (delay < 1 || delay > capacity()) {
    std::ostringstream msg;
    msg << "StateHistory: delay " << delay << " outside capacity " << capacity();
    throw std::out_of_range(msg.str());
  }
  const int s = time_ + 1 - delay;
  if (s <= 0) return zeros_;
  return slots_[static_cast<std::size_t>(s % capacity())];
}

template <typename T>
const Matrix<T>& StateHistory<T>::CellState() const {
  if (!with_cell_state_) throw std::logic_error("StateHistory: no cell state stored");
  return cell_;
}

template <typename T>
void StateHistory<T>::Push(Matrix<T>& h, Matrix<T>* c) {
  ++time_;
  slots_[static_cast<std::size_t>(time_ % capacity())].swap(h);
  if (with_cell_state_) {
    if (c == nullptr) throw std::logic_error("StateHistory: cell state required");
    cell_.swap(*c);
  }
}

template <typename T>
void StateHistory<T>::Reset() {
  time_ = 0;
  for (auto& s : slots_) s.setZero();
  cell_.setZero();
}

// ---------------------------------------------------------------------------

template <typename T>
StepGradients<T> BackwardStep(const Cell<T>& cell, const ParamSet<T>& p,
                              const StepInput<T>& in, const StepTrace<T>& trace,
                              const Matrix<T>& dh, const Matrix<T>* dc) {
  const CellConfig& config = cell.config();
  const Index batch = in.x.cols();
  StepGradients<T> out;
  out.params = p.ZerosLike();
  out.d_taps.assign(cell.taps().size(), Matrix<T>::Zero(config.n_h, batch));
  out.d_x = Matrix<T>::Zero(config.n_x, batch);
  std::vector<Matrix<T>*> sinks;
  for (auto& m : out.d_taps) sinks.push_back(&m);
  StepGradSinks<T> s{sinks, nullptr, &out.d_x};
  if (config.HasCellState()) {
    out.d_c_prev = Matrix<T>::Zero(config.n_h, batch);
    s.d_c_prev = &out.d_c_prev;
  }
  cell.Backward(p, in, trace, dh, dc, out.params, s);
  return out;
}

long ParamCount(const CellConfig& config, int n_out) {
  config.Validate();
  const long nx = config.n_x, nh = config.n_h, nd = config.n_d;
  long cell = 0;
  switch (config.arch) {
    case Arch::kSimple:
      cell = nh * nh + nh * nx + nh;
      break;
    case Arch::kLstm:
      cell = 4 * (nh * nh + nh * nx + nh);
      break;
    case Arch::kNarx:
      cell = nd * nh * nh + nh * nx + nh;
      break;
    case Arch::kClockwork: {
      // Block i (period 2^i) reads from blocks i .. n_d-1.
      const long block = nh / nd;
      long recurrent = 0;
      for (long i = 0; i < nd; ++i) recurrent += block * (nh - i * block);
      cell = recurrent + nh * nx + nh;
      break;
    }
    case Arch::kMist:
      cell = nd * (nh + nx + 1) + 2 * (nh * nh + nh * nx + nh);
      break;
  }
  return cell + static_cast<long>(n_out) * nh + n_out;
}

template class ParamSet<float>;
template class ParamSet<double>;
template ParamSet<double> ParamSet<float>::Cast<double>() const;
template ParamSet<float> ParamSet<double>::Cast<float>() const;
template ParamSet<float> ParamSet<float>::Cast<float>() const;
template ParamSet<double> ParamSet<double>::Cast<double>() const;
template class Cell<float>;
template class Cell<double>;
template class StateHistory<float>;
template class StateHistory<double>;
template std::unique_ptr<Cell<float>> MakeCell<float>(const CellConfig&);
template std::unique_ptr<Cell<double>> MakeCell<double>(const CellConfig&);
template StepGradients<float> BackwardStep<float>(
    const Cell<float>&, const ParamSet<float>&, const StepInput<float>&,
    const StepTrace<float>&, const Matrix<float>&, const Matrix<float>*);
template StepGradients<double> BackwardStep<double>(
    const Cell<double>&, const ParamSet<double>&, const StepInput<double>&,
    const StepTrace<double>&, const Matrix<double>&, const Matrix<double>*);

}  // namespace mistlab
