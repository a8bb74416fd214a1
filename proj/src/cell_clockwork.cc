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

// Clockwork RNN. Hidden units are split into n_d equal blocks; block i has
// period 2^i and is recomputed only when t is a multiple of its period,
// otherwise it keeps its previous value. A ticking block reads recurrent
// input from blocks with an equal or longer period (slower feeds faster), so
// W_h is block upper-triangular. Every ticking block reads x_t.

#include "cell_impl.h"

namespace mistlab::internal {

template <typename T>
int ClockworkCell<T>::ActiveBlocks(int t) const {
  int active = 0;
  for (int period : this->config_.Periods()) {
    if (t % period != 0) break;
    ++active;
  }
  return active;
}

template <typename T>
void ClockworkCell<T>::AddTensors(Rng& rng, ParamSet<T>& p) const {
  const auto& c = this->config_;
  const double std = this->InitStd();
  const Index block = BlockSize();
  Matrix<T> mask = Matrix<T>::Zero(c.n_h, c.n_h);
  for (Index i = 0; i < c.n_d; ++i)
    mask.block(i * block, i * block, block, c.n_h - i * block).setOnes();
  Matrix<T> w_h = InitNormal<T>(rng, c.n_h, c.n_h, std).cwiseProduct(mask);
  const Index wh = p.Add("W_h", std::move(w_h));
  p.SetMask(wh, std::move(mask));
  p.Add("W_x", InitNormal<T>(rng, c.n_h, c.n_x, std));
  p.Add("b", Matrix<T>::Zero(c.n_h, 1));
}

template <typename T>
void ClockworkCell<T>::Forward(const ParamSet<T>& p, const StepInput<T>& in,
                               StepTrace<T>& trace) const {
  this->CheckInput(in);
  if (in.t < 1) throw std::invalid_argument("clockwork step: t must be >= 1");
  const Index n_h = this->config_.n_h;
  const Index block = BlockSize();
  const Matrix<T>& h_prev = *in.taps[0];
  const int active = ActiveBlocks(in.t);
  const Index rows = active * block;

  trace.t = in.t;
  trace.updated_rows = rows;
  trace.h = h_prev;
  Matrix<T> z(rows, in.x.cols());
  for (Index i = 0; i < active; ++i) {
    const Index from = i * block;
    z.middleRows(from, block).noalias() =
        p[kWh].block(from, from, block, n_h - from) * h_prev.bottomRows(n_h - from);
  }
  z.noalias() += p[kWx].topRows(rows) * in.x;
  z.colwise() += p[kB].col(0).head(rows);
  trace.h.topRows(rows) = Tanh(z);
}

template <typename T>
void ClockworkCell<T>::Backward(const ParamSet<T>& p, const StepInput<T>& in,
                                const StepTrace<T>& trace, const Matrix<T>& dh,
                                const Matrix<T>* /*dc*/, ParamSet<T>& grads,
                                const StepGradSinks<T>& sinks) const {
  const Index n_h = this->config_.n_h;
  const Index block = BlockSize();
  const Index rows = trace.updated_rows;
  const Matrix<T>& h_prev = *in.taps[0];
  Matrix<T>* d_h = sinks.d_taps[0];

  const Matrix<T> dz =
      dh.topRows(rows).array() * (T(1) - trace.h.topRows(rows).array().square());
  for (Index from = 0; from < rows; from += block) {
    const Index width = n_h - from;
    const auto dz_block = dz.middleRows(from, block);
    grads[kWh].block(from, from, block, width).noalias() +=
        dz_block * h_prev.bottomRows(width).transpose();
    if (d_h != nullptr)
      d_h->bottomRows(width).noalias() +=
          p[kWh].block(from, from, block, width).transpose() * dz_block;
  }
  grads[kWx].topRows(rows).noalias() += dz * in.x.transpose();
  grads[kB].col(0).head(rows) += dz.rowwise().sum();
  if (sinks.d_x != nullptr) sinks.d_x->noalias() += p[kWx].topRows(rows).transpose() * dz;
  // Blocks that did not tick copied h_{t-1} through unchanged.
  if (d_h != nullptr) d_h->bottomRows(n_h - rows) += dh.bottomRows(n_h - rows);
}

template class ClockworkCell<float>;
template class ClockworkCell<double>;

}  // namespace mistlab::internal
