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

// h_t = tanh(W_h h_{t-1} + W_x x_t + b)

#include "cell_impl.h"

namespace mistlab::internal {

template <typename T>
void SimpleCell<T>::AddTensors(Rng& rng, ParamSet<T>& p) const {
  const auto& c = this->config_;
  const double std = this->InitStd();
  p.Add("W_h", InitNormal<T>(rng, c.n_h, c.n_h, std));
  p.Add("W_x", InitNormal<T>(rng, c.n_h, c.n_x, std));
  p.Add("b", Matrix<T>::Zero(c.n_h, 1));
}

template <typename T>
void SimpleCell<T>::Forward(const ParamSet<T>& p, const StepInput<T>& in,
                            StepTrace<T>& trace) const {
  this->CheckInput(in);
  trace.t = in.t;
  Matrix<T>& z = trace.h;
  z.noalias() = p[kWh] * *in.taps[0];
  z.noalias() += p[kWx] * in.x;
  AddBias(z, p[kB]);
  z = Tanh(z);
}

template <typename T>
void SimpleCell<T>::Backward(const ParamSet<T>& p, const StepInput<T>& in,
                             const StepTrace<T>& trace, const Matrix<T>& dh,
                             const Matrix<T>* /*dc*/, ParamSet<T>& grads,
                             const StepGradSinks<T>& sinks) const {
  const Matrix<T> dz = dh.array() * (T(1) - trace.h.array().square());
  AccumulateOuter(grads[kWh], dz, *in.taps[0]);
  AccumulateOuter(grads[kWx], dz, in.x);
  AccumulateBias(grads[kB], dz);
  Propagate(sinks.d_taps[0], p[kWh], dz);
  Propagate(sinks.d_x, p[kWx], dz);
}

template class SimpleCell<float>;
template class SimpleCell<double>;

}  // namespace mistlab::internal
