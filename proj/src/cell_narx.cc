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

// Simple NARX: h_t = tanh(sum_d W_d h_{t-d} + W_x x_t + b), d = 1..n_d.

#include "cell_impl.h"

namespace mistlab::internal {

template <typename T>
void NarxCell<T>::AddTensors(Rng& rng, ParamSet<T>& p) const {
  const auto& c = this->config_;
  const double std = this->InitStd();
  for (int d = 1; d <= c.n_d; ++d)
    p.Add("W_" + std::to_string(d), InitNormal<T>(rng, c.n_h, c.n_h, std));
  p.Add("W_x", InitNormal<T>(rng, c.n_h, c.n_x, std));
  p.Add("b", Matrix<T>::Zero(c.n_h, 1));
}

template <typename T>
void NarxCell<T>::Forward(const ParamSet<T>& p, const StepInput<T>& in,
                          StepTrace<T>& trace) const {
  this->CheckInput(in);
  trace.t = in.t;
  Matrix<T>& z = trace.h;
  // Same accumulation order as SimpleCell so that n_d = 1 is bit-identical.
  z.noalias() = p[0] * *in.taps[0];
  for (std::size_t k = 1; k < in.taps.size(); ++k) z.noalias() += p[k] * *in.taps[k];
  z.noalias() += p[WxIndex()] * in.x;
  AddBias(z, p[BIndex()]);
  z = Tanh(z);
}

template <typename T>
void NarxCell<T>::Backward(const ParamSet<T>& p, const StepInput<T>& in,
                           const StepTrace<T>& trace, const Matrix<T>& dh,
                           const Matrix<T>* /*dc*/, ParamSet<T>& grads,
                           const StepGradSinks<T>& sinks) const {
  const Matrix<T> dz = dh.array() * (T(1) - trace.h.array().square());
  for (std::size_t k = 0; k < in.taps.size(); ++k) {
    AccumulateOuter(grads[k], dz, *in.taps[k]);
    Propagate(sinks.d_taps[k], p[k], dz);
  }
  AccumulateOuter(grads[WxIndex()], dz, in.x);
  AccumulateBias(grads[BIndex()], dz);
  Propagate(sinks.d_x, p[WxIndex()], dz);
}

template class NarxCell<float>;
template class NarxCell<double>;

}  // namespace mistlab::internal
