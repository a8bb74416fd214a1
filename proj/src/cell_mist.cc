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

// Mixed-history (MIST) cell:
//   a_t = softmax(W_ah h_{t-1} + W_ax x_t + b_a)        n_d coefficients
//   r_t = sigma(W_rh h_{t-1} + W_rx x_t + b_r)
//   h_t = tanh(W_h [r_t * sum_i a_ti h_{t-d_i}] + W_x x_t + b)
// with d_i = 2^i by default.

#include "cell_impl.h"

namespace mistlab::internal {

template <typename T>
void MistCell<T>::AddTensors(Rng& rng, ParamSet<T>& p) const {
  const auto& c = this->config_;
  const double std = this->InitStd();
  p.Add("W_ah", InitNormal<T>(rng, c.n_d, c.n_h, std));
  p.Add("W_ax", InitNormal<T>(rng, c.n_d, c.n_x, std));
  p.Add("b_a", Matrix<T>::Zero(c.n_d, 1));
  p.Add("W_rh", InitNormal<T>(rng, c.n_h, c.n_h, std));
  p.Add("W_rx", InitNormal<T>(rng, c.n_h, c.n_x, std));
  p.Add("b_r", Matrix<T>::Zero(c.n_h, 1));
  p.Add("W_h", InitNormal<T>(rng, c.n_h, c.n_h, std));
  p.Add("W_x", InitNormal<T>(rng, c.n_h, c.n_x, std));
  p.Add("b", Matrix<T>::Zero(c.n_h, 1));
}

template <typename T>
void MistCell<T>::Forward(const ParamSet<T>& p, const StepInput<T>& in,
                          StepTrace<T>& trace) const {
  this->CheckInput(in);
  const Matrix<T>& h_prev = *in.taps[0];
  trace.t = in.t;

  Matrix<T> z_a;
  z_a.noalias() = p[kWah] * h_prev;
  z_a.noalias() += p[kWax] * in.x;
  AddBias(z_a, p[kBa]);
  trace.a = SoftmaxColumns(z_a);

  Matrix<T> z_r;
  z_r.noalias() = p[kWrh] * h_prev;
  z_r.noalias() += p[kWrx] * in.x;
  AddBias(z_r, p[kBr]);
  trace.r = Sigmoid(z_r);

  trace.mix = in.taps[0]->array().rowwise() * trace.a.row(0).array();
  for (std::size_t k = 1; k < in.taps.size(); ++k)
    trace.mix.array() += in.taps[k]->array().rowwise() * trace.a.row(k).array();

  const Matrix<T> reset = trace.r.cwiseProduct(trace.mix);
  Matrix<T>& z = trace.h;
  z.noalias() = p[kWh] * reset;
  z.noalias() += p[kWx] * in.x;
  AddBias(z, p[kB]);
  z = Tanh(z);
}

template <typename T>
void MistCell<T>::Backward(const ParamSet<T>& p, const StepInput<T>& in,
                           const StepTrace<T>& trace, const Matrix<T>& dh,
                           const Matrix<T>* /*dc*/, ParamSet<T>& grads,
                           const StepGradSinks<T>& sinks) const {
  const Matrix<T>& h_prev = *in.taps[0];
  const Matrix<T> dz = dh.array() * (T(1) - trace.h.array().square());

  AccumulateOuter(grads[kWh], dz, Matrix<T>(trace.r.cwiseProduct(trace.mix)));
  AccumulateOuter(grads[kWx], dz, in.x);
  AccumulateBias(grads[kB], dz);
  Propagate(sinks.d_x, p[kWx], dz);

  Matrix<T> d_reset;
  d_reset.noalias() = p[kWh].transpose() * dz;
  const Matrix<T> d_mix = d_reset.cwiseProduct(trace.r);
  const Matrix<T> dz_r = d_reset.array() * trace.mix.array() * trace.r.array() *
                         (T(1) - trace.r.array());

  // Gradient w.r.t. each coefficient a_i, then through the column softmax.
  Matrix<T> d_a(trace.a.rows(), trace.a.cols());
  for (std::size_t k = 0; k < in.taps.size(); ++k) {
    d_a.row(k) = (d_mix.array() * in.taps[k]->array()).colwise().sum();
    if (sinks.d_taps[k] != nullptr)
      sinks.d_taps[k]->array() += d_mix.array().rowwise() * trace.a.row(k).array();
  }
  const Eigen::Matrix<T, 1, Eigen::Dynamic> weighted =
      (trace.a.array() * d_a.array()).colwise().sum();
  const Matrix<T> dz_a = trace.a.array() * (d_a.rowwise() - weighted).array();

  AccumulateOuter(grads[kWrh], dz_r, h_prev);
  AccumulateOuter(grads[kWrx], dz_r, in.x);
  AccumulateBias(grads[kBr], dz_r);
  AccumulateOuter(grads[kWah], dz_a, h_prev);
  AccumulateOuter(grads[kWax], dz_a, in.x);
  AccumulateBias(grads[kBa], dz_a);
  Propagate(sinks.d_taps[0], p[kWrh], dz_r);
  Propagate(sinks.d_taps[0], p[kWah], dz_a);
  Propagate(sinks.d_x, p[kWrx], dz_r);
  Propagate(sinks.d_x, p[kWax], dz_a);
}

template class MistCell<float>;
template class MistCell<double>;

}  // namespace mistlab::internal
