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

// LSTM with forget gates and no peephole connections:
//   f = sigma(W_fh h + W_fx x + b_f)     i, o likewise
//   g = tanh(W_ch h + W_cx x + b_c)
//   c_t = f * c_{t-1} + i * g
//   h_t = o * tanh(c_t)

#include "cell_impl.h"

namespace mistlab::internal {

namespace {

template <typename T>
Matrix<T> GatePreactivation(const ParamSet<T>& p, Index wh, const Matrix<T>& h,
                            const Matrix<T>& x) {
  Matrix<T> z;
  z.noalias() = p[wh] * h;
  z.noalias() += p[wh + 1] * x;
  AddBias(z, p[wh + 2]);
  return z;
}

// Parameter and input gradients for one gate given dz (the gradient of its
// pre-activation). Weights sit at wh (recurrent), wh + 1 (input), wh + 2 (bias).
template <typename T>
void GateBackward(const ParamSet<T>& p, Index wh, const Matrix<T>& dz,
                  const Matrix<T>& h, const Matrix<T>& x, ParamSet<T>& grads,
                  Matrix<T>* d_h, Matrix<T>* d_x) {
  AccumulateOuter(grads[wh], dz, h);
  AccumulateOuter(grads[wh + 1], dz, x);
  AccumulateBias(grads[wh + 2], dz);
  Propagate(d_h, p[wh], dz);
  Propagate(d_x, p[wh + 1], dz);
}

}  // namespace

template <typename T>
void LstmCell<T>::AddTensors(Rng& rng, ParamSet<T>& p) const {
  const auto& c = this->config_;
  const double std = this->InitStd();
  for (const char* gate : {"f", "i", "o", "c"}) {
    const std::string g(gate);
    p.Add("W_" + g + "h", InitNormal<T>(rng, c.n_h, c.n_h, std));
    p.Add("W_" + g + "x", InitNormal<T>(rng, c.n_h, c.n_x, std));
    p.Add("b_" + g, Matrix<T>::Zero(c.n_h, 1));
  }
  p[kBf].setConstant(static_cast<T>(c.forget_bias_init));
}

template <typename T>
void LstmCell<T>::Forward(const ParamSet<T>& p, const StepInput<T>& in,
                          StepTrace<T>& trace) const {
  this->CheckInput(in);
  const Matrix<T>& h_prev = *in.taps[0];
  trace.t = in.t;
  trace.f = Sigmoid(GatePreactivation(p, kWfh, h_prev, in.x));
  trace.i = Sigmoid(GatePreactivation(p, kWih, h_prev, in.x));
  trace.o = Sigmoid(GatePreactivation(p, kWoh, h_prev, in.x));
  trace.g = Tanh(GatePreactivation(p, kWch, h_prev, in.x));
  trace.c = trace.f.cwiseProduct(*in.c_prev) + trace.i.cwiseProduct(trace.g);
  trace.tanh_c = Tanh(trace.c);
  trace.h = trace.o.cwiseProduct(trace.tanh_c);
}

template <typename T>
void LstmCell<T>::Backward(const ParamSet<T>& p, const StepInput<T>& in,
                           const StepTrace<T>& trace, const Matrix<T>& dh,
                           const Matrix<T>* dc_next, ParamSet<T>& grads,
                           const StepGradSinks<T>& sinks) const {
  const Matrix<T>& h_prev = *in.taps[0];
  const auto tc = trace.tanh_c.array();

  Matrix<T> dc = dh.array() * trace.o.array() * (T(1) - tc.square());
  if (dc_next != nullptr) dc += *dc_next;

  const auto sig_grad = [](const Matrix<T>& gate) {
    return (gate.array() * (T(1) - gate.array())).matrix();
  };
  const Matrix<T> dz_o = (dh.array() * tc).matrix().cwiseProduct(sig_grad(trace.o));
  const Matrix<T> dz_f = (dc.array() * in.c_prev->array()).matrix().cwiseProduct(sig_grad(trace.f));
  const Matrix<T> dz_i = (dc.array() * trace.g.array()).matrix().cwiseProduct(sig_grad(trace.i));
  const Matrix<T> dz_g = dc.array() * trace.i.array() * (T(1) - trace.g.array().square());

  Matrix<T>* d_h = sinks.d_taps[0];
  GateBackward(p, kWfh, dz_f, h_prev, in.x, grads, d_h, sinks.d_x);
  GateBackward(p, kWih, dz_i, h_prev, in.x, grads, d_h, sinks.d_x);
  GateBackward(p, kWoh, dz_o, h_prev, in.x, grads, d_h, sinks.d_x);
  GateBackward(p, kWch, dz_g, h_prev, in.x, grads, d_h, sinks.d_x);
  if (sinks.d_c_prev != nullptr) *sinks.d_c_prev += dc.cwiseProduct(trace.f);
}

template class LstmCell<float>;
template class LstmCell<double>;

}  // namespace mistlab::internal
