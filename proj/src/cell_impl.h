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

// Concrete cell classes. Tensor indices are fixed per architecture and match
// the order in which AddTensors registers them.

#ifndef MISTLAB_SRC_CELL_IMPL_H_
#define MISTLAB_SRC_CELL_IMPL_H_

#include "mistlab/cells.h"

namespace mistlab::internal {

// Adds a column vector bias to every column of z.
template <typename T>
inline void AddBias(Matrix<T>& z, const Matrix<T>& bias) {
  z.colwise() += bias.col(0);
}

template <typename T>
inline void AccumulateBias(Matrix<T>& db, const Matrix<T>& dz) {
  db.col(0) += dz.rowwise().sum();
}

// grad += dz * input^T
template <typename T>
inline void AccumulateOuter(Matrix<T>& grad, const Matrix<T>& dz,
                            const Matrix<T>& input) {
  grad.noalias() += dz * input.transpose();
}

// sink += W^T * dz, skipped for a discarded sink.
template <typename T>
inline void Propagate(Matrix<T>* sink, const Matrix<T>& w, const Matrix<T>& dz) {
  if (sink != nullptr) sink->noalias() += w.transpose() * dz;
}

template <typename T>
class SimpleCell final : public Cell<T> {
 public:
  enum : Index { kWh, kWx, kB, kCount };
  using Cell<T>::Cell;
  Index TensorCount() const override { return kCount; }
  void Forward(const ParamSet<T>& p, const StepInput<T>& in,
               StepTrace<T>& trace) const override;
  void Backward(const ParamSet<T>& p, const StepInput<T>& in,
                const StepTrace<T>& trace, const Matrix<T>& dh, const Matrix<T>* dc,
                ParamSet<T>& grads, const StepGradSinks<T>& sinks) const override;

 protected:
  void AddTensors(Rng& rng, ParamSet<T>& p) const override;
};

template <typename T>
class LstmCell final : public Cell<T> {
 public:
  // Gate order: forget, input, output, candidate.
  enum : Index {
    kWfh, kWfx, kBf,
    kWih, kWix, kBi,
    kWoh, kWox, kBo,
    kWch, kWcx, kBc,
    kCount
  };
  using Cell<T>::Cell;
  Index TensorCount() const override { return kCount; }
  void Forward(const ParamSet<T>& p, const StepInput<T>& in,
               StepTrace<T>& trace) const override;
  void Backward(const ParamSet<T>& p, const StepInput<T>& in,
                const StepTrace<T>& trace, const Matrix<T>& dh, const Matrix<T>* dc,
                ParamSet<T>& grads, const StepGradSinks<T>& sinks) const override;

 protected:
  void AddTensors(Rng& rng, ParamSet<T>& p) const override;
};

// Simple NARX: W_1 .. W_{n_d} occupy indices 0 .. n_d-1, then W_x and b.
template <typename T>
class NarxCell final : public Cell<T> {
 public:
  using Cell<T>::Cell;
  Index TensorCount() const override { return this->config_.n_d + 2; }
  void Forward(const ParamSet<T>& p, const StepInput<T>& in,
               StepTrace<T>& trace) const override;
  void Backward(const ParamSet<T>& p, const StepInput<T>& in,
                const StepTrace<T>& trace, const Matrix<T>& dh, const Matrix<T>* dc,
                ParamSet<T>& grads, const StepGradSinks<T>& sinks) const override;

 protected:
  void AddTensors(Rng& rng, ParamSet<T>& p) const override;

 private:
  Index WxIndex() const { return this->config_.n_d; }
  Index BIndex() const { return this->config_.n_d + 1; }
};

template <typename T>
class ClockworkCell final : public Cell<T> {
 public:
  enum : Index { kWh, kWx, kB, kCount };
  using Cell<T>::Cell;
  Index TensorCount() const override { return kCount; }
  void Forward(const ParamSet<T>& p, const StepInput<T>& in,
               StepTrace<T>& trace) const override;
  void Backward(const ParamSet<T>& p, const StepInput<T>& in,
                const StepTrace<T>& trace, const Matrix<T>& dh, const Matrix<T>* dc,
                ParamSet<T>& grads, const StepGradSinks<T>& sinks) const override;

  // Number of leading blocks that tick at time t (periods are powers of two,
  // so the ticking blocks always form a prefix).
  int ActiveBlocks(int t) const;

 protected:
  void AddTensors(Rng& rng, ParamSet<T>& p) const override;

 private:
  Index BlockSize() const { return this->config_.n_h / this->config_.n_d; }
};

template <typename T>
class MistCell final : public Cell<T> {
 public:
  enum : Index {
    kWah, kWax, kBa,
    kWrh, kWrx, kBr,
    kWh, kWx, kB,
    kCount
  };
  using Cell<T>::Cell;
  Index TensorCount() const override { return kCount; }
  void Forward(const ParamSet<T>& p, const StepInput<T>& in,
               StepTrace<T>& trace) const override;
  void Backward(const ParamSet<T>& p, const StepInput<T>& in,
                const StepTrace<T>& trace, const Matrix<T>& dh, const Matrix<T>* dc,
                ParamSet<T>& grads, const StepGradSinks<T>& sinks) const override;

 protected:
  void AddTensors(Rng& rng, ParamSet<T>& p) const override;
};

}  // namespace mistlab::internal

#endif  // MISTLAB_SRC_CELL_IMPL_H_
