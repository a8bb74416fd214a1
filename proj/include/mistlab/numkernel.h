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

// Dense numeric substrate shared by every recurrent cell: row-major matrices,
// checked products, elementwise nonlinearities and a portable seeded RNG.
//
// Batched quantities are stored as (features x batch) matrices, so one column
// is one sequence in the minibatch.

#ifndef MISTLAB_NUMKERNEL_H_
#define MISTLAB_NUMKERNEL_H_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mistlab {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Thrown when operand shapes do not line up. Wiring errors between cells
// surface here instead of as silent garbage.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown when a NaN/Inf shows up where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void RequireShape(Index rows, Index cols, Index want_rows, Index want_cols,
                  const char* what);

template <typename T>
void RequireShape(const Matrix<T>& m, Index rows, Index cols, const char* what) {
  RequireShape(m.rows(), m.cols(), rows, cols, what);
}

// Seeded generator. mt19937_64 is fully specified by the standard; the
// uniform and normal transforms are done here rather than through
// <random> distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Standard normal via Box-Muller; the paired draw is cached.
  double Normal();
  // Uniform integer on [0, n). n must be positive.
  std::uint64_t Below(std::uint64_t n);

  // Independent child stream, e.g. one per trial or per data split.
  Rng Fork(std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a base seed and a stream id into a new seed (splitmix64 finalizer).
std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t stream);

template <typename T>
Vector<T> MatVec(const Matrix<T>& m, const Vector<T>& v);

enum class ElementwiseOp { kSigmoid, kTanh, kSoftmax, kHadamard, kAdd };

// Unary ops ignore `b`; binary ops require it with matching length.
template <typename T>
Vector<T> Elementwise(ElementwiseOp op, const Vector<T>& a,
                      const Vector<T>* b = nullptr);

// Logistic sigmoid on every entry. exp overflow yields exact 0 or 1, never NaN.
template <typename Derived>
auto Sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (S(1) + (-x.array()).exp()).inverse().matrix();
}

template <typename Derived>
auto Tanh(const Eigen::MatrixBase<Derived>& x) {
  return x.array().tanh().matrix();
}

// Softmax down each column (max-subtracted). A vector is a single column.
template <typename T>
Matrix<T> SoftmaxColumns(const Matrix<T>& logits);
template <typename T>
Vector<T> Softmax(const Vector<T>& logits);

// Row vector of per-column log-sum-exp values.
template <typename T>
Eigen::Matrix<T, 1, Eigen::Dynamic> LogSumExpColumns(const Matrix<T>& logits);

template <typename T>
Matrix<T> InitNormal(Rng& rng, Index rows, Index cols, double std);

template <typename T>
bool AllFinite(const Matrix<T>& m) {
  return m.allFinite();
}

}  // namespace mistlab

#endif  // MISTLAB_NUMKERNEL_H_
