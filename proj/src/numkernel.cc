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

#include "mistlab/numkernel.h"

#include <cmath>
#include <numbers>
#include <sstream>

namespace mistlab {

void RequireShape(Index rows, Index cols, Index want_rows, Index want_cols,
                  const char* what) {
  if (rows == want_rows && cols == want_cols) return;
  std::ostringstream msg;
  msg << what << ": expected " << want_rows << "x" << want_cols << ", got "
      << rows << "x" << cols;
  throw DimensionError(msg.str());
}

double Rng::Uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::Normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = Uniform();
  while (u1 <= 0.0) u1 = Uniform();
  const double u2 = Uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::Below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::Below: n must be positive");
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

Rng Rng::Fork(std::uint64_t stream) { return Rng(MixSeed(engine_(), stream)); }

std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
Vector<T> MatVec(const Matrix<T>& m, const Vector<T>& v) {
  if (m.cols() != v.size()) {
    std::ostringstream msg;
    msg << "MatVec: matrix is " << m.rows() << "x" << m.cols()
        << " but vector has length " << v.size();
    throw DimensionError(msg.str());
  }
  return m * v;
}

template <typename T>
Vector<T> Elementwise(ElementwiseOp op, const Vector<T>& a, const Vector<T>* b) {
  switch (op) {
    case ElementwiseOp::kSigmoid:
      return Sigmoid(a);
    case ElementwiseOp::kTanh:
      return Tanh(a);
    case ElementwiseOp::kSoftmax:
      return Softmax(a);
    case ElementwiseOp::kHadamard:
    case ElementwiseOp::kAdd:
      break;
  }
  if (b == nullptr) throw DimensionError("Elementwise: binary op needs two operands");
  if (b->size() != a.size()) {
    std::ostringstream msg;
    msg << "Elementwise: operand lengths " << a.size() << " and " << b->size();
    throw DimensionError(msg.str());
  }
  if (op == ElementwiseOp::kHadamard) return a.cwiseProduct(*b);
  return a + *b;
}

template <typename T>
Matrix<T> SoftmaxColumns(const Matrix<T>& logits) {
  Matrix<T> out = logits.rowwise() - logits.colwise().maxCoeff();
  out = out.array().exp();
  out.array().rowwise() /= out.colwise().sum().array();
  return out;
}

template <typename T>
Vector<T> Softmax(const Vector<T>& logits) {
  Vector<T> out = (logits.array() - logits.maxCoeff()).exp();
  out /= out.sum();
  return out;
}

template <typename T>
Eigen::Matrix<T, 1, Eigen::Dynamic> LogSumExpColumns(const Matrix<T>& logits) {
  Eigen::Matrix<T, 1, Eigen::Dynamic> peak = logits.colwise().maxCoeff();
  Eigen::Matrix<T, 1, Eigen::Dynamic> sums =
      (logits.rowwise() - peak).array().exp().colwise().sum();
  return peak.array() + sums.array().log();
}

template <typename T>
Matrix<T> InitNormal(Rng& rng, Index rows, Index cols, double std) {
  if (!(std > 0.0)) throw std::invalid_argument("InitNormal: std must be positive");
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<T>(std * rng.Normal());
  return m;
}

#define MISTLAB_INSTANTIATE(T)                                                    \
  template Vector<T> MatVec<T>(const Matrix<T>&, const Vector<T>&);               \
  template Vector<T> Elementwise<T>(ElementwiseOp, const Vector<T>&,              \
                                    const Vector<T>*);                            \
  template Matrix<T> SoftmaxColumns<T>(const Matrix<T>&);                         \
  template Vector<T> Softmax<T>(const Vector<T>&);                                \
  template Eigen::Matrix<T, 1, Eigen::Dynamic> LogSumExpColumns<T>(const Matrix<T>&); \
  template Matrix<T> InitNormal<T>(Rng&, Index, Index, double);

MISTLAB_INSTANTIATE(float)
MISTLAB_INSTANTIATE(double)

#undef MISTLAB_INSTANTIATE

}  // namespace mistlab
