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

#include "mistlab/checkpoint.h"

#include <fstream>
#include <limits>
#include <sstream>

#include "mistlab/tasks.h"

namespace mistlab {

template <typename T>
void WriteCheckpoint(std::ostream& out, const Model<T>& model) {
  const CellConfig& c = model.config;
  out << "mistlab-checkpoint " << kCheckpointVersion << "\n";
  out << "arch " << ArchName(c.arch) << "\n";
  out << "n_x " << c.n_x << "\nn_h " << c.n_h << "\nn_d " << c.n_d << "\n";
  out << "delays";
  for (int d : c.delays) out << ' ' << d;
  out << "\n";
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "forget_bias_init " << c.forget_bias_init << "\n";
  out << "head " << HeadModeName(model.head.mode) << ' ' << model.head.n_out << "\n";
  out << "tensors " << model.params.size() << "\n";
  out.precision(std::numeric_limits<T>::max_digits10);
  for (Index i = 0; i < model.params.size(); ++i) {
    const Matrix<T>& m = model.params[i];
    out << "tensor " << model.params.name(i) << ' ' << m.rows() << ' ' << m.cols() << "\n";
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index col = 0; col < m.cols(); ++col) out << (col ? " " : "") << m(r, col);
      out << "\n";
    }
  }
  out << "end\n";
}

template <typename T>
void SaveCheckpoint(const std::filesystem::path& path, const Model<T>& model) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  WriteCheckpoint(out, model);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

namespace {

// Reads "<key> ..." and returns the rest of the line.
std::istringstream ExpectLine(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("checkpoint ends before '" + key + "'");
  std::istringstream fields(line);
  std::string found;
  fields >> found;
  if (found != key)
    throw DataError("checkpoint: expected '" + key + "', found '" + found + "'");
  return fields;
}

template <typename V>
V ReadField(std::istringstream& fields, const std::string& key) {
  V value{};
  if (!(fields >> value)) throw DataError("checkpoint: bad value for '" + key + "'");
  return value;
}

}  // namespace

template <typename T>
Model<T> ReadCheckpoint(std::istream& in) {
  auto header = ExpectLine(in, "mistlab-checkpoint");
  const int version = ReadField<int>(header, "mistlab-checkpoint");
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));

  CellConfig config;
  {
    auto f = ExpectLine(in, "arch");
    config.arch = ParseArch(ReadField<std::string>(f, "arch"));
  }
  {
    auto f = ExpectLine(in, "n_x");
    config.n_x = ReadField<int>(f, "n_x");
  }
  {
    auto f = ExpectLine(in, "n_h");
    config.n_h = ReadField<int>(f, "n_h");
  }
  {
    auto f = ExpectLine(in, "n_d");
    config.n_d = ReadField<int>(f, "n_d");
  }
  {
    auto f = ExpectLine(in, "delays");
    int d = 0;
    while (f >> d) config.delays.push_back(d);
  }
  {
    auto f = ExpectLine(in, "forget_bias_init");
    config.forget_bias_init = ReadField<double>(f, "forget_bias_init");
  }
  LossHead head;
  {
    auto f = ExpectLine(in, "head");
    head.mode = ParseHeadMode(ReadField<std::string>(f, "head"));
    head.n_out = ReadField<int>(f, "head");
  }
  config.Validate();

  auto count_line = ExpectLine(in, "tensors");
  const Index count = ReadField<Index>(count_line, "tensors");
  ParamSet<T> params;
  for (Index i = 0; i < count; ++i) {
    auto f = ExpectLine(in, "tensor");
    const auto name = ReadField<std::string>(f, "tensor");
    const auto rows = ReadField<Index>(f, "tensor rows");
    const auto cols = ReadField<Index>(f, "tensor cols");
    if (rows < 0 || cols < 0) throw DataError("checkpoint: negative shape for " + name);
    Matrix<T> m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) {
        double v = 0.0;
        if (!(in >> v)) throw DataError("checkpoint: tensor " + name + " is truncated");
        m(r, c) = static_cast<T>(v);
      }
    in >> std::ws;
    params.Add(name, std::move(m));
  }
  ExpectLine(in, "end");
  return AssembleModel<T>(config, head, std::move(params));
}

template <typename T>
Model<T> LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return ReadCheckpoint<T>(in);
}

template void WriteCheckpoint<float>(std::ostream&, const Model<float>&);
template void WriteCheckpoint<double>(std::ostream&, const Model<double>&);
template void SaveCheckpoint<float>(const std::filesystem::path&, const Model<float>&);
template void SaveCheckpoint<double>(const std::filesystem::path&, const Model<double>&);
template Model<float> ReadCheckpoint<float>(std::istream&);
template Model<double> ReadCheckpoint<double>(std::istream&);
template Model<float> LoadCheckpoint<float>(const std::filesystem::path&);
template Model<double> LoadCheckpoint<double>(const std::filesystem::path&);

}  // namespace mistlab
