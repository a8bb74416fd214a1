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

#include "mistlab/tasks.h"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mistlab {

std::string_view SplitName(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "unknown";
}

namespace {

void CheckRow(Index row, Index size, Split split) {
  if (row < 0 || row >= size) {
    std::ostringstream msg;
    msg << SplitName(split) << " row " << row << " out of range [0, " << size << ")";
    throw std::out_of_range(msg.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Copy problem

void CopySpec::Validate() const {
  if (delay <= 0 || delay % 10 != 0)
    throw std::invalid_argument("copy delay must be a positive multiple of 10, got " +
                                std::to_string(delay));
  if (n_train < 0 || n_val < 0 || n_test < 0)
    throw std::invalid_argument("copy split sizes must be non-negative");
}

CopyExample MakeCopyExample(const CopySpec& spec, std::span<const std::uint8_t> digits) {
  using namespace copy_symbols;
  const int l = spec.relevant();
  if (static_cast<int>(digits.size()) != l)
    throw DimensionError("copy example needs exactly L digits");
  CopyExample ex;
  ex.inputs.assign(spec.length(), kBlank);
  ex.targets.assign(spec.length(), kBlank);
  for (int k = 0; k < l; ++k) {
    ex.inputs[k] = digits[k];
    ex.targets[l + spec.delay + k] = digits[k];
  }
  ex.inputs[l + spec.delay - 1] = kGo;
  return ex;
}

std::vector<CopyExample> GenerateCopy(const CopySpec& spec, Rng& rng, Index count) {
  spec.Validate();
  std::vector<CopyExample> out;
  out.reserve(count);
  std::vector<std::uint8_t> digits(spec.relevant());
  for (Index n = 0; n < count; ++n) {
    for (auto& d : digits) d = static_cast<std::uint8_t>(rng.Below(10));
    out.push_back(MakeCopyExample(spec, digits));
  }
  return out;
}

double CopyBlankBaselineError(const CopySpec& spec) {
  return static_cast<double>(spec.relevant()) / spec.length();
}

namespace {

std::vector<std::uint8_t> DrawDigits(std::uint64_t seed, Index count, int l) {
  Rng rng(seed);
  std::vector<std::uint8_t> digits(static_cast<std::size_t>(count) * l);
  for (auto& d : digits) d = static_cast<std::uint8_t>(rng.Below(10));
  return digits;
}

}  // namespace

CopyDataset::CopyDataset(const CopySpec& spec) : spec_(spec) {
  spec_.Validate();
  const int l = spec_.relevant();
  train_ = DrawDigits(MixSeed(spec_.seed, 0), spec_.n_train, l);
  val_ = DrawDigits(MixSeed(spec_.seed, 1), spec_.n_val, l);
  test_ = DrawDigits(MixSeed(spec_.seed, 2), spec_.n_test, l);
}

CopyDataset::CopyDataset(const CopySpec& spec, std::vector<std::uint8_t> train,
                         std::vector<std::uint8_t> val, std::vector<std::uint8_t> test)
    : spec_(spec), train_(std::move(train)), val_(std::move(val)), test_(std::move(test)) {}

std::string CopyDataset::Describe() const {
  std::ostringstream s;
  s << "copy(D=" << spec_.delay << ", L=" << spec_.relevant() << ", train=" << spec_.n_train
    << ", val=" << spec_.n_val << ", test=" << spec_.n_test << ", seed=" << spec_.seed << ")";
  return s.str();
}

Index CopyDataset::size(Split split) const {
  switch (split) {
    case Split::kTrain: return spec_.n_train;
    case Split::kValidation: return spec_.n_val;
    case Split::kTest: return spec_.n_test;
  }
  return 0;
}

const std::vector<std::uint8_t>& CopyDataset::SplitDigits(Split split) const {
  switch (split) {
    case Split::kTrain: return train_;
    case Split::kValidation: return val_;
    case Split::kTest: return test_;
  }
  return train_;
}

std::span<const std::uint8_t> CopyDataset::Digits(Split split, Index row) const {
  CheckRow(row, size(split), split);
  const int l = spec_.relevant();
  return {SplitDigits(split).data() + row * l, static_cast<std::size_t>(l)};
}

TaskBatch<float> CopyDataset::Batch(Split split, std::span<const Index> rows) const {
  using namespace copy_symbols;
  const int steps = spec_.length();
  const int l = spec_.relevant();
  const Index b_count = static_cast<Index>(rows.size());
  TaskBatch<float> batch;
  batch.inputs.assign(steps, Matrix<float>::Zero(kInputSymbols, b_count));
  batch.targets = IndexMatrix::Constant(steps, b_count, kBlank);
  batch.mask = Matrix<float>::Ones(steps, b_count);
  batch.window = FlagMatrix::Zero(steps, b_count);
  batch.window.bottomRows(l).setOnes();
  for (Index b = 0; b < b_count; ++b) {
    const CopyExample ex = MakeCopyExample(spec_, Digits(split, rows[b]));
    for (int t = 0; t < steps; ++t) {
      batch.inputs[t](ex.inputs[t], b) = 1.0f;
      batch.targets(t, b) = ex.targets[t];
    }
  }
  return batch;
}

namespace {

constexpr char kCopyCacheMagic[8] = {'M', 'L', 'C', 'O', 'P', 'Y', '0', '1'};

template <typename V>
void WritePod(std::ofstream& out, V value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

template <typename V>
V ReadPod(std::ifstream& in, const std::filesystem::path& path) {
  V value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(value)))
    throw DataError("copy cache " + path.string() + " is truncated");
  return value;
}

}  // namespace

void CopyDataset::Save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write copy cache " + path.string());
  out.write(kCopyCacheMagic, sizeof(kCopyCacheMagic));
  WritePod<std::int64_t>(out, spec_.delay);
  WritePod<std::uint64_t>(out, spec_.seed);
  WritePod<std::int64_t>(out, spec_.n_train);
  WritePod<std::int64_t>(out, spec_.n_val);
  WritePod<std::int64_t>(out, spec_.n_test);
  for (const auto* digits : {&train_, &val_, &test_})
    out.write(reinterpret_cast<const char*>(digits->data()),
              static_cast<std::streamsize>(digits->size()));
  if (!out) throw DataError("failed writing copy cache " + path.string());
}

CopyDataset CopyDataset::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open copy cache " + path.string());
  char magic[sizeof(kCopyCacheMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCopyCacheMagic, sizeof(magic)) != 0)
    throw DataError(path.string() + " is not a version-1 copy cache");
  CopySpec spec;
  spec.delay = static_cast<int>(ReadPod<std::int64_t>(in, path));
  spec.seed = ReadPod<std::uint64_t>(in, path);
  spec.n_train = ReadPod<std::int64_t>(in, path);
  spec.n_val = ReadPod<std::int64_t>(in, path);
  spec.n_test = ReadPod<std::int64_t>(in, path);
  spec.Validate();
  const int l = spec.relevant();
  auto read_split = [&](Index count) {
    std::vector<std::uint8_t> digits(static_cast<std::size_t>(count) * l);
    if (!in.read(reinterpret_cast<char*>(digits.data()),
                 static_cast<std::streamsize>(digits.size())))
      throw DataError("copy cache " + path.string() + " is truncated");
    for (auto d : digits)
      if (d > 9) throw DataError("copy cache " + path.string() + " holds a non-digit");
    return digits;
  };
  auto train = read_split(spec.n_train);
  auto val = read_split(spec.n_val);
  auto test = read_split(spec.n_test);
  return CopyDataset(spec, std::move(train), std::move(val), std::move(test));
}

// ---------------------------------------------------------------------------
// MNIST IDX

namespace {

std::vector<std::uint8_t> ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t BigEndian32(const std::vector<std::uint8_t>& bytes, std::size_t at) {
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

void CheckHeader(const std::vector<std::uint8_t>& bytes, std::size_t header_bytes,
                 std::uint32_t magic, const std::filesystem::path& path) {
  if (bytes.size() < header_bytes) {
    std::ostringstream msg;
    msg << path.string() << ": truncated header, expected " << header_bytes
        << " bytes, got " << bytes.size();
    throw DataError(msg.str());
  }
  const std::uint32_t found = BigEndian32(bytes, 0);
  if (found != magic) {
    std::ostringstream msg;
    msg << path.string() << ": bad magic 0x" << std::hex << found << ", expected 0x"
        << magic;
    throw DataError(msg.str());
  }
}

void CheckPayload(std::size_t have, std::size_t want, const std::filesystem::path& path) {
  if (have == want) return;
  std::ostringstream msg;
  msg << path.string() << ": " << (have < want ? "truncated" : "oversized")
      << " file, expected " << want << " bytes, got " << have;
  throw DataError(msg.str());
}

}  // namespace

MnistImages LoadIdxImages(const std::filesystem::path& path) {
  const auto bytes = ReadFile(path);
  CheckHeader(bytes, 16, 0x00000803, path);
  MnistImages images;
  images.count = BigEndian32(bytes, 4);
  images.rows = static_cast<int>(BigEndian32(bytes, 8));
  images.cols = static_cast<int>(BigEndian32(bytes, 12));
  if (images.rows != 28 || images.cols != 28) {
    std::ostringstream msg;
    msg << path.string() << ": images are " << images.rows << "x" << images.cols
        << ", expected 28x28";
    throw DataError(msg.str());
  }
  const std::size_t payload = static_cast<std::size_t>(images.count) * 28 * 28;
  CheckPayload(bytes.size(), 16 + payload, path);
  images.pixels.assign(bytes.begin() + 16, bytes.end());
  return images;
}

std::vector<std::uint8_t> LoadIdxLabels(const std::filesystem::path& path) {
  const auto bytes = ReadFile(path);
  CheckHeader(bytes, 8, 0x00000801, path);
  const std::size_t count = BigEndian32(bytes, 4);
  CheckPayload(bytes.size(), 8 + count, path);
  std::vector<std::uint8_t> labels(bytes.begin() + 8, bytes.end());
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] > 9) {
      std::ostringstream msg;
      msg << path.string() << ": label " << int{labels[i]} << " at index " << i
          << " outside 0..9";
      throw DataError(msg.str());
    }
  return labels;
}

MnistData LoadMnist(const std::filesystem::path& dir) {
  MnistData data;
  data.train_images = LoadIdxImages(dir / "train-images-idx3-ubyte");
  data.train_labels = LoadIdxLabels(dir / "train-labels-idx1-ubyte");
  data.test_images = LoadIdxImages(dir / "t10k-images-idx3-ubyte");
  data.test_labels = LoadIdxLabels(dir / "t10k-labels-idx1-ubyte");
  if (static_cast<std::size_t>(data.train_images.count) != data.train_labels.size() ||
      static_cast<std::size_t>(data.test_images.count) != data.test_labels.size())
    throw DataError("MNIST image and label counts disagree in " + dir.string());
  return data;
}

// ---------------------------------------------------------------------------
// Pixel sequences

std::vector<int> MakePermutation(std::uint64_t seed, int n) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[static_cast<int>(rng.Below(static_cast<std::uint64_t>(i) + 1))]);
  return perm;
}

std::vector<float> StandardizeImage(std::span<const std::uint8_t> pixels) {
  const double n = static_cast<double>(pixels.size());
  double mean = 0.0;
  for (auto p : pixels) mean += p;
  mean /= n;
  double var = 0.0;
  for (auto p : pixels) var += (p - mean) * (p - mean);
  var /= n;
  std::vector<float> out(pixels.size(), 0.0f);
  if (var <= 0.0) return out;
  const double inv_std = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    out[i] = static_cast<float>((pixels[i] - mean) * inv_std);
  return out;
}

PixelDataset::PixelDataset(const MnistData& data, const PixelSequenceSpec& spec)
    : spec_(spec) {
  const int pixels = data.train_images.rows * data.train_images.cols;
  if (pixels == 0) throw DataError("MNIST data holds no images");
  if (spec_.n_train + spec_.n_val > data.train_images.count) {
    std::ostringstream msg;
    msg << "requested " << spec_.n_train << " + " << spec_.n_val
        << " training/validation images, only " << data.train_images.count << " available";
    throw DataError(msg.str());
  }
  if (spec_.last_steps < 0 || spec_.last_steps > pixels)
    throw std::invalid_argument("last_steps must be in [0, " + std::to_string(pixels) + "]");

  if (spec_.permute) {
    permutation_ = MakePermutation(spec_.permutation_seed, pixels);
  } else {
    permutation_.resize(pixels);
    std::iota(permutation_.begin(), permutation_.end(), 0);
  }
  steps_ = spec_.last_steps > 0 ? spec_.last_steps : pixels;
  const int skip = pixels - steps_;

  train_count_ = spec_.n_train;
  val_count_ = spec_.n_val;
  test_count_ = data.test_images.count;
  const Index total = train_count_ + val_count_ + test_count_;
  sequences_.resize(static_cast<std::size_t>(total) * steps_);
  labels_.resize(total);

  auto emit = [&](const MnistImages& images, Index image, Index out_row, std::uint8_t label) {
    std::vector<float> values;
    const auto raw = images.Image(image);
    if (spec_.standardize) {
      values = StandardizeImage(raw);
    } else {
      values.assign(raw.begin(), raw.end());
    }
    float* dst = sequences_.data() + out_row * steps_;
    for (int s = 0; s < steps_; ++s) dst[s] = values[permutation_[skip + s]];
    labels_[out_row] = label;
  };
  // First n_train official training images train, the last n_val validate.
  const Index val_start = data.train_images.count - val_count_;
  for (Index i = 0; i < train_count_; ++i) emit(data.train_images, i, i, data.train_labels[i]);
  for (Index i = 0; i < val_count_; ++i)
    emit(data.train_images, val_start + i, train_count_ + i, data.train_labels[val_start + i]);
  for (Index i = 0; i < test_count_; ++i)
    emit(data.test_images, i, train_count_ + val_count_ + i, data.test_labels[i]);
}

std::string PixelDataset::Describe() const {
  std::ostringstream s;
  s << (spec_.permute ? "pmnist" : "smnist") << "(seed=" << spec_.permutation_seed
    << ", steps=" << steps_ << ", train=" << train_count_ << ", val=" << val_count_
    << ", test=" << test_count_ << ")";
  return s.str();
}

Index PixelDataset::size(Split split) const {
  switch (split) {
    case Split::kTrain: return train_count_;
    case Split::kValidation: return val_count_;
    case Split::kTest: return test_count_;
  }
  return 0;
}

Index PixelDataset::Offset(Split split, Index row) const {
  CheckRow(row, size(split), split);
  switch (split) {
    case Split::kTrain: return row;
    case Split::kValidation: return train_count_ + row;
    case Split::kTest: return train_count_ + val_count_ + row;
  }
  return row;
}

std::span<const float> PixelDataset::Sequence(Split split, Index row) const {
  return {sequences_.data() + Offset(split, row) * steps_, static_cast<std::size_t>(steps_)};
}

int PixelDataset::Label(Split split, Index row) const { return labels_[Offset(split, row)]; }

TaskBatch<float> PixelDataset::Batch(Split split, std::span<const Index> rows) const {
  const Index b_count = static_cast<Index>(rows.size());
  TaskBatch<float> batch;
  batch.inputs.assign(steps_, Matrix<float>(1, b_count));
  batch.targets = IndexMatrix::Constant(steps_, b_count, -1);
  batch.mask = Matrix<float>::Zero(steps_, b_count);
  batch.mask.row(steps_ - 1).setOnes();
  for (Index b = 0; b < b_count; ++b) {
    const auto seq = Sequence(split, rows[b]);
    for (int t = 0; t < steps_; ++t) batch.inputs[t](0, b) = seq[t];
    batch.targets(steps_ - 1, b) = Label(split, rows[b]);
  }
  return batch;
}

TaskBatch<float> RandomPixelBatch(Rng& rng, Index batch_size, int steps, int classes) {
  TaskBatch<float> batch;
  batch.inputs.assign(steps, Matrix<float>(1, batch_size));
  for (auto& x : batch.inputs)
    for (Index b = 0; b < batch_size; ++b) x(0, b) = static_cast<float>(rng.Normal());
  batch.targets = IndexMatrix::Constant(steps, batch_size, -1);
  for (Index b = 0; b < batch_size; ++b)
    batch.targets(steps - 1, b) = static_cast<int>(rng.Below(classes));
  batch.mask = Matrix<float>::Zero(steps, batch_size);
  batch.mask.row(steps - 1).setOnes();
  return batch;
}

}  // namespace mistlab
