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

// Benchmarks: the copy problem and sequential (permuted) MNIST.

#ifndef MISTLAB_TASKS_H_
#define MISTLAB_TASKS_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mistlab/batch.h"
#include "mistlab/engine.h"
#include "mistlab/numkernel.h"

namespace mistlab {

// Malformed or missing input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { kTrain, kValidation, kTest };
std::string_view SplitName(Split split);

// Read-only source of fixed-length sequence batches.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::string Describe() const = 0;
  virtual int input_size() const = 0;
  virtual int num_classes() const = 0;
  virtual int steps() const = 0;
  virtual HeadMode head_mode() const = 0;
  virtual Index size(Split split) const = 0;
  virtual TaskBatch<float> Batch(Split split, std::span<const Index> rows) const = 0;
};

// ---------------------------------------------------------------------------
// Copy problem
//
// Input:  L digits, D-1 blanks, go, L blanks          (length 2L + D)
// Target: L + D blanks, then the L digits in order
// with L = D / 10. Inputs are one-hot over 12 symbols, targets over 11.

namespace copy_symbols {
inline constexpr int kBlank = 10;
inline constexpr int kGo = 11;
inline constexpr int kInputSymbols = 12;
inline constexpr int kOutputClasses = 11;
}  // namespace copy_symbols

struct CopySpec {
  int delay = 100;  // D, a positive multiple of 10
  Index n_train = 100000;
  Index n_val = 1000;
  Index n_test = 1000;
  std::uint64_t seed = 1;

  int relevant() const { return delay / 10; }
  int length() const { return 2 * relevant() + delay; }
  void Validate() const;  // throws std::invalid_argument
};

struct CopyExample {
  std::vector<int> inputs;   // symbols in [0, 12)
  std::vector<int> targets;  // classes in [0, 11)
};

// Lays out one example around its relevant digits.
CopyExample MakeCopyExample(const CopySpec& spec, std::span<const std::uint8_t> digits);
// `count` examples with digits drawn uniformly (with replacement) from 0..9.
std::vector<CopyExample> GenerateCopy(const CopySpec& spec, Rng& rng, Index count);

// Error rate of always predicting blank: L / (2L + D).
double CopyBlankBaselineError(const CopySpec& spec);

class CopyDataset final : public Dataset {
 public:
  explicit CopyDataset(const CopySpec& spec);

  std::string Describe() const override;
  int input_size() const override { return copy_symbols::kInputSymbols; }
  int num_classes() const override { return copy_symbols::kOutputClasses; }
  int steps() const override { return spec_.length(); }
  HeadMode head_mode() const override { return HeadMode::kPerStep; }
  Index size(Split split) const override;
  // Loss on every step; the scored window is the last L steps.
  TaskBatch<float> Batch(Split split, std::span<const Index> rows) const override;

  const CopySpec& spec() const { return spec_; }
  std::span<const std::uint8_t> Digits(Split split, Index row) const;

  // Versioned binary cache of the generated digits.
  void Save(const std::filesystem::path& path) const;
  static CopyDataset Load(const std::filesystem::path& path);

 private:
  CopyDataset(const CopySpec& spec, std::vector<std::uint8_t> train,
              std::vector<std::uint8_t> val, std::vector<std::uint8_t> test);
  const std::vector<std::uint8_t>& SplitDigits(Split split) const;

  CopySpec spec_;
  std::vector<std::uint8_t> train_, val_, test_;  // L digits per example
};

// ---------------------------------------------------------------------------
// MNIST

struct MnistImages {
  Index count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major per image
  std::span<const std::uint8_t> Image(Index i) const {
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    return {pixels.data() + i * n, n};
  }
};

// IDX readers (big-endian; magic 0x00000803 for images, 0x00000801 labels).
MnistImages LoadIdxImages(const std::filesystem::path& path);
std::vector<std::uint8_t> LoadIdxLabels(const std::filesystem::path& path);

struct MnistData {
  MnistImages train_images, test_images;
  std::vector<std::uint8_t> train_labels, test_labels;
};

// Loads the four standard files (train-images-idx3-ubyte, ...) from `dir`.
// Images and labels must agree in count and labels must lie in 0..9.
MnistData LoadMnist(const std::filesystem::path& dir);

struct PixelSequenceSpec {
  std::uint64_t permutation_seed = 1;
  bool permute = true;      // false gives plain sequential MNIST
  bool standardize = true;  // per-image mean 0 / variance 1
  Index n_train = 58000;
  Index n_val = 2000;
  int last_steps = 0;  // keep only the final K steps of each sequence (0 = all)
};

// Uniform random permutation of 0..n-1 from a seed.
std::vector<int> MakePermutation(std::uint64_t seed, int n);

// Shift and scale to mean 0, variance 1 (population). Constant input maps to
// all zeros.
std::vector<float> StandardizeImage(std::span<const std::uint8_t> pixels);

class PixelDataset final : public Dataset {
 public:
  PixelDataset(const MnistData& data, const PixelSequenceSpec& spec);

  std::string Describe() const override;
  int input_size() const override { return 1; }
  int num_classes() const override { return 10; }
  int steps() const override { return steps_; }
  HeadMode head_mode() const override { return HeadMode::kFinalStep; }
  Index size(Split split) const override;
  // One pixel per step; loss and score at the final step only.
  TaskBatch<float> Batch(Split split, std::span<const Index> rows) const override;

  const std::vector<int>& permutation() const { return permutation_; }
  // The pixel sequence presented for one example.
  std::span<const float> Sequence(Split split, Index row) const;
  int Label(Split split, Index row) const;

 private:
  Index Offset(Split split, Index row) const;

  PixelSequenceSpec spec_;
  std::vector<int> permutation_;
  int steps_ = 0;
  Index train_count_ = 0, val_count_ = 0, test_count_ = 0;
  std::vector<float> sequences_;  // train (train+val rows) then test, steps_ each
  std::vector<std::uint8_t> labels_;
};

// Standard-normal pixel sequences with random labels, shaped like pMNIST
// batches. Used when the real images are unavailable.
TaskBatch<float> RandomPixelBatch(Rng& rng, Index batch, int steps, int classes = 10);

}  // namespace mistlab

#endif  // MISTLAB_TASKS_H_
