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

// Structured-text model checkpoints:
//
//   mistlab-checkpoint 1
//   arch mist
//   n_x 1
//   n_h 139
//   n_d 8
//   delays 1 2 4 8 16 32 64 128
//   forget_bias_init 1
//   head final_step 10
//   tensors 11
//   tensor W_ah 8 139
//   <one line of row-major values per row>
//   ...
//   end
//
// Values are written with enough digits to round-trip exactly.

#ifndef MISTLAB_CHECKPOINT_H_
#define MISTLAB_CHECKPOINT_H_

#include <filesystem>
#include <iosfwd>

#include "mistlab/engine.h"

namespace mistlab {

inline constexpr int kCheckpointVersion = 1;

template <typename T>
void WriteCheckpoint(std::ostream& out, const Model<T>& model);
template <typename T>
void SaveCheckpoint(const std::filesystem::path& path, const Model<T>& model);

// Throws DataError-like std::runtime_error on malformed input and
// DimensionError when tensors do not match the declared architecture.
template <typename T>
Model<T> ReadCheckpoint(std::istream& in);
template <typename T>
Model<T> LoadCheckpoint(const std::filesystem::path& path);

}  // namespace mistlab

#endif  // MISTLAB_CHECKPOINT_H_
