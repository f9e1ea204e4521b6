// Copyright 2026 The rankstop Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RANKSTOP_SALIENCY_H_
#define RANKSTOP_SALIENCY_H_

// Saliency of attention regions from dumped attention maps A and their loss
// gradients G: score = alpha * sum_ij A[i,j] * G[i,j] * M[i,j], a first-order
// estimate of the loss change when region M is perturbed. alpha is fixed at
// 1, so scores are only meaningful relative to each other.
//
// Tensor container ("STNS"): 4 magic bytes, 1 version byte (= 1), uint32
// rank, rank x uint64 dims, then float32 payload, row-major. Little-endian,
// no padding. Attention dumps are (layer, head, query, key) or a single
// (query, key) slice.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rankstop::saliency {

inline constexpr uint8_t kTensorVersion = 1;

struct TensorBlob {
  std::vector<uint64_t> dims;
  std::vector<float> data;

  uint64_t layers() const;
  uint64_t heads() const;
  uint64_t queries() const;
  uint64_t keys() const;
  // One (query, key) attention slice.
  std::span<const float> Slice(uint64_t layer, uint64_t head) const;

  // Throws Error(kFormat).
  void Validate() const;

  bool operator==(const TensorBlob&) const = default;
};

std::vector<uint8_t> SerializeTensor(const TensorBlob& blob);
// Errors carry the byte offset of the problem.
TensorBlob ParseTensor(std::span<const uint8_t> bytes);
TensorBlob LoadTensor(const std::filesystem::path& path);
void WriteTensor(const TensorBlob& blob, const std::filesystem::path& path);

enum class PathKind { kReasoningToAnswer, kReasoningToTerminator, kTerminatorToAnswer };
std::string_view PathName(PathKind path);

// Reasoning span is [reasoning_start, terminator), answer span is
// [answer_start, sequence_end).
struct Boundaries {
  int64_t reasoning_start = 0;
  int64_t terminator = 0;
  int64_t answer_start = 0;
  int64_t sequence_end = 0;

  // Throws Error(kBoundary).
  void Validate() const;
  static Boundaries Parse(std::string_view csv);

  bool operator==(const Boundaries&) const = default;
};

struct RegionMask {
  PathKind name = PathKind::kReasoningToAnswer;
  Boundaries boundaries;
  uint64_t size = 0;             // matrix is size x size (query, key)
  std::vector<uint8_t> matrix;   // row-major, 0/1

  uint64_t Count() const;
};

// Masks on a size x size grid; size defaults to sequence_end and must be at
// least that.
std::array<RegionMask, 3> BuildMasks(const Boundaries& boundaries,
                                     std::optional<uint64_t> size = std::nullopt);

// Throws Error(kShape) unless A, G and the mask have the same element count.
double SaliencyScore(std::span<const float> attention, std::span<const float> gradient,
                     const RegionMask& mask);

struct SaliencyReport {
  double alpha = 1.0;
  Boundaries boundaries;
  uint64_t layers = 0;
  uint64_t heads = 0;
  // [layer][path], summed over heads.
  std::vector<std::array<double, 3>> per_layer;
  // [layer][head][path].
  std::vector<std::vector<std::array<double, 3>>> per_head;
};

SaliencyReport ComputeSaliencyReport(const TensorBlob& attention, const TensorBlob& gradient,
                                     const Boundaries& boundaries);

// layer,path,score,head_0,...,head_{H-1}
std::string FormatSaliencyReport(const SaliencyReport& report);

}  // namespace rankstop::saliency

#endif  // RANKSTOP_SALIENCY_H_
