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

#include "rankstop/saliency.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "json_util.h"
#include "rankstop/error.h"
#include "rankstop/simd/kernels.h"

namespace rankstop::saliency {
namespace {

constexpr char kMagic[4] = {'S', 'T', 'N', 'S'};

[[noreturn]] void FormatError(const std::string& what, size_t offset) {
  throw Error(ErrorCode::kFormat,
              "tensor format error at offset " + std::to_string(offset) + ": " + what);
}

template <typename T>
T ReadLe(std::span<const uint8_t> bytes, size_t offset) {
  T value{};
  uint8_t raw[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) raw[i] = bytes[offset + i];
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

template <typename T>
void WriteLe(std::vector<uint8_t>& out, T value) {
  uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

uint64_t Product(const std::vector<uint64_t>& dims, size_t offset_for_errors) {
  uint64_t n = 1;
  for (uint64_t d : dims) {
    if (d == 0) FormatError("zero-length dimension", offset_for_errors);
    if (n > std::numeric_limits<uint64_t>::max() / d) FormatError("dims overflow", offset_for_errors);
    n *= d;
  }
  return n;
}

}  // namespace

uint64_t TensorBlob::layers() const { return dims.size() == 4 ? dims[0] : 1; }
uint64_t TensorBlob::heads() const { return dims.size() == 4 ? dims[1] : 1; }
uint64_t TensorBlob::queries() const { return dims.size() >= 2 ? dims[dims.size() - 2] : 0; }
uint64_t TensorBlob::keys() const { return dims.empty() ? 0 : dims.back(); }

std::span<const float> TensorBlob::Slice(uint64_t layer, uint64_t head) const {
  if (dims.size() != 4 && dims.size() != 2) {
    throw Error(ErrorCode::kShape, "attention tensors must be 2-D or 4-D");
  }
  if (layer >= layers() || head >= heads()) {
    throw Error(ErrorCode::kShape, "slice index out of range");
  }
  const uint64_t stride = queries() * keys();
  return std::span<const float>(data).subspan((layer * heads() + head) * stride, stride);
}

void TensorBlob::Validate() const {
  if (dims.empty()) FormatError("rank must be >= 1", 0);
  if (Product(dims, 0) != data.size()) FormatError("element count does not match dims", 0);
  for (size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) FormatError("non-finite value at element " + std::to_string(i), 0);
  }
}

std::vector<uint8_t> SerializeTensor(const TensorBlob& blob) {
  blob.Validate();
  std::vector<uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kTensorVersion);
  WriteLe<uint32_t>(out, static_cast<uint32_t>(blob.dims.size()));
  for (uint64_t d : blob.dims) WriteLe<uint64_t>(out, d);
  out.reserve(out.size() + blob.data.size() * 4);
  for (float v : blob.data) WriteLe<float>(out, v);
  return out;
}

TensorBlob ParseTensor(std::span<const uint8_t> bytes) {
  if (bytes.size() < 9) FormatError("file shorter than the fixed header", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) FormatError("bad magic (expected STNS)", 0);
  if (bytes[4] != kTensorVersion) {
    FormatError("unsupported version " + std::to_string(bytes[4]), 4);
  }
  const uint32_t rank = ReadLe<uint32_t>(bytes, 5);
  if (rank == 0) FormatError("rank must be >= 1", 5);
  size_t offset = 9;
  if (bytes.size() < offset + static_cast<size_t>(rank) * 8) {
    FormatError("truncated dims", bytes.size());
  }
  TensorBlob blob;
  for (uint32_t i = 0; i < rank; ++i) {
    blob.dims.push_back(ReadLe<uint64_t>(bytes, offset));
    offset += 8;
  }
  const uint64_t count = Product(blob.dims, 9);
  const size_t payload = bytes.size() - offset;
  if (count > payload / 4 || payload != count * 4) {
    if (payload < count * 4 || count > payload / 4) {
      FormatError("truncated payload: expected " + std::to_string(count * 4) + " bytes, found " +
                      std::to_string(payload),
                  bytes.size());
    }
    FormatError("trailing bytes after payload", offset + count * 4);
  }
  blob.data.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    const float v = ReadLe<float>(bytes, offset);
    if (!std::isfinite(v)) FormatError("non-finite value", offset);
    blob.data[i] = v;
    offset += 4;
  }
  return blob;
}

TensorBlob LoadTensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open tensor " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return ParseTensor(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void WriteTensor(const TensorBlob& blob, const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = SerializeTensor(blob);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write tensor " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::string_view PathName(PathKind path) {
  switch (path) {
    case PathKind::kReasoningToAnswer: return "reasoning_to_answer";
    case PathKind::kReasoningToTerminator: return "reasoning_to_terminator";
    case PathKind::kTerminatorToAnswer: return "terminator_to_answer";
  }
  return "unknown";
}

void Boundaries::Validate() const {
  if (!(reasoning_start >= 0 && reasoning_start < terminator && terminator < answer_start &&
        answer_start <= sequence_end)) {
    throw Error(ErrorCode::kBoundary,
                "boundaries must satisfy 0 <= reasoning start < terminator < answer start <= "
                "sequence end");
  }
}

Boundaries Boundaries::Parse(std::string_view csv) {
  std::vector<int64_t> values;
  size_t pos = 0;
  while (pos <= csv.size()) {
    const size_t comma = std::min(csv.find(',', pos), csv.size());
    const std::string field(csv.substr(pos, comma - pos));
    try {
      size_t used = 0;
      values.push_back(std::stoll(field, &used));
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kBoundary, "bad boundary value '" + field + "'");
    }
    pos = comma + 1;
  }
  if (values.size() != 4) {
    throw Error(ErrorCode::kBoundary,
                "expected 4 boundaries: reasoning_start,terminator,answer_start,sequence_end");
  }
  Boundaries b{values[0], values[1], values[2], values[3]};
  b.Validate();
  return b;
}

uint64_t RegionMask::Count() const {
  return static_cast<uint64_t>(std::count(matrix.begin(), matrix.end(), uint8_t{1}));
}

std::array<RegionMask, 3> BuildMasks(const Boundaries& b, std::optional<uint64_t> size) {
  b.Validate();
  const uint64_t n = size.value_or(static_cast<uint64_t>(b.sequence_end));
  if (n < static_cast<uint64_t>(b.sequence_end)) {
    throw Error(ErrorCode::kBoundary, "sequence end exceeds the attention size");
  }
  std::array<RegionMask, 3> masks;
  const std::array<PathKind, 3> kinds{PathKind::kReasoningToAnswer,
                                      PathKind::kReasoningToTerminator,
                                      PathKind::kTerminatorToAnswer};
  for (size_t i = 0; i < 3; ++i) {
    masks[i].name = kinds[i];
    masks[i].boundaries = b;
    masks[i].size = n;
    masks[i].matrix.assign(n * n, 0);
  }
  auto set = [n](RegionMask& m, int64_t q, int64_t k) {
    if (k <= q) m.matrix[static_cast<uint64_t>(q) * n + static_cast<uint64_t>(k)] = 1;
  };
  for (int64_t q = b.answer_start; q < b.sequence_end; ++q) {
    for (int64_t k = b.reasoning_start; k < b.terminator; ++k) set(masks[0], q, k);
    set(masks[2], q, b.terminator);
  }
  for (int64_t k = b.reasoning_start; k < b.terminator; ++k) set(masks[1], b.terminator, k);
  return masks;
}

double SaliencyScore(std::span<const float> attention, std::span<const float> gradient,
                     const RegionMask& mask) {
  if (attention.size() != gradient.size() || attention.size() != mask.matrix.size()) {
    throw Error(ErrorCode::kShape, "attention, gradient and mask shapes differ (" +
                                       std::to_string(attention.size()) + ", " +
                                       std::to_string(gradient.size()) + ", " +
                                       std::to_string(mask.matrix.size()) + " elements)");
  }
  constexpr double kAlpha = 1.0;
  return kAlpha * simd::Kernels().masked_product_sum(attention.data(), gradient.data(),
                                                     mask.matrix.data(), attention.size());
}

SaliencyReport ComputeSaliencyReport(const TensorBlob& attention, const TensorBlob& gradient,
                                     const Boundaries& boundaries) {
  if (attention.dims != gradient.dims) {
    throw Error(ErrorCode::kShape, "attention and gradient tensors have different dims");
  }
  if (attention.dims.size() != 4 && attention.dims.size() != 2) {
    throw Error(ErrorCode::kShape, "attention tensors must be 2-D or 4-D");
  }
  if (attention.queries() != attention.keys()) {
    throw Error(ErrorCode::kShape, "attention slices must be square (query x key)");
  }
  const auto masks = BuildMasks(boundaries, attention.keys());

  SaliencyReport report;
  report.boundaries = boundaries;
  report.layers = attention.layers();
  report.heads = attention.heads();
  report.per_layer.assign(report.layers, {0.0, 0.0, 0.0});
  report.per_head.assign(report.layers,
                         std::vector<std::array<double, 3>>(report.heads, {0.0, 0.0, 0.0}));
  for (uint64_t l = 0; l < report.layers; ++l) {
    for (uint64_t h = 0; h < report.heads; ++h) {
      const auto a = attention.Slice(l, h);
      const auto g = gradient.Slice(l, h);
      for (size_t p = 0; p < 3; ++p) {
        const double s = SaliencyScore(a, g, masks[p]);
        report.per_head[l][h][p] = s;
        report.per_layer[l][p] += s;
      }
    }
  }
  return report;
}

std::string FormatSaliencyReport(const SaliencyReport& report) {
  std::string out = "layer,path,score";
  for (uint64_t h = 0; h < report.heads; ++h) out += ",head_" + std::to_string(h);
  out += '\n';
  for (uint64_t l = 0; l < report.layers; ++l) {
    for (size_t p = 0; p < 3; ++p) {
      out += std::to_string(l) + ',' + std::string(PathName(static_cast<PathKind>(p))) + ',' +
             internal::FormatReal(report.per_layer[l][p]);
      for (uint64_t h = 0; h < report.heads; ++h) {
        out += ',' + internal::FormatReal(report.per_head[l][h][p]);
      }
      out += '\n';
    }
  }
  return out;
}

}  // namespace rankstop::saliency
