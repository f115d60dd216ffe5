// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// DSPX tensor container:
//
//   "DSPX" | version u32 LE (=1) | header_length u64 LE | UTF-8 JSON header |
//   payload of row-major little-endian binary32 tensors in manifest order.
//
// The header carries caller fields plus "tensor_count" and a "tensors"
// manifest of {name, shape, dtype: "f32", offset} with offsets relative to
// the start of the payload.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "memprobe/tensor.hpp"

namespace memprobe {

inline constexpr std::uint32_t kDspxVersion = 1;

struct DspxFile {
  nlohmann::json header;
  std::vector<NamedTensor> tensors;

  /// Tensor by manifest name; throws FormatError when absent.
  const Tensor& tensor(const std::string& name) const;
};

std::vector<std::uint8_t> encode_dspx(const nlohmann::json& fields,
                                      std::span<const NamedTensor> tensors);
DspxFile decode_dspx(std::span<const std::uint8_t> bytes);

void write_dspx(const std::filesystem::path& path, const nlohmann::json& fields,
                std::span<const NamedTensor> tensors);
DspxFile read_dspx(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace memprobe
