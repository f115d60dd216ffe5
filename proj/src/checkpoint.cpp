// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "memprobe/error.hpp"

namespace memprobe {
namespace {

constexpr char kMagic[4] = {'D', 'S', 'P', 'X'};
constexpr std::size_t kPreambleSize = 4 + 4 + 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

const Tensor& DspxFile::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw FormatError("checkpoint has no tensor named '" + name + "'");
}

std::vector<std::uint8_t> encode_dspx(const nlohmann::json& fields,
                                      std::span<const NamedTensor> tensors) {
  nlohmann::json header = fields.is_object() ? fields : nlohmann::json::object();
  auto manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    manifest.push_back({{"name", t.name},
                        {"shape", t.tensor.shape()},
                        {"dtype", "f32"},
                        {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.tensor.numel()) * 4;
  }
  header["tensor_count"] = tensors.size();
  header["tensors"] = std::move(manifest);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPreambleSize + text.size() + offset);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kDspxVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : tensors) {
    for (float v : t.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

namespace {

DspxFile decode_unchecked(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic, not a DSPX checkpoint", 0);
  }
  if (bytes.size() < kPreambleSize) throw FormatError("truncated preamble", bytes.size());
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kDspxVersion) {
    throw FormatError("unsupported DSPX version " + std::to_string(version), 4);
  }
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (header_len > bytes.size() - kPreambleSize) {
    throw FormatError("truncated header: declares " + std::to_string(header_len) + " bytes",
                      kPreambleSize);
  }
  const auto* hbegin = reinterpret_cast<const char*>(bytes.data() + kPreambleSize);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hbegin, hbegin + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what(), kPreambleSize);
  }
  if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_array() ||
      !header.contains("tensor_count")) {
    throw FormatError("header lacks tensor manifest", kPreambleSize);
  }
  const auto& manifest = header["tensors"];
  if (header["tensor_count"].get<std::uint64_t>() != manifest.size()) {
    throw FormatError("header declares " + header["tensor_count"].dump() + " tensors but manifest lists " +
                          std::to_string(manifest.size()),
                      kPreambleSize);
  }

  const std::uint64_t payload_begin = kPreambleSize + header_len;
  const std::uint64_t payload_size = bytes.size() - payload_begin;
  DspxFile file;
  std::uint64_t expected_offset = 0;
  for (const auto& entry : manifest) {
    const auto name = entry.at("name").get<std::string>();
    if (entry.at("dtype").get<std::string>() != "f32") {
      throw FormatError("tensor '" + name + "' has unsupported dtype " + entry.at("dtype").dump(),
                        kPreambleSize);
    }
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (offset != expected_offset) {
      throw FormatError("tensor '" + name + "' offset " + std::to_string(offset) +
                            " breaks manifest order",
                        payload_begin + offset);
    }
    const auto count = static_cast<std::uint64_t>(shape_numel(shape));
    if (offset + count * 4 > payload_size) {
      throw FormatError("truncated payload in tensor '" + name + "'", payload_begin + payload_size);
    }
    std::vector<float> data(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      data[i] = std::bit_cast<float>(get_u32(bytes, payload_begin + offset + 4 * i));
    }
    file.tensors.push_back({name, Tensor::from_data(shape, std::move(data))});
    expected_offset = offset + count * 4;
  }
  if (expected_offset != payload_size) {
    throw FormatError("payload has " + std::to_string(payload_size - expected_offset) +
                          " trailing bytes",
                      payload_begin + expected_offset);
  }
  header.erase("tensors");
  header.erase("tensor_count");
  file.header = std::move(header);
  return file;
}

}  // namespace

DspxFile decode_dspx(std::span<const std::uint8_t> bytes) {
  try {
    return decode_unchecked(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed tensor manifest: ") + e.what(), kPreambleSize);
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to " + path.string() + " failed");
}

void write_dspx(const std::filesystem::path& path, const nlohmann::json& fields,
                std::span<const NamedTensor> tensors) {
  write_file_bytes(path, encode_dspx(fields, tensors));
}

DspxFile read_dspx(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_dspx(bytes);
}

}  // namespace memprobe
