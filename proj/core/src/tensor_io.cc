/*
 * Copyright 2026 The evfuse Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "evfuse/tensor_io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "evfuse/errors.h"

namespace evfuse {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint32_t kDtypeFloat64 = 0;

template <typename T>
void AppendLittleEndian(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T LoadLittleEndian(const char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return v;
}

}  // namespace

void AppendU32(std::string& out, std::uint32_t v) { AppendLittleEndian(out, v); }
void AppendU64(std::string& out, std::uint64_t v) { AppendLittleEndian(out, v); }
void AppendF64(std::string& out, double v) {
  AppendLittleEndian(out, std::bit_cast<std::uint64_t>(v));
}

void ByteReader::Need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) {
    throw FormatError(what_ + ": truncated (need " + std::to_string(n) +
                      " more bytes at offset " + std::to_string(pos_) + ")");
  }
}

std::uint32_t ByteReader::U32() {
  Need(4);
  const auto v = LoadLittleEndian<std::uint32_t>(bytes_.data() + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::U64() {
  Need(8);
  const auto v = LoadLittleEndian<std::uint64_t>(bytes_.data() + pos_);
  pos_ += 8;
  return v;
}

double ByteReader::F64() { return std::bit_cast<double>(U64()); }

std::string_view ByteReader::Bytes(std::size_t n) {
  Need(n);
  std::string_view out = bytes_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string EncodeTensor(const Tensor& t) {
  std::string out;
  out.reserve(16 + 8 * t.rank() + 8 * t.size());
  out.append(kMagic, 4);
  AppendU32(out, kTensorFileVersion);
  AppendU32(out, kDtypeFloat64);
  AppendU32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) AppendU64(out, d);
  for (double v : t.values()) AppendF64(out, v);
  return out;
}

Tensor DecodeTensor(std::string_view bytes) {
  ByteReader in(bytes, "tensor file");
  if (in.Bytes(4) != std::string_view(kMagic, 4)) {
    throw FormatError("tensor file: bad magic (expected 'TNSR')");
  }
  const std::uint32_t version = in.U32();
  if (version != kTensorFileVersion) {
    throw FormatError("tensor file: unsupported version " +
                      std::to_string(version));
  }
  const std::uint32_t dtype = in.U32();
  if (dtype != kDtypeFloat64) {
    throw FormatError("tensor file: unsupported dtype " + std::to_string(dtype));
  }
  const std::uint32_t ndim = in.U32();
  if (ndim == 0) throw FormatError("tensor file: ndim must be >= 1");
  Shape shape(ndim);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    shape[i] = in.U64();
    if (shape[i] == 0) throw FormatError("tensor file: zero dimension");
    count *= shape[i];
  }
  if (in.remaining() != 8 * count) {
    throw FormatError("tensor file: payload is " +
                      std::to_string(in.remaining()) + " bytes, expected " +
                      std::to_string(8 * count));
  }
  std::vector<double> data(count);
  for (double& v : data) v = in.F64();
  return Tensor(std::move(shape), std::move(data));
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

void WriteFileAtomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void WriteTensor(const std::filesystem::path& path, const Tensor& t) {
  WriteFileAtomic(path, EncodeTensor(t));
}

Tensor ReadTensor(const std::filesystem::path& path) {
  try {
    return DecodeTensor(ReadFile(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace evfuse
