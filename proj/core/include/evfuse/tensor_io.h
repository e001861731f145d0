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

// Binary tensor files.
//
//   offset  size        field
//   0       4           magic "TNSR"
//   4       4           u32 version (1)
//   8       4           u32 dtype (0 = float64 little-endian)
//   12      4           u32 ndim
//   16      8 * ndim    u64 dims
//   ...     8 * prod    row-major payload
//
// All integers are little-endian.

#ifndef EVFUSE_TENSOR_IO_H_
#define EVFUSE_TENSOR_IO_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "evfuse/tensor.h"

namespace evfuse {

inline constexpr std::uint32_t kTensorFileVersion = 1;

void WriteTensor(const std::filesystem::path& path, const Tensor& t);
Tensor ReadTensor(const std::filesystem::path& path);

std::string EncodeTensor(const Tensor& t);
// Throws FormatError on bad magic, version, dtype or length. Nothing is
// returned unless the whole buffer validates.
Tensor DecodeTensor(std::string_view bytes);

// Writes to a sibling temp file and renames it over `path`, so readers see
// either the old or the new contents.
void WriteFileAtomic(const std::filesystem::path& path, std::string_view bytes);
std::string ReadFile(const std::filesystem::path& path);

// Little-endian primitives shared by the binary formats.
void AppendU32(std::string& out, std::uint32_t v);
void AppendU64(std::string& out, std::uint64_t v);
void AppendF64(std::string& out, double v);

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}
  std::uint32_t U32();
  std::uint64_t U64();
  double F64();
  std::string_view Bytes(std::size_t n);
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void Need(std::size_t n) const;
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace evfuse

#endif  // EVFUSE_TENSOR_IO_H_
