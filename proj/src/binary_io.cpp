// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "rsalign/errors.hpp"

namespace rsalign::bin {

void Writer::f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }

void Reader::need(std::size_t n, const char* what) const {
  if (remaining() < n) {
    throw FormatError(std::string("truncated payload while reading ") + what, pos_);
  }
}

std::uint64_t Reader::get(int n, const char* what) {
  need(static_cast<std::size_t>(n), what);
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += static_cast<std::size_t>(n);
  return v;
}

std::string Reader::bytes(std::size_t n, const char* what) {
  need(n, what);
  std::string s(data_.data() + pos_, n);
  pos_ += n;
  return s;
}

float Reader::f32(const char* what) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(get(4, what)));
}

void Reader::fail(const std::string& what) const { throw FormatError(what, pos_); }

void Reader::fail_at(const std::string& what, std::size_t offset) const {
  throw FormatError(what, offset);
}

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const char> data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

}  // namespace rsalign::bin
