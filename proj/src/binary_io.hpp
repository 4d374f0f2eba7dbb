#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "csnn/error.hpp"

namespace csnn::detail {

// Little-endian writer for the checkpoint/representation formats.
class ByteWriter {
 public:
  void raw(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + size);
  }
  void u32(std::uint32_t v) { little(v, 4); }
  void u64(std::uint64_t v) { little(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void array(std::span<const std::uint64_t> dims, std::span<const double> values) {
    u32(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) u64(d);
    for (double v : values) f64(v);
  }

  const std::vector<unsigned char>& bytes() const { return bytes_; }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  void little(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const unsigned char> bytes, const char* what) : bytes_(bytes), what_(what) {}

  void raw(void* out, std::size_t size) {
    need(size);
    std::memcpy(out, bytes_.data() + pos_, size);
    pos_ += size;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little(4)); }
  std::uint64_t u64() { return little(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  // Reads an array and checks its dims against `expected`.
  std::vector<double> array(std::span<const std::uint64_t> expected) {
    const auto rank = u32();
    if (rank != expected.size()) fail("array rank mismatch");
    std::uint64_t count = 1;
    for (auto d : expected) {
      if (u64() != d) fail("array shape mismatch");
      count *= d;
    }
    return values(count);
  }
  // Reads an array of any shape; dims are returned through `dims`.
  std::vector<double> array(std::vector<std::uint64_t>& dims) {
    const auto rank = u32();
    if (rank > 8) fail("implausible array rank");
    dims.clear();
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      dims.push_back(u64());
      count *= dims.back();
    }
    return values(count);
  }

  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError(std::string(what_) + ": " + msg);
  }

 private:
  std::vector<double> values(std::uint64_t count) {
    if (count > (bytes_.size() - pos_) / 8) fail("truncated array data");
    std::vector<double> out(count);
    for (auto& v : out) v = f64();
    return out;
  }
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) fail("truncated file");
  }
  std::uint64_t little(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
  const char* what_;
};

std::vector<unsigned char> read_file(const std::string& path, const char* what);
void write_file(const std::string& path, const std::vector<unsigned char>& bytes, const char* what);

}  // namespace csnn::detail
