#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "csnn/data.hpp"
#include "csnn/rng.hpp"
#include "csnn/tensor.hpp"

namespace testing {

inline csnn::Tensor4 random_tensor(std::size_t b, std::size_t h, std::size_t w, std::size_t c,
                                   std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  csnn::Rng rng(seed);
  csnn::Tensor4 t(b, h, w, c);
  for (auto& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

// Approximately standard normal via the sum of 12 uniforms.
inline csnn::Tensor4 unit_variance_tensor(std::size_t b, std::size_t h, std::size_t w, std::size_t c,
                                          std::uint64_t seed) {
  csnn::Rng rng(seed);
  csnn::Tensor4 t(b, h, w, c);
  for (auto& v : t.values) {
    double s = 0.0;
    for (int k = 0; k < 12; ++k) s += rng.uniform01();
    v = s - 6.0;
  }
  return t;
}

inline std::vector<double> random_vector(std::size_t n, csnn::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("csnn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// One record of a synthetic 10-class image set: class c is an oriented
// grating (angle c * 18 degrees) with a class tint, random phase and noise.
inline void synthetic_record(unsigned char* rec, int label, csnn::Rng& rng) {
  constexpr std::size_t side = csnn::kCifarSide;
  rec[0] = static_cast<unsigned char>(label);
  const double angle = label * std::numbers::pi / 10.0;
  const double freq = 2.0 + (label % 3);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double tint[3] = {0.6 + 0.4 * std::cos(label), 0.6 + 0.4 * std::sin(label), 0.6 + 0.4 * std::cos(2.0 * label)};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double u = (std::cos(angle) * x + std::sin(angle) * y) / side;
        double v = 128.0 + 90.0 * tint[ch] * std::sin(2.0 * std::numbers::pi * freq * u + phase);
        v += rng.uniform(-40.0, 40.0);
        rec[1 + ch * side * side + y * side + x] = static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
}

// Writes data_batch_1..5.bin and test_batch.bin of synthetic records. Reuses an
// existing complete directory.
inline std::filesystem::path synthetic_cifar_dir(const std::filesystem::path& dir, std::uint64_t seed = 7) {
  const auto stamp = dir / "complete";
  if (std::filesystem::exists(stamp)) return dir;
  std::filesystem::create_directories(dir);
  csnn::Rng rng(seed);
  std::vector<unsigned char> bytes(csnn::kCifarRecordsPerFile * csnn::kCifarRecordBytes);
  const std::vector<std::string> names = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                                          "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"};
  for (const auto& name : names) {
    for (std::size_t r = 0; r < csnn::kCifarRecordsPerFile; ++r) {
      synthetic_record(bytes.data() + r * csnn::kCifarRecordBytes, static_cast<int>(rng.below(10)), rng);
    }
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream(stamp) << "ok\n";
  return dir;
}

}  // namespace testing
