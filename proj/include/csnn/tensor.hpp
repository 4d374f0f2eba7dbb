#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace csnn {

// Batched height x width x channel volume, batch-major, row-major, channel-minor.
struct Tensor4 {
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  Tensor4() = default;
  Tensor4(std::size_t b, std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : batch(b), height(h), width(w), channels(c), values(b * h * w * c, fill) {}

  std::size_t image_size() const { return height * width * channels; }
  std::size_t size() const { return values.size(); }

  std::size_t index(std::size_t b, std::size_t y, std::size_t x, std::size_t c) const {
    return ((b * height + y) * width + x) * channels + c;
  }
  double& at(std::size_t b, std::size_t y, std::size_t x, std::size_t c) {
    return values[index(b, y, x, c)];
  }
  double at(std::size_t b, std::size_t y, std::size_t x, std::size_t c) const {
    return values[index(b, y, x, c)];
  }

  std::span<double> image(std::size_t b) {
    return {values.data() + b * image_size(), image_size()};
  }
  std::span<const double> image(std::size_t b) const {
    return {values.data() + b * image_size(), image_size()};
  }

  // Copy of images [first, first + count).
  Tensor4 slice(std::size_t first, std::size_t count) const;

  bool same_shape(const Tensor4& other) const {
    return batch == other.batch && height == other.height && width == other.width &&
           channels == other.channels;
  }
};

bool all_finite(std::span<const double> values);

enum class Padding { same, valid };

struct ConvGeometry {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  Padding padding = Padding::same;

  bool operator==(const ConvGeometry&) const = default;
};

// Output grid and leading (top/left) padding for an input of height x width.
// "same" follows the usual convention: out = ceil(in / stride), total padding
// max((out - 1) * stride + kernel - in, 0) with the odd cell going bottom/right.
struct ConvLayout {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t pad_top = 0;
  std::size_t pad_left = 0;
};

ConvLayout conv_layout(std::size_t height, std::size_t width, const ConvGeometry& g);

// Location of the channel run for kernel cell (ky, kx) inside a flat patch.
struct PatchRun {
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct PatchSet {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch_dim = 0;
  std::size_t channels = 0;
  ConvGeometry geometry;
  std::vector<double> patches;      // rows * cols * patch_dim, one patch per (m, n)
  std::vector<PatchRun> index_map;  // kernel_h * kernel_w runs, row-major over the kernel

  std::size_t count() const { return rows * cols; }
  std::span<const double> patch(std::size_t i) const {
    return {patches.data() + i * patch_dim, patch_dim};
  }
  std::span<const double> patch(std::size_t m, std::size_t n) const { return patch(m * cols + n); }
};

std::vector<PatchRun> patch_index_map(std::size_t kernel_h, std::size_t kernel_w,
                                      std::size_t channels);

// Receptive fields of one image of `input`; out-of-bounds cells are 0.0.
PatchSet extract_patches(const Tensor4& input, std::size_t image, const ConvGeometry& g);
inline PatchSet extract_patches(const Tensor4& input, const ConvGeometry& g) {
  return extract_patches(input, 0, g);
}

// 2x2 window, stride 2. A trailing odd row/column is dropped.
Tensor4 max_pool(const Tensor4& input);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased (population) variance
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.99;

// Per-channel statistics over batch and spatial axes, summed sequentially.
ChannelStats channel_stats(const Tensor4& input);

// Parameter-free normalization with the given statistics.
Tensor4 batch_norm(const Tensor4& input, const ChannelStats& stats, double eps = kBatchNormEps);

// Fresh mode: normalize with the input's own statistics.
Tensor4 batch_norm(const Tensor4& input, double eps = kBatchNormEps);

// Running statistics kept as an exponential moving average.
struct RunningStats {
  ChannelStats stats;
  std::size_t updates = 0;
  double momentum = kBatchNormMomentum;

  // The first update copies the batch statistics; later ones blend them in.
  void update(const ChannelStats& batch);
  bool empty() const { return updates == 0; }
};

}  // namespace csnn
