#include "csnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "csnn/error.hpp"

namespace csnn {

Tensor4 Tensor4::slice(std::size_t first, std::size_t count) const {
  if (first + count > batch) throw InputError("Tensor4::slice out of range");
  Tensor4 out(count, height, width, channels);
  std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(first * image_size()),
              count * image_size(), out.values.begin());
  return out;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

ConvLayout conv_layout(std::size_t height, std::size_t width, const ConvGeometry& g) {
  if (g.kernel_h == 0 || g.kernel_w == 0 || g.stride_h == 0 || g.stride_w == 0) {
    throw GeometryError("kernel and stride must be >= 1");
  }
  if (height == 0 || width == 0) throw GeometryError("empty input plane");

  ConvLayout out;
  if (g.padding == Padding::valid) {
    if (g.kernel_h > height || g.kernel_w > width) {
      throw GeometryError("kernel " + std::to_string(g.kernel_h) + "x" +
                          std::to_string(g.kernel_w) + " exceeds input " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    out.rows = (height - g.kernel_h) / g.stride_h + 1;
    out.cols = (width - g.kernel_w) / g.stride_w + 1;
    return out;
  }

  out.rows = (height + g.stride_h - 1) / g.stride_h;
  out.cols = (width + g.stride_w - 1) / g.stride_w;
  const std::size_t span_h = (out.rows - 1) * g.stride_h + g.kernel_h;
  const std::size_t span_w = (out.cols - 1) * g.stride_w + g.kernel_w;
  out.pad_top = span_h > height ? (span_h - height) / 2 : 0;
  out.pad_left = span_w > width ? (span_w - width) / 2 : 0;
  return out;
}

std::vector<PatchRun> patch_index_map(std::size_t kernel_h, std::size_t kernel_w,
                                      std::size_t channels) {
  std::vector<PatchRun> runs;
  runs.reserve(kernel_h * kernel_w);
  for (std::size_t cell = 0; cell < kernel_h * kernel_w; ++cell) {
    runs.push_back({cell * channels, channels});
  }
  return runs;
}

PatchSet extract_patches(const Tensor4& input, std::size_t image, const ConvGeometry& g) {
  if (image >= input.batch) throw InputError("extract_patches: image index out of range");
  const ConvLayout layout = conv_layout(input.height, input.width, g);

  PatchSet set;
  set.rows = layout.rows;
  set.cols = layout.cols;
  set.channels = input.channels;
  set.patch_dim = g.kernel_h * g.kernel_w * input.channels;
  set.geometry = g;
  set.index_map = patch_index_map(g.kernel_h, g.kernel_w, input.channels);
  set.patches.assign(set.rows * set.cols * set.patch_dim, 0.0);

  const auto src = input.image(image);
  const std::size_t c = input.channels;
  const auto height = static_cast<std::ptrdiff_t>(input.height);
  const auto width = static_cast<std::ptrdiff_t>(input.width);
  double* dst = set.patches.data();
  for (std::size_t m = 0; m < set.rows; ++m) {
    const auto y0 = static_cast<std::ptrdiff_t>(m * g.stride_h) -
                    static_cast<std::ptrdiff_t>(layout.pad_top);
    for (std::size_t n = 0; n < set.cols; ++n, dst += set.patch_dim) {
      const auto x0 = static_cast<std::ptrdiff_t>(n * g.stride_w) -
                      static_cast<std::ptrdiff_t>(layout.pad_left);
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        const std::ptrdiff_t y = y0 + static_cast<std::ptrdiff_t>(ky);
        if (y < 0 || y >= height) continue;
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const std::ptrdiff_t x = x0 + static_cast<std::ptrdiff_t>(kx);
          if (x < 0 || x >= width) continue;
          const double* from = src.data() + (static_cast<std::size_t>(y) * input.width +
                                             static_cast<std::size_t>(x)) * c;
          std::copy_n(from, c, dst + (ky * g.kernel_w + kx) * c);
        }
      }
    }
  }
  return set;
}

Tensor4 max_pool(const Tensor4& input) {
  const std::size_t oh = input.height / 2;
  const std::size_t ow = input.width / 2;
  if (oh == 0 || ow == 0) throw GeometryError("max_pool needs at least a 2x2 plane");
  Tensor4 out(input.batch, oh, ow, input.channels);
  for (std::size_t b = 0; b < input.batch; ++b) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        for (std::size_t c = 0; c < input.channels; ++c) {
          out.at(b, y, x, c) = std::max(
              std::max(input.at(b, 2 * y, 2 * x, c), input.at(b, 2 * y, 2 * x + 1, c)),
              std::max(input.at(b, 2 * y + 1, 2 * x, c), input.at(b, 2 * y + 1, 2 * x + 1, c)));
        }
      }
    }
  }
  return out;
}

ChannelStats channel_stats(const Tensor4& input) {
  const std::size_t c = input.channels;
  const std::size_t count = input.batch * input.height * input.width;
  if (count == 0) throw InputError("channel_stats: no samples per channel");

  ChannelStats stats{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t k = 0; k < c; ++k) stats.mean[k] += input.values[i * c + k];
  }
  for (auto& m : stats.mean) m /= static_cast<double>(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double d = input.values[i * c + k] - stats.mean[k];
      stats.var[k] += d * d;
    }
  }
  for (auto& v : stats.var) v /= static_cast<double>(count);
  return stats;
}

Tensor4 batch_norm(const Tensor4& input, const ChannelStats& stats, double eps) {
  const std::size_t c = input.channels;
  if (stats.mean.size() != c || stats.var.size() != c) {
    throw InputError("batch_norm: statistics do not match channel count");
  }
  std::vector<double> inv(c);
  for (std::size_t k = 0; k < c; ++k) inv[k] = 1.0 / std::sqrt(stats.var[k] + eps);

  Tensor4 out = input;
  const std::size_t count = input.size() / std::max<std::size_t>(c, 1);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      double& v = out.values[i * c + k];
      v = (v - stats.mean[k]) * inv[k];
    }
  }
  return out;
}

Tensor4 batch_norm(const Tensor4& input, double eps) {
  return batch_norm(input, channel_stats(input), eps);
}

void RunningStats::update(const ChannelStats& batch) {
  if (updates == 0) {
    stats = batch;
  } else {
    if (batch.mean.size() != stats.mean.size()) {
      throw InputError("RunningStats::update: channel count changed");
    }
    for (std::size_t k = 0; k < stats.mean.size(); ++k) {
      stats.mean[k] = momentum * stats.mean[k] + (1.0 - momentum) * batch.mean[k];
      stats.var[k] = momentum * stats.var[k] + (1.0 - momentum) * batch.var[k];
    }
  }
  ++updates;
}

}  // namespace csnn
