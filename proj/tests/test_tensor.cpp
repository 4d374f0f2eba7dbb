#include <doctest.h>

#include <atomic>
#include <cmath>

#include "csnn/error.hpp"
#include "csnn/parallel.hpp"
#include "csnn/rng.hpp"
#include "csnn/tensor.hpp"
#include "support.hpp"

using namespace csnn;

namespace {

// Value of the zero-padded input at (y, x) for signed coordinates.
double padded(const Tensor4& t, long y, long x, std::size_t c) {
  if (y < 0 || x < 0 || y >= static_cast<long>(t.height) || x >= static_cast<long>(t.width)) return 0.0;
  return t.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
}

}  // namespace

TEST_CASE("extract_patches 32x32x3 kernel 3 stride 2 same") {
  const Tensor4 img = testing::random_tensor(1, 32, 32, 3, 1);
  const PatchSet ps = extract_patches(img, {3, 3, 2, 2, Padding::same});
  CHECK(ps.rows == 16);
  CHECK(ps.cols == 16);
  CHECK(ps.patch_dim == 27);
  CHECK(ps.patches.size() == 16 * 16 * 27);
}

TEST_CASE("1x1 valid kernel returns pixels in row-major order") {
  Tensor4 img(1, 2, 2, 1);
  img.values = {1, 2, 3, 4};
  const PatchSet ps = extract_patches(img, {1, 1, 1, 1, Padding::valid});
  REQUIRE(ps.count() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(ps.patch(i)[0] == static_cast<double>(i + 1));
}

TEST_CASE("corner patches of a 2x2 image of ones hold 4 ones and 5 zeros") {
  const Tensor4 img(1, 2, 2, 1, 1.0);
  const PatchSet ps = extract_patches(img, {3, 3, 1, 1, Padding::same});
  REQUIRE(ps.count() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto p = ps.patch(i);
    CHECK(std::count(p.begin(), p.end(), 1.0) == 4);
    CHECK(std::count(p.begin(), p.end(), 0.0) == 5);
  }
}

TEST_CASE("index map partitions the patch into channel runs") {
  const auto map = patch_index_map(3, 2, 5);
  REQUIRE(map.size() == 6);
  std::size_t next = 0;
  for (const auto& run : map) {
    CHECK(run.offset == next);
    CHECK(run.length == 5);
    next += run.length;
  }
  CHECK(next == 30);
}

TEST_CASE("one-hot weights reproduce the padded input (brute force)") {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t h = 1 + rng.below(8);
    const std::size_t w = 1 + rng.below(8);
    const std::size_t c = 1 + rng.below(3);
    ConvGeometry g{1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(3),
                   rng.below(2) ? Padding::same : Padding::valid};
    if (g.padding == Padding::valid && (g.kernel_h > h || g.kernel_w > w)) continue;
    const Tensor4 img = testing::random_tensor(1, h, w, c, 100 + trial);
    const PatchSet ps = extract_patches(img, g);

    // Independent geometry: same padding puts floor(total / 2) before the input.
    std::size_t rows = 0;
    std::size_t cols = 0;
    long top = 0;
    long left = 0;
    if (g.padding == Padding::same) {
      rows = (h + g.stride_h - 1) / g.stride_h;
      cols = (w + g.stride_w - 1) / g.stride_w;
      top = std::max<long>(static_cast<long>((rows - 1) * g.stride_h + g.kernel_h) - static_cast<long>(h), 0) / 2;
      left = std::max<long>(static_cast<long>((cols - 1) * g.stride_w + g.kernel_w) - static_cast<long>(w), 0) / 2;
    } else {
      rows = (h - g.kernel_h) / g.stride_h + 1;
      cols = (w - g.kernel_w) / g.stride_w + 1;
    }
    REQUIRE(ps.rows == rows);
    REQUIRE(ps.cols == cols);
    for (std::size_t m = 0; m < rows; ++m) {
      for (std::size_t n = 0; n < cols; ++n) {
        const auto p = ps.patch(m, n);
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              std::vector<double> onehot(ps.patch_dim, 0.0);
              onehot[(ky * g.kernel_w + kx) * c + ch] = 1.0;
              double dot = 0.0;
              for (std::size_t k = 0; k < p.size(); ++k) dot += p[k] * onehot[k];
              const long y = static_cast<long>(m * g.stride_h + ky) - top;
              const long x = static_cast<long>(n * g.stride_w + kx) - left;
              REQUIRE(dot == padded(img, y, x, ch));
            }
          }
        }
      }
    }
  }
}

TEST_CASE("geometry errors") {
  const Tensor4 img(1, 4, 4, 1);
  CHECK_THROWS_AS(extract_patches(img, {5, 5, 1, 1, Padding::valid}), GeometryError);
  CHECK_THROWS_AS(extract_patches(img, {0, 3, 1, 1, Padding::same}), GeometryError);
  CHECK_THROWS_AS(extract_patches(img, {3, 3, 0, 1, Padding::same}), GeometryError);
}

TEST_CASE("max_pool examples") {
  Tensor4 a(1, 2, 2, 1);
  a.values = {1, 2, 3, 4};
  CHECK(max_pool(a).values == std::vector<double>{4});
  a.values = {-1, -2, -3, -4};
  CHECK(max_pool(a).values == std::vector<double>{-1});

  const Tensor4 constant(2, 6, 6, 3, 2.5);
  const Tensor4 pooled = max_pool(constant);
  CHECK(pooled.height == 3);
  CHECK(pooled.width == 3);
  CHECK(pooled.channels == 3);
  for (double v : pooled.values) CHECK(v == 2.5);
}

TEST_CASE("max_pool keeps the maximum of every window") {
  const Tensor4 t = testing::random_tensor(2, 8, 8, 2, 5);
  const Tensor4 p = max_pool(t);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t x = 0; x < 4; ++x) {
        for (std::size_t c = 0; c < 2; ++c) {
          const double m = std::max({t.at(b, 2 * y, 2 * x, c), t.at(b, 2 * y + 1, 2 * x, c),
                                     t.at(b, 2 * y, 2 * x + 1, c), t.at(b, 2 * y + 1, 2 * x + 1, c)});
          CHECK(p.at(b, y, x, c) == m);
        }
      }
    }
  }
  // Constant 2x2 blocks pool to one value per block.
  Tensor4 blocky(1, 4, 4, 1);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) blocky.at(0, y, x, 0) = static_cast<double>((y / 2) * 2 + x / 2);
  }
  const Tensor4 once = max_pool(blocky);
  CHECK(once.values == std::vector<double>{0, 1, 2, 3});
}

TEST_CASE("batch_norm examples") {
  const Tensor4 constant(2, 3, 3, 2, 4.0);
  for (double v : batch_norm(constant).values) CHECK(v == 0.0);

  Tensor4 pm(1, 1, 2, 1);
  pm.values = {-1.0, 1.0};
  const Tensor4 out = batch_norm(pm);
  CHECK(out.values[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + kBatchNormEps)).epsilon(1e-15));
  CHECK(out.values[1] == doctest::Approx(1.0 / std::sqrt(1.0 + kBatchNormEps)).epsilon(1e-15));

  const Tensor4 normal = testing::unit_variance_tensor(16, 8, 8, 3, 9);
  const Tensor4 once = batch_norm(normal);
  const Tensor4 twice = batch_norm(once);
  const ChannelStats s = channel_stats(twice);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::abs(s.mean[c]) < 1e-6);
    CHECK(std::abs(s.var[c] - 1.0) < 1e-3);
  }
}

TEST_CASE("running stats copy the first batch then blend") {
  RunningStats r;
  CHECK(r.empty());
  r.update({{1.0}, {2.0}});
  CHECK(r.stats.mean[0] == 1.0);
  CHECK(r.stats.var[0] == 2.0);
  r.update({{3.0}, {4.0}});
  CHECK(r.stats.mean[0] == doctest::Approx(0.99 * 1.0 + 0.01 * 3.0));
  CHECK(r.stats.var[0] == doctest::Approx(0.99 * 2.0 + 0.01 * 4.0));
  CHECK(r.updates == 2);
}

TEST_CASE("rng determinism and state round trip") {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  const std::string s = a.state();
  const double x = a.uniform01();
  b.restore(s);
  CHECK(b.uniform01() == x);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(a.below(7) < 7);
  }
  CHECK_THROWS_AS(b.restore("not a state"), CheckpointError);
}

TEST_CASE("parallel_for covers every index once and propagates exceptions") {
  for (std::size_t w : {1, 2, 3, 8}) {
    set_workers(w);
    std::vector<std::atomic<int>> seen(101);
    parallel_for(seen.size(), [&](std::size_t i) { seen[i]++; });
    for (auto& s : seen) CHECK(s.load() == 1);
    CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                      if (i == 7) throw InputError("boom");
                    }),
                    InputError);
  }
  set_workers(0);
}
