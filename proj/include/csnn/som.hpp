#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "csnn/rng.hpp"

namespace csnn {

struct GridCoord {
  std::size_t row = 0;
  std::size_t col = 0;
};

// One SOM head. Row i of `weights` is the unit-norm filter of neuron i,
// neurons laid out row-major over the grid.
struct SomMap {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t dim = 0;
  std::vector<double> weights;
  std::vector<GridCoord> coords;

  std::size_t neurons() const { return grid_h * grid_w; }
  std::span<double> row(std::size_t i) { return {weights.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {weights.data() + i * dim, dim}; }
};

struct SomHyper {
  double learn_rate = 0.1;
  double sigma = 1.0;
};

// Uniform [-1, 1] rows, each scaled to unit L2 norm.
SomMap init_som(std::size_t grid_h, std::size_t grid_w, std::size_t dim, std::uint64_t seed);
SomMap init_som(std::size_t grid_h, std::size_t grid_w, std::size_t dim, Rng& rng);

// Argmax with ties going to the lowest index. Throws InputError on NaN or empty input.
std::size_t bmu_index(std::span<const double> distances);

// Gaussian neighborhood coefficients of every neuron relative to `bmu`.
std::vector<double> neighborhood(std::size_t bmu, const SomMap& map, double sigma);

// Row j holds neighborhood(j, map, sigma); neurons x neurons.
std::vector<double> neighborhood_table(const SomMap& map, double sigma);

// Per-BMU sums of the gated, unmasked patches of one batch.
class SomAccumulator {
 public:
  SomAccumulator() = default;
  SomAccumulator(std::size_t neurons, std::size_t dim)
      : dim_(dim), sums_(neurons * dim, 0.0), hits_(neurons, 0) {}

  void add(std::span<const double> patch, std::size_t bmu);
  // Folds another accumulator in (used to combine per-image partials in order).
  void merge(const SomAccumulator& other);

  std::size_t gated() const { return gated_; }
  std::size_t hits(std::size_t neuron) const { return hits_[neuron]; }
  std::span<const double> sum(std::size_t neuron) const {
    return {sums_.data() + neuron * dim_, dim_};
  }
  std::size_t neurons() const { return hits_.size(); }
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_ = 0;
  std::vector<double> sums_;
  std::vector<std::size_t> hits_;
  std::size_t gated_ = 0;
};

// Mean-of-batch update followed by renormalization:
//   dw_i = a / gated * sum_j h(j, i) * S_j,  w_i <- (w_i + dw_i) / |w_i + dw_i|.
// Rows whose accumulated dw_i is exactly zero keep their previous bits.
// `table` is neighborhood_table(map, sigma).
void apply_som_update(SomMap& map, const SomAccumulator& acc, std::span<const double> table,
                      double learn_rate);

// Batch update over `patches` (count x dim, row-major). Ungated patches are ignored;
// with no gated patch at all this is a no-op.
void som_batch_update(SomMap& map, std::span<const double> patches,
                      std::span<const std::size_t> bmus, const std::vector<bool>& gates,
                      const SomHyper& hyper);

}  // namespace csnn
