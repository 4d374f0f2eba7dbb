#include "csnn/som.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "csnn/error.hpp"

namespace csnn {

namespace {

void normalize_row(std::span<double> row) {
  double sq = 0.0;
  for (double v : row) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm == 0.0) {
    row[0] = 1.0;
    return;
  }
  for (double& v : row) v /= norm;
}

}  // namespace

SomMap init_som(std::size_t grid_h, std::size_t grid_w, std::size_t dim, Rng& rng) {
  if (grid_h == 0 || grid_w == 0 || dim == 0) throw InputError("init_som: dims must be >= 1");
  SomMap map;
  map.grid_h = grid_h;
  map.grid_w = grid_w;
  map.dim = dim;
  map.weights.resize(grid_h * grid_w * dim);
  for (double& w : map.weights) w = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < map.neurons(); ++i) normalize_row(map.row(i));
  map.coords.reserve(map.neurons());
  for (std::size_t r = 0; r < grid_h; ++r) {
    for (std::size_t c = 0; c < grid_w; ++c) map.coords.push_back({r, c});
  }
  return map;
}

SomMap init_som(std::size_t grid_h, std::size_t grid_w, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  return init_som(grid_h, grid_w, dim, rng);
}

std::size_t bmu_index(std::span<const double> distances) {
  if (distances.empty()) throw InputError("bmu_index: empty distance vector");
  std::size_t best = 0;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (std::isnan(distances[i])) throw InputError("bmu_index: NaN distance");
    if (distances[i] > distances[best]) best = i;
  }
  return best;
}

std::vector<double> neighborhood(std::size_t bmu, const SomMap& map, double sigma) {
  if (!(sigma > 0.0)) throw InputError("neighborhood: sigma must be > 0");
  if (bmu >= map.neurons()) throw InputError("neighborhood: BMU index out of range");
  const double denom = 2.0 * sigma * sigma;
  const GridCoord center = map.coords[bmu];
  std::vector<double> h(map.neurons());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double dr = static_cast<double>(map.coords[i].row) - static_cast<double>(center.row);
    const double dc = static_cast<double>(map.coords[i].col) - static_cast<double>(center.col);
    h[i] = std::exp(-(dr * dr + dc * dc) / denom);
  }
  return h;
}

std::vector<double> neighborhood_table(const SomMap& map, double sigma) {
  const std::size_t n = map.neurons();
  std::vector<double> table;
  table.reserve(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto h = neighborhood(j, map, sigma);
    table.insert(table.end(), h.begin(), h.end());
  }
  return table;
}

void SomAccumulator::add(std::span<const double> patch, std::size_t bmu) {
  if (patch.size() != dim_) throw InputError("SomAccumulator::add: patch length mismatch");
  if (bmu >= hits_.size()) throw InputError("SomAccumulator::add: BMU out of range");
  double* dst = sums_.data() + bmu * dim_;
  for (std::size_t k = 0; k < dim_; ++k) dst[k] += patch[k];
  ++hits_[bmu];
  ++gated_;
}

void SomAccumulator::merge(const SomAccumulator& other) {
  if (other.dim_ != dim_ || other.hits_.size() != hits_.size()) {
    throw InputError("SomAccumulator::merge: shape mismatch");
  }
  for (std::size_t k = 0; k < sums_.size(); ++k) sums_[k] += other.sums_[k];
  for (std::size_t j = 0; j < hits_.size(); ++j) hits_[j] += other.hits_[j];
  gated_ += other.gated_;
}

void apply_som_update(SomMap& map, const SomAccumulator& acc, std::span<const double> table,
                      double learn_rate) {
  const std::size_t n = map.neurons();
  if (acc.neurons() != n || acc.dim() != map.dim) {
    throw InputError("apply_som_update: accumulator does not match map");
  }
  if (table.size() != n * n) throw InputError("apply_som_update: bad neighborhood table");
  if (acc.gated() == 0) return;

  std::vector<std::size_t> winners;
  for (std::size_t j = 0; j < n; ++j) {
    if (acc.hits(j) > 0) winners.push_back(j);
  }

  // delta = scale * H * S over the winning rows only.
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto w_count = static_cast<Eigen::Index>(winners.size());
  const auto dim = static_cast<Eigen::Index>(map.dim);
  RowMatrix sums(w_count, dim);
  RowMatrix h(static_cast<Eigen::Index>(n), w_count);
  for (Eigen::Index r = 0; r < w_count; ++r) {
    const std::size_t j = winners[static_cast<std::size_t>(r)];
    const auto s = acc.sum(j);
    std::copy(s.begin(), s.end(), sums.row(r).data());
    for (std::size_t i = 0; i < n; ++i) h(static_cast<Eigen::Index>(i), r) = table[j * n + i];
  }
  RowMatrix delta = h * sums;
  delta *= learn_rate / static_cast<double>(acc.gated());

  for (std::size_t i = 0; i < n; ++i) {
    const double* d = delta.row(static_cast<Eigen::Index>(i)).data();
    if (std::all_of(d, d + map.dim, [](double v) { return v == 0.0; })) continue;
    auto w = map.row(i);
    for (std::size_t k = 0; k < map.dim; ++k) w[k] += d[k];
    normalize_row(w);
  }
}

void som_batch_update(SomMap& map, std::span<const double> patches,
                      std::span<const std::size_t> bmus, const std::vector<bool>& gates,
                      const SomHyper& hyper) {
  if (map.dim == 0 || patches.size() % map.dim != 0) {
    throw InputError("som_batch_update: patch buffer is not a multiple of dim");
  }
  const std::size_t count = patches.size() / map.dim;
  if (bmus.size() != count || gates.size() != count) {
    throw InputError("som_batch_update: bmus/gates not aligned with patches");
  }
  SomAccumulator acc(map.neurons(), map.dim);
  for (std::size_t p = 0; p < count; ++p) {
    if (gates[p]) acc.add(patches.subspan(p * map.dim, map.dim), bmus[p]);
  }
  if (acc.gated() == 0) return;
  const auto table = neighborhood_table(map, hyper.sigma);
  apply_som_update(map, acc, table, hyper.learn_rate);
}

}  // namespace csnn
