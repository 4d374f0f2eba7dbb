#include <doctest.h>

#include <cmath>

#include "csnn/error.hpp"
#include "csnn/som.hpp"
#include "support.hpp"

using namespace csnn;

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

SomMap single_neuron(std::vector<double> w) {
  SomMap map;
  map.grid_h = 1;
  map.grid_w = 1;
  map.dim = w.size();
  map.weights = std::move(w);
  map.coords = {{0, 0}};
  return map;
}

}  // namespace

TEST_CASE("init_som rows are unit norm and seed-deterministic") {
  const SomMap a = init_som(5, 4, 13, 11);
  const SomMap b = init_som(5, 4, 13, 11);
  CHECK(a.weights == b.weights);
  CHECK(init_som(5, 4, 13, 12).weights != a.weights);
  for (std::size_t i = 0; i < a.neurons(); ++i) CHECK(norm(a.row(i)) == doctest::Approx(1.0).epsilon(1e-12));
  const SomMap scalar = init_som(3, 3, 1, 5);
  for (double w : scalar.weights) CHECK(std::abs(w) == 1.0);
  CHECK_THROWS_AS(init_som(0, 3, 2, 1), InputError);
}

TEST_CASE("bmu_index examples") {
  CHECK(bmu_index(std::vector<double>{0.1, 0.5, 0.3}) == 1);
  CHECK(bmu_index(std::vector<double>{0.7, 0.7}) == 0);
  CHECK_THROWS_AS(bmu_index(std::vector<double>{}), InputError);
  CHECK_THROWS_AS(bmu_index(std::vector<double>{0.1, std::nan("")}), InputError);
}

TEST_CASE("bmu_index matches an exhaustive scan, with ties") {
  Rng rng(17);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> d(256);
    // Coarse values produce frequent ties.
    for (auto& x : d) x = static_cast<double>(rng.below(t % 2 ? 8 : 1000000));
    std::size_t oracle = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d[i] > best) {
        best = d[i];
        oracle = i;
      }
    }
    REQUIRE(bmu_index(d) == oracle);
  }
}

TEST_CASE("neighborhood examples and properties") {
  const SomMap map = init_som(4, 5, 2, 1);
  const auto h0 = neighborhood(0, map, 1.5);
  CHECK(h0[0] == 1.0);
  // (0,0) -> (3,4): distance 5
  CHECK(h0[3 * 5 + 4] == doctest::Approx(std::exp(-25.0 / 4.5)).epsilon(1e-15));
  CHECK(h0[3 * 5 + 4] == doctest::Approx(0.003866).epsilon(1e-3));
  for (double h : neighborhood(7, map, 1e6)) CHECK(std::abs(h - 1.0) < 1e-6);
  CHECK_THROWS_AS(neighborhood(0, map, 0.0), InputError);

  // Symmetric in BMU/neuron and decreasing with grid distance.
  const auto table = neighborhood_table(map, 1.25);
  for (std::size_t a = 0; a < map.neurons(); ++a) {
    for (std::size_t b = 0; b < map.neurons(); ++b) {
      CHECK(table[a * map.neurons() + b] == table[b * map.neurons() + a]);
    }
  }
  CHECK(h0[1] > h0[2]);
  CHECK(h0[5] > h0[6]);
  CHECK(h0[6] > h0[7]);
}

TEST_CASE("single neuron hand trace") {
  SomMap map = single_neuron({1.0, 0.0});
  const std::vector<double> p{0.0, 1.0};
  const std::vector<std::size_t> bmus{0};
  som_batch_update(map, p, bmus, {true}, {0.1, 1.0});
  CHECK(map.weights[0] == doctest::Approx(1.0 / std::sqrt(1.01)).epsilon(1e-14));
  CHECK(map.weights[1] == doctest::Approx(0.1 / std::sqrt(1.01)).epsilon(1e-14));
  CHECK(map.weights[0] == doctest::Approx(0.99504).epsilon(1e-5));
  CHECK(map.weights[1] == doctest::Approx(0.09950).epsilon(1e-4));
}

TEST_CASE("zero rate, no gates and duplicate patches") {
  Rng rng(3);
  const SomMap start = init_som(3, 3, 6, 4);
  const auto patches = testing::random_vector(6 * 5, rng);
  const std::vector<std::size_t> bmus{0, 4, 4, 8, 2};
  const std::vector<bool> all(5, true);

  SomMap frozen = start;
  som_batch_update(frozen, patches, bmus, all, {0.0, 1.0});
  CHECK(frozen.weights == start.weights);

  SomMap gated_off = start;
  som_batch_update(gated_off, patches, bmus, std::vector<bool>(5, false), {0.1, 1.0});
  CHECK(gated_off.weights == start.weights);

  // Duplicating every patch leaves the batch mean, hence the update, unchanged.
  std::vector<double> doubled;
  std::vector<std::size_t> doubled_bmus;
  for (std::size_t p = 0; p < 5; ++p) {
    for (int k = 0; k < 2; ++k) {
      doubled.insert(doubled.end(), patches.begin() + static_cast<long>(p * 6), patches.begin() + static_cast<long>(p * 6 + 6));
      doubled_bmus.push_back(bmus[p]);
    }
  }
  SomMap once = start;
  SomMap twice = start;
  som_batch_update(once, patches, bmus, all, {0.1, 1.0});
  som_batch_update(twice, doubled, doubled_bmus, std::vector<bool>(10, true), {0.1, 1.0});
  for (std::size_t i = 0; i < once.weights.size(); ++i) {
    CHECK(once.weights[i] == doctest::Approx(twice.weights[i]).epsilon(1e-14));
  }
}

TEST_CASE("tiny sigma moves only the BMU, toward the patch") {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const SomMap start = init_som(4, 4, 5, 100 + t);
    SomMap map = start;
    const auto p = testing::random_vector(5, rng);
    const std::size_t bmu = rng.below(16);
    som_batch_update(map, p, std::vector<std::size_t>{bmu}, {true}, {0.1, 1e-3});
    double before = 0.0;
    double after = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      before += start.row(bmu)[k] * p[k];
      after += map.row(bmu)[k] * p[k];
    }
    CHECK(after > before);
    for (std::size_t i = 0; i < 16; ++i) {
      if (i == bmu) continue;
      for (std::size_t k = 0; k < 5; ++k) REQUIRE(map.row(i)[k] == start.row(i)[k]);
    }
  }
}

TEST_CASE("rows stay unit norm and runs are reproducible") {
  Rng rng(21);
  SomMap a = init_som(3, 4, 9, 2);
  SomMap b = a;
  const auto table = neighborhood_table(a, 1.0);
  for (int step = 0; step < 200; ++step) {
    const auto patches = testing::random_vector(9 * 4, rng, -3.0, 3.0);
    std::vector<std::size_t> bmus(4);
    for (auto& j : bmus) j = rng.below(12);
    std::vector<bool> gates(4);
    for (std::size_t g = 0; g < 4; ++g) gates[g] = rng.below(4) != 0;
    som_batch_update(a, patches, bmus, gates, {0.1, 1.0});
    SomAccumulator acc(12, 9);
    for (std::size_t p = 0; p < 4; ++p) {
      if (gates[p]) acc.add({patches.data() + p * 9, 9}, bmus[p]);
    }
    apply_som_update(b, acc, table, 0.1);
    REQUIRE(a.weights == b.weights);
  }
  for (std::size_t i = 0; i < a.neurons(); ++i) CHECK(norm(a.row(i)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("accumulator merge equals sequential adds") {
  Rng rng(5);
  SomAccumulator whole(4, 3);
  SomAccumulator left(4, 3);
  SomAccumulator right(4, 3);
  for (int i = 0; i < 10; ++i) {
    const auto p = testing::random_vector(3, rng);
    const std::size_t j = rng.below(4);
    whole.add(p, j);
    (i < 5 ? left : right).add(p, j);
  }
  left.merge(right);
  CHECK(left.gated() == whole.gated());
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(left.hits(j) == whole.hits(j));
    for (std::size_t k = 0; k < 3; ++k) CHECK(left.sum(j)[k] == doctest::Approx(whole.sum(j)[k]));
  }
  CHECK_THROWS_AS(whole.add(std::vector<double>{1.0}, 0), InputError);
}
