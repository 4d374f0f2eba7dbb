#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "csnn/rng.hpp"
#include "csnn/som.hpp"
#include "csnn/tensor.hpp"

namespace csnn {

// input:   one mask per neuron over the whole flattened patch.
// between: one mask per neuron over the channel axis, broadcast to every kernel cell.
enum class MaskKind { input, between };

// hebbian_all: Hebbian delta on p - gamma * sum_k yhat_k o m_k over all masks.
// oja_lower:   Oja delta on p - gamma * sum_{k<i} yhat_k o m_k.
enum class MaskRule { hebbian_all, oja_lower };

enum class SumVariant { all_sum, lower_sum };

double default_gamma(MaskRule rule);

struct MaskBank {
  MaskKind kind = MaskKind::input;
  MaskRule rule = MaskRule::hebbian_all;
  double gamma = 1.0;
  double learn_rate = 0.005;
  std::size_t neurons = 0;
  std::size_t length = 0;  // patch_dim for input masks, in_channels for between masks
  std::vector<double> values;

  std::span<double> row(std::size_t i) { return {values.data() + i * length, length}; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * length, length};
  }
};

// Uniform [-1, 1] per element. Rule defaults to hebbian_all with its gamma.
MaskBank init_masks(MaskKind kind, std::size_t neurons, std::size_t length, Rng& rng);
MaskBank init_masks(MaskKind kind, std::size_t neurons, std::size_t length, std::uint64_t seed);

// Refills every mask value from U[-1, 1] (noise-mask ablation).
void resample_masks(MaskBank& bank, Rng& rng);

std::vector<double> apply_input_mask(std::span<const double> patch, std::span<const double> mask);

// Broadcasts the channel mask over each run of the index map.
std::vector<double> apply_between_mask(std::span<const double> patch,
                                       std::span<const double> mask,
                                       std::span<const PatchRun> index_map);

// Mask of neuron i expanded to patch length.
std::vector<double> expand_mask(const MaskBank& bank, std::size_t neuron,
                                std::span<const PatchRun> index_map);

// y_i = (p o mask_i) . w_i for every neuron, elementwise in patch order.
std::vector<double> masked_distance(std::span<const double> patch, const MaskBank& bank,
                                    const SomMap& map, std::span<const PatchRun> index_map);

// y_i = p . w_i (plain convolution response).
std::vector<double> conv_distance(std::span<const double> patch, const SomMap& map);

std::vector<double> hebbian_delta(std::span<const double> p, std::span<const double> yhat);

std::vector<double> oja_delta(std::span<const double> p, std::span<const double> yhat,
                              std::span<const double> m);

// p - gamma * sum_k yhat_k o m_k with k over all masks (all_sum) or k < mask_index
// (lower_sum). masked_outputs and masks are neurons x len, row-major.
std::vector<double> modified_input(std::span<const double> p,
                                   std::span<const double> masked_outputs,
                                   std::span<const double> masks, double gamma,
                                   SumVariant variant, std::size_t mask_index);

struct MaskUpdateOptions {
  // Scale each neuron's delta by its neighborhood coefficient and update every
  // mask of the map instead of only the BMU's (neighborhood ablation).
  bool neighborhood = false;
  std::span<const double> table;  // neighborhood_table(), required when neighborhood is set
};

// Direct evaluation of the rule patch by patch: builds every masked output, the
// modified input and the rule delta, then adds learn_rate * mean over gated patches
// (and, for between masks, over kernel cells). Kept as the reference route for
// MaskAccumulator.
void update_masks(MaskBank& bank, std::span<const double> patches,
                  std::span<const PatchRun> index_map, std::span<const std::size_t> bmus,
                  const std::vector<bool>& gates, const MaskUpdateOptions& options = {});

// Both rules factor through per-BMU sums of squared patch values:
//   hebbian_all: delta_j = m_j o (1 - gamma * sum_k m_k^2) o q_j
//   oja_lower:   delta_j = m_j o (1 - gamma * sum_{k<j} m_k^2 - m_j^2) o q_j
// with q_j the sum of p o p over the gated patches (and kernel cells) won by j.
class MaskAccumulator {
 public:
  MaskAccumulator() = default;
  MaskAccumulator(std::size_t neurons, std::size_t length, std::size_t cells)
      : length_(length), cells_(cells), squares_(neurons * length, 0.0) {}

  // `patch` has cells * length values laid out as consecutive channel runs.
  void add(std::span<const double> patch, std::size_t bmu);
  void merge(const MaskAccumulator& other);

  std::size_t gated() const { return gated_; }
  std::size_t cells() const { return cells_; }
  std::size_t length() const { return length_; }
  std::size_t neurons() const { return length_ == 0 ? 0 : squares_.size() / length_; }
  std::span<const double> squares(std::size_t neuron) const {
    return {squares_.data() + neuron * length_, length_};
  }

 private:
  std::size_t length_ = 0;
  std::size_t cells_ = 1;
  std::vector<double> squares_;
  std::size_t gated_ = 0;
};

void apply_mask_update(MaskBank& bank, const MaskAccumulator& acc,
                       const MaskUpdateOptions& options = {});

}  // namespace csnn
