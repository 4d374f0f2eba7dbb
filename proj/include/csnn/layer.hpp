#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "csnn/mask.hpp"
#include "csnn/rng.hpp"
#include "csnn/som.hpp"
#include "csnn/tensor.hpp"

namespace csnn {

// How a layer treats its masks during training.
enum class MaskMode {
  learned,        // local Hebbian/Oja rule
  static_random,  // U[-1, 1] at init, never updated
  noise,          // U[-1, 1] resampled every training step
  none,           // all ones (plain SOM convolution)
};

// Half-open step interval [start, end) during which a layer learns.
struct TrainInterval {
  std::size_t start = 0;
  std::size_t end = 0;
  bool contains(std::size_t step) const { return start <= step && step < end; }
};

struct LayerSpec {
  std::size_t grid_h = 10;
  std::size_t grid_w = 10;
  std::size_t heads = 1;
  ConvGeometry geometry;
  MaskKind mask_kind = MaskKind::input;
  MaskRule rule = MaskRule::hebbian_all;
  double gamma = 1.0;
  double som_rate = 0.1;
  double mask_rate = 0.005;
  double sigma = 1.0;
  TrainInterval interval;
  MaskMode mask_mode = MaskMode::learned;
  bool batch_norm = true;
  bool max_pool = true;

  std::size_t neurons_per_head() const { return grid_h * grid_w; }
  std::size_t out_channels() const { return heads * neurons_per_head(); }
};

struct LayerAblation {
  bool update_all_heads = false;    // every head learns from its own BMU on every patch
  bool neighborhood_masks = false;  // neighborhood-weighted mask updates
};

struct Head {
  SomMap som;
  MaskBank masks;
  std::vector<double> table;  // neighborhood_table(som, sigma)
};

struct CsnnLayer {
  LayerSpec spec;
  std::size_t in_channels = 0;
  std::size_t patch_dim = 0;
  std::vector<PatchRun> index_map;
  std::vector<Head> heads;

  std::size_t out_channels() const { return spec.out_channels(); }
};

// Initializes all heads from `rng` (SOM rows, then masks, head by head).
CsnnLayer make_layer(const LayerSpec& spec, std::size_t in_channels, Rng& rng);

// Per-head filters with the masks folded in: row i is w_i o expand(mask_i).
std::vector<double> effective_filters(const CsnnLayer& layer, std::size_t head);

// Masked distances of every patch of every image, heads concatenated along channels.
Tensor4 layer_forward(const CsnnLayer& layer, const Tensor4& input);

struct Winner {
  std::size_t head = 0;
  std::size_t neuron = 0;
  bool operator==(const Winner&) const = default;
};

// Argmax over the concatenation of all heads; ties go to the lowest head, then
// the lowest neuron.
Winner best_bmu_across_heads(std::span<const std::span<const double>> distances);

// Best-across-heads winner of every patch, per image.
std::vector<std::vector<Winner>> layer_winners(const CsnnLayer& layer, const Tensor4& input);

struct StepStats {
  bool trained = false;
  std::vector<std::vector<std::size_t>> histogram;  // [head][neuron] best-BMU counts
  double mean_abs_dw = 0.0;                         // over every SOM weight of the layer
  double mean_abs_dm = 0.0;                         // over every mask value of the layer

  double utilization() const;  // fraction of neurons with a nonzero count
  double bmu_entropy() const;  // Shannon entropy (nats) of the count distribution
};

// One competitive-learning step on a batch. Distances and winners for the whole
// batch are computed before any write; the SOM rows move toward the unmasked
// patches, the masks follow their local rule with the same gates. Outside the
// layer's interval this is a no-op returning trained = false. When `response`
// is given it receives the layer output computed before the update.
StepStats layer_train_step(CsnnLayer& layer, const Tensor4& input, std::size_t step,
                           const LayerAblation& ablation, Rng& rng, Tensor4* response = nullptr);

}  // namespace csnn
