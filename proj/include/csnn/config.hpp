#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "csnn/layer.hpp"

namespace csnn {

struct InputShape {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
};

// Which slices of the dataset an experiment uses.
struct DataSpec {
  std::string path;                      // CIFAR-10 binary directory; empty = CLI/env default
  std::size_t train_images = 2000;       // images cycled through during CSNN training
  std::size_t probe_train_images = 10000;
  std::size_t eval_images = 5000;
  std::size_t test_images = 5000;
};

struct ProbeSpec {
  std::size_t epochs = 50;
  std::size_t batch_size = 512;
  double learn_rate = 1e-3;
  std::size_t augment_factor = 1;  // >1 enlarges the probe training set with augmented copies
};

struct ModelConfig {
  std::string name = "csnn";
  InputShape input;
  std::vector<LayerSpec> layers;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  double bn_eps = kBatchNormEps;
  double bn_momentum = kBatchNormMomentum;
  LayerAblation ablation;
  DataSpec data;
  ProbeSpec probe;

  // Last step of the latest training interval.
  std::size_t total_steps() const;
};

// Two-layer model: 10x10x1 grid stride 2 with input masks, then 16x16x1 with
// between-layer masks; sigma (1.0, 1.25).
ModelConfig s_csnn_preset();

// Three-layer model: 12x12x3, 14x14x3, 16x16x3 grids, stride 1, input masks
// first then between-layer masks; sigma (1.0, 1.5, 1.5).
ModelConfig d_csnn_preset();

// D-CSNN with 8x8x2 grids on every layer, batch size 1 and 2000-step
// sequential intervals; the reduced model for CPU-scale runs.
ModelConfig desk_d_csnn_preset();

// Sequential intervals: layer l learns during [l * steps, (l + 1) * steps).
void set_sequential_intervals(ModelConfig& config, std::size_t steps_per_layer);

// Applies a named ablation (RS, NM, RM, NO, R, RSNM, BMU, NH, NBN, 1M, 2M, Aug,
// or D/none for the unmodified model). Several may be joined with '-' or '+'.
// Throws ConfigError for unknown names.
void apply_variant(ModelConfig& config, const std::string& variant);
std::vector<std::string> known_variants();

std::string config_to_json(const ModelConfig& config);
// Strict: unknown keys and malformed values raise ConfigError.
ModelConfig config_from_json(const std::string& text);
ModelConfig load_config(const std::string& path);
// Preset by name ("s_csnn", "d_csnn", "desk_d_csnn") or a JSON file path.
ModelConfig resolve_config(const std::string& name_or_path);

// FNV-1a 64 over the canonical JSON form.
std::uint64_t config_hash(const ModelConfig& config);
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 14695981039346656037ull);

std::string to_string(MaskKind kind);
std::string to_string(MaskRule rule);
std::string to_string(MaskMode mode);

}  // namespace csnn
