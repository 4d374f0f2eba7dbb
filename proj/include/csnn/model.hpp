#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csnn/config.hpp"
#include "csnn/layer.hpp"
#include "csnn/rng.hpp"
#include "csnn/tensor.hpp"

namespace csnn {

// Stack of [sconv -> batch_norm -> max_pool] blocks.
struct Model {
  ModelConfig config;
  std::vector<CsnnLayer> layers;
  std::vector<RunningStats> bn;  // one per layer, updated only inside that layer's interval
  std::size_t step = 0;
  Rng rng;
};

struct Shape3 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t size() const { return height * width * channels; }
  bool operator==(const Shape3&) const = default;
};

// Validates the config and initializes every layer from one seeded stream.
// Throws ConfigError on an empty layer list or dims that collapse between layers.
Model build_model(const ModelConfig& config);

// Input shape of each layer followed by the representation shape.
std::vector<Shape3> layer_shapes(const ModelConfig& config);
Shape3 representation_shape(const ModelConfig& config);

enum class NormMode { fresh, running };

// One block: sconv, then batch norm and pooling as configured. Running mode
// with no recorded statistics normalizes with mean 0, variance 1.
Tensor4 block_forward(const Model& model, std::size_t layer, const Tensor4& input, NormMode mode);

// Forward through layers [0, upto) in running mode.
Tensor4 forward(const Model& model, const Tensor4& images, std::size_t upto);

struct MetricsRow {
  std::size_t step = 0;
  std::size_t layer = 0;
  double mean_abs_dw = 0.0;
  double bmu_entropy = 0.0;
  double utilization = 0.0;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

// Applies step `model.step` to every layer whose interval contains it, then
// advances the counter. Upstream layers run with their current weights; a
// layer's batch norm uses fresh statistics (and feeds its running average)
// while that layer is learning, running statistics otherwise.
void train_step(Model& model, const Tensor4& batch, const MetricsSink& sink = {});

// Runs steps model.step .. until-1 over `images`, batch t taking images
// [(t * B) mod N, ...) in order. Resumes from model.step.
void train(Model& model, const Tensor4& images, std::size_t until, const MetricsSink& sink = {});
inline void train(Model& model, const Tensor4& images, const MetricsSink& sink = {}) {
  train(model, images, model.config.total_steps(), sink);
}

struct Representations {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // rows x dim
  std::vector<int> labels;     // empty or one per row

  std::span<const double> row(std::size_t r) const { return {values.data() + r * dim, dim}; }
};

// Full forward pass in running-statistics mode, one flattened vector per image.
Representations extract_representations(const Model& model, const Tensor4& images,
                                        std::span<const int> labels = {});

// Binary layout (little-endian):
//   "CSNNCKPT" | u32 major, minor, patch | u64 config hash | str config json |
//   u64 step | str rng state | u64 layers { u64 heads { arr weights | arr masks } |
//   u64 bn updates | arr mean | arr var } | u64 FNV-1a of everything before it.
// str = u64 length + bytes; arr = u32 rank + u64 dims + float64 values.
inline constexpr std::uint32_t kCheckpointMajor = 1;
inline constexpr std::uint32_t kCheckpointMinor = 0;
inline constexpr std::uint32_t kCheckpointPatch = 0;

std::vector<unsigned char> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::vector<unsigned char>& bytes);
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// FNV-1a of the serialized checkpoint.
std::uint64_t checkpoint_hash(const Model& model);

// Representation file: "CSNNREPS" | u32 version x3 | arr values (rows x dim) |
// arr labels (float64) | u64 FNV-1a trailer.
void save_representations(const Representations& reps, const std::string& path);
Representations load_representations(const std::string& path);

}  // namespace csnn
