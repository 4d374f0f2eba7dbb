#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csnn/model.hpp"
#include "csnn/tensor.hpp"

namespace csnn {

// Affine softmax classifier over frozen representations.
struct LinearProbe {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::vector<double> weights;  // classes x dim
  std::vector<double> bias;     // classes

  std::size_t predict(std::span<const double> x) const;
};

double accuracy(const LinearProbe& probe, const Representations& reps);

struct ProbeOptions {
  std::size_t epochs = 50;
  std::size_t batch_size = 512;
  double learn_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t min_steps = 0;  // epochs are extended until at least this many steps ran
  std::uint64_t seed = 0;     // mini-batch order
};

// Keeps the snapshot taken at the best score; later ties do not replace it.
template <typename T>
class Pocket {
 public:
  bool offer(double score, std::size_t step, const T& snapshot) {
    if (best_ && score <= score_) return false;
    best_ = snapshot;
    score_ = score;
    step_ = step;
    return true;
  }
  bool empty() const { return !best_.has_value(); }
  const T& best() const { return *best_; }
  double score() const { return score_; }
  std::size_t step() const { return step_; }

 private:
  std::optional<T> best_;
  double score_ = 0.0;
  std::size_t step_ = 0;
};

struct ProbeResult {
  LinearProbe probe;           // pocket snapshot
  double eval_accuracy = 0.0;  // accuracy of the snapshot on the eval reps
  std::size_t best_step = 0;   // 0 = initial parameters, k = after the k-th update
  std::size_t steps = 0;
};

// Adam on softmax cross-entropy from zero-initialized parameters. Eval accuracy
// is measured after every update and the best snapshot is returned.
ProbeResult train_linear_probe(const Representations& train, const Representations& eval,
                               std::size_t class_count, const ProbeOptions& options = {});

struct FewShotResult {
  std::size_t shots = 0;
  std::vector<double> fold_accuracies;  // test accuracy per fold
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

// Per fold: probe trained on `shots` samples per class of `train` (pocket on
// `eval`), scored on `test`.
FewShotResult few_shot_eval(const Representations& train, const Representations& eval,
                            const Representations& test, std::size_t class_count, std::size_t shots,
                            std::size_t folds, std::uint64_t seed, const ProbeOptions& options = {});

// Fraction of each layer's neurons that win at least one patch of the batch.
// With per_head set, every head's own BMU counts instead of the global winner.
std::vector<double> neuron_utilization(const Model& model, const Tensor4& images, bool per_head = false);

// Renders every patch position of `image` with the SOM weights of its
// best-across-heads BMU, laid out without overlap: output is
// (rows * kernel_h) x (cols * kernel_w) x min(3, in_channels).
Tensor4 bmu_image(const Model& model, const Tensor4& image, std::size_t layer);

struct ClassAverages {
  std::size_t classes = 0;
  std::size_t heads = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<double> values;  // classes x (heads * grid_h * grid_w)
  std::vector<std::size_t> counts;

  std::size_t width() const { return heads * grid_h * grid_w; }
  std::span<const double> row(std::size_t c) const { return {values.data() + c * width(), width()}; }
  // One head's neurons of class c as a (1, grid_h, grid_w, 1) image.
  Tensor4 head_grid(std::size_t c, std::size_t head) const;
  // Element-wise difference a - b, same layout as head_grid.
  Tensor4 difference(std::size_t a, std::size_t b, std::size_t head) const;
  // Three heads mapped to R, G, B. Throws InputError unless heads == 3.
  Tensor4 rgb(std::size_t c) const;
  double l1(std::size_t a, std::size_t b) const;
  std::vector<double> l1_matrix() const;  // classes x classes
  // Class indices sorted by L1 distance from `reference` (reference first).
  std::vector<std::size_t> order_by_l1(std::size_t reference) const;
};

// Mean over samples and spatial positions of the final representation.
ClassAverages average_class_representation(const Model& model, const Tensor4& images,
                                           const std::vector<int>& labels, std::size_t class_count);

// Minimal CSV: comma-separated, no quoting (fields never contain commas).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
void write_csv(const std::string& path, const CsvTable& table);
CsvTable read_csv(const std::string& path);

CsvTable metrics_table(const std::vector<MetricsRow>& rows);

// Binary P5 (1 channel) or P6 (3 channels). Values are min-max scaled per
// image to [0, 255]; a constant image becomes mid gray (128). The header
// comment records the original range.
void export_image(const Tensor4& image, const std::string& path);
std::vector<unsigned char> scale_to_bytes(std::span<const double> values);

struct Pixmap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<unsigned char> pixels;
};
Pixmap read_pixmap(const std::string& path);

}  // namespace csnn
