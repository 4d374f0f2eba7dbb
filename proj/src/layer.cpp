#include "csnn/layer.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "csnn/error.hpp"
#include "csnn/parallel.hpp"

namespace csnn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void validate(const LayerSpec& spec, std::size_t in_channels) {
  if (spec.grid_h == 0 || spec.grid_w == 0 || spec.heads == 0) {
    throw ConfigError("layer grid and head count must be >= 1");
  }
  if (in_channels == 0) throw ConfigError("layer input has no channels");
  if (!(spec.sigma > 0.0)) throw ConfigError("layer sigma must be > 0");
  if (!(spec.som_rate >= 0.0) || !(spec.mask_rate >= 0.0)) {
    throw ConfigError("learning rates must be >= 0");
  }
  if (!std::isfinite(spec.gamma)) throw ConfigError("gamma must be finite");
  if (spec.interval.start > spec.interval.end) throw ConfigError("training interval ends before it starts");
  const auto& g = spec.geometry;
  if (g.kernel_h == 0 || g.kernel_w == 0 || g.stride_h == 0 || g.stride_w == 0) {
    throw ConfigError("kernel and stride must be >= 1");
  }
}

std::size_t mask_length(const LayerSpec& spec, std::size_t in_channels, std::size_t patch_dim) {
  return spec.mask_kind == MaskKind::input ? patch_dim : in_channels;
}

std::size_t mask_cells(const CsnnLayer& layer) {
  return layer.spec.mask_kind == MaskKind::input ? 1 : layer.index_map.size();
}

struct ImageResponse {
  PatchSet patches;
  RowMatrix distances;  // patches x out_channels
};

ImageResponse respond(const CsnnLayer& layer, const Tensor4& input, std::size_t image,
                      const std::vector<std::vector<double>>& filters) {
  ImageResponse r;
  r.patches = extract_patches(input, image, layer.spec.geometry);
  const auto count = static_cast<Eigen::Index>(r.patches.count());
  const auto dim = static_cast<Eigen::Index>(layer.patch_dim);
  Eigen::Map<const RowMatrix> p(r.patches.patches.data(), count, dim);
  r.distances.resize(count, static_cast<Eigen::Index>(layer.out_channels()));
  Eigen::Index offset = 0;
  for (std::size_t h = 0; h < layer.heads.size(); ++h) {
    const auto n = static_cast<Eigen::Index>(layer.heads[h].som.neurons());
    Eigen::Map<const RowMatrix> e(filters[h].data(), n, dim);
    r.distances.middleCols(offset, n).noalias() = p * e.transpose();
    offset += n;
  }
  return r;
}

std::vector<std::vector<double>> all_filters(const CsnnLayer& layer) {
  std::vector<std::vector<double>> filters;
  filters.reserve(layer.heads.size());
  for (std::size_t h = 0; h < layer.heads.size(); ++h) filters.push_back(effective_filters(layer, h));
  return filters;
}

void check_input(const CsnnLayer& layer, const Tensor4& input) {
  if (input.channels != layer.in_channels) {
    throw InputError("layer expects " + std::to_string(layer.in_channels) +
                     " input channels, got " + std::to_string(input.channels));
  }
}

Winner winner_of(const RowMatrix& distances, Eigen::Index row, std::size_t per_head) {
  const auto values = std::span<const double>(distances.row(row).data(),
                                              static_cast<std::size_t>(distances.cols()));
  const std::size_t best = bmu_index(values);
  return {best / per_head, best % per_head};
}

double mean_abs_change(std::span<const double> before, std::span<const double> after) {
  double sum = 0.0;
  for (std::size_t k = 0; k < before.size(); ++k) sum += std::abs(after[k] - before[k]);
  return sum;
}

}  // namespace

CsnnLayer make_layer(const LayerSpec& spec, std::size_t in_channels, Rng& rng) {
  validate(spec, in_channels);
  CsnnLayer layer;
  layer.spec = spec;
  layer.in_channels = in_channels;
  layer.patch_dim = spec.geometry.kernel_h * spec.geometry.kernel_w * in_channels;
  layer.index_map = patch_index_map(spec.geometry.kernel_h, spec.geometry.kernel_w, in_channels);
  const std::size_t len = mask_length(spec, in_channels, layer.patch_dim);
  for (std::size_t h = 0; h < spec.heads; ++h) {
    Head head;
    head.som = init_som(spec.grid_h, spec.grid_w, layer.patch_dim, rng);
    head.masks = init_masks(spec.mask_kind, head.som.neurons(), len, rng);
    head.masks.rule = spec.rule;
    head.masks.gamma = spec.gamma;
    head.masks.learn_rate = spec.mask_rate;
    if (spec.mask_mode == MaskMode::none) {
      std::fill(head.masks.values.begin(), head.masks.values.end(), 1.0);
    }
    head.table = neighborhood_table(head.som, spec.sigma);
    layer.heads.push_back(std::move(head));
  }
  return layer;
}

std::vector<double> effective_filters(const CsnnLayer& layer, std::size_t head) {
  const Head& hd = layer.heads.at(head);
  std::vector<double> filters = hd.som.weights;
  if (layer.spec.mask_mode == MaskMode::none) return filters;
  const std::size_t dim = layer.patch_dim;
  for (std::size_t i = 0; i < hd.som.neurons(); ++i) {
    const auto m = hd.masks.row(i);
    double* f = filters.data() + i * dim;
    if (hd.masks.kind == MaskKind::input) {
      for (std::size_t k = 0; k < dim; ++k) f[k] *= m[k];
    } else {
      for (const auto& run : layer.index_map) {
        for (std::size_t c = 0; c < run.length; ++c) f[run.offset + c] *= m[c];
      }
    }
  }
  return filters;
}

Tensor4 layer_forward(const CsnnLayer& layer, const Tensor4& input) {
  check_input(layer, input);
  const ConvLayout layout = conv_layout(input.height, input.width, layer.spec.geometry);
  Tensor4 out(input.batch, layout.rows, layout.cols, layer.out_channels());
  const auto filters = all_filters(layer);
  parallel_for(input.batch, [&](std::size_t b) {
    const ImageResponse r = respond(layer, input, b, filters);
    std::copy(r.distances.data(), r.distances.data() + r.distances.size(),
              out.image(b).begin());
  });
  return out;
}

Winner best_bmu_across_heads(std::span<const std::span<const double>> distances) {
  if (distances.empty()) throw InputError("best_bmu_across_heads: no heads");
  Winner best{0, bmu_index(distances[0])};
  double best_value = distances[0][best.neuron];
  for (std::size_t h = 1; h < distances.size(); ++h) {
    const std::size_t i = bmu_index(distances[h]);
    if (distances[h][i] > best_value) {
      best = {h, i};
      best_value = distances[h][i];
    }
  }
  return best;
}

std::vector<std::vector<Winner>> layer_winners(const CsnnLayer& layer, const Tensor4& input) {
  check_input(layer, input);
  const auto filters = all_filters(layer);
  const std::size_t per_head = layer.spec.neurons_per_head();
  std::vector<std::vector<Winner>> winners(input.batch);
  parallel_for(input.batch, [&](std::size_t b) {
    const ImageResponse r = respond(layer, input, b, filters);
    winners[b].reserve(static_cast<std::size_t>(r.distances.rows()));
    for (Eigen::Index row = 0; row < r.distances.rows(); ++row) {
      winners[b].push_back(winner_of(r.distances, row, per_head));
    }
  });
  return winners;
}

double StepStats::utilization() const {
  std::size_t used = 0;
  std::size_t total = 0;
  for (const auto& head : histogram) {
    for (std::size_t c : head) used += c > 0 ? 1 : 0;
    total += head.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(used) / static_cast<double>(total);
}

double StepStats::bmu_entropy() const {
  double total = 0.0;
  for (const auto& head : histogram) {
    for (std::size_t c : head) total += static_cast<double>(c);
  }
  if (total == 0.0) return 0.0;
  double entropy = 0.0;
  for (const auto& head : histogram) {
    for (std::size_t c : head) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / total;
      entropy -= p * std::log(p);
    }
  }
  return entropy;
}

StepStats layer_train_step(CsnnLayer& layer, const Tensor4& input, std::size_t step,
                           const LayerAblation& ablation, Rng& rng, Tensor4* response) {
  StepStats stats;
  if (!layer.spec.interval.contains(step)) return stats;
  check_input(layer, input);
  if (!all_finite(input.values)) throw NumericError("non-finite layer input at step " + std::to_string(step));
  stats.trained = true;

  if (layer.spec.mask_mode == MaskMode::noise) {
    for (auto& head : layer.heads) resample_masks(head.masks, rng);
  }

  const auto filters = all_filters(layer);
  const std::size_t per_head = layer.spec.neurons_per_head();
  std::vector<ImageResponse> responses(input.batch);
  parallel_for(input.batch, [&](std::size_t b) { responses[b] = respond(layer, input, b, filters); });
  if (response) {
    const ConvLayout layout = conv_layout(input.height, input.width, layer.spec.geometry);
    *response = Tensor4(input.batch, layout.rows, layout.cols, layer.out_channels());
    for (std::size_t b = 0; b < input.batch; ++b) {
      const RowMatrix& d = responses[b].distances;
      std::copy(d.data(), d.data() + d.size(), response->image(b).begin());
    }
  }

  const std::size_t head_count = layer.heads.size();
  std::vector<SomAccumulator> som_acc;
  std::vector<MaskAccumulator> mask_acc;
  for (const auto& head : layer.heads) {
    som_acc.emplace_back(head.som.neurons(), layer.patch_dim);
    mask_acc.emplace_back(head.masks.neurons, head.masks.length, mask_cells(layer));
  }
  stats.histogram.assign(head_count, std::vector<std::size_t>(per_head, 0));

  // Accumulate in image order so results do not depend on the worker count.
  for (const auto& r : responses) {
    for (Eigen::Index row = 0; row < r.distances.rows(); ++row) {
      const auto patch = r.patches.patch(static_cast<std::size_t>(row));
      const Winner w = winner_of(r.distances, row, per_head);
      ++stats.histogram[w.head][w.neuron];
      if (!ablation.update_all_heads) {
        som_acc[w.head].add(patch, w.neuron);
        mask_acc[w.head].add(patch, w.neuron);
        continue;
      }
      for (std::size_t h = 0; h < head_count; ++h) {
        const auto own = std::span<const double>(r.distances.row(row).data() + h * per_head, per_head);
        const std::size_t bmu = bmu_index(own);
        som_acc[h].add(patch, bmu);
        mask_acc[h].add(patch, bmu);
      }
    }
  }

  double dw = 0.0;
  double dm = 0.0;
  std::size_t weight_count = 0;
  std::size_t mask_count = 0;
  for (std::size_t h = 0; h < head_count; ++h) {
    Head& head = layer.heads[h];
    const std::vector<double> before_w = head.som.weights;
    const std::vector<double> before_m = head.masks.values;
    apply_som_update(head.som, som_acc[h], head.table, layer.spec.som_rate);
    if (layer.spec.mask_mode == MaskMode::learned) {
      apply_mask_update(head.masks, mask_acc[h],
                        MaskUpdateOptions{ablation.neighborhood_masks, head.table});
    }
    if (!all_finite(head.som.weights) || !all_finite(head.masks.values)) {
      throw NumericError("non-finite weights after step " + std::to_string(step));
    }
    dw += mean_abs_change(before_w, head.som.weights);
    dm += mean_abs_change(before_m, head.masks.values);
    weight_count += before_w.size();
    mask_count += before_m.size();
  }
  stats.mean_abs_dw = dw / static_cast<double>(weight_count);
  stats.mean_abs_dm = dm / static_cast<double>(mask_count);
  return stats;
}

}  // namespace csnn
