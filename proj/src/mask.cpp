#include "csnn/mask.hpp"

#include <algorithm>

#include "csnn/error.hpp"

namespace csnn {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw InputError(std::string(what) + ": length mismatch");
}

SumVariant variant_for(MaskRule rule) {
  return rule == MaskRule::hebbian_all ? SumVariant::all_sum : SumVariant::lower_sum;
}

// Runs over which a mask row applies: the whole patch for input masks, one run
// per kernel cell for between masks.
std::vector<PatchRun> mask_runs(const MaskBank& bank, std::size_t patch_dim,
                                std::span<const PatchRun> index_map) {
  if (bank.kind == MaskKind::input) {
    require_same_length(bank.length, patch_dim, "input mask");
    return {PatchRun{0, patch_dim}};
  }
  std::size_t covered = 0;
  for (const auto& run : index_map) {
    require_same_length(run.length, bank.length, "between mask");
    covered += run.length;
  }
  require_same_length(covered, patch_dim, "between mask index map");
  return {index_map.begin(), index_map.end()};
}

}  // namespace

double default_gamma(MaskRule rule) { return rule == MaskRule::hebbian_all ? 1.0 : 0.5; }

MaskBank init_masks(MaskKind kind, std::size_t neurons, std::size_t length, Rng& rng) {
  if (neurons == 0 || length == 0) throw InputError("init_masks: dims must be >= 1");
  MaskBank bank;
  bank.kind = kind;
  bank.rule = MaskRule::hebbian_all;
  bank.gamma = default_gamma(bank.rule);
  bank.neurons = neurons;
  bank.length = length;
  bank.values.resize(neurons * length);
  for (double& v : bank.values) v = rng.uniform(-1.0, 1.0);
  return bank;
}

MaskBank init_masks(MaskKind kind, std::size_t neurons, std::size_t length,
                    std::uint64_t seed) {
  Rng rng(seed);
  return init_masks(kind, neurons, length, rng);
}

void resample_masks(MaskBank& bank, Rng& rng) {
  for (double& v : bank.values) v = rng.uniform(-1.0, 1.0);
}

std::vector<double> apply_input_mask(std::span<const double> patch,
                                     std::span<const double> mask) {
  require_same_length(patch.size(), mask.size(), "apply_input_mask");
  std::vector<double> out(patch.size());
  for (std::size_t k = 0; k < patch.size(); ++k) out[k] = patch[k] * mask[k];
  return out;
}

std::vector<double> apply_between_mask(std::span<const double> patch,
                                       std::span<const double> mask,
                                       std::span<const PatchRun> index_map) {
  std::vector<double> out(patch.size(), 0.0);
  std::size_t covered = 0;
  for (const auto& run : index_map) {
    require_same_length(run.length, mask.size(), "apply_between_mask");
    if (run.offset + run.length > patch.size()) {
      throw InputError("apply_between_mask: index map exceeds patch");
    }
    for (std::size_t c = 0; c < run.length; ++c) {
      out[run.offset + c] = patch[run.offset + c] * mask[c];
    }
    covered += run.length;
  }
  require_same_length(covered, patch.size(), "apply_between_mask index map");
  return out;
}

std::vector<double> expand_mask(const MaskBank& bank, std::size_t neuron,
                                std::span<const PatchRun> index_map) {
  const auto m = bank.row(neuron);
  if (bank.kind == MaskKind::input) return {m.begin(), m.end()};
  std::size_t dim = 0;
  for (const auto& run : index_map) dim = std::max(dim, run.offset + run.length);
  std::vector<double> out(dim, 0.0);
  for (const auto& run : index_map) {
    require_same_length(run.length, bank.length, "expand_mask");
    std::copy(m.begin(), m.end(), out.begin() + static_cast<std::ptrdiff_t>(run.offset));
  }
  return out;
}

std::vector<double> masked_distance(std::span<const double> patch, const MaskBank& bank,
                                    const SomMap& map, std::span<const PatchRun> index_map) {
  require_same_length(patch.size(), map.dim, "masked_distance patch");
  if (bank.neurons != map.neurons()) throw InputError("masked_distance: one mask per neuron");
  std::vector<double> y(map.neurons());
  for (std::size_t i = 0; i < map.neurons(); ++i) {
    const auto masked = bank.kind == MaskKind::input
                            ? apply_input_mask(patch, bank.row(i))
                            : apply_between_mask(patch, bank.row(i), index_map);
    const auto w = map.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < masked.size(); ++k) acc += masked[k] * w[k];
    y[i] = acc;
  }
  return y;
}

std::vector<double> conv_distance(std::span<const double> patch, const SomMap& map) {
  require_same_length(patch.size(), map.dim, "conv_distance");
  std::vector<double> y(map.neurons());
  for (std::size_t i = 0; i < map.neurons(); ++i) {
    const auto w = map.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k < patch.size(); ++k) acc += patch[k] * w[k];
    y[i] = acc;
  }
  return y;
}

std::vector<double> hebbian_delta(std::span<const double> p, std::span<const double> yhat) {
  require_same_length(p.size(), yhat.size(), "hebbian_delta");
  std::vector<double> d(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) d[k] = yhat[k] * p[k];
  return d;
}

std::vector<double> oja_delta(std::span<const double> p, std::span<const double> yhat,
                              std::span<const double> m) {
  require_same_length(p.size(), yhat.size(), "oja_delta");
  require_same_length(p.size(), m.size(), "oja_delta");
  std::vector<double> d(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) d[k] = yhat[k] * (p[k] - yhat[k] * m[k]);
  return d;
}

std::vector<double> modified_input(std::span<const double> p,
                                   std::span<const double> masked_outputs,
                                   std::span<const double> masks, double gamma,
                                   SumVariant variant, std::size_t mask_index) {
  const std::size_t len = p.size();
  require_same_length(masked_outputs.size(), masks.size(), "modified_input");
  if (len == 0 || masks.size() % len != 0) throw InputError("modified_input: ragged masks");
  const std::size_t count = masks.size() / len;
  const std::size_t upto = variant == SumVariant::all_sum ? count : std::min(mask_index, count);

  std::vector<double> sum(len, 0.0);
  for (std::size_t k = 0; k < upto; ++k) {
    for (std::size_t e = 0; e < len; ++e) sum[e] += masked_outputs[k * len + e] * masks[k * len + e];
  }
  std::vector<double> out(len);
  for (std::size_t e = 0; e < len; ++e) out[e] = p[e] - gamma * sum[e];
  return out;
}

void update_masks(MaskBank& bank, std::span<const double> patches,
                  std::span<const PatchRun> index_map, std::span<const std::size_t> bmus,
                  const std::vector<bool>& gates, const MaskUpdateOptions& options) {
  const std::size_t count = bmus.size();
  if (gates.size() != count) throw InputError("update_masks: gates not aligned with bmus");
  if (count == 0) return;
  if (patches.size() % count != 0) throw InputError("update_masks: ragged patch buffer");
  const std::size_t patch_dim = patches.size() / count;
  const auto runs = mask_runs(bank, patch_dim, index_map);
  const std::size_t n = bank.neurons;
  const std::size_t len = bank.length;
  if (options.neighborhood && options.table.size() != n * n) {
    throw InputError("update_masks: neighborhood table required");
  }

  const SumVariant variant = variant_for(bank.rule);
  std::vector<double> accum(n * len, 0.0);
  std::vector<double> masked(n * len);
  std::size_t gated = 0;

  for (std::size_t p = 0; p < count; ++p) {
    if (!gates[p]) continue;
    if (bmus[p] >= n) throw InputError("update_masks: BMU out of range");
    ++gated;
    const auto patch = patches.subspan(p * patch_dim, patch_dim);
    for (const auto& run : runs) {
      const auto sub = patch.subspan(run.offset, run.length);
      for (std::size_t k = 0; k < n; ++k) {
        const auto yk = apply_input_mask(sub, bank.row(k));
        std::copy(yk.begin(), yk.end(), masked.begin() + static_cast<std::ptrdiff_t>(k * len));
      }
      const auto delta_for = [&](std::size_t i) {
        const auto yi = std::span<const double>(masked).subspan(i * len, len);
        const auto target = modified_input(sub, masked, bank.values, bank.gamma, variant, i);
        return bank.rule == MaskRule::hebbian_all ? hebbian_delta(target, yi)
                                                  : oja_delta(target, yi, bank.row(i));
      };
      if (options.neighborhood) {
        for (std::size_t i = 0; i < n; ++i) {
          const double h = options.table[bmus[p] * n + i];
          const auto d = delta_for(i);
          for (std::size_t e = 0; e < len; ++e) accum[i * len + e] += h * d[e];
        }
      } else {
        const auto d = delta_for(bmus[p]);
        for (std::size_t e = 0; e < len; ++e) accum[bmus[p] * len + e] += d[e];
      }
    }
  }
  if (gated == 0) return;

  const double scale = bank.learn_rate / static_cast<double>(gated * runs.size());
  for (std::size_t k = 0; k < accum.size(); ++k) bank.values[k] += scale * accum[k];
}

void MaskAccumulator::add(std::span<const double> patch, std::size_t bmu) {
  require_same_length(patch.size(), length_ * cells_, "MaskAccumulator::add");
  if (bmu >= neurons()) throw InputError("MaskAccumulator::add: BMU out of range");
  double* q = squares_.data() + bmu * length_;
  for (std::size_t cell = 0; cell < cells_; ++cell) {
    const double* sub = patch.data() + cell * length_;
    for (std::size_t e = 0; e < length_; ++e) q[e] += sub[e] * sub[e];
  }
  ++gated_;
}

void MaskAccumulator::merge(const MaskAccumulator& other) {
  if (other.length_ != length_ || other.cells_ != cells_ ||
      other.squares_.size() != squares_.size()) {
    throw InputError("MaskAccumulator::merge: shape mismatch");
  }
  for (std::size_t k = 0; k < squares_.size(); ++k) squares_[k] += other.squares_[k];
  gated_ += other.gated_;
}

void apply_mask_update(MaskBank& bank, const MaskAccumulator& acc,
                       const MaskUpdateOptions& options) {
  const std::size_t n = bank.neurons;
  const std::size_t len = bank.length;
  if (acc.neurons() != n || acc.length() != len) {
    throw InputError("apply_mask_update: accumulator does not match bank");
  }
  if (options.neighborhood && options.table.size() != n * n) {
    throw InputError("apply_mask_update: neighborhood table required");
  }
  if (acc.gated() == 0) return;

  // Per-neuron squared-input sums, spread over the map for the neighborhood variant.
  std::vector<double> q(n * len, 0.0);
  std::vector<bool> active(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const auto qj = acc.squares(j);
    if (std::none_of(qj.begin(), qj.end(), [](double v) { return v != 0.0; })) continue;
    if (!options.neighborhood) {
      std::copy(qj.begin(), qj.end(), q.begin() + static_cast<std::ptrdiff_t>(j * len));
      active[j] = true;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double h = options.table[j * n + i];
      for (std::size_t e = 0; e < len; ++e) q[i * len + e] += h * qj[e];
      active[i] = true;
    }
  }

  // Coefficients are computed from the masks as they were before this update.
  std::vector<double> total(len, 0.0);
  if (bank.rule == MaskRule::hebbian_all) {
    for (std::size_t k = 0; k < n; ++k) {
      const auto m = bank.row(k);
      for (std::size_t e = 0; e < len; ++e) total[e] += m[e] * m[e];
    }
  }

  const double scale = bank.learn_rate / static_cast<double>(acc.gated() * acc.cells());
  std::vector<double> lower(len, 0.0);
  std::vector<double> next = bank.values;
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = bank.row(i);
    if (active[i]) {
      for (std::size_t e = 0; e < len; ++e) {
        const double coef = bank.rule == MaskRule::hebbian_all
                                ? 1.0 - bank.gamma * total[e]
                                : 1.0 - bank.gamma * lower[e] - m[e] * m[e];
        next[i * len + e] = m[e] + scale * (m[e] * coef * q[i * len + e]);
      }
    }
    if (bank.rule == MaskRule::oja_lower) {
      for (std::size_t e = 0; e < len; ++e) lower[e] += m[e] * m[e];
    }
  }
  bank.values = std::move(next);
}

}  // namespace csnn
