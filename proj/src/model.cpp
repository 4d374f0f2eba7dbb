#include "csnn/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "csnn/error.hpp"

namespace csnn {

namespace detail {

std::vector<unsigned char> read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(std::string(what) + ": cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(std::string(what) + ": cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(std::string(what) + ": write failed for '" + path + "'");
}

}  // namespace detail

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'S', 'N', 'N', 'C', 'K', 'P', 'T'};
constexpr char kRepsMagic[8] = {'C', 'S', 'N', 'N', 'R', 'E', 'P', 'S'};

void validate_config(const ModelConfig& c) {
  if (c.layers.empty()) throw ConfigError("model has no layers");
  if (c.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (c.input.height == 0 || c.input.width == 0 || c.input.channels == 0) {
    throw ConfigError("input shape must be non-empty");
  }
  if (!(c.bn_eps > 0.0)) throw ConfigError("batch_norm eps must be > 0");
  if (!(c.bn_momentum >= 0.0 && c.bn_momentum < 1.0)) {
    throw ConfigError("batch_norm momentum must lie in [0, 1)");
  }
  for (std::size_t l = 0; l < c.layers.size(); ++l) {
    const auto& iv = c.layers[l].interval;
    if (iv.start > iv.end) throw ConfigError("layer " + std::to_string(l) + ": interval ends before it starts");
    if (l > 0 && iv.start < c.layers[l - 1].interval.start) {
      throw ConfigError("layer " + std::to_string(l) + " starts learning before the layer below it");
    }
  }
  if (c.probe.batch_size == 0) throw ConfigError("probe batch_size must be >= 1");
  if (c.probe.augment_factor == 0) throw ConfigError("probe augment_factor must be >= 1");
}

ChannelStats identity_stats(std::size_t channels) {
  return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
}

void write_checksum(detail::ByteWriter& w) {
  const auto& bytes = w.bytes();
  w.u64(fnv1a64(bytes.data(), bytes.size()));
}

std::span<const unsigned char> verified_body(const std::vector<unsigned char>& bytes,
                                             const char (&magic)[8], const char* what) {
  if (bytes.size() < sizeof(magic) + 12 + 8) throw CheckpointError(std::string(what) + ": truncated file");
  if (std::memcmp(bytes.data(), magic, sizeof(magic)) != 0) {
    throw CheckpointError(std::string(what) + ": bad magic header");
  }
  const std::size_t body = bytes.size() - 8;
  detail::ByteReader trailer(std::span<const unsigned char>(bytes).subspan(body), what);
  if (trailer.u64() != fnv1a64(bytes.data(), body)) {
    throw CheckpointError(std::string(what) + ": checksum mismatch (corrupt or truncated file)");
  }
  return std::span<const unsigned char>(bytes).first(body);
}

void check_version(detail::ByteReader& r) {
  const auto major = r.u32();
  const auto minor = r.u32();
  r.u32();
  if (major != kCheckpointMajor || minor > kCheckpointMinor) {
    r.fail("unsupported format version " + std::to_string(major) + "." + std::to_string(minor));
  }
}

}  // namespace

std::vector<Shape3> layer_shapes(const ModelConfig& config) {
  std::vector<Shape3> shapes{{config.input.height, config.input.width, config.input.channels}};
  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    const auto& spec = config.layers[l];
    const Shape3 in = shapes.back();
    ConvLayout layout;
    try {
      layout = conv_layout(in.height, in.width, spec.geometry);
    } catch (const GeometryError& e) {
      throw ConfigError("layer " + std::to_string(l) + ": " + e.what());
    }
    Shape3 out{layout.rows, layout.cols, spec.out_channels()};
    if (spec.max_pool) {
      if (out.height < 2 || out.width < 2) {
        throw ConfigError("layer " + std::to_string(l) + ": " + std::to_string(out.height) + "x" +
                          std::to_string(out.width) + " output is too small to pool");
      }
      out.height /= 2;
      out.width /= 2;
    }
    shapes.push_back(out);
  }
  return shapes;
}

Shape3 representation_shape(const ModelConfig& config) { return layer_shapes(config).back(); }

Model build_model(const ModelConfig& config) {
  validate_config(config);
  const auto shapes = layer_shapes(config);
  Model model;
  model.config = config;
  model.rng = Rng(config.seed);
  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    model.layers.push_back(make_layer(config.layers[l], shapes[l].channels, model.rng));
    RunningStats stats;
    stats.momentum = config.bn_momentum;
    model.bn.push_back(stats);
  }
  return model;
}

Tensor4 block_forward(const Model& model, std::size_t layer, const Tensor4& input, NormMode mode) {
  const auto& spec = model.layers.at(layer).spec;
  Tensor4 y = layer_forward(model.layers[layer], input);
  if (spec.batch_norm) {
    const RunningStats& running = model.bn[layer];
    const ChannelStats stats = mode == NormMode::fresh ? channel_stats(y)
                               : running.empty()       ? identity_stats(y.channels)
                                                       : running.stats;
    y = batch_norm(y, stats, model.config.bn_eps);
  }
  if (spec.max_pool) y = max_pool(y);
  return y;
}

Tensor4 forward(const Model& model, const Tensor4& images, std::size_t upto) {
  Tensor4 x = images;
  for (std::size_t l = 0; l < std::min(upto, model.layers.size()); ++l) {
    x = block_forward(model, l, x, NormMode::running);
  }
  return x;
}

void train_step(Model& model, const Tensor4& batch, const MetricsSink& sink) {
  const std::size_t t = model.step;
  std::size_t deepest = model.layers.size();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (model.layers[l].spec.interval.contains(t)) deepest = l;
  }
  if (deepest == model.layers.size()) {
    ++model.step;
    return;
  }

  Tensor4 x = batch;
  for (std::size_t l = 0; l <= deepest; ++l) {
    CsnnLayer& layer = model.layers[l];
    const bool learning = layer.spec.interval.contains(t);
    // The deepest learning layer keeps its pre-update response for batch norm.
    Tensor4 y;
    if (learning) {
      const StepStats stats = layer_train_step(layer, x, t, model.config.ablation, model.rng,
                                               l == deepest ? &y : nullptr);
      if (sink) sink({t, l, stats.mean_abs_dw, stats.bmu_entropy(), stats.utilization()});
    }
    if (l == deepest && !(learning && layer.spec.batch_norm)) break;

    if (l != deepest) y = layer_forward(layer, x);
    if (layer.spec.batch_norm) {
      ChannelStats stats;
      if (learning) {
        stats = channel_stats(y);
        model.bn[l].update(stats);
      } else {
        stats = model.bn[l].empty() ? identity_stats(y.channels) : model.bn[l].stats;
      }
      y = batch_norm(y, stats, model.config.bn_eps);
    }
    if (l == deepest) break;
    if (layer.spec.max_pool) y = max_pool(y);
    x = std::move(y);
  }
  ++model.step;
}

void train(Model& model, const Tensor4& images, std::size_t until, const MetricsSink& sink) {
  if (images.batch == 0) throw InputError("train: empty image set");
  const std::size_t b = model.config.batch_size;
  Tensor4 batch(b, images.height, images.width, images.channels);
  while (model.step < until) {
    const std::size_t first = (model.step * b) % images.batch;
    for (std::size_t j = 0; j < b; ++j) {
      const auto src = images.image((first + j) % images.batch);
      std::copy(src.begin(), src.end(), batch.image(j).begin());
    }
    train_step(model, batch, sink);
  }
}

Representations extract_representations(const Model& model, const Tensor4& images,
                                        std::span<const int> labels) {
  if (!labels.empty() && labels.size() != images.batch) {
    throw InputError("extract_representations: one label per image required");
  }
  constexpr std::size_t kChunk = 64;
  Representations reps;
  reps.rows = images.batch;
  reps.dim = representation_shape(model.config).size();
  reps.values.resize(reps.rows * reps.dim);
  reps.labels.assign(labels.begin(), labels.end());
  for (std::size_t first = 0; first < images.batch; first += kChunk) {
    const std::size_t count = std::min(kChunk, images.batch - first);
    const Tensor4 out = forward(model, images.slice(first, count), model.layers.size());
    if (out.image_size() != reps.dim) throw InputError("extract_representations: input shape mismatch");
    std::copy(out.values.begin(), out.values.end(),
              reps.values.begin() + static_cast<std::ptrdiff_t>(first * reps.dim));
  }
  return reps;
}

std::vector<unsigned char> serialize_checkpoint(const Model& model) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointMajor);
  w.u32(kCheckpointMinor);
  w.u32(kCheckpointPatch);
  w.u64(config_hash(model.config));
  w.str(config_to_json(model.config));
  w.u64(model.step);
  w.str(model.rng.state());
  w.u64(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    w.u64(layer.heads.size());
    for (const auto& head : layer.heads) {
      const std::uint64_t wdims[] = {head.som.neurons(), head.som.dim};
      w.array(wdims, head.som.weights);
      const std::uint64_t mdims[] = {head.masks.neurons, head.masks.length};
      w.array(mdims, head.masks.values);
    }
    const auto& bn = model.bn[l];
    w.u64(bn.updates);
    const std::uint64_t cdims[] = {bn.stats.mean.size()};
    w.array(cdims, bn.stats.mean);
    w.array(cdims, bn.stats.var);
  }
  write_checksum(w);
  return std::move(w.bytes());
}

Model deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  const char* what = "checkpoint";
  detail::ByteReader r(verified_body(bytes, kCheckpointMagic, what), what);
  char magic[8];
  r.raw(magic, sizeof(magic));
  check_version(r);
  const auto hash = r.u64();
  ModelConfig config;
  try {
    config = config_from_json(r.str());
  } catch (const ConfigError& e) {
    r.fail(std::string("embedded config: ") + e.what());
  }
  if (config_hash(config) != hash) r.fail("config hash mismatch");

  Model model = build_model(config);
  model.step = r.u64();
  model.rng.restore(r.str());
  if (r.u64() != model.layers.size()) r.fail("layer count mismatch");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    if (r.u64() != layer.heads.size()) r.fail("head count mismatch");
    for (auto& head : layer.heads) {
      const std::uint64_t wdims[] = {head.som.neurons(), head.som.dim};
      head.som.weights = r.array(wdims);
      const std::uint64_t mdims[] = {head.masks.neurons, head.masks.length};
      head.masks.values = r.array(mdims);
    }
    auto& bn = model.bn[l];
    bn.updates = r.u64();
    std::vector<std::uint64_t> dims;
    bn.stats.mean = r.array(dims);
    if (dims.size() != 1) r.fail("batch-norm statistics must be a vector");
    const std::uint64_t cdims[] = {dims[0]};
    bn.stats.var = r.array(cdims);
    if (bn.updates > 0 && bn.stats.mean.size() != layer.out_channels()) {
      r.fail("batch-norm statistics do not match layer width");
    }
  }
  if (!r.done()) r.fail("trailing bytes");
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) {
  detail::write_file(path, serialize_checkpoint(model), "checkpoint");
}

Model load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(detail::read_file(path, "checkpoint"));
}

std::uint64_t checkpoint_hash(const Model& model) {
  const auto bytes = serialize_checkpoint(model);
  return fnv1a64(bytes.data(), bytes.size());
}

void save_representations(const Representations& reps, const std::string& path) {
  detail::ByteWriter w;
  w.raw(kRepsMagic, sizeof(kRepsMagic));
  w.u32(kCheckpointMajor);
  w.u32(kCheckpointMinor);
  w.u32(kCheckpointPatch);
  const std::uint64_t vdims[] = {reps.rows, reps.dim};
  w.array(vdims, reps.values);
  std::vector<double> labels(reps.labels.begin(), reps.labels.end());
  const std::uint64_t ldims[] = {labels.size()};
  w.array(ldims, labels);
  write_checksum(w);
  detail::write_file(path, w.bytes(), "representations");
}

Representations load_representations(const std::string& path) {
  const char* what = "representations";
  const auto bytes = detail::read_file(path, what);
  detail::ByteReader r(verified_body(bytes, kRepsMagic, what), what);
  char magic[8];
  r.raw(magic, sizeof(magic));
  check_version(r);
  std::vector<std::uint64_t> dims;
  Representations reps;
  reps.values = r.array(dims);
  if (dims.size() != 2) r.fail("values must be a matrix");
  reps.rows = dims[0];
  reps.dim = dims[1];
  const auto labels = r.array(dims);
  if (dims.size() != 1 || (!labels.empty() && labels.size() != reps.rows)) r.fail("bad label vector");
  reps.labels.reserve(labels.size());
  for (double v : labels) reps.labels.push_back(static_cast<int>(v));
  if (!r.done()) r.fail("trailing bytes");
  return reps;
}

}  // namespace csnn
