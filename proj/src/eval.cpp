#include "csnn/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "csnn/data.hpp"
#include "csnn/error.hpp"
#include "csnn/rng.hpp"

namespace csnn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;

ConstMap as_matrix(const Representations& reps) {
  return ConstMap(reps.values.data(), static_cast<Eigen::Index>(reps.rows),
                  static_cast<Eigen::Index>(reps.dim));
}

void check_reps(const Representations& reps, std::size_t class_count, const char* what) {
  if (reps.values.size() != reps.rows * reps.dim) throw InputError(std::string(what) + ": malformed representations");
  if (reps.labels.size() != reps.rows) throw InputError(std::string(what) + ": one label per row required");
  for (int l : reps.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
      throw InputError(std::string(what) + ": label " + std::to_string(l) + " out of range");
    }
  }
  if (!all_finite(reps.values)) throw NumericError(std::string(what) + ": non-finite representation values");
}

Representations take_rows(const Representations& reps, const std::vector<std::size_t>& rows) {
  Representations out;
  out.rows = rows.size();
  out.dim = reps.dim;
  out.values.resize(out.rows * out.dim);
  out.labels.reserve(out.rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = reps.row(rows[i]);
    std::copy(src.begin(), src.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * out.dim));
    out.labels.push_back(reps.labels[rows[i]]);
  }
  return out;
}

// Row-wise argmax of X W^T + b; ties resolve to the lowest class.
std::size_t count_correct(const LinearProbe& probe, const Representations& reps) {
  if (reps.rows == 0) return 0;
  const Eigen::Map<const RowMatrix> w(probe.weights.data(), static_cast<Eigen::Index>(probe.classes),
                                      static_cast<Eigen::Index>(probe.dim));
  const Eigen::Map<const Eigen::RowVectorXd> b(probe.bias.data(), static_cast<Eigen::Index>(probe.classes));
  RowMatrix scores = as_matrix(reps) * w.transpose();
  scores.rowwise() += b;
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(r, c) > scores(r, best)) best = c;
    }
    if (static_cast<int>(best) == reps.labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return correct;
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

std::size_t LinearProbe::predict(std::span<const double> x) const {
  if (x.size() != dim) throw InputError("predict: dimension mismatch");
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    double s = bias[c];
    const double* w = weights.data() + c * dim;
    for (std::size_t k = 0; k < dim; ++k) s += w[k] * x[k];
    if (c == 0 || s > best_score) {
      best = c;
      best_score = s;
    }
  }
  return best;
}

double accuracy(const LinearProbe& probe, const Representations& reps) {
  if (reps.dim != probe.dim) throw InputError("accuracy: dimension mismatch");
  if (reps.labels.size() != reps.rows) throw InputError("accuracy: one label per row required");
  if (reps.rows == 0) return 0.0;
  return static_cast<double>(count_correct(probe, reps)) / static_cast<double>(reps.rows);
}

ProbeResult train_linear_probe(const Representations& train, const Representations& eval,
                               std::size_t class_count, const ProbeOptions& options) {
  if (class_count < 2) throw InputError("train_linear_probe: need at least two classes");
  check_reps(train, class_count, "train_linear_probe(train)");
  check_reps(eval, class_count, "train_linear_probe(eval)");
  if (train.rows == 0 || eval.rows == 0) throw InputError("train_linear_probe: empty representations");
  if (train.dim != eval.dim) throw InputError("train_linear_probe: train/eval dimension mismatch");
  if (options.batch_size == 0) throw InputError("train_linear_probe: batch size must be >= 1");

  const auto k = static_cast<Eigen::Index>(class_count);
  const auto d = static_cast<Eigen::Index>(train.dim);
  LinearProbe probe{class_count, train.dim, std::vector<double>(class_count * train.dim, 0.0),
                    std::vector<double>(class_count, 0.0)};
  Eigen::Map<RowMatrix> w(probe.weights.data(), k, d);
  Eigen::Map<Eigen::RowVectorXd> b(probe.bias.data(), k);
  RowMatrix mw = RowMatrix::Zero(k, d);
  RowMatrix vw = RowMatrix::Zero(k, d);
  Eigen::RowVectorXd mb = Eigen::RowVectorXd::Zero(k);
  Eigen::RowVectorXd vb = Eigen::RowVectorXd::Zero(k);

  Pocket<LinearProbe> pocket;
  pocket.offer(accuracy(probe, eval), 0, probe);

  const ConstMap x = as_matrix(train);
  const std::size_t per_epoch = (train.rows + options.batch_size - 1) / options.batch_size;
  std::size_t epochs = options.epochs;
  if (per_epoch * epochs < options.min_steps) epochs = (options.min_steps + per_epoch - 1) / per_epoch;

  Rng rng(options.seed);
  std::vector<std::size_t> order(train.rows);
  std::size_t step = 0;
  double beta1_t = 1.0;
  double beta2_t = 1.0;
  RowMatrix xb;
  RowMatrix g;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    for (std::size_t first = 0; first < train.rows; first += options.batch_size) {
      const std::size_t n = std::min(options.batch_size, train.rows - first);
      xb.resize(static_cast<Eigen::Index>(n), d);
      for (std::size_t i = 0; i < n; ++i) xb.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(order[first + i]));

      g = xb * w.transpose();
      g.rowwise() += b;
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double top = g.row(r).maxCoeff();
        g.row(r) = (g.row(r).array() - top).exp();
        g.row(r) /= g.row(r).sum();
        g(r, train.labels[order[first + static_cast<std::size_t>(r)]]) -= 1.0;
      }
      g /= static_cast<double>(n);
      const RowMatrix gw = g.transpose() * xb;
      const Eigen::RowVectorXd gb = g.colwise().sum();

      ++step;
      beta1_t *= options.beta1;
      beta2_t *= options.beta2;
      const double lr = options.learn_rate * std::sqrt(1.0 - beta2_t) / (1.0 - beta1_t);
      mw = options.beta1 * mw + (1.0 - options.beta1) * gw;
      vw = options.beta2 * vw + (1.0 - options.beta2) * gw.cwiseProduct(gw);
      mb = options.beta1 * mb + (1.0 - options.beta1) * gb;
      vb = options.beta2 * vb + (1.0 - options.beta2) * gb.cwiseProduct(gb);
      w.array() -= lr * mw.array() / (vw.array().sqrt() + options.eps);
      b.array() -= lr * mb.array() / (vb.array().sqrt() + options.eps);

      pocket.offer(accuracy(probe, eval), step, probe);
    }
  }
  if (!all_finite(probe.weights) || !all_finite(probe.bias)) {
    throw NumericError("train_linear_probe: parameters diverged");
  }
  return {pocket.best(), pocket.score(), pocket.step(), step};
}

FewShotResult few_shot_eval(const Representations& train, const Representations& eval,
                            const Representations& test, std::size_t class_count, std::size_t shots,
                            std::size_t folds, std::uint64_t seed, const ProbeOptions& options) {
  if (folds == 0) throw InputError("few_shot_eval: folds must be >= 1");
  check_reps(test, class_count, "few_shot_eval(test)");
  FewShotResult result;
  result.shots = shots;
  const auto samples = few_shot_sample(train.labels, class_count, shots, seed, folds);
  for (std::size_t f = 0; f < folds; ++f) {
    ProbeOptions fold_options = options;
    fold_options.seed = options.seed + f;
    const ProbeResult probe = train_linear_probe(take_rows(train, samples[f]), eval, class_count, fold_options);
    result.fold_accuracies.push_back(accuracy(probe.probe, test));
  }
  const auto& acc = result.fold_accuracies;
  result.mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
  result.min = *std::min_element(acc.begin(), acc.end());
  result.max = *std::max_element(acc.begin(), acc.end());
  return result;
}

std::vector<double> neuron_utilization(const Model& model, const Tensor4& images, bool per_head) {
  if (images.batch == 0) throw InputError("neuron_utilization: empty batch");
  std::vector<double> result;
  Tensor4 x = images;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const CsnnLayer& layer = model.layers[l];
    const std::size_t n = layer.spec.neurons_per_head();
    std::vector<char> used(layer.out_channels(), 0);
    if (per_head) {
      const Tensor4 d = layer_forward(layer, x);
      for (std::size_t pos = 0; pos < d.batch * d.height * d.width; ++pos) {
        const double* row = d.values.data() + pos * d.channels;
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
          used[h * n + bmu_index({row + h * n, n})] = 1;
        }
      }
    } else {
      for (const auto& image : layer_winners(layer, x)) {
        for (const Winner& win : image) used[win.head * n + win.neuron] = 1;
      }
    }
    result.push_back(static_cast<double>(std::count(used.begin(), used.end(), 1)) /
                     static_cast<double>(used.size()));
    if (l + 1 < model.layers.size()) x = block_forward(model, l, x, NormMode::running);
  }
  return result;
}

Tensor4 bmu_image(const Model& model, const Tensor4& image, std::size_t layer) {
  if (layer >= model.layers.size()) throw InputError("bmu_image: layer index out of range");
  if (image.batch != 1) throw InputError("bmu_image: expects a single image");
  const CsnnLayer& l = model.layers[layer];
  const Tensor4 input = forward(model, image, layer);
  const auto winners = layer_winners(l, input).front();
  const auto& g = l.spec.geometry;
  const ConvLayout layout = conv_layout(input.height, input.width, g);
  const std::size_t channels = std::min<std::size_t>(3, l.in_channels);
  Tensor4 out(1, layout.rows * g.kernel_h, layout.cols * g.kernel_w, channels);
  for (std::size_t m = 0; m < layout.rows; ++m) {
    for (std::size_t n = 0; n < layout.cols; ++n) {
      const Winner& win = winners[m * layout.cols + n];
      const auto w = l.heads[win.head].som.row(win.neuron);
      for (std::size_t i = 0; i < g.kernel_h; ++i) {
        for (std::size_t j = 0; j < g.kernel_w; ++j) {
          for (std::size_t c = 0; c < channels; ++c) {
            out.at(0, m * g.kernel_h + i, n * g.kernel_w + j, c) = w[(i * g.kernel_w + j) * l.in_channels + c];
          }
        }
      }
    }
  }
  return out;
}

Tensor4 ClassAverages::head_grid(std::size_t c, std::size_t head) const {
  if (c >= classes || head >= heads) throw InputError("head_grid: index out of range");
  Tensor4 out(1, grid_h, grid_w, 1);
  const auto r = row(c);
  const std::size_t n = grid_h * grid_w;
  std::copy(r.begin() + static_cast<std::ptrdiff_t>(head * n),
            r.begin() + static_cast<std::ptrdiff_t>((head + 1) * n), out.values.begin());
  return out;
}

Tensor4 ClassAverages::difference(std::size_t a, std::size_t b, std::size_t head) const {
  Tensor4 out = head_grid(a, head);
  const Tensor4 other = head_grid(b, head);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= other.values[i];
  return out;
}

Tensor4 ClassAverages::rgb(std::size_t c) const {
  if (heads != 3) throw InputError("rgb composite needs exactly three heads");
  Tensor4 out(1, grid_h, grid_w, 3);
  for (std::size_t h = 0; h < 3; ++h) {
    const Tensor4 g = head_grid(c, h);
    for (std::size_t p = 0; p < g.values.size(); ++p) out.values[p * 3 + h] = g.values[p];
  }
  return out;
}

double ClassAverages::l1(std::size_t a, std::size_t b) const {
  const auto ra = row(a);
  const auto rb = row(b);
  double s = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) s += std::abs(ra[i] - rb[i]);
  return s;
}

std::vector<double> ClassAverages::l1_matrix() const {
  std::vector<double> m(classes * classes);
  for (std::size_t a = 0; a < classes; ++a) {
    for (std::size_t b = 0; b < classes; ++b) m[a * classes + b] = l1(a, b);
  }
  return m;
}

std::vector<std::size_t> ClassAverages::order_by_l1(std::size_t reference) const {
  if (reference >= classes) throw InputError("order_by_l1: class out of range");
  std::vector<std::size_t> order(classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (a == reference || b == reference) return a == reference && b != reference;
    return l1(reference, a) < l1(reference, b);
  });
  return order;
}

ClassAverages average_class_representation(const Model& model, const Tensor4& images,
                                           const std::vector<int>& labels, std::size_t class_count) {
  if (labels.size() != images.batch) throw InputError("average_class_representation: one label per image required");
  const Shape3 shape = representation_shape(model.config);
  const LayerSpec& last = model.layers.back().spec;
  ClassAverages avg;
  avg.classes = class_count;
  avg.heads = last.heads;
  avg.grid_h = last.grid_h;
  avg.grid_w = last.grid_w;
  avg.values.assign(class_count * avg.width(), 0.0);
  avg.counts.assign(class_count, 0);

  const Representations reps = extract_representations(model, images, labels);
  const std::size_t spatial = shape.height * shape.width;
  for (std::size_t r = 0; r < reps.rows; ++r) {
    const auto c = static_cast<std::size_t>(labels[r]);
    if (labels[r] < 0 || c >= class_count) throw InputError("average_class_representation: label out of range");
    const auto v = reps.row(r);
    double* dst = avg.values.data() + c * avg.width();
    for (std::size_t ch = 0; ch < shape.channels; ++ch) {
      double s = 0.0;
      for (std::size_t p = 0; p < spatial; ++p) s += v[p * shape.channels + ch];
      dst[ch] += s / static_cast<double>(spatial);
    }
    ++avg.counts[c];
  }
  for (std::size_t c = 0; c < class_count; ++c) {
    if (avg.counts[c] == 0) continue;
    for (std::size_t i = 0; i < avg.width(); ++i) avg.values[c * avg.width() + i] /= static_cast<double>(avg.counts[c]);
  }
  return avg;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (fields[i].find_first_of(",\n") != std::string::npos) throw InputError("CSV field contains a separator");
      out << (i ? "," : "") << fields[i];
    }
    out << '\n';
  };
  line(table.header);
  for (const auto& row : table.rows) line(row);
  if (!out) throw DataError("write failed for '" + path + "'");
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  CsvTable table;
  std::string text;
  bool first = true;
  while (std::getline(in, text)) {
    std::vector<std::string> fields;
    std::stringstream ss(text);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!text.empty() && text.back() == ',') fields.emplace_back();
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != table.header.size()) throw DataError("ragged CSV row in '" + path + "'");
      table.rows.push_back(std::move(fields));
    }
  }
  return table;
}

CsvTable metrics_table(const std::vector<MetricsRow>& rows) {
  CsvTable t;
  t.header = {"step", "layer", "mean_abs_dw", "bmu_entropy", "utilization"};
  for (const auto& r : rows) {
    t.rows.push_back({std::to_string(r.step), std::to_string(r.layer), format_double(r.mean_abs_dw),
                      format_double(r.bmu_entropy), format_double(r.utilization)});
  }
  return t;
}

std::vector<unsigned char> scale_to_bytes(std::span<const double> values) {
  std::vector<unsigned char> out(values.size(), 128);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!(*hi > *lo)) return out;
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<unsigned char>(std::lround((values[i] - *lo) / span * 255.0));
  }
  return out;
}

void export_image(const Tensor4& image, const std::string& path) {
  if (image.batch != 1 || (image.channels != 1 && image.channels != 3)) {
    throw InputError("export_image: expects one image with 1 or 3 channels");
  }
  if (!all_finite(image.values)) throw NumericError("export_image: non-finite pixels");
  const auto bytes = scale_to_bytes(image.values);
  double lo = 0.0;
  double hi = 0.0;
  if (!image.values.empty()) {
    lo = *std::min_element(image.values.begin(), image.values.end());
    hi = *std::max_element(image.values.begin(), image.values.end());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << (image.channels == 1 ? "P5" : "P6") << '\n'
      << "# min-max scaled per image: " << format_double(lo) << " -> 0, " << format_double(hi)
      << " -> 255 (constant images map to 128)\n"
      << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

Pixmap read_pixmap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  const std::string magic = token();
  Pixmap p;
  if (magic == "P5") {
    p.channels = 1;
  } else if (magic == "P6") {
    p.channels = 3;
  } else {
    throw DataError("'" + path + "' is not a binary PGM/PPM");
  }
  p.width = std::stoul(token());
  p.height = std::stoul(token());
  if (token() != "255") throw DataError("unsupported maxval in '" + path + "'");
  p.pixels.resize(p.width * p.height * p.channels);
  in.read(reinterpret_cast<char*>(p.pixels.data()), static_cast<std::streamsize>(p.pixels.size()));
  if (!in) throw DataError("truncated pixmap '" + path + "'");
  return p;
}

}  // namespace csnn
