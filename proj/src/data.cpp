#include "csnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "csnn/error.hpp"
#include "csnn/rng.hpp"

namespace csnn {

namespace {

constexpr std::size_t kPixels = kCifarSide * kCifarSide;

std::vector<unsigned char> read_records(const std::filesystem::path& path, std::size_t first,
                                        std::size_t count) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw DataError("missing CIFAR-10 file '" + path.string() + "'");
  if (size != kCifarRecordsPerFile * kCifarRecordBytes) {
    throw DataError("'" + path.string() + "' has " + std::to_string(size) + " bytes, expected " +
                    std::to_string(kCifarRecordsPerFile) + " records of " +
                    std::to_string(kCifarRecordBytes));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes(count * kCifarRecordBytes);
  in.seekg(static_cast<std::streamoff>(first * kCifarRecordBytes));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw DataError("short read from '" + path.string() + "'");
  return bytes;
}

LabeledDataset concat(std::vector<LabeledDataset> parts, Split split) {
  LabeledDataset out;
  out.split = split;
  out.class_count = 10;
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  out.images = Tensor4(total, kCifarSide, kCifarSide, kCifarChannels);
  out.labels.reserve(total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.images.values.begin(), p.images.values.end(),
              out.images.values.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.images.values.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

double sample_bilinear(const Tensor4& img, double y, double x, std::size_t c) {
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const double wy = y - fy;
  const double wx = x - fx;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const double py = fy + dy;
      const double px = fx + dx;
      if (py < 0 || px < 0 || py >= static_cast<double>(img.height) ||
          px >= static_cast<double>(img.width)) {
        continue;
      }
      const double w = (dy ? wy : 1.0 - wy) * (dx ? wx : 1.0 - wx);
      acc += w * img.at(0, static_cast<std::size_t>(py), static_cast<std::size_t>(px), c);
    }
  }
  return acc;
}

void require_single(const Tensor4& image, const char* what) {
  if (image.batch != 1) throw InputError(std::string(what) + " expects a single image");
}

}  // namespace

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
  LabeledDataset out;
  out.class_count = class_count;
  out.split = split;
  out.stats = stats;
  out.images = Tensor4(indices.size(), images.height, images.width, images.channels);
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw InputError("subset index out of range");
    const auto src = images.image(indices[i]);
    std::copy(src.begin(), src.end(), out.images.image(i).begin());
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

LabeledDataset LabeledDataset::head(std::size_t count) const {
  LabeledDataset out;
  out.class_count = class_count;
  out.split = split;
  out.stats = stats;
  count = std::min(count, size());
  out.images = images.slice(0, count);
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

void validate_dataset(const LabeledDataset& data) {
  if (data.labels.size() != data.images.batch) throw InputError("one label per image required");
  for (int l : data.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= data.class_count) {
      throw InputError("label " + std::to_string(l) + " outside [0, " +
                       std::to_string(data.class_count) + ")");
    }
  }
  if (!all_finite(data.images.values)) throw InputError("dataset contains non-finite pixels");
}

LabeledDataset decode_cifar10_records(const std::vector<unsigned char>& bytes, Split split) {
  if (bytes.size() % kCifarRecordBytes != 0) throw DataError("partial CIFAR-10 record");
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  LabeledDataset out;
  out.split = split;
  out.class_count = 10;
  out.images = Tensor4(n, kCifarSide, kCifarSide, kCifarChannels);
  out.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= 10) throw DataError("CIFAR-10 label byte " + std::to_string(rec[0]) + " out of range");
    out.labels[r] = rec[0];
    double* dst = out.images.image(r).data();
    for (std::size_t c = 0; c < kCifarChannels; ++c) {
      for (std::size_t p = 0; p < kPixels; ++p) {
        dst[p * kCifarChannels + c] = static_cast<double>(rec[1 + c * kPixels + p]) / 255.0;
      }
    }
  }
  return out;
}

std::vector<unsigned char> encode_cifar10_records(const LabeledDataset& data) {
  const auto& img = data.images;
  if (img.height != kCifarSide || img.width != kCifarSide || img.channels != kCifarChannels) {
    throw InputError("encode_cifar10_records: images must be 32x32x3");
  }
  std::vector<unsigned char> bytes(data.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < data.size(); ++r) {
    unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (data.labels[r] < 0 || data.labels[r] > 255) throw InputError("label does not fit a byte");
    rec[0] = static_cast<unsigned char>(data.labels[r]);
    const double* src = img.image(r).data();
    for (std::size_t c = 0; c < kCifarChannels; ++c) {
      for (std::size_t p = 0; p < kPixels; ++p) {
        const double v = std::clamp(std::round(src[p * kCifarChannels + c] * 255.0), 0.0, 255.0);
        rec[1 + c * kPixels + p] = static_cast<unsigned char>(v);
      }
    }
  }
  return bytes;
}

void write_cifar10_file(const std::string& path, const LabeledDataset& data) {
  const auto bytes = encode_cifar10_records(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

DatasetSplits load_cifar10(const std::string& dir, const CifarOptions& options) {
  const std::filesystem::path root(dir);
  if (!std::filesystem::is_directory(root)) throw DataError("CIFAR-10 directory '" + dir + "' not found");
  DatasetSplits splits;

  std::vector<LabeledDataset> parts;
  std::size_t remaining = std::min<std::size_t>(options.train_limit, 5 * kCifarRecordsPerFile);
  for (int b = 1; b <= 5 && remaining > 0; ++b) {
    const std::size_t take = std::min(remaining, kCifarRecordsPerFile);
    parts.push_back(decode_cifar10_records(
        read_records(root / ("data_batch_" + std::to_string(b) + ".bin"), 0, take), Split::train));
    remaining -= take;
  }
  splits.train = concat(std::move(parts), Split::train);

  constexpr std::size_t kHalf = kCifarRecordsPerFile / 2;
  const auto test_file = root / "test_batch.bin";
  splits.eval = decode_cifar10_records(read_records(test_file, 0, std::min(options.eval_limit, kHalf)),
                                       Split::eval);
  splits.test = decode_cifar10_records(
      read_records(test_file, kHalf, std::min(options.test_limit, kHalf)), Split::test);
  return splits;
}

NormStats compute_norm_stats(const LabeledDataset& data) {
  if (data.images.size() == 0) throw InputError("compute_norm_stats: empty dataset");
  const ChannelStats cs = channel_stats(data.images);
  NormStats stats;
  stats.mean = cs.mean;
  stats.std.resize(cs.var.size());
  for (std::size_t c = 0; c < cs.var.size(); ++c) {
    stats.std[c] = cs.var[c] > 1e-12 ? std::sqrt(cs.var[c]) : 1.0;
  }
  return stats;
}

void apply_normalization(LabeledDataset& data, const NormStats& stats) {
  const std::size_t c = data.images.channels;
  if (stats.mean.size() != c || stats.std.size() != c) {
    throw InputError("apply_normalization: statistics do not match channel count");
  }
  auto& v = data.images.values;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t k = i % c;
    v[i] = (v[i] - stats.mean[k]) / stats.std[k];
  }
  data.stats = stats;
}

NormStats normalize(DatasetSplits& splits) {
  const NormStats stats = compute_norm_stats(splits.train);
  apply_normalization(splits.train, stats);
  if (splits.eval.size() > 0) apply_normalization(splits.eval, stats);
  if (splits.test.size() > 0) apply_normalization(splits.test, stats);
  return stats;
}

Tensor4 hflip(const Tensor4& image) {
  require_single(image, "hflip");
  Tensor4 out(1, image.height, image.width, image.channels);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(0, y, x, c) = image.at(0, y, image.width - 1 - x, c);
      }
    }
  }
  return out;
}

Tensor4 shift(const Tensor4& image, int dy, int dx) {
  require_single(image, "shift");
  Tensor4 out(1, image.height, image.width, image.channels);
  const auto h = static_cast<int>(image.height);
  const auto w = static_cast<int>(image.width);
  for (int y = 0; y < h; ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= h) continue;
    for (int x = 0; x < w; ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= w) continue;
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            image.at(0, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
      }
    }
  }
  return out;
}

Tensor4 rotate(const Tensor4& image, double degrees) {
  require_single(image, "rotate");
  Tensor4 out(1, image.height, image.width, image.channels);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad);
  const double sn = std::sin(rad);
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double ry = static_cast<double>(y) - cy;
      const double rx = static_cast<double>(x) - cx;
      // Inverse rotation maps each output pixel back to its source location.
      const double sy = cs * ry - sn * rx + cy;
      const double sx = sn * ry + cs * rx + cx;
      for (std::size_t c = 0; c < image.channels; ++c) out.at(0, y, x, c) = sample_bilinear(image, sy, sx, c);
    }
  }
  return out;
}

LabeledDataset augment_representation_set(const LabeledDataset& data, const AugmentOptions& options,
                                          std::uint64_t seed) {
  if (options.factor == 0) throw InputError("augment factor must be >= 1");
  enum class Op { flip, shift, rotate };
  std::vector<Op> ops;
  if (options.hflip) ops.push_back(Op::flip);
  if (options.max_shift > 0) ops.push_back(Op::shift);
  if (options.max_rotation > 0.0) ops.push_back(Op::rotate);
  if (options.factor > 1 && ops.empty()) throw InputError("augmentation requested with no operations");

  const std::size_t n = data.size();
  LabeledDataset out;
  out.class_count = data.class_count;
  out.split = data.split;
  out.stats = data.stats;
  out.images = Tensor4(n * options.factor, data.images.height, data.images.width, data.images.channels);
  out.labels.reserve(n * options.factor);
  std::copy(data.images.values.begin(), data.images.values.end(), out.images.values.begin());
  out.labels = data.labels;

  Rng rng(seed);
  for (std::size_t copy = 1; copy < options.factor; ++copy) {
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor4 src = data.images.slice(i, 1);
      Tensor4 aug;
      switch (ops[rng.below(ops.size())]) {
        case Op::flip:
          aug = hflip(src);
          break;
        case Op::shift: {
          const int amount = rng.below(2) == 0 ? -options.max_shift : options.max_shift;
          aug = rng.below(2) == 0 ? shift(src, amount, 0) : shift(src, 0, amount);
          break;
        }
        case Op::rotate:
          aug = rotate(src, rng.uniform(-options.max_rotation, options.max_rotation));
          break;
      }
      std::copy(aug.values.begin(), aug.values.end(), out.images.image(copy * n + i).begin());
      out.labels.push_back(data.labels[i]);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> few_shot_sample(const std::vector<int>& labels,
                                                      std::size_t class_count, std::size_t shots,
                                                      std::uint64_t seed, std::size_t folds) {
  if (shots == 0) throw InputError("few_shot_sample: shots must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
      throw InputError("few_shot_sample: label out of range");
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (std::size_t c = 0; c < class_count; ++c) {
    if (by_class[c].size() < shots) {
      throw InputError("few_shot_sample: class " + std::to_string(c) + " has only " +
                       std::to_string(by_class[c].size()) + " examples");
    }
  }
  std::vector<std::vector<std::size_t>> result;
  for (std::size_t f = 0; f < folds; ++f) {
    Rng rng(seed + f);
    std::vector<std::size_t> fold;
    fold.reserve(shots * class_count);
    for (const auto& members : by_class) {
      auto pool = members;
      rng.shuffle(pool.begin(), pool.end());
      fold.insert(fold.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(shots));
    }
    result.push_back(std::move(fold));
  }
  return result;
}

}  // namespace csnn
