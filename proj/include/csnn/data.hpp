#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "csnn/tensor.hpp"

namespace csnn {

enum class Split { train, eval, test };

struct NormStats {
  std::vector<double> mean;  // per channel
  std::vector<double> std;   // per channel; 1.0 for degenerate channels
};

struct LabeledDataset {
  Tensor4 images;
  std::vector<int> labels;
  std::size_t class_count = 0;
  Split split = Split::train;
  NormStats stats;  // statistics applied by normalize(), empty before

  std::size_t size() const { return labels.size(); }
  // Copies the listed images (and labels) into a new dataset.
  LabeledDataset subset(const std::vector<std::size_t>& indices) const;
  LabeledDataset head(std::size_t count) const;
};

// Labels in [0, class_count), images finite, one label per image.
void validate_dataset(const LabeledDataset& data);

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset eval;
  LabeledDataset test;
};

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarSide * kCifarSide * kCifarChannels;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

struct CifarOptions {
  std::size_t train_limit = 50000;  // keep the first N training records
  std::size_t eval_limit = 5000;
  std::size_t test_limit = 5000;
};

// data_batch_1..5.bin give the training split; test_batch.bin is split into its
// first 5000 records (eval) and last 5000 (test). Pixels are mapped to [0, 1].
DatasetSplits load_cifar10(const std::string& dir, const CifarOptions& options = {});

// Decodes a buffer of CIFAR records (label byte + channel-planar RGB bytes).
LabeledDataset decode_cifar10_records(const std::vector<unsigned char>& bytes, Split split);

// Inverse of decode for images whose values are k / 255.
std::vector<unsigned char> encode_cifar10_records(const LabeledDataset& data);
void write_cifar10_file(const std::string& path, const LabeledDataset& data);

// Per-channel statistics over every pixel of `data`.
NormStats compute_norm_stats(const LabeledDataset& data);
void apply_normalization(LabeledDataset& data, const NormStats& stats);

// Statistics from the train split, applied to all three splits.
NormStats normalize(DatasetSplits& splits);

Tensor4 hflip(const Tensor4& image);
// Moves content by (dy, dx); vacated pixels become 0.
Tensor4 shift(const Tensor4& image, int dy, int dx);
// Bilinear rotation about the image center; samples outside become 0.
Tensor4 rotate(const Tensor4& image, double degrees);

struct AugmentOptions {
  bool hflip = true;
  int max_shift = 2;             // shifts of +-max_shift px along one axis
  double max_rotation = 15.0;    // rotations of up to +-max_rotation degrees
  std::size_t factor = 1;        // output holds factor copies of every image
};

// Original images followed by factor - 1 augmented copies, each image getting
// one randomly chosen operation. Only meant for building probe training sets.
LabeledDataset augment_representation_set(const LabeledDataset& data, const AugmentOptions& options,
                                          std::uint64_t seed);

// `folds` index lists, each holding exactly `shots` images of every class.
// Fold f draws from Rng(seed + f). Throws InputError when a class is too small.
std::vector<std::vector<std::size_t>> few_shot_sample(const std::vector<int>& labels,
                                                      std::size_t class_count, std::size_t shots,
                                                      std::uint64_t seed, std::size_t folds);

}  // namespace csnn
