#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "csnn/data.hpp"
#include "csnn/error.hpp"
#include "support.hpp"

using namespace csnn;

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

LabeledDataset random_labeled(std::size_t n, std::size_t side, std::uint64_t seed) {
  LabeledDataset d;
  d.images = testing::random_tensor(n, side, side, 3, seed);
  d.class_count = 10;
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<int>(i % 10));
  return d;
}

}  // namespace

TEST_CASE("decode and encode round trip the record bytes") {
  Rng rng(1);
  std::vector<unsigned char> bytes(20 * kCifarRecordBytes);
  for (std::size_t r = 0; r < 20; ++r) testing::synthetic_record(bytes.data() + r * kCifarRecordBytes, static_cast<int>(r % 10), rng);
  const LabeledDataset d = decode_cifar10_records(bytes, Split::train);
  REQUIRE(d.size() == 20);
  CHECK(d.images.height == 32);
  CHECK(d.images.channels == 3);
  CHECK(encode_cifar10_records(d) == bytes);
  for (double v : d.images.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // Channel-planar bytes land in HWC order.
  CHECK(d.images.at(3, 5, 7, 2) == bytes[3 * kCifarRecordBytes + 1 + 2 * 1024 + 5 * 32 + 7] / 255.0);
  CHECK(d.labels[3] == 3);

  std::vector<unsigned char> bad = bytes;
  bad[0] = 10;
  CHECK_THROWS_AS(decode_cifar10_records(bad, Split::train), DataError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_cifar10_records(bad, Split::train), DataError);
}

TEST_CASE("loader splits, sizes and file errors") {
  const auto dir = testing::synthetic_cifar_dir(CSNN_SYNTHETIC_DIR);
  const DatasetSplits s = load_cifar10(dir.string(), {1200, 300, 200});
  CHECK(s.train.size() == 1200);
  CHECK(s.eval.size() == 300);
  CHECK(s.test.size() == 200);
  CHECK(s.train.split == Split::train);
  CHECK(s.test.split == Split::test);

  // Eval is the head of test_batch, test starts at record 5000.
  const auto test_bytes = read_bytes(dir / "test_batch.bin");
  const std::vector<unsigned char> eval_head(test_bytes.begin(), test_bytes.begin() + 300 * kCifarRecordBytes);
  CHECK(encode_cifar10_records(s.eval) == eval_head);
  const auto test_begin = test_bytes.begin() + 5000 * static_cast<long>(kCifarRecordBytes);
  const std::vector<unsigned char> test_head(test_begin, test_begin + 200 * static_cast<long>(kCifarRecordBytes));
  CHECK(encode_cifar10_records(s.test) == test_head);

  // A full batch file re-encodes to its source bytes.
  const DatasetSplits first = load_cifar10(dir.string(), {10000, 1, 1});
  CHECK(encode_cifar10_records(first.train) == read_bytes(dir / "data_batch_1.bin"));

  const auto broken = testing::scratch_dir("broken_cifar");
  CHECK_THROWS_AS(load_cifar10(broken.string()), DataError);
  for (const auto& name : {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                           "data_batch_5.bin", "test_batch.bin"}) {
    std::filesystem::copy_file(dir / name, broken / name);
  }
  CHECK_NOTHROW(load_cifar10(broken.string(), {10, 10, 10}));
  std::filesystem::resize_file(broken / "test_batch.bin", 9999 * kCifarRecordBytes);
  CHECK_THROWS_AS(load_cifar10(broken.string(), {10, 10, 10}), DataError);
}

TEST_CASE("write_cifar10_file produces the exact record bytes") {
  const auto dir = testing::scratch_dir("write_cifar");
  LabeledDataset d;
  d.images = Tensor4(2, 32, 32, 3);
  d.images.at(1, 0, 0, 0) = 1.0;
  d.images.at(1, 31, 31, 2) = 128.0 / 255.0;
  d.labels = {4, 9};
  d.class_count = 10;
  write_cifar10_file((dir / "f.bin").string(), d);
  const auto bytes = read_bytes(dir / "f.bin");
  REQUIRE(bytes.size() == 2 * kCifarRecordBytes);
  CHECK(bytes[0] == 4);
  CHECK(bytes[kCifarRecordBytes] == 9);
  CHECK(bytes[kCifarRecordBytes + 1] == 255);
  CHECK(bytes[2 * kCifarRecordBytes - 1] == 128);
}

TEST_CASE("normalization uses train statistics for every split") {
  DatasetSplits s;
  s.train = random_labeled(50, 6, 1);
  s.eval = random_labeled(20, 6, 2);
  s.test = random_labeled(20, 6, 3);
  for (auto& v : s.train.images.values) v = 3.0 + 2.0 * v;
  for (auto& v : s.eval.images.values) v = -5.0 + 0.5 * v;
  const Tensor4 eval_raw = s.eval.images;
  const NormStats stats = normalize(s);
  const ChannelStats train_after = channel_stats(s.train.images);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::abs(train_after.mean[c]) <= 1e-5);
    CHECK(std::abs(train_after.var[c] - 1.0) <= 1e-3);
  }
  // Eval keeps its offset relative to train: it was not standardized by itself.
  for (std::size_t i = 0; i < eval_raw.values.size(); ++i) {
    const std::size_t c = i % 3;
    CHECK(s.eval.images.values[i] == doctest::Approx((eval_raw.values[i] - stats.mean[c]) / stats.std[c]).epsilon(1e-14));
  }
  CHECK(channel_stats(s.eval.images).mean[0] < -3.0);

  // A second pass over normalized data barely moves it.
  const NormStats again = compute_norm_stats(s.train);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::abs(again.mean[c]) < 1e-5);
    CHECK(std::abs(again.std[c] - 1.0) < 1e-3);
  }

  LabeledDataset flat = random_labeled(4, 3, 4);
  for (auto& v : flat.images.values) v = 0.25;
  const NormStats fs = compute_norm_stats(flat);
  apply_normalization(flat, fs);
  for (double v : flat.images.values) CHECK(v == 0.0);
}

TEST_CASE("augmentation geometry") {
  const Tensor4 img = testing::random_tensor(1, 8, 8, 3, 5);
  CHECK(hflip(hflip(img)).values == img.values);
  CHECK(hflip(img).at(0, 2, 0, 1) == img.at(0, 2, 7, 1));
  CHECK(shift(img, 0, 0).values == img.values);
  CHECK(rotate(img, 0.0).values == img.values);

  const Tensor4 rot = rotate(img, 90.0);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      // A quarter turn maps pixel centers onto pixel centers.
      const double v = rot.at(0, y, x, 0);
      bool found = false;
      for (double u : img.values) found = found || std::abs(u - v) < 1e-9;
      CHECK(found);
    }
  }

  for (int k : {1, 2, 3}) {
    for (auto [dy, dx] : {std::pair{k, 0}, std::pair{0, k}, std::pair{-k, 0}, std::pair{0, -k}}) {
      const Tensor4 back = shift(shift(img, dy, dx), -dy, -dx);
      for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
          // Content pushed off the far edge by the first move is gone.
          const long ly = static_cast<long>(y);
          const long lx = static_cast<long>(x);
          const bool border = (dy > 0 && ly >= 8 - dy) || (dy < 0 && ly < -dy) || (dx > 0 && lx >= 8 - dx) || (dx < 0 && lx < -dx);
          for (std::size_t c = 0; c < 3; ++c) {
            CHECK(back.at(0, y, x, c) == (border ? 0.0 : img.at(0, y, x, c)));
          }
        }
      }
    }
  }
}

TEST_CASE("augment_representation_set") {
  const LabeledDataset d = random_labeled(10, 8, 6);
  const LabeledDataset same = augment_representation_set(d, {}, 1);
  CHECK(same.images.values == d.images.values);
  CHECK(same.labels == d.labels);

  AugmentOptions opts;
  opts.factor = 3;
  const LabeledDataset big = augment_representation_set(d, opts, 9);
  CHECK(big.size() == 30);
  CHECK(std::equal(d.images.values.begin(), d.images.values.end(), big.images.values.begin()));
  for (std::size_t i = 0; i < 30; ++i) CHECK(big.labels[i] == d.labels[i % 10]);
  CHECK(augment_representation_set(d, opts, 9).images.values == big.images.values);
  CHECK(augment_representation_set(d, opts, 10).images.values != big.images.values);
}

TEST_CASE("few-shot folds are balanced, deterministic and distinct") {
  std::vector<int> labels;
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) labels.push_back(static_cast<int>(rng.below(10)));
  for (std::size_t shots : {1, 10, 50}) {
    const auto folds = few_shot_sample(labels, 10, shots, 11, 10);
    REQUIRE(folds.size() == 10);
    std::set<std::vector<std::size_t>> distinct;
    for (const auto& f : folds) {
      CHECK(f.size() == shots * 10);
      std::vector<std::size_t> count(10, 0);
      for (std::size_t i : f) count[static_cast<std::size_t>(labels[i])]++;
      for (std::size_t c : count) CHECK(c == shots);
      CHECK(std::set<std::size_t>(f.begin(), f.end()).size() == f.size());
      distinct.insert(f);
    }
    CHECK(distinct.size() == 10);
    CHECK(few_shot_sample(labels, 10, shots, 11, 10) == folds);
  }
  CHECK_THROWS_AS(few_shot_sample(labels, 10, 500, 1, 1), InputError);
}

TEST_CASE("dataset validation") {
  LabeledDataset d = random_labeled(4, 2, 1);
  CHECK_NOTHROW(validate_dataset(d));
  d.labels[2] = 10;
  CHECK_THROWS(validate_dataset(d));
  d = random_labeled(4, 2, 1);
  d.images.values[5] = std::nan("");
  CHECK_THROWS(validate_dataset(d));
  d = random_labeled(4, 2, 1);
  d.labels.pop_back();
  CHECK_THROWS(validate_dataset(d));
}
