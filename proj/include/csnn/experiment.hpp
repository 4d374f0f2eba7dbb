#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csnn/config.hpp"
#include "csnn/data.hpp"
#include "csnn/eval.hpp"
#include "csnn/model.hpp"

namespace csnn {

// Environment variable naming the default CIFAR-10 directory.
inline constexpr const char* kDataDirEnv = "CSNN_DATA_DIR";

// Explicit path, else config.data.path, else $CSNN_DATA_DIR. Empty if none is set.
std::string resolve_data_dir(const std::string& explicit_dir, const ModelConfig& config);

// Loads the slices the config asks for and normalizes them with train statistics.
DatasetSplits load_experiment_data(const ModelConfig& config, const std::string& dir);

// Layer-wise training over the first config.data.train_images training images.
// Metrics rows of the steps run are appended to `metrics` when given.
void train_model(Model& model, const LabeledDataset& train, std::vector<MetricsRow>* metrics = nullptr);

struct RepresentationSplits {
  Representations train;
  Representations eval;
  Representations test;
};

// Probe train set: first probe_train_images training images, enlarged by
// augmentation when augment_factor > 1. Eval and test sets as configured.
RepresentationSplits extract_splits(const Model& model, const DatasetSplits& data);

ProbeOptions probe_options(const ModelConfig& config);

// Few-shot sets are tiny, so their probes run at least this many updates.
inline constexpr std::size_t kFewShotMinSteps = 300;

struct ProbeReport {
  double eval_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
};

ProbeReport run_probe(const RepresentationSplits& reps, const ModelConfig& config, std::size_t class_count);

}  // namespace csnn
