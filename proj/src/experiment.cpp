#include "csnn/experiment.hpp"

#include <algorithm>
#include <cstdlib>

#include "csnn/error.hpp"

namespace csnn {

std::string resolve_data_dir(const std::string& explicit_dir, const ModelConfig& config) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (!config.data.path.empty()) return config.data.path;
  if (const char* env = std::getenv(kDataDirEnv)) return env;
  return {};
}

DatasetSplits load_experiment_data(const ModelConfig& config, const std::string& dir) {
  if (dir.empty()) {
    throw DataError(std::string("no dataset directory given (use --dataset or set ") + kDataDirEnv + ")");
  }
  CifarOptions options;
  options.train_limit = std::max(config.data.train_images, config.data.probe_train_images);
  options.eval_limit = config.data.eval_images;
  options.test_limit = config.data.test_images;
  DatasetSplits splits = load_cifar10(dir, options);
  if (splits.train.images.height != config.input.height || splits.train.images.width != config.input.width ||
      splits.train.images.channels != config.input.channels) {
    throw ConfigError("config input shape does not match the dataset images");
  }
  normalize(splits);
  return splits;
}

void train_model(Model& model, const LabeledDataset& train, std::vector<MetricsRow>* metrics) {
  const LabeledDataset subset = train.head(model.config.data.train_images);
  if (subset.size() == 0) throw DataError("no training images available");
  MetricsSink sink;
  if (metrics) sink = [metrics](const MetricsRow& row) { metrics->push_back(row); };
  csnn::train(model, subset.images, sink);
}

RepresentationSplits extract_splits(const Model& model, const DatasetSplits& data) {
  const ModelConfig& c = model.config;
  LabeledDataset probe_train = data.train.head(c.data.probe_train_images);
  if (c.probe.augment_factor > 1) {
    AugmentOptions aug;
    aug.factor = c.probe.augment_factor;
    probe_train = augment_representation_set(probe_train, aug, c.seed + 1);
  }
  RepresentationSplits reps;
  reps.train = extract_representations(model, probe_train.images, probe_train.labels);
  reps.eval = extract_representations(model, data.eval.images, data.eval.labels);
  reps.test = extract_representations(model, data.test.images, data.test.labels);
  return reps;
}

ProbeOptions probe_options(const ModelConfig& config) {
  ProbeOptions o;
  o.epochs = config.probe.epochs;
  o.batch_size = config.probe.batch_size;
  o.learn_rate = config.probe.learn_rate;
  o.seed = config.seed;
  return o;
}

ProbeReport run_probe(const RepresentationSplits& reps, const ModelConfig& config, std::size_t class_count) {
  const ProbeResult r = train_linear_probe(reps.train, reps.eval, class_count, probe_options(config));
  return {r.eval_accuracy, accuracy(r.probe, reps.test), r.best_step, r.steps};
}

}  // namespace csnn
