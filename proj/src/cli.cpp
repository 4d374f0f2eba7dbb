#include "csnn/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "csnn/error.hpp"
#include "csnn/experiment.hpp"
#include "csnn/parallel.hpp"

namespace csnn::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config = "desk_d_csnn";
  std::string ckpt;
  std::string dataset;
  std::string out = ".";
  std::string reps;
  std::string variant;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
  std::vector<std::size_t> shots{1, 10, 50};
  std::size_t folds = 10;
  std::optional<std::size_t> augment;
  std::size_t images = 4;
  std::size_t batch = 32;
};

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string fmt_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

ModelConfig config_from(const Options& o) {
  ModelConfig c = resolve_config(o.config);
  if (!o.variant.empty()) apply_variant(c, o.variant);
  if (o.seed) c.seed = *o.seed;
  if (o.augment) c.probe.augment_factor = *o.augment;
  return c;
}

// Checkpoint models carry their own config; only probe-side settings may change.
Model model_from_checkpoint(const Options& o) {
  if (o.ckpt.empty()) throw InputError("--ckpt is required");
  Model m = load_checkpoint(o.ckpt);
  if (o.augment) m.config.probe.augment_factor = *o.augment;
  return m;
}

void write_manifest(const Options& o, const std::string& command, const ModelConfig& c,
                    const std::vector<std::string>& outputs) {
  nlohmann::json j = {
      {"command", command},
      {"tool_version", kVersion},
      {"checkpoint_format",
       std::to_string(kCheckpointMajor) + "." + std::to_string(kCheckpointMinor) + "." +
           std::to_string(kCheckpointPatch)},
      {"config_name", c.name},
      {"config_hash", hex(config_hash(c))},
      {"seed", c.seed},
      {"variant", o.variant},
      {"compiler", __VERSION__},
      {"outputs", outputs},
  };
  std::ofstream out(fs::path(o.out) / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in '" + o.out + "'");
  out << j.dump(2) << '\n';
}

std::string out_path(const Options& o, const std::string& name) { return (fs::path(o.out) / name).string(); }

void prepare_out(const Options& o) {
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw DataError("cannot create output directory '" + o.out + "': " + ec.message());
}

std::vector<std::string> train_outputs(const Options& o, Model& model, const DatasetSplits& data,
                                       std::ostream& out) {
  std::vector<MetricsRow> metrics;
  train_model(model, data.train, &metrics);
  save_checkpoint(model, out_path(o, "checkpoint.bin"));
  const std::string metrics_file = out_path(o, "metrics.csv");
  CsvTable table = metrics_table(metrics);
  // A resumed run extends the series written by earlier runs.
  if (!o.ckpt.empty() && fs::exists(metrics_file)) {
    CsvTable previous = read_csv(metrics_file);
    if (previous.header == table.header) {
      std::vector<std::vector<std::string>> kept;
      for (auto& row : previous.rows) {
        if (metrics.empty() || std::stoull(row[0]) < metrics.front().step) {
          kept.push_back(std::move(row));
        }
      }
      kept.insert(kept.end(), table.rows.begin(), table.rows.end());
      table.rows = std::move(kept);
    }
  }
  write_csv(metrics_file, table);
  out << "trained to step " << model.step << ", checkpoint hash " << hex(checkpoint_hash(model)) << '\n';
  return {"checkpoint.bin", "metrics.csv"};
}

void write_probe_csv(const Options& o, const ModelConfig& c, const ProbeReport& r) {
  CsvTable t;
  t.header = {"config", "variant", "config_hash", "eval_accuracy", "test_accuracy", "best_step", "steps"};
  t.rows.push_back({c.name, o.variant.empty() ? "D" : o.variant, hex(config_hash(c)), fmt_double(r.eval_accuracy),
                    fmt_double(r.test_accuracy), std::to_string(r.best_step), std::to_string(r.steps)});
  write_csv(out_path(o, "probe.csv"), t);
}

RepresentationSplits reps_for(const Options& o, const Model& model) {
  if (!o.reps.empty()) {
    const fs::path dir(o.reps);
    return {load_representations((dir / "reps_train.bin").string()),
            load_representations((dir / "reps_eval.bin").string()),
            load_representations((dir / "reps_test.bin").string())};
  }
  const DatasetSplits data = load_experiment_data(model.config, resolve_data_dir(o.dataset, model.config));
  return extract_splits(model, data);
}

int cmd_train(const Options& o, std::ostream& out) {
  Model model = o.ckpt.empty() ? build_model(config_from(o)) : model_from_checkpoint(o);
  const DatasetSplits data = load_experiment_data(model.config, resolve_data_dir(o.dataset, model.config));
  prepare_out(o);
  write_manifest(o, "train", model.config, train_outputs(o, model, data, out));
  return 0;
}

int cmd_extract(const Options& o, std::ostream& out) {
  const Model model = model_from_checkpoint(o);
  const DatasetSplits data = load_experiment_data(model.config, resolve_data_dir(o.dataset, model.config));
  const RepresentationSplits reps = extract_splits(model, data);
  prepare_out(o);
  save_representations(reps.train, out_path(o, "reps_train.bin"));
  save_representations(reps.eval, out_path(o, "reps_eval.bin"));
  save_representations(reps.test, out_path(o, "reps_test.bin"));
  write_manifest(o, "extract", model.config, {"reps_train.bin", "reps_eval.bin", "reps_test.bin"});
  out << "extracted " << reps.train.rows << "/" << reps.eval.rows << "/" << reps.test.rows
      << " representations of dim " << reps.train.dim << '\n';
  return 0;
}

int cmd_probe(const Options& o, std::ostream& out) {
  const Model model = model_from_checkpoint(o);
  const RepresentationSplits reps = reps_for(o, model);
  const ProbeReport r = run_probe(reps, model.config, 10);
  prepare_out(o);
  write_probe_csv(o, model.config, r);
  write_manifest(o, "probe", model.config, {"probe.csv"});
  out << "eval accuracy " << r.eval_accuracy << ", test accuracy " << r.test_accuracy << '\n';
  return 0;
}

int cmd_fewshot(const Options& o, std::ostream& out) {
  const Model model = model_from_checkpoint(o);
  const RepresentationSplits reps = reps_for(o, model);
  prepare_out(o);
  CsvTable summary;
  summary.header = {"shots", "folds", "mean", "min", "max"};
  CsvTable folds;
  folds.header = {"shots", "fold", "test_accuracy"};
  ProbeOptions options = probe_options(model.config);
  options.min_steps = kFewShotMinSteps;
  for (std::size_t shots : o.shots) {
    const FewShotResult r = few_shot_eval(reps.train, reps.eval, reps.test, 10, shots, o.folds, model.config.seed, options);
    summary.rows.push_back({std::to_string(shots), std::to_string(o.folds), fmt_double(r.mean), fmt_double(r.min),
                            fmt_double(r.max)});
    for (std::size_t f = 0; f < r.fold_accuracies.size(); ++f) {
      folds.rows.push_back({std::to_string(shots), std::to_string(f), fmt_double(r.fold_accuracies[f])});
    }
    out << shots << "-shot: mean " << r.mean << " [" << r.min << ", " << r.max << "]\n";
  }
  write_csv(out_path(o, "fewshot.csv"), summary);
  write_csv(out_path(o, "fewshot_folds.csv"), folds);
  write_manifest(o, "fewshot", model.config, {"fewshot.csv", "fewshot_folds.csv"});
  return 0;
}

int cmd_inspect(const Options& o, std::ostream& out) {
  const Model model = model_from_checkpoint(o);
  const DatasetSplits data = load_experiment_data(model.config, resolve_data_dir(o.dataset, model.config));
  prepare_out(o);
  std::vector<std::string> outputs;
  auto save = [&](const Tensor4& image, const std::string& name) {
    export_image(image, out_path(o, name));
    outputs.push_back(name);
  };
  const std::size_t images = std::min(o.images, data.test.size());
  for (std::size_t i = 0; i < images; ++i) {
    const Tensor4 image = data.test.images.slice(i, 1);
    save(image, "input_" + std::to_string(i) + ".ppm");
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const Tensor4 bmu = bmu_image(model, image, l);
      save(bmu, "bmu_layer" + std::to_string(l + 1) + "_image" + std::to_string(i) + (bmu.channels == 3 ? ".ppm" : ".pgm"));
    }
  }

  const ClassAverages avg = average_class_representation(model, data.test.images, data.test.labels, 10);
  constexpr std::size_t kReference = 9;  // truck
  for (std::size_t c = 0; c < avg.classes; ++c) {
    for (std::size_t h = 0; h < avg.heads; ++h) {
      const std::string suffix = "class" + std::to_string(c) + "_head" + std::to_string(h) + ".pgm";
      save(avg.head_grid(c, h), "average_" + suffix);
      if (c != kReference) save(avg.difference(kReference, c, h), "difference_" + suffix);
    }
    if (avg.heads == 3) save(avg.rgb(c), "average_class" + std::to_string(c) + "_rgb.ppm");
  }
  CsvTable l1;
  l1.header.push_back("class");
  for (std::size_t c = 0; c < avg.classes; ++c) l1.header.push_back("l1_to_" + std::to_string(c));
  const auto m = avg.l1_matrix();
  for (std::size_t a = 0; a < avg.classes; ++a) {
    std::vector<std::string> row{std::to_string(a)};
    for (std::size_t b = 0; b < avg.classes; ++b) row.push_back(fmt_double(m[a * avg.classes + b]));
    l1.rows.push_back(std::move(row));
  }
  write_csv(out_path(o, "class_l1.csv"), l1);
  CsvTable order;
  order.header = {"rank", "class", "l1_to_reference"};
  const auto ranked = avg.order_by_l1(kReference);
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    order.rows.push_back({std::to_string(r), std::to_string(ranked[r]), fmt_double(avg.l1(kReference, ranked[r]))});
  }
  write_csv(out_path(o, "class_order.csv"), order);
  outputs.push_back("class_l1.csv");
  outputs.push_back("class_order.csv");
  write_manifest(o, "inspect", model.config, outputs);
  out << "wrote " << outputs.size() << " files to " << o.out << '\n';
  return 0;
}

int cmd_utilization(const Options& o, std::ostream& out) {
  const Model model = model_from_checkpoint(o);
  const DatasetSplits data = load_experiment_data(model.config, resolve_data_dir(o.dataset, model.config));
  if (o.batch == 0 || o.batch > data.test.size()) throw InputError("--batch must be in [1, test images]");
  const Tensor4 batch = data.test.images.slice(0, o.batch);
  const auto global = neuron_utilization(model, batch, false);
  const auto per_head = neuron_utilization(model, batch, true);
  CsvTable t;
  t.header = {"layer", "batch", "utilization", "per_head_utilization"};
  for (std::size_t l = 0; l < global.size(); ++l) {
    t.rows.push_back({std::to_string(l + 1), std::to_string(o.batch), fmt_double(global[l]), fmt_double(per_head[l])});
    out << "layer " << l + 1 << ": " << global[l] << '\n';
  }
  prepare_out(o);
  write_csv(out_path(o, "utilization.csv"), t);
  write_manifest(o, "utilization", model.config, {"utilization.csv"});
  return 0;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  if (o.variant.empty()) throw InputError("ablate needs --variant");
  Model model = build_model(config_from(o));
  const DatasetSplits data = load_experiment_data(model.config, resolve_data_dir(o.dataset, model.config));
  prepare_out(o);
  auto outputs = train_outputs(o, model, data, out);
  const ProbeReport r = run_probe(extract_splits(model, data), model.config, 10);
  write_probe_csv(o, model.config, r);
  outputs.push_back("probe.csv");
  write_manifest(o, "ablate", model.config, outputs);
  out << o.variant << ": eval accuracy " << r.eval_accuracy << ", test accuracy " << r.test_accuracy << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Convolutional self-organizing neural networks", "csnn"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersion);
  Options o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--workers", o.workers, "Worker threads (0 = all cores)");
    cmd->add_option("--dataset", o.dataset, std::string("CIFAR-10 binary directory (default $") + kDataDirEnv + ")");
  };
  auto add_model = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "Preset name (s_csnn, d_csnn, desk_d_csnn) or JSON config file");
    cmd->add_option("--seed", o.seed, "Seed override");
    cmd->add_option("--variant", o.variant, "Ablation variant, e.g. RM or NM-NBN");
  };
  auto add_probe = [&](CLI::App* cmd) {
    cmd->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
    cmd->add_option("--augment", o.augment, "Probe training set augmentation factor");
    cmd->add_option("--reps", o.reps, "Directory with reps_{train,eval,test}.bin from extract");
  };

  CLI::App* train = app.add_subcommand("train", "Train a model layer by layer");
  add_common(train);
  add_model(train);
  train->add_option("--ckpt", o.ckpt, "Resume from this checkpoint");

  CLI::App* extract = app.add_subcommand("extract", "Write representation files");
  add_common(extract);
  extract->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  extract->add_option("--augment", o.augment, "Probe training set augmentation factor");

  CLI::App* probe = app.add_subcommand("probe", "Linear probe accuracy");
  add_common(probe);
  add_probe(probe);

  CLI::App* fewshot = app.add_subcommand("fewshot", "Few-shot linear probes");
  add_common(fewshot);
  add_probe(fewshot);
  fewshot->add_option("--shots", o.shots, "Samples per class")->delimiter(',');
  fewshot->add_option("--folds", o.folds, "Folds per shot count")->check(CLI::PositiveNumber);

  CLI::App* inspect = app.add_subcommand("inspect", "BMU and class-average images");
  add_common(inspect);
  inspect->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  inspect->add_option("--images", o.images, "Test images to render");

  CLI::App* util = app.add_subcommand("utilization", "Per-layer neuron utilization");
  add_common(util);
  util->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  util->add_option("--batch", o.batch, "Test images in the batch");

  CLI::App* ablate = app.add_subcommand("ablate", "Train and probe a named variant");
  add_common(ablate);
  add_model(ablate);
  ablate->get_option("--variant")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    set_workers(o.workers);
    if (o.ckpt.empty() && (train->parsed() || ablate->parsed())) {
      // validated before any data is touched
      config_from(o);
    } else if (train->parsed() && (o.seed || !o.variant.empty() || train->count("--config") > 0)) {
      throw InputError("train --ckpt resumes with the checkpoint's own config; drop --config/--seed/--variant");
    }
    if (train->parsed()) return cmd_train(o, out);
    if (extract->parsed()) return cmd_extract(o, out);
    if (probe->parsed()) return cmd_probe(o, out);
    if (fewshot->parsed()) return cmd_fewshot(o, out);
    if (inspect->parsed()) return cmd_inspect(o, out);
    if (util->parsed()) return cmd_utilization(o, out);
    return cmd_ablate(o, out);
  } catch (const std::exception& e) {
    err << "csnn: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace csnn::cli
