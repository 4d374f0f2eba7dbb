#include "csnn/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "csnn/error.hpp"

namespace csnn {

using nlohmann::json;

namespace {

LayerSpec conv_layer(std::size_t grid_h, std::size_t grid_w, std::size_t heads,
                     std::size_t stride, MaskKind kind, double sigma) {
  LayerSpec spec;
  spec.grid_h = grid_h;
  spec.grid_w = grid_w;
  spec.heads = heads;
  spec.geometry = ConvGeometry{3, 3, stride, stride, Padding::same};
  spec.mask_kind = kind;
  spec.rule = MaskRule::hebbian_all;
  spec.gamma = default_gamma(spec.rule);
  spec.som_rate = 0.1;
  spec.mask_rate = 0.005;
  spec.sigma = sigma;
  return spec;
}

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<MaskKind> kMaskKinds[] = {{MaskKind::input, "input"},
                                             {MaskKind::between, "between"}};
constexpr EnumName<MaskRule> kMaskRules[] = {{MaskRule::hebbian_all, "hebbian_all"},
                                             {MaskRule::oja_lower, "oja_lower"}};
constexpr EnumName<MaskMode> kMaskModes[] = {{MaskMode::learned, "learned"},
                                             {MaskMode::static_random, "static_random"},
                                             {MaskMode::noise, "noise"},
                                             {MaskMode::none, "none"}};
constexpr EnumName<Padding> kPaddings[] = {{Padding::same, "same"}, {Padding::valid, "valid"}};

template <typename E, std::size_t N>
std::string enum_name(const EnumName<E> (&table)[N], E value) {
  for (const auto& e : table) {
    if (e.value == value) return e.name;
  }
  throw ConfigError("unnamed enum value");
}

template <typename E, std::size_t N>
E enum_value(const EnumName<E> (&table)[N], const std::string& name, const char* what) {
  for (const auto& e : table) {
    if (name == e.name) return e.value;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + name + "'");
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const char* where) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items()) {
    if (!keys.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::pair<std::size_t, std::size_t> read_pair(const json& obj, const char* key,
                                              std::pair<std::size_t, std::size_t> fallback) {
  if (!obj.contains(key)) return fallback;
  std::vector<std::size_t> v;
  read(obj, key, v);
  if (v.size() != 2) throw ConfigError(std::string("'") + key + "' needs two entries");
  return {v[0], v[1]};
}

json layer_to_json(const LayerSpec& s) {
  return json{
      {"grid", {s.grid_h, s.grid_w, s.heads}},
      {"kernel", {s.geometry.kernel_h, s.geometry.kernel_w}},
      {"stride", {s.geometry.stride_h, s.geometry.stride_w}},
      {"padding", enum_name(kPaddings, s.geometry.padding)},
      {"mask", enum_name(kMaskKinds, s.mask_kind)},
      {"rule", enum_name(kMaskRules, s.rule)},
      {"gamma", s.gamma},
      {"som_rate", s.som_rate},
      {"mask_rate", s.mask_rate},
      {"sigma", s.sigma},
      {"interval", {s.interval.start, s.interval.end}},
      {"mask_mode", enum_name(kMaskModes, s.mask_mode)},
      {"batch_norm", s.batch_norm},
      {"max_pool", s.max_pool},
  };
}

LayerSpec layer_from_json(const json& j) {
  reject_unknown(j,
                 {"grid", "kernel", "stride", "padding", "mask", "rule", "gamma", "som_rate",
                  "mask_rate", "sigma", "interval", "mask_mode", "batch_norm", "max_pool"},
                 "layer");
  LayerSpec s;
  if (!j.contains("grid")) throw ConfigError("layer is missing 'grid'");
  std::vector<std::size_t> grid;
  read(j, "grid", grid);
  if (grid.size() != 2 && grid.size() != 3) throw ConfigError("'grid' needs [h, w] or [h, w, heads]");
  s.grid_h = grid[0];
  s.grid_w = grid[1];
  s.heads = grid.size() == 3 ? grid[2] : 1;
  std::tie(s.geometry.kernel_h, s.geometry.kernel_w) = read_pair(j, "kernel", {3, 3});
  std::tie(s.geometry.stride_h, s.geometry.stride_w) = read_pair(j, "stride", {1, 1});
  std::string name = "same";
  read(j, "padding", name);
  s.geometry.padding = enum_value(kPaddings, name, "padding");
  name = "input";
  read(j, "mask", name);
  s.mask_kind = enum_value(kMaskKinds, name, "mask kind");
  name = "hebbian_all";
  read(j, "rule", name);
  s.rule = enum_value(kMaskRules, name, "mask rule");
  s.gamma = default_gamma(s.rule);
  read(j, "gamma", s.gamma);
  read(j, "som_rate", s.som_rate);
  read(j, "mask_rate", s.mask_rate);
  read(j, "sigma", s.sigma);
  std::tie(s.interval.start, s.interval.end) = read_pair(j, "interval", {0, 0});
  name = "learned";
  read(j, "mask_mode", name);
  s.mask_mode = enum_value(kMaskModes, name, "mask mode");
  read(j, "batch_norm", s.batch_norm);
  read(j, "max_pool", s.max_pool);
  return s;
}

json to_json_value(const ModelConfig& c) {
  json layers = json::array();
  for (const auto& l : c.layers) layers.push_back(layer_to_json(l));
  return json{
      {"name", c.name},
      {"seed", c.seed},
      {"batch_size", c.batch_size},
      {"input", {{"height", c.input.height}, {"width", c.input.width}, {"channels", c.input.channels}}},
      {"batch_norm", {{"eps", c.bn_eps}, {"momentum", c.bn_momentum}}},
      {"ablation",
       {{"update_all_heads", c.ablation.update_all_heads},
        {"neighborhood_masks", c.ablation.neighborhood_masks}}},
      {"layers", layers},
      {"data",
       {{"path", c.data.path},
        {"train_images", c.data.train_images},
        {"probe_train_images", c.data.probe_train_images},
        {"eval_images", c.data.eval_images},
        {"test_images", c.data.test_images}}},
      {"probe",
       {{"epochs", c.probe.epochs},
        {"batch_size", c.probe.batch_size},
        {"learn_rate", c.probe.learn_rate},
        {"augment_factor", c.probe.augment_factor}}},
  };
}

}  // namespace

std::size_t ModelConfig::total_steps() const {
  std::size_t end = 0;
  for (const auto& l : layers) end = std::max(end, l.interval.end);
  return end;
}

void set_sequential_intervals(ModelConfig& config, std::size_t steps_per_layer) {
  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    config.layers[l].interval = {l * steps_per_layer, (l + 1) * steps_per_layer};
  }
}

ModelConfig s_csnn_preset() {
  ModelConfig c;
  c.name = "s_csnn";
  c.layers = {conv_layer(10, 10, 1, 2, MaskKind::input, 1.0),
              conv_layer(16, 16, 1, 1, MaskKind::between, 1.25)};
  set_sequential_intervals(c, 10000);
  c.data.train_images = 50000;
  return c;
}

ModelConfig d_csnn_preset() {
  ModelConfig c;
  c.name = "d_csnn";
  c.layers = {conv_layer(12, 12, 3, 1, MaskKind::input, 1.0),
              conv_layer(14, 14, 3, 1, MaskKind::between, 1.5),
              conv_layer(16, 16, 3, 1, MaskKind::between, 1.5)};
  set_sequential_intervals(c, 10000);
  c.data.train_images = 50000;
  return c;
}

ModelConfig desk_d_csnn_preset() {
  ModelConfig c;
  c.name = "desk_d_csnn";
  c.layers = {conv_layer(8, 8, 2, 1, MaskKind::input, 1.0),
              conv_layer(8, 8, 2, 1, MaskKind::between, 1.5),
              conv_layer(8, 8, 2, 1, MaskKind::between, 1.5)};
  set_sequential_intervals(c, 2000);
  c.data.train_images = 2000;
  return c;
}

std::vector<std::string> known_variants() {
  return {"D", "RS", "NM", "RM", "NO", "R", "RSNM", "BMU", "NH", "NBN", "1M", "2M", "Aug"};
}

void apply_variant(ModelConfig& config, const std::string& variant) {
  std::string rest = variant;
  std::replace(rest.begin(), rest.end(), '+', '-');
  std::stringstream parts(rest);
  std::string part;
  bool any = false;
  while (std::getline(parts, part, '-')) {
    if (part.empty()) continue;
    any = true;
    auto each_layer = [&](auto&& fn) {
      for (auto& l : config.layers) fn(l);
    };
    if (part == "D" || part == "none") {
    } else if (part == "RS") {
      each_layer([](LayerSpec& l) { l.som_rate = 0.0; });
    } else if (part == "NM") {
      each_layer([](LayerSpec& l) { l.mask_mode = MaskMode::none; });
    } else if (part == "RM") {
      each_layer([](LayerSpec& l) { l.mask_mode = MaskMode::static_random; });
    } else if (part == "NO") {
      each_layer([](LayerSpec& l) { l.mask_mode = MaskMode::noise; });
    } else if (part == "R") {
      each_layer([](LayerSpec& l) {
        l.som_rate = 0.0;
        l.mask_mode = MaskMode::static_random;
      });
    } else if (part == "RSNM") {
      each_layer([](LayerSpec& l) {
        l.som_rate = 0.0;
        l.mask_mode = MaskMode::none;
      });
    } else if (part == "BMU") {
      config.ablation.update_all_heads = true;
    } else if (part == "NH") {
      config.ablation.neighborhood_masks = true;
    } else if (part == "NBN") {
      each_layer([](LayerSpec& l) { l.batch_norm = false; });
    } else if (part == "1M") {
      each_layer([](LayerSpec& l) { l.heads = 1; });
    } else if (part == "2M") {
      each_layer([](LayerSpec& l) { l.heads = 2; });
    } else if (part == "Aug") {
      config.probe.augment_factor = std::max<std::size_t>(config.probe.augment_factor, 2);
    } else {
      throw ConfigError("unknown variant '" + part + "'");
    }
  }
  if (!any) throw ConfigError("empty variant name");
  if (variant != "D" && variant != "none") config.name += "-" + variant;
}

std::string config_to_json(const ModelConfig& config) { return to_json_value(config).dump(2); }

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, {"name", "seed", "batch_size", "input", "batch_norm", "ablation", "layers", "data", "probe"},
                 "config");
  ModelConfig c;
  read(j, "name", c.name);
  read(j, "seed", c.seed);
  read(j, "batch_size", c.batch_size);
  if (j.contains("input")) {
    const auto& in = j["input"];
    reject_unknown(in, {"height", "width", "channels"}, "input");
    read(in, "height", c.input.height);
    read(in, "width", c.input.width);
    read(in, "channels", c.input.channels);
  }
  if (j.contains("batch_norm")) {
    const auto& bn = j["batch_norm"];
    reject_unknown(bn, {"eps", "momentum"}, "batch_norm");
    read(bn, "eps", c.bn_eps);
    read(bn, "momentum", c.bn_momentum);
  }
  if (j.contains("ablation")) {
    const auto& ab = j["ablation"];
    reject_unknown(ab, {"update_all_heads", "neighborhood_masks"}, "ablation");
    read(ab, "update_all_heads", c.ablation.update_all_heads);
    read(ab, "neighborhood_masks", c.ablation.neighborhood_masks);
  }
  if (j.contains("layers")) {
    if (!j["layers"].is_array()) throw ConfigError("'layers' must be an array");
    for (const auto& l : j["layers"]) c.layers.push_back(layer_from_json(l));
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, {"path", "train_images", "probe_train_images", "eval_images", "test_images"}, "data");
    read(d, "path", c.data.path);
    read(d, "train_images", c.data.train_images);
    read(d, "probe_train_images", c.data.probe_train_images);
    read(d, "eval_images", c.data.eval_images);
    read(d, "test_images", c.data.test_images);
  }
  if (j.contains("probe")) {
    const auto& p = j["probe"];
    reject_unknown(p, {"epochs", "batch_size", "learn_rate", "augment_factor"}, "probe");
    read(p, "epochs", c.probe.epochs);
    read(p, "batch_size", c.probe.batch_size);
    read(p, "learn_rate", c.probe.learn_rate);
    read(p, "augment_factor", c.probe.augment_factor);
  }
  return c;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return config_from_json(buffer.str());
}

ModelConfig resolve_config(const std::string& name_or_path) {
  if (name_or_path == "s_csnn") return s_csnn_preset();
  if (name_or_path == "d_csnn") return d_csnn_preset();
  if (name_or_path == "desk_d_csnn") return desk_d_csnn_preset();
  if (!std::filesystem::exists(name_or_path)) {
    throw ConfigError("no preset or config file named '" + name_or_path + "'");
  }
  return load_config(name_or_path);
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t config_hash(const ModelConfig& config) {
  const std::string canonical = to_json_value(config).dump();
  return fnv1a64(canonical.data(), canonical.size());
}

std::string to_string(MaskKind kind) { return enum_name(kMaskKinds, kind); }
std::string to_string(MaskRule rule) { return enum_name(kMaskRules, rule); }
std::string to_string(MaskMode mode) { return enum_name(kMaskModes, mode); }

}  // namespace csnn
