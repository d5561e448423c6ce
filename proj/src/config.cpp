#include "degmon/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "degmon/error.hpp"
#include "degmon/rng.hpp"

namespace degmon {

namespace {

void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& section) {
  if (!node.IsMap()) throw ConfigError("'" + section + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + section);
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& section) {
  const auto v = node[key];
  if (!v) return;
  try {
    out = v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + section);
  }
}

std::vector<OperatorLadder> read_ladders(const YAML::Node& node, const std::string& section) {
  if (!node.IsMap()) throw ConfigError("'" + section + "' must map operator ids to five severity values");
  std::vector<OperatorLadder> out;
  for (const auto& kv : node) {
    OperatorLadder l;
    l.op_id = kv.first.as<std::string>();
    find_operator(l.op_id);
    std::vector<double> levels;
    try {
      levels = kv.second.as<std::vector<double>>();
    } catch (const YAML::Exception&) {
      throw ConfigError("ladder '" + l.op_id + "' in " + section + " must be a list of numbers");
    }
    if (levels.size() != 5) throw ConfigError("ladder '" + l.op_id + "' in " + section + " needs 5 values");
    std::copy(levels.begin(), levels.end(), l.levels.begin());
    out.push_back(std::move(l));
  }
  return out;
}

nlohmann::json ladders_json(const std::vector<OperatorLadder>& ladders) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& l : ladders) out.push_back({{"op", l.op_id}, {"levels", l.levels}});
  return out;
}

std::string hard_negative_order_name(HardNegativeOrder o) {
  return o == HardNegativeOrder::kDegradeThenCrop ? "degrade_then_crop" : "crop_then_degrade";
}

HardNegativeOrder parse_hard_negative_order(const std::string& s) {
  if (s == "degrade_then_crop") return HardNegativeOrder::kDegradeThenCrop;
  if (s == "crop_then_degrade") return HardNegativeOrder::kCropThenDegrade;
  throw ConfigError("unknown hard_negative_order '" + s + "'");
}

std::string view_source_name(ViewSource v) { return v == ViewSource::kDistinctImages ? "distinct_images" : "same_image"; }

ViewSource parse_view_source(const std::string& s) {
  if (s == "distinct_images") return ViewSource::kDistinctImages;
  if (s == "same_image") return ViewSource::kSameImage;
  throw ConfigError("unknown view_source '" + s + "'");
}

}  // namespace

nlohmann::json RunConfig::canonical() const {
  nlohmann::json groups = nlohmann::json::array();
  for (auto g : degradation.group_pool) groups.push_back(group_name(g));
  return {
      {"seed", seed},
      {"input_size", input_size},
      {"manifest", manifest_ref},
      {"degradation",
       {{"max_ops", degradation.max_ops},
        {"groups", groups},
        {"hard_negative_order", hard_negative_order_name(degradation.hard_negative_order)},
        {"view_source", view_source_name(degradation.view_source)},
        {"training", ladders_json(degradation.training)},
        {"evaluation", ladders_json(degradation.evaluation)}}},
      {"model", model.to_json()},
      {"train",
       {{"epochs", train.epochs},
        {"batch_pairs", train.batch_pairs},
        {"learning_rate", train.adam.learning_rate},
        {"freeze_backbone", train.freeze_backbone},
        {"hard_negatives", train.hard_negatives},
        {"prototype_momentum", train.prototype_momentum},
        {"warmup_epoch", train.resolved_warmup()},
        {"prototype_schedule", prototype_schedule_name(train.prototype_schedule)}}},
      {"flow",
       {{"layers", flow_layers},
        {"hidden", flow.hidden},
        {"s_max", flow.s_max},
        {"epochs", flow.epochs},
        {"batch", flow.batch},
        {"learning_rate", flow.learning_rate}}},
      {"evaluation",
       {{"monitors", evaluation.monitors},
        {"levels", evaluation.levels},
        {"per_corruption", evaluation.per_corruption},
        {"mixed_pools", evaluation.mixed_pools}}},
  };
}

std::string RunConfig::hash() const { return fmt::format("{:016x}", fnv1a64(canonical().dump())); }

void RunConfig::validate(bool check_paths) const {
  if (input_size < 32) throw ConfigError("input_size must be >= 32");
  degradation.validate();
  model.validate();
  train.validate();
  flow.validate();
  const int taps = static_cast<int>(model.backbone.tap_stages.size());
  if (flow_layers.empty()) throw ConfigError("flow.layers must select at least one tap");
  for (int l : flow_layers) {
    if (l < 0 || l >= taps) throw ConfigError(fmt::format("flow layer {} outside the {} backbone taps", l, taps));
  }
  for (const auto& m : evaluation.monitors) {
    if (m != "manifold" && m != "nf_single" && m != "nf_multi") throw ConfigError("unknown monitor '" + m + "'");
  }
  if (evaluation.levels.empty()) throw ConfigError("evaluation.levels is empty");
  for (int l : evaluation.levels) {
    if (l < 1 || l > 5) throw ConfigError("evaluation levels must lie in 1..5");
  }
  if (check_paths) {
    if (manifest.empty()) throw ConfigError("data.manifest is not set");
    if (!std::filesystem::exists(manifest)) throw ConfigError("dataset manifest not found: " + manifest.string());
  }
}

RunConfig parse_run_config(const std::string& yaml_text, const std::filesystem::path& base_dir, bool check_paths) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  RunConfig c;
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  check_keys(root, {"seed", "input_size", "output_dir", "data", "degradation", "model", "train", "flow", "evaluation"},
             "config");
  read(root, "seed", c.seed, "config");
  read(root, "input_size", c.input_size, "config");
  std::string out_dir = c.output_dir.string();
  read(root, "output_dir", out_dir, "config");
  c.output_dir = out_dir;

  if (const auto d = root["data"]) {
    check_keys(d, {"manifest"}, "data");
    std::string m;
    read(d, "manifest", m, "data");
    c.manifest = m;
    c.manifest_ref = m;
  }
  if (const auto d = root["degradation"]) {
    check_keys(d, {"max_ops", "groups", "hard_negative_order", "view_source", "training", "evaluation"}, "degradation");
    read(d, "max_ops", c.degradation.max_ops, "degradation");
    if (const auto g = d["groups"]) {
      c.degradation.group_pool.clear();
      for (const auto& name : g) c.degradation.group_pool.push_back(parse_group(name.as<std::string>()));
    }
    std::string s;
    s.clear();
    read(d, "hard_negative_order", s, "degradation");
    if (!s.empty()) c.degradation.hard_negative_order = parse_hard_negative_order(s);
    s.clear();
    read(d, "view_source", s, "degradation");
    if (!s.empty()) c.degradation.view_source = parse_view_source(s);
    if (d["training"]) c.degradation.training = read_ladders(d["training"], "degradation.training");
    if (d["evaluation"]) c.degradation.evaluation = read_ladders(d["evaluation"], "degradation.evaluation");
  }
  if (const auto m = root["model"]) {
    check_keys(m,
               {"widths", "tap_stages", "activation", "pooled_stages", "per_layer_dim", "embed_dim", "mlp_hidden",
                "mlp_activation", "temperature", "pool", "last_layer_only"},
               "model");
    auto& b = c.model.backbone;
    auto& p = c.model.projection;
    read(m, "widths", b.widths, "model");
    read(m, "tap_stages", b.tap_stages, "model");
    read(m, "pooled_stages", b.pooled_stages, "model");
    read(m, "per_layer_dim", p.per_layer_dim, "model");
    read(m, "embed_dim", p.embed_dim, "model");
    read(m, "mlp_hidden", p.mlp_hidden, "model");
    read(m, "temperature", p.temperature, "model");
    read(m, "last_layer_only", c.model.last_layer_only, "model");
    std::string s;
    read(m, "activation", s, "model");
    if (!s.empty()) b.activation = parse_activation(s);
    s.clear();
    read(m, "mlp_activation", s, "model");
    if (!s.empty()) p.mlp_activation = parse_activation(s);
    s.clear();
    read(m, "pool", s, "model");
    if (!s.empty()) c.model.pool = parse_pool_mode(s);
  }
  if (const auto t = root["train"]) {
    check_keys(t,
               {"epochs", "batch_pairs", "learning_rate", "freeze_backbone", "hard_negatives", "prototype_momentum",
                "warmup_epoch", "prototype_schedule"},
               "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_pairs", c.train.batch_pairs, "train");
    read(t, "learning_rate", c.train.adam.learning_rate, "train");
    read(t, "freeze_backbone", c.train.freeze_backbone, "train");
    read(t, "hard_negatives", c.train.hard_negatives, "train");
    read(t, "prototype_momentum", c.train.prototype_momentum, "train");
    read(t, "warmup_epoch", c.train.warmup_epoch, "train");
    std::string s;
    read(t, "prototype_schedule", s, "train");
    if (!s.empty()) c.train.prototype_schedule = parse_prototype_schedule(s);
  }
  if (const auto f = root["flow"]) {
    check_keys(f, {"layers", "hidden", "s_max", "epochs", "batch", "learning_rate"}, "flow");
    read(f, "layers", c.flow_layers, "flow");
    read(f, "hidden", c.flow.hidden, "flow");
    read(f, "s_max", c.flow.s_max, "flow");
    read(f, "epochs", c.flow.epochs, "flow");
    read(f, "batch", c.flow.batch, "flow");
    read(f, "learning_rate", c.flow.learning_rate, "flow");
  }
  if (const auto e = root["evaluation"]) {
    check_keys(e, {"monitors", "levels", "per_corruption", "mixed_pools"}, "evaluation");
    read(e, "monitors", c.evaluation.monitors, "evaluation");
    read(e, "levels", c.evaluation.levels, "evaluation");
    read(e, "per_corruption", c.evaluation.per_corruption, "evaluation");
    read(e, "mixed_pools", c.evaluation.mixed_pools, "evaluation");
  }

  c.degradation.input_size = c.input_size;
  c.model.backbone.input_size = c.input_size;
  c.train.seed = c.seed;
  c.flow.seed = c.seed;
  if (!c.manifest.empty() && c.manifest.is_relative()) c.manifest = base_dir / c.manifest;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) c.output_dir = env;
  if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
  c.validate(check_paths);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, bool check_paths) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path(), check_paths);
}

}  // namespace degmon
