#include "evgs/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "evgs/errors.hpp"

namespace evgs {

namespace fs = std::filesystem;

fs::path RunConfig::events_path() const { return paths.events.empty() ? paths.output / "events.bin" : paths.events; }
fs::path RunConfig::predictor_path() const {
  return paths.predictor.empty() ? paths.output / "predictor.ckpt" : paths.predictor;
}
fs::path RunConfig::adapter_path() const { return paths.adapter.empty() ? paths.output / "adapter.ckpt" : paths.adapter; }
fs::path RunConfig::run_dir() const {
  return paths.output / ("train_" + ablation_tag(train) + "_s" + std::to_string(seed));
}

std::string ablation_tag(const TrainConfig& c) {
  if (c.event_loss && c.motion_loss) return "full";
  if (c.motion_loss) return "no-event";
  if (c.event_loss) return "no-motion";
  return "no-event-no-motion";
}

namespace {

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  try {
    return boost::lexical_cast<T>(boost::trim_copy(text));
  } catch (const boost::bad_lexical_cast&) {
    throw Error(ErrorKind::Config, "bad value for " + key + ": '" + text + "'");
  }
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& text) {
  const std::string v = boost::to_lower_copy(boost::trim_copy(text));
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw Error(ErrorKind::Config, "bad boolean for " + key + ": '" + text + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::string> parts;
  boost::split(parts, text, boost::is_any_of(","));
  std::vector<int> out;
  for (const std::string& p : parts) out.push_back(parse_value<int>(key, p));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value, const fs::path& base)>;

template <typename T, typename F>
Setter set(F field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v, const fs::path&) {
    field(c) = parse_value<T>(k, v);
  };
}

template <typename F>
Setter set_path(F field) {
  return [field](RunConfig& c, const std::string&, const std::string& v, const fs::path& base) {
    const fs::path p = boost::trim_copy(v);
    field(c) = (p.is_absolute() || base.empty() ? p : base / p).lexically_normal();
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"paths.scene", set_path([](RunConfig& c) -> fs::path& { return c.paths.scene; })},
      {"paths.output", set_path([](RunConfig& c) -> fs::path& { return c.paths.output; })},
      {"paths.events", set_path([](RunConfig& c) -> fs::path& { return c.paths.events; })},
      {"paths.predictor", set_path([](RunConfig& c) -> fs::path& { return c.paths.predictor; })},
      {"paths.adapter", set_path([](RunConfig& c) -> fs::path& { return c.paths.adapter; })},

      {"simulate.contrast_threshold", set<double>([](RunConfig& c) -> double& { return c.simulator.contrast_threshold; })},
      {"simulate.threshold_jitter", set<double>([](RunConfig& c) -> double& { return c.simulator.threshold_jitter; })},
      {"simulate.intensity_floor", set<double>([](RunConfig& c) -> double& { return c.simulator.intensity_floor; })},
      {"simulate.keyframe_stride", set<int>([](RunConfig& c) -> int& { return c.keyframe_stride; })},

      {"flow.input",
       [](RunConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         const std::string s = boost::trim_copy(v);
         if (s == "cost_volume") {
           c.predictor.input = PredictorInput::CostVolume;
         } else if (s == "voxel") {
           c.predictor.input = PredictorInput::Voxel;
         } else {
           throw Error(ErrorKind::Config, "bad value for " + k + ": '" + v + "'");
         }
       }},
      {"flow.bins", set<int>([](RunConfig& c) -> int& { return c.predictor.bins; })},
      {"flow.patch", set<int>([](RunConfig& c) -> int& { return c.predictor.patch; })},
      {"flow.context", set<int>([](RunConfig& c) -> int& { return c.predictor.context; })},
      {"flow.hidden",
       [](RunConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.predictor.hidden = parse_list(k, v);
       }},
      {"flow.flow_scale", set<double>([](RunConfig& c) -> double& { return c.predictor.flow_scale; })},
      {"flow.search_radius", set<double>([](RunConfig& c) -> double& { return c.predictor.search_radius; })},
      {"flow.search_step", set<double>([](RunConfig& c) -> double& { return c.predictor.search_step; })},
      {"flow.tv_weight",
       [](RunConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.pretrain.loss.tv_weight = c.finetune.loss.tv_weight = parse_value<double>(k, v);
       }},
      {"flow.pretrain_epochs", set<int>([](RunConfig& c) -> int& { return c.pretrain.epochs; })},
      {"flow.pretrain_lr_start", set<double>([](RunConfig& c) -> double& { return c.pretrain.lr_start; })},
      {"flow.pretrain_lr_end", set<double>([](RunConfig& c) -> double& { return c.pretrain.lr_end; })},
      {"flow.pretrain_windows", set<int>([](RunConfig& c) -> int& { return c.pretrain_windows; })},
      {"flow.pretrain_speed", set<double>([](RunConfig& c) -> double& { return c.pretrain_speed; })},
      {"flow.epochs", set<int>([](RunConfig& c) -> int& { return c.finetune.epochs; })},
      {"flow.lr_start", set<double>([](RunConfig& c) -> double& { return c.finetune.lr_start; })},
      {"flow.lr_end", set<double>([](RunConfig& c) -> double& { return c.finetune.lr_end; })},
      {"flow.rank", set<int>([](RunConfig& c) -> int& { return c.lora_rank; })},
      {"flow.adapter_init", set<double>([](RunConfig& c) -> double& { return c.lora_init; })},

      {"train.iterations", set<long>([](RunConfig& c) -> long& { return c.train.iterations; })},
      {"train.warmup", set<long>([](RunConfig& c) -> long& { return c.train.warmup; })},
      {"train.gamma1", set<double>([](RunConfig& c) -> double& { return c.train.weights.gamma1; })},
      {"train.gamma2_scale", set<double>([](RunConfig& c) -> double& { return c.train.weights.gamma2_scale; })},
      {"train.event_loss", set<bool>([](RunConfig& c) -> bool& { return c.train.event_loss; })},
      {"train.motion_loss", set<bool>([](RunConfig& c) -> bool& { return c.train.motion_loss; })},
      {"train.lr_position", set<double>([](RunConfig& c) -> double& { return c.train.lr_position; })},
      {"train.lr_color", set<double>([](RunConfig& c) -> double& { return c.train.lr_color; })},
      {"train.lr_opacity", set<double>([](RunConfig& c) -> double& { return c.train.lr_opacity; })},
      {"train.lr_scale", set<double>([](RunConfig& c) -> double& { return c.train.lr_scale; })},
      {"train.lr_rotation", set<double>([](RunConfig& c) -> double& { return c.train.lr_rotation; })},
      {"train.lr_deformation", set<double>([](RunConfig& c) -> double& { return c.train.lr_deformation; })},
      {"train.lr_posenet", set<double>([](RunConfig& c) -> double& { return c.train.lr_posenet; })},
      {"train.rebind_period", set<long>([](RunConfig& c) -> long& { return c.train.rebind_period; })},
      {"train.delta_t_fraction", set<double>([](RunConfig& c) -> double& { return c.train.delta_t_fraction; })},
      {"train.bind_k", set<int>([](RunConfig& c) -> int& { return c.train.bind.k; })},
      {"train.bind_cutoff", set<double>([](RunConfig& c) -> double& { return c.train.bind.cutoff; })},
      {"train.eval_every", set<long>([](RunConfig& c) -> long& { return c.eval_every; })},
      {"train.deformation_depth", set<int>([](RunConfig& c) -> int& { return c.deformation.depth; })},
      {"train.deformation_width", set<int>([](RunConfig& c) -> int& { return c.deformation.width; })},
      {"train.deformation_skip", set<int>([](RunConfig& c) -> int& { return c.deformation.skip_layer; })},
      {"train.position_frequencies", set<int>([](RunConfig& c) -> int& { return c.deformation.position_frequencies; })},
      {"train.time_frequencies", set<int>([](RunConfig& c) -> int& { return c.deformation.time_frequencies; })},
      {"train.posenet_frequencies", set<int>([](RunConfig& c) -> int& { return c.posenet.frequencies; })},
      {"train.posenet_hidden", set<int>([](RunConfig& c) -> int& { return c.posenet.hidden; })},

      {"run.seed", set<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.seed; })},
  };
  return table;
}

void check(const RunConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::Config, what);
  };
  require(c.simulator.contrast_threshold > 0.0, "contrast_threshold must be positive");
  require(c.keyframe_stride >= 1, "keyframe_stride must be >= 1");
  require(c.pretrain.epochs >= 0 && c.finetune.epochs >= 0, "epochs must be >= 0");
  require(c.pretrain_windows >= 1, "pretrain_windows must be >= 1");
  require(c.lora_rank >= 1, "rank must be >= 1");
  require(c.train.iterations >= 0 && c.train.warmup >= 0, "iteration counts must be >= 0");
  require(c.train.rebind_period >= 1, "rebind_period must be >= 1");
  require(c.eval_every >= 1, "eval_every must be >= 1");
}

}  // namespace

RunConfig parse_config(std::istream& in, const fs::path& base_dir) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
  RunConfig c;
  if (!base_dir.empty()) c.paths.output = (base_dir / c.paths.output).lexically_normal();
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw Error(ErrorKind::Config, "key outside a section: " + section);
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      const auto it = setters().find(name);
      if (it == setters().end()) throw Error(ErrorKind::Config, "unknown config key " + name);
      it->second(c, name, value.data(), base_dir);
    }
  }
  c.train.contrast_threshold = c.simulator.contrast_threshold;
  c.train.intensity_floor = c.simulator.intensity_floor;
  check(c);
  apply_overrides(c, {});
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config " + path.string());
  RunConfig c = parse_config(in, path.parent_path());
  if (c.paths.scene.empty()) throw Error(ErrorKind::Config, "paths.scene is required");
  if (!fs::exists(c.paths.scene)) throw Error(ErrorKind::Config, "scene file not found: " + c.paths.scene.string());
  return c;
}

void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.seed) c.seed = *o.seed;
  if (o.iterations) {
    if (*o.iterations < 0) throw Error(ErrorKind::Config, "iterations must be >= 0");
    c.train.iterations = *o.iterations;
  }
  if (o.no_event_loss) c.train.event_loss = false;
  if (o.no_motion_loss) c.train.motion_loss = false;
  c.simulator.seed = c.seed;
  c.pretrain.seed = c.seed;
  c.finetune.seed = c.seed;
  c.train.seed = c.seed;
}

}  // namespace evgs
