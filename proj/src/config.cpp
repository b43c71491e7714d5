#include "config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <variant>
#include <vector>

#include <yaml-cpp/yaml.h>

namespace rampmeter {

namespace {

using Target = std::variant<double*, int*, bool*, std::uint64_t*, std::string*>;

struct Field {
  std::string key;
  Target target;
};

std::vector<Field> fields(RunConfig& c) {
  auto& g = c.geometry;
  auto& idm = c.sim.idm;
  auto& lim = c.sim.limits;
  auto& sc = c.sim.scenario;
  auto& ob = c.scales;
  auto& tr = c.train;
  auto& pp = c.perturbation;
  return {
      {"network.frame_length", &g.frame_length},
      {"network.north_entry", &g.north_entry},
      {"network.west_entry", &g.west_entry},
      {"network.circumference", &g.circumference},
      {"idm.time_headway", &idm.time_headway},
      {"idm.accel", &idm.accel},
      {"idm.decel", &idm.decel},
      {"idm.delta", &idm.delta},
      {"idm.jam_distance", &idm.jam_distance},
      {"idm.desired_speed", &idm.desired_speed},
      {"idm.accel_noise_std", &idm.accel_noise_std},
      {"limits.a_max", &lim.a_max},
      {"limits.a_min", &lim.a_min},
      {"limits.v_max", &lim.v_max},
      {"limits.dt", &lim.dt},
      {"scenario.west_platoon", &sc.west_platoon},
      {"scenario.north_platoon", &sc.north_platoon},
      {"scenario.leaders_rl_capable", &sc.leaders_rl_capable},
      {"scenario.spawn_gap", &sc.spawn_gap},
      {"scenario.spawn_speed", &sc.spawn_speed},
      {"scenario.spawn_period", &sc.spawn_period},
      {"scenario.waves", &sc.waves},
      {"scenario.vehicle_length", &sc.vehicle_length},
      {"scenario.stochastic_desired_speed", &sc.stochastic_desired_speed},
      {"scenario.desired_speed_rel_std", &sc.desired_speed_rel_std},
      {"scenario.merge_zone", &sc.merge_zone},
      {"observation.position", &ob.position},
      {"observation.north_entry", &ob.north_entry},
      {"observation.west_entry", &ob.west_entry},
      {"observation.velocity", &ob.velocity},
      {"observation.queue_north", &ob.queue_north},
      {"observation.queue_west", &ob.queue_west},
      {"noise.enabled", &c.noise.enabled},
      {"noise.std", &c.noise.std},
      {"reward.v_max", &c.reward.v_max},
      {"reward.standstill_weight", &c.reward.standstill_weight},
      {"reward.slow_threshold", &c.reward.slow_threshold},
      {"train.discount", &tr.discount},
      {"train.kl_limit", &tr.kl_limit},
      {"train.batch_size", &tr.batch_size},
      {"train.horizon", &tr.horizon},
      {"train.iterations", &tr.iterations},
      {"train.cg_iters", &tr.cg_iters},
      {"train.cg_damping", &tr.cg_damping},
      {"train.backtrack_ratio", &tr.backtrack_ratio},
      {"train.max_backtracks", &tr.max_backtracks},
      {"train.baseline_ridge", &tr.baseline_ridge},
      {"train.workers", &tr.workers},
      {"train.checkpoint_every", &c.checkpoint_every},
      {"perturbation.actuation_delay_steps", &pp.actuation_delay_steps},
      {"perturbation.speed_tracking_time_constant", &pp.speed_tracking_time_constant},
      {"perturbation.observation_delay_steps", &pp.observation_delay_steps},
      {"perturbation.geometry_scale_error", &pp.geometry_scale_error},
      {"perturbation.sensor_dropout_prob", &pp.sensor_dropout_prob},
      {"perturbation.yield_gap", &pp.yield_gap},
      {"eval.trials", &c.eval_trials},
      {"eval.sample_actions", &c.eval_sample_actions},
      {"output_dir", &c.output_dir},
      {"master_seed", &c.master_seed},
  };
}

std::string format_double(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  std::string s(buf, r.ptr);
  // Keep floats recognizable as floats in the dump.
  if (s.find_first_of(".einn") == std::string::npos) s += ".0";
  return s;
}

std::string scalar_text(const Field& f) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          return format_double(*p);
        } else if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return *p;
        } else {
          return std::to_string(*p);
        }
      },
      f.target);
}

void assign(const Field& f, const YAML::Node& node) {
  try {
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          *p = node.as<T>();
        },
        f.target);
  } catch (const YAML::Exception&) {
    const char* kind = std::visit(
        [](auto* p) -> const char* {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, double>) return "a number";
          if constexpr (std::is_same_v<T, int>) return "an integer";
          if constexpr (std::is_same_v<T, bool>) return "true or false";
          if constexpr (std::is_same_v<T, std::uint64_t>) return "a non-negative integer";
          return "a string";
        },
        f.target);
    throw ConfigError(f.key + ": expected " + kind + ", got '" + node.Scalar() + "'");
  }
}

const Field* find(const std::vector<Field>& fs, const std::string& key) {
  for (const auto& f : fs)
    if (f.key == key) return &f;
  return nullptr;
}

bool is_section(const std::vector<Field>& fs, const std::string& prefix) {
  for (const auto& f : fs)
    if (f.key.rfind(prefix + ".", 0) == 0) return true;
  return false;
}

void apply(const YAML::Node& node, const std::string& prefix, const std::vector<Field>& fs) {
  for (const auto& kv : node) {
    const std::string key = (prefix.empty() ? "" : prefix + ".") + kv.first.as<std::string>();
    const YAML::Node& value = kv.second;
    if (value.IsMap()) {
      if (!is_section(fs, key)) throw ConfigError(key + ": unknown section");
      apply(value, key, fs);
      continue;
    }
    const Field* f = find(fs, key);
    if (!f) {
      if (is_section(fs, key)) throw ConfigError(key + ": expected a mapping");
      throw ConfigError(key + ": unknown key");
    }
    if (!value.IsScalar()) throw ConfigError(key + ": expected a scalar");
    assign(*f, value);
  }
}

}  // namespace

void RunConfig::validate() const {
  if (!(geometry.frame_length > 0 && geometry.north_entry > 0 && geometry.west_entry > 0 &&
        geometry.circumference > 0))
    throw std::invalid_argument("network: all lengths must be positive");
  sim.idm.validate();
  sim.limits.validate();
  sim.scenario.validate(sim.idm.jam_distance);
  scales.validate();
  noise.validate();
  reward.validate();
  train_config().validate();
  perturbation.validate();
  if (eval_trials < 1) throw std::invalid_argument("eval.trials: must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("train.checkpoint_every: must be >= 0");
  if (output_dir.empty()) throw std::invalid_argument("output_dir: must not be empty");
  (void)RoadNetwork::from_geometry(geometry);
}

EnvConfig RunConfig::env() const {
  EnvConfig e;
  e.network = std::make_shared<const RoadNetwork>(RoadNetwork::from_geometry(geometry));
  e.sim = sim;
  e.scales = scales;
  e.noise = noise;
  e.reward = reward;
  e.horizon = train.horizon;
  return e;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.master_seed = master_seed;
  return t;
}

RunConfig parse_config(const std::string& yaml_text) {
  RunConfig cfg;
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(std::string("parse error: ") + e.what());
  }
  if (root.IsNull()) return cfg;
  if (!root.IsMap()) throw ConfigError("config: top level must be a mapping");
  apply(root, "", fields(cfg));
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = parse_config(ss.str());
  cfg.validate();
  return cfg;
}

std::string dump_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  const auto fs = fields(copy);
  YAML::Emitter out;
  out << YAML::BeginMap;
  std::string open;
  for (const auto& f : fs) {
    const auto dot = f.key.find('.');
    const std::string section = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (section != open) {
      if (!open.empty()) out << YAML::EndMap;
      if (!section.empty()) out << YAML::Key << section << YAML::Value << YAML::BeginMap;
      open = section;
    }
    out << YAML::Key << name << YAML::Value;
    if (std::holds_alternative<std::string*>(f.target)) out << YAML::DoubleQuoted;
    out << scalar_text(f);
  }
  if (!open.empty()) out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string("# rampmeter ") + kVersion + " seed=" + std::to_string(cfg.master_seed) + "\n" +
         out.c_str() + "\n";
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto fs = fields(cfg);
  const Field* f = find(fs, key);
  if (!f) throw ConfigError(key + ": unknown key");
  YAML::Node node;
  try {
    node = YAML::Load(value);
  } catch (const YAML::ParserException&) {
    throw ConfigError(key + ": cannot parse '" + value + "'");
  }
  if (!node.IsScalar()) throw ConfigError(key + ": expected a scalar");
  assign(*f, node);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  RunConfig copy = cfg;
  const auto fs = fields(copy);
  const Field* f = find(fs, key);
  if (!f) throw ConfigError(key + ": unknown key");
  return scalar_text(*f);
}

}  // namespace rampmeter
