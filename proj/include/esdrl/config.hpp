#pragma once

// Experiment configuration and its plain-text file format.
//
// Grammar (one item per line):
//   line    := blank | comment | section | entry
//   comment := ('#' | ';') any-text
//   section := '[' name ']'
//   entry   := key '=' value        (whitespace around key and value is trimmed)
// Lists are comma separated. Booleans are true/false. Sections: experiment,
// policy, es, dqn, transfer, flappy, lineworld. Unknown sections or keys are
// errors; omitted keys keep their defaults.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "esdrl/dqn.hpp"
#include "esdrl/envs.hpp"
#include "esdrl/es.hpp"
#include "esdrl/nn.hpp"
#include "esdrl/transfer.hpp"

namespace esdrl {

enum class Algo { Es, Dqn, EsThenDqn };

inline const char* to_string(Algo a) {
  switch (a) {
    case Algo::Es: return "es";
    case Algo::Dqn: return "dqn";
    case Algo::EsThenDqn: return "es_then_dqn";
  }
  return "?";
}

inline Algo parse_algo(const std::string& s) {
  if (s == "es") return Algo::Es;
  if (s == "dqn") return Algo::Dqn;
  if (s == "es_then_dqn") return Algo::EsThenDqn;
  throw std::invalid_argument("unknown algorithm '" + s + "'");
}

struct ExperimentConfig {
  EnvConfig env;
  Algo algo = Algo::Es;
  std::vector<std::size_t> hidden_dims{64, 64};
  Activation activation = Activation::Tanh;
  EsConfig es;
  DqnConfig dqn;
  TransferMode transfer_mode = TransferMode::HiddenOnly;
  // ES generations run before the DQN phase of es_then_dqn; 0 means es.max_generations.
  std::size_t pretrain_generations = 0;
  std::vector<std::uint64_t> seeds{1};
  std::size_t eval_every = 10;  // ES generations between learning-curve rows
  std::size_t eval_episodes = 10;
  std::size_t smoothing_window = 20;
  std::string output_dir = "runs";
  std::size_t workers = 1;

  MlpSpec policy_spec() const {
    auto env_instance = make_env(env);
    return MlpSpec{env_instance->observation_dim(), hidden_dims, env_instance->action_count(), activation};
  }

  std::size_t es_phase_generations() const {
    return pretrain_generations > 0 ? pretrain_generations : es.max_generations;
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::vector<std::string>& problems)
      : std::invalid_argument(join(problems)), problems_(problems) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& ps) {
    std::string out = "invalid configuration:";
    for (const auto& p : ps) out += "\n  " + p;
    return out;
  }
  std::vector<std::string> problems_;
};

// Shortest decimal that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s + ",");
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty list item");
    out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("expected a number");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true or false");
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out;
}

// Binds every (section, key) to a parser and a printer for one field.
class FieldTable {
 public:
  using Parse = std::function<void(const std::string&)>;
  using Print = std::function<std::string()>;

  void add(const std::string& section, const std::string& key, Parse parse, Print print) {
    order_.push_back({section, key});
    fields_[section + "." + key] = {std::move(parse), std::move(print)};
  }

  template <typename T>
  void number(const std::string& section, const std::string& key, T& field) {
    add(section, key, [&field](const std::string& s) { field = parse_number<T>(s); },
        [&field] {
          if constexpr (std::is_floating_point_v<T>) return format_double(field);
          else return std::to_string(field);
        });
  }

  void boolean(const std::string& section, const std::string& key, bool& field) {
    add(section, key, [&field](const std::string& s) { field = parse_bool(s); },
        [&field] { return std::string(field ? "true" : "false"); });
  }

  bool has_section(const std::string& section) const {
    for (const auto& [s, k] : order_)
      if (s == section) return true;
    return false;
  }

  const std::pair<Parse, Print>* find(const std::string& section, const std::string& key) const {
    auto it = fields_.find(section + "." + key);
    return it == fields_.end() ? nullptr : &it->second;
  }

  const std::vector<std::pair<std::string, std::string>>& order() const { return order_; }

 private:
  std::vector<std::pair<std::string, std::string>> order_;
  std::map<std::string, std::pair<Parse, Print>> fields_;
};

inline FieldTable bind_fields(ExperimentConfig& c) {
  FieldTable t;
  t.add("experiment", "env", [&c](const std::string& s) { c.env.kind = parse_env_kind(s); },
        [&c] { return std::string(to_string(c.env.kind)); });
  t.add("experiment", "algo", [&c](const std::string& s) { c.algo = parse_algo(s); },
        [&c] { return std::string(to_string(c.algo)); });
  t.add("experiment", "seeds",
        [&c](const std::string& s) {
          c.seeds.clear();
          for (const auto& item : split_list(s)) c.seeds.push_back(parse_number<std::uint64_t>(item));
        },
        [&c] { return join_list(c.seeds); });
  t.number("experiment", "eval_every", c.eval_every);
  t.number("experiment", "eval_episodes", c.eval_episodes);
  t.number("experiment", "smoothing_window", c.smoothing_window);
  t.add("experiment", "output_dir", [&c](const std::string& s) { c.output_dir = s; }, [&c] { return c.output_dir; });
  t.number("experiment", "workers", c.workers);

  t.add("policy", "hidden_dims",
        [&c](const std::string& s) {
          c.hidden_dims.clear();
          for (const auto& item : split_list(s)) c.hidden_dims.push_back(parse_number<std::size_t>(item));
        },
        [&c] { return join_list(c.hidden_dims); });
  t.add("policy", "activation", [&c](const std::string& s) { c.activation = parse_activation(s); },
        [&c] { return std::string(to_string(c.activation)); });

  t.number("es", "sigma", c.es.sigma);
  t.number("es", "learning_rate", c.es.learning_rate);
  t.number("es", "population_size", c.es.population_size);
  t.boolean("es", "antithetic", c.es.antithetic);
  t.add("es", "fitness_shaping", [&c](const std::string& s) { c.es.fitness_shaping = parse_fitness_shaping(s); },
        [&c] { return std::string(to_string(c.es.fitness_shaping)); });
  t.number("es", "max_generations", c.es.max_generations);
  t.number("es", "episodes_per_eval", c.es.episodes_per_eval);
  t.boolean("es", "common_episode_seeds", c.es.common_episode_seeds);

  t.number("dqn", "gamma", c.dqn.gamma);
  t.number("dqn", "buffer_capacity", c.dqn.buffer_capacity);
  t.number("dqn", "batch_size", c.dqn.batch_size);
  t.number("dqn", "learning_rate", c.dqn.learning_rate);
  t.number("dqn", "target_sync_every", c.dqn.target_sync_every);
  t.number("dqn", "eps_start", c.dqn.eps_start);
  t.number("dqn", "eps_end", c.dqn.eps_end);
  t.number("dqn", "eps_anneal_fraction", c.dqn.eps_anneal_fraction);
  t.number("dqn", "total_timesteps", c.dqn.total_timesteps);
  t.number("dqn", "train_every", c.dqn.train_every);
  t.number("dqn", "learning_starts", c.dqn.learning_starts);
  t.number("dqn", "num_envs", c.dqn.num_envs);
  t.number("dqn", "eval_interval", c.dqn.eval_interval);

  t.add("transfer", "mode", [&c](const std::string& s) { c.transfer_mode = parse_transfer_mode(s); },
        [&c] { return std::string(to_string(c.transfer_mode)); });
  t.number("transfer", "pretrain_generations", c.pretrain_generations);

  auto& f = c.env.flappy;
  t.number("flappy", "gravity", f.gravity);
  t.number("flappy", "flap_impulse", f.flap_impulse);
  t.number("flappy", "pipe_gap", f.pipe_gap);
  t.number("flappy", "pipe_spacing", f.pipe_spacing);
  t.number("flappy", "world_height", f.world_height);
  t.number("flappy", "frame_skip", f.frame_skip);
  t.number("flappy", "max_episode_ticks", f.max_episode_ticks);
  t.number("flappy", "pipe_width", f.pipe_width);
  t.number("flappy", "max_fall_speed", f.max_fall_speed);
  t.number("flappy", "gap_margin", f.gap_margin);

  auto& l = c.env.lineworld;
  t.number("lineworld", "length", l.length);
  t.number("lineworld", "step_penalty", l.step_penalty);
  t.number("lineworld", "goal_reward", l.goal_reward);
  t.number("lineworld", "max_steps", l.max_steps);
  return t;
}

}  // namespace detail

// Field-level checks; all problems are reported together.
inline void validate(const ExperimentConfig& c) {
  std::vector<std::string> problems;
  auto check = [&](const char* where, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(std::string(where) + ": " + e.what());
    }
  };
  if (c.seeds.empty()) problems.push_back("[experiment] seeds: at least one seed is required");
  if (c.smoothing_window < 1) problems.push_back("[experiment] smoothing_window: must be >= 1");
  if (c.eval_every < 1) problems.push_back("[experiment] eval_every: must be >= 1");
  if (c.workers < 1) problems.push_back("[experiment] workers: must be >= 1");
  if (c.output_dir.empty()) problems.push_back("[experiment] output_dir: must not be empty");
  check("[policy]", [&] {
    for (auto h : c.hidden_dims)
      if (h == 0) throw std::invalid_argument("hidden_dims entries must be >= 1");
  });
  check("[es]", [&] { c.es.validate(); });
  check("[dqn]", [&] { c.dqn.validate(); });
  check(c.env.kind == EnvKind::Flappy ? "[flappy]" : "[lineworld]", [&] { c.env.validate(); });
  if (!problems.empty()) throw ConfigError(problems);
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  ExperimentConfig c;
  auto table = detail::bind_fields(c);
  std::vector<std::string> problems;
  std::string section;
  std::string raw;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    const std::string line = detail::trim(raw);
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back(where + ": malformed section header");
        continue;
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      if (!table.has_section(section)) problems.push_back(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + ": expected key = value");
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto* field = table.find(section, key);
    if (!field) {
      problems.push_back(where + ": unknown key '" + key + "' in [" + section + "]");
      continue;
    }
    try {
      field->first(value);
    } catch (const std::exception& e) {
      problems.push_back(where + ": [" + section + "] " + key + ": " + e.what() + " (got '" + value + "')");
    }
  }
  if (!problems.empty()) throw ConfigError(problems);
  validate(c);
  return c;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return parse_config(in, path);
}

inline std::string serialize_config(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  auto table = detail::bind_fields(copy);
  std::string out;
  std::string section;
  for (const auto& [s, key] : table.order()) {
    if (s != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + s + "]\n";
      section = s;
    }
    out += key + " = " + table.find(s, key)->second() + "\n";
  }
  return out;
}

}  // namespace esdrl
