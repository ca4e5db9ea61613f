#pragma once

// Coordinator <-> worker messages. On the wire each message is one line of
// JSON; a parameter broadcast line is followed by `bytes` raw bytes holding a
// checkpoint. Unknown fields are ignored.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "esdrl/envs.hpp"
#include "esdrl/es.hpp"
#include "esdrl/nn.hpp"

namespace esdrl {

inline constexpr int kProtocolVersion = 1;

using json = nlohmann::json;

struct TaskMessage {
  std::uint64_t generation = 0;
  std::vector<Perturbation> perturbations;
  double sigma = 0.0;
  std::vector<std::uint64_t> episode_seeds;
  std::uint64_t theta_version = 0;

  friend bool operator==(const TaskMessage&, const TaskMessage&) = default;
};

struct ResultMessage {
  std::uint64_t generation = 0;
  std::uint64_t seed = 0;
  int sign = 1;
  double reward = 0.0;
  std::uint64_t env_steps = 0;

  friend bool operator==(const ResultMessage&, const ResultMessage&) = default;
};

struct ParamsAck {
  std::uint64_t version = 0;
  std::uint64_t checksum = 0;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by a worker asked to serve a task for parameters it does not hold.
class StaleParameters : public std::runtime_error {
 public:
  StaleParameters(std::uint64_t held, std::uint64_t requested)
      : std::runtime_error("stale parameters: worker holds version " + std::to_string(held) + ", task needs " +
                           std::to_string(requested)),
        held_(held),
        requested_(requested) {}

  std::uint64_t held() const noexcept { return held_; }
  std::uint64_t requested() const noexcept { return requested_; }

 private:
  std::uint64_t held_;
  std::uint64_t requested_;
};

namespace detail {

inline int parse_sign(const json& j) {
  const int s = j.at("sign").get<int>();
  if (s != 1 && s != -1) throw ProtocolError("sign must be +1 or -1");
  return s;
}

}  // namespace detail

// --- spec / env -----------------------------------------------------------

inline json to_json(const MlpSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden_dims", spec.hidden_dims},
          {"output_dim", spec.output_dim},
          {"activation", to_string(spec.activation)}};
}

inline MlpSpec spec_from_json(const json& j) {
  MlpSpec spec;
  spec.input_dim = j.at("input_dim").get<std::size_t>();
  spec.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  spec.output_dim = j.at("output_dim").get<std::size_t>();
  spec.activation = parse_activation(j.at("activation").get<std::string>());
  spec.validate();
  return spec;
}

inline json to_json(const EnvConfig& env) {
  const auto& f = env.flappy;
  const auto& l = env.lineworld;
  return {{"kind", to_string(env.kind)},
          {"flappy",
           {{"gravity", f.gravity},
            {"flap_impulse", f.flap_impulse},
            {"pipe_gap", f.pipe_gap},
            {"pipe_spacing", f.pipe_spacing},
            {"world_height", f.world_height},
            {"frame_skip", f.frame_skip},
            {"max_episode_ticks", f.max_episode_ticks},
            {"pipe_width", f.pipe_width},
            {"max_fall_speed", f.max_fall_speed},
            {"gap_margin", f.gap_margin}}},
          {"lineworld",
           {{"length", l.length},
            {"step_penalty", l.step_penalty},
            {"goal_reward", l.goal_reward},
            {"max_steps", l.max_steps}}}};
}

inline EnvConfig env_from_json(const json& j) {
  EnvConfig env;
  env.kind = parse_env_kind(j.at("kind").get<std::string>());
  if (j.contains("flappy")) {
    const auto& f = j.at("flappy");
    auto& c = env.flappy;
    c.gravity = f.value("gravity", c.gravity);
    c.flap_impulse = f.value("flap_impulse", c.flap_impulse);
    c.pipe_gap = f.value("pipe_gap", c.pipe_gap);
    c.pipe_spacing = f.value("pipe_spacing", c.pipe_spacing);
    c.world_height = f.value("world_height", c.world_height);
    c.frame_skip = f.value("frame_skip", c.frame_skip);
    c.max_episode_ticks = f.value("max_episode_ticks", c.max_episode_ticks);
    c.pipe_width = f.value("pipe_width", c.pipe_width);
    c.max_fall_speed = f.value("max_fall_speed", c.max_fall_speed);
    c.gap_margin = f.value("gap_margin", c.gap_margin);
  }
  if (j.contains("lineworld")) {
    const auto& l = j.at("lineworld");
    auto& c = env.lineworld;
    c.length = l.value("length", c.length);
    c.step_penalty = l.value("step_penalty", c.step_penalty);
    c.goal_reward = l.value("goal_reward", c.goal_reward);
    c.max_steps = l.value("max_steps", c.max_steps);
  }
  env.validate();
  return env;
}

// --- messages -------------------------------------------------------------

inline json to_json(const TaskMessage& t) {
  json perts = json::array();
  for (const auto& p : t.perturbations) perts.push_back({{"seed", p.seed}, {"sign", p.sign}});
  return {{"type", "task"},
          {"generation", t.generation},
          {"perturbations", perts},
          {"sigma", t.sigma},
          {"episode_seeds", t.episode_seeds},
          {"theta_version", t.theta_version}};
}

inline TaskMessage task_from_json(const json& j) {
  TaskMessage t;
  t.generation = j.at("generation").get<std::uint64_t>();
  t.sigma = j.at("sigma").get<double>();
  t.episode_seeds = j.at("episode_seeds").get<std::vector<std::uint64_t>>();
  t.theta_version = j.at("theta_version").get<std::uint64_t>();
  for (const auto& p : j.at("perturbations"))
    t.perturbations.push_back({p.at("seed").get<std::uint64_t>(), detail::parse_sign(p)});
  if (t.perturbations.empty()) throw ProtocolError("task has no perturbations");
  return t;
}

inline json to_json(const ResultMessage& r) {
  if (!std::isfinite(r.reward)) throw ProtocolError("result reward must be finite");
  return {{"type", "result"},
          {"generation", r.generation},
          {"seed", r.seed},
          {"sign", r.sign},
          {"reward", r.reward},
          {"env_steps", r.env_steps}};
}

inline ResultMessage result_from_json(const json& j) {
  ResultMessage r;
  r.generation = j.at("generation").get<std::uint64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.sign = detail::parse_sign(j);
  if (!j.at("reward").is_number()) throw ProtocolError("result reward must be a number");
  r.reward = j.at("reward").get<double>();
  r.env_steps = j.at("env_steps").get<std::uint64_t>();
  return r;
}

// One wire line (without the trailing newline).
inline std::string encode_line(const json& j) { return j.dump(); }

inline std::string encode_result(const ResultMessage& r) { return encode_line(to_json(r)); }

inline json stale_error_json(const StaleParameters& e) {
  return {{"type", "error"},
          {"code", "stale_parameters"},
          {"held_version", e.held()},
          {"requested_version", e.requested()},
          {"message", e.what()}};
}

// --- worker-side evaluation ------------------------------------------------

// Reconstruct each perturbation from its seed, roll the perturbed policy out
// on every listed episode seed and report the mean return.
inline std::vector<ResultMessage> evaluate_task(const TaskMessage& task, std::uint64_t held_version,
                                                const ParameterVector& theta, const MlpSpec& spec, Environment& env) {
  if (task.theta_version != held_version) throw StaleParameters(held_version, task.theta_version);
  if (task.episode_seeds.empty()) throw ProtocolError("task lists no episode seeds");
  std::vector<ResultMessage> out;
  out.reserve(task.perturbations.size());
  for (const auto& p : task.perturbations) {
    const Mlp policy(spec, perturb(theta, task.sigma, p));
    ResultMessage r{task.generation, p.seed, p.sign, 0.0, 0};
    for (auto seed : task.episode_seeds) {
      const auto ep = run_greedy_episode(policy, env, seed);
      r.reward += ep.total_reward;
      r.env_steps += ep.steps;
    }
    r.reward /= static_cast<double>(task.episode_seeds.size());
    out.push_back(r);
  }
  return out;
}

// Worker state: policy shape, environment, and the current parameter broadcast.
class RolloutWorker {
 public:
  RolloutWorker(MlpSpec spec, EnvConfig env) : spec_(std::move(spec)), env_config_(env), env_(make_env(env)) {
    if (env_->observation_dim() != spec_.input_dim || env_->action_count() != spec_.output_dim)
      throw std::invalid_argument("policy " + describe(spec_) + " does not fit the " +
                                  std::string(to_string(env.kind)) + " environment");
  }

  ParamsAck load(const Mlp& net, std::uint64_t version) {
    if (!(net.spec() == spec_))
      throw ProtocolError("broadcast network " + describe(net.spec()) + " differs from handshake " + describe(spec_));
    theta_ = net.parameters();
    version_ = version;
    has_params_ = true;
    return {version_, checksum(theta_)};
  }

  std::vector<ResultMessage> evaluate(const TaskMessage& task) {
    if (!has_params_) throw StaleParameters(0, task.theta_version);
    return evaluate_task(task, version_, theta_, spec_, *env_);
  }

  const MlpSpec& spec() const { return spec_; }
  const EnvConfig& env_config() const { return env_config_; }
  std::uint64_t version() const { return version_; }

 private:
  MlpSpec spec_;
  EnvConfig env_config_;
  std::unique_ptr<Environment> env_;
  ParameterVector theta_;
  std::uint64_t version_ = 0;
  bool has_params_ = false;
};

}  // namespace esdrl
