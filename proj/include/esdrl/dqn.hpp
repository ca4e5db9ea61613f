#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "esdrl/envs.hpp"
#include "esdrl/nn.hpp"
#include "esdrl/rng.hpp"

namespace esdrl {

struct DqnConfig {
  double gamma = 0.90;
  std::size_t buffer_capacity = 10'000;
  std::size_t batch_size = 32;
  double learning_rate = 5e-5;
  std::size_t target_sync_every = 1'000;
  double eps_start = 0.2;
  double eps_end = 0.0001;
  double eps_anneal_fraction = 0.1;
  std::size_t total_timesteps = 1'000'000;
  std::size_t train_every = 4;
  std::size_t learning_starts = 320;
  std::uint64_t seed = 0;
  // Environments stepped in lockstep; their transitions share one buffer.
  std::size_t num_envs = 1;
  // Environment steps between learning-curve evaluations.
  std::size_t eval_interval = 10'000;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("dqn.gamma must be in [0, 1]");
    if (buffer_capacity == 0) throw std::invalid_argument("dqn.buffer_capacity must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("dqn.batch_size must be >= 1");
    if (batch_size > buffer_capacity) throw std::invalid_argument("dqn.batch_size must be <= dqn.buffer_capacity");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("dqn.learning_rate must be > 0");
    if (target_sync_every == 0) throw std::invalid_argument("dqn.target_sync_every must be >= 1");
    if (!(eps_start >= 0.0 && eps_start <= 1.0)) throw std::invalid_argument("dqn.eps_start must be in [0, 1]");
    if (!(eps_end >= 0.0 && eps_end <= 1.0)) throw std::invalid_argument("dqn.eps_end must be in [0, 1]");
    if (eps_end > eps_start) throw std::invalid_argument("dqn.eps_end must be <= dqn.eps_start");
    if (!(eps_anneal_fraction > 0.0 && eps_anneal_fraction <= 1.0))
      throw std::invalid_argument("dqn.eps_anneal_fraction must be in (0, 1]");
    if (train_every == 0) throw std::invalid_argument("dqn.train_every must be >= 1");
    if (num_envs == 0) throw std::invalid_argument("dqn.num_envs must be >= 1");
    if (eval_interval == 0) throw std::invalid_argument("dqn.eval_interval must be >= 1");
  }

  friend bool operator==(const DqnConfig&, const DqnConfig&) = default;
};

struct Transition {
  std::vector<double> state;
  std::size_t action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
};

// Fixed-capacity ring store; the oldest transition is overwritten once full.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be >= 1");
    storage_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(Transition t) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  std::size_t size() const noexcept { return storage_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }

  // Slot-order access; slot order is not insertion order once wrapped.
  const Transition& at(std::size_t slot) const { return storage_.at(slot); }

  // Uniform sampling with replacement.
  std::vector<std::size_t> sample_indices(std::size_t count, SplitMix64& rng) const {
    if (storage_.empty()) throw std::logic_error("cannot sample from an empty replay buffer");
    std::vector<std::size_t> idx(count);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(storage_.size()));
    return idx;
  }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> storage_;
};

// Linear anneal over the first eps_anneal_fraction of training, then flat.
inline double epsilon_at(std::uint64_t step, const DqnConfig& config) {
  const double window = config.eps_anneal_fraction * static_cast<double>(config.total_timesteps);
  if (window <= 0.0 || static_cast<double>(step) >= window) return config.eps_end;
  const double frac = static_cast<double>(step) / window;
  return config.eps_start + frac * (config.eps_end - config.eps_start);
}

inline std::size_t select_action(const Mlp& policy, std::span<const double> observation, double epsilon,
                                 SplitMix64& rng) {
  const double u = rng.uniform();
  if (u < epsilon) return static_cast<std::size_t>(rng.below(policy.spec().output_dim));
  return greedy_action(policy, observation);
}

// y = r for terminal transitions, else r + gamma * max_a' Q_target(s', a').
inline std::vector<double> td_targets(const Mlp& target, std::span<const Transition* const> batch, double gamma) {
  if (batch.empty()) throw std::invalid_argument("td_targets: empty batch");
  std::vector<double> y(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const Transition& t = *batch[j];
    if (t.done) {
      y[j] = t.reward;
    } else {
      const auto q = target.forward(t.next_state);
      y[j] = t.reward + gamma * *std::max_element(q.begin(), q.end());
    }
  }
  return y;
}

inline std::vector<double> td_targets(const Mlp& target, std::span<const Transition> batch, double gamma) {
  std::vector<const Transition*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& t : batch) ptrs.push_back(&t);
  return td_targets(target, std::span<const Transition* const>(ptrs), gamma);
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
    }
  }
};

struct TrainOutcome {
  bool trained = false;  // false: buffer or step count below the warm-up threshold
  double loss = 0.0;
};

// One minibatch update of the online network. The target network is read only.
inline TrainOutcome train_step(Mlp& online, const Mlp& target, const ReplayBuffer& buffer, const DqnConfig& config,
                               AdamState& optimizer, SplitMix64& rng, std::uint64_t global_step) {
  if (buffer.size() < config.batch_size || global_step < config.learning_starts) return {};
  const auto idx = buffer.sample_indices(config.batch_size, rng);
  std::vector<const Transition*> batch;
  batch.reserve(idx.size());
  for (auto i : idx) batch.push_back(&buffer.at(i));
  const auto y = td_targets(target, std::span<const Transition* const>(batch), config.gamma);

  std::vector<TdSample> samples(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) samples[j] = {batch[j]->state, batch[j]->action, y[j]};
  const TdGradient g = online.backward_td(samples);
  optimizer.step(online.mutable_parameters(), g.gradient, config.learning_rate);
  return {true, g.loss};
}

inline void sync_target(const Mlp& online, Mlp& target) {
  if (!(online.spec() == target.spec()))
    throw std::invalid_argument("sync_target: network shapes differ (" + describe(online.spec()) + " vs " +
                                describe(target.spec()) + ")");
  target.load(online.parameters());
}

struct DqnCurveRow {
  std::uint64_t step = 0;
  std::uint64_t env_steps_cum = 0;
  double wall_clock_s = 0.0;
  double mean_eval_reward = 0.0;
  double std_eval_reward = 0.0;
  double epsilon = 0.0;
  double loss = std::numeric_limits<double>::quiet_NaN();
};

struct DqnResult {
  Mlp online;
  Mlp target;
  std::vector<DqnCurveRow> curve;
};

// Offsets added to the cumulative curve axes (e.g. cost of an ES pretraining phase).
struct CurveOffset {
  std::uint64_t env_steps = 0;
  double wall_clock_s = 0.0;
};

using EnvFactory = std::function<std::unique_ptr<Environment>()>;

// Full training loop: epsilon-greedy acting, replay, periodic target sync.
// Evaluation time is excluded from the wall-clock axis.
inline DqnResult run_dqn(const EnvFactory& make, const DqnConfig& config, const MlpSpec& spec,
                         const std::optional<Mlp>& initial, std::span<const std::uint64_t> eval_seeds,
                         const CurveOffset& offset = {}) {
  config.validate();
  std::vector<std::unique_ptr<Environment>> envs;
  for (std::size_t i = 0; i < config.num_envs; ++i) {
    envs.push_back(make());
    if (!envs.back()->discrete_actions())
      throw std::invalid_argument("DQN requires an environment with discrete actions");
    if (envs.back()->observation_dim() != spec.input_dim || envs.back()->action_count() != spec.output_dim)
      throw std::invalid_argument("network " + describe(spec) + " does not match the environment's dimensions");
  }
  auto eval_env = make();

  Mlp online = initial ? *initial : Mlp::glorot(spec, derive_seed(config.seed, 0xD0'0001));
  if (!(online.spec() == spec)) throw std::invalid_argument("initial policy shape does not match the DQN network");
  Mlp target = online;

  ReplayBuffer buffer(config.buffer_capacity);
  AdamState adam;
  SplitMix64 rng(derive_seed(config.seed, 0xD0'0002));
  std::uint64_t episode_counter = 0;
  auto next_episode_seed = [&] { return derive_seed(config.seed, 0xD0'0003, episode_counter++); };

  std::vector<std::vector<double>> obs(envs.size());
  for (std::size_t i = 0; i < envs.size(); ++i) obs[i] = envs[i]->reset(next_episode_seed());

  DqnResult result{online, target, {}};
  double train_seconds = 0.0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::uint64_t steps = 0;

  auto record = [&]() {
    const auto eval = evaluate_greedy(online, *eval_env, eval_seeds);
    DqnCurveRow row;
    row.step = steps;
    row.env_steps_cum = offset.env_steps + steps;
    row.wall_clock_s = offset.wall_clock_s + train_seconds;
    row.mean_eval_reward = eval.mean_reward;
    row.std_eval_reward = eval.std_reward;
    row.epsilon = epsilon_at(steps, config);
    if (loss_count > 0) row.loss = loss_sum / static_cast<double>(loss_count);
    loss_sum = 0.0;
    loss_count = 0;
    result.curve.push_back(row);
  };

  record();
  std::uint64_t next_eval = config.eval_interval;
  while (steps < config.total_timesteps) {
    const auto start = std::chrono::steady_clock::now();
    const double eps = epsilon_at(steps, config);
    const std::size_t k = std::min<std::size_t>(envs.size(), config.total_timesteps - steps);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t a = select_action(online, obs[i], eps, rng);
      EnvStep s = envs[i]->step(a);
      const bool truncated = s.info.count("truncated") && s.info.at("truncated") > 0.0;
      buffer.push({obs[i], a, s.reward, s.observation, s.done && !truncated});
      obs[i] = s.done ? envs[i]->reset(next_episode_seed()) : std::move(s.observation);
    }
    for (std::size_t i = 0; i < k; ++i) {
      ++steps;
      if (steps % config.train_every == 0) {
        const auto t = train_step(online, target, buffer, config, adam, rng, steps);
        if (t.trained) {
          loss_sum += t.loss;
          ++loss_count;
        }
      }
      if (steps % config.target_sync_every == 0) sync_target(online, target);
    }
    train_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (steps >= next_eval || steps >= config.total_timesteps) {
      record();
      while (next_eval <= steps) next_eval += config.eval_interval;
    }
  }

  result.online = std::move(online);
  result.target = std::move(target);
  return result;
}

inline void write_dqn_csv_header(std::ostream& os) {
  os << "step,env_steps_cum,wall_clock_s,mean_eval_reward,std_eval_reward,epsilon,loss\n";
}

inline void write_dqn_csv_row(std::ostream& os, const DqnCurveRow& r) {
  os << r.step << ',' << r.env_steps_cum << ',' << r.wall_clock_s << ',' << r.mean_eval_reward << ','
     << r.std_eval_reward << ',' << r.epsilon << ',' << r.loss << '\n';
}

}  // namespace esdrl
