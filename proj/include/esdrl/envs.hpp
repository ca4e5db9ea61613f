#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "esdrl/nn.hpp"
#include "esdrl/rng.hpp"

namespace esdrl {

struct EnvStep {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  std::map<std::string, double> info;
};

class StepAfterDone : public std::logic_error {
 public:
  StepAfterDone() : std::logic_error("step() called on a finished episode; call reset() first") {}
};

// Episodic environment with integer actions. Instances are single-owner.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::size_t observation_dim() const = 0;
  virtual std::size_t action_count() const = 0;
  virtual bool discrete_actions() const { return true; }
  virtual std::vector<double> reset(std::uint64_t episode_seed) = 0;
  virtual EnvStep step(std::size_t action) = 0;
};

// ---------------------------------------------------------------------------
// Flappy-style side scroller.
//
// Units are cells and ticks; y grows downward from the top of the world. The
// bird sits at x = 0 while pipes scroll left one cell per tick.

struct FlappyConfig {
  double gravity = 0.05;         // cells/tick^2
  double flap_impulse = -0.5;    // cells/tick, vertical speed set by a flap
  double pipe_gap = 4.0;         // cells
  std::size_t pipe_spacing = 30; // ticks between pipes
  double world_height = 20.0;    // cells
  std::size_t frame_skip = 4;
  std::size_t max_episode_ticks = 3000;
  double pipe_width = 2.0;       // cells
  double max_fall_speed = 1.0;   // cells/tick
  double gap_margin = 2.0;       // min distance between a gap edge and the world bounds

  double min_gap_center() const { return gap_margin + pipe_gap / 2.0; }
  double max_gap_center() const { return world_height - gap_margin - pipe_gap / 2.0; }

  void validate() const {
    if (!(pipe_gap > 0.0) || !(pipe_gap < world_height))
      throw std::invalid_argument("flappy.pipe_gap must be in (0, world_height)");
    if (frame_skip < 1) throw std::invalid_argument("flappy.frame_skip must be >= 1");
    if (max_episode_ticks < 1) throw std::invalid_argument("flappy.max_episode_ticks must be >= 1");
    if (pipe_spacing < 1) throw std::invalid_argument("flappy.pipe_spacing must be >= 1");
    if (!(gravity >= 0.0)) throw std::invalid_argument("flappy.gravity must be >= 0");
    if (!(pipe_width > 0.0)) throw std::invalid_argument("flappy.pipe_width must be > 0");
    if (!(max_fall_speed > 0.0)) throw std::invalid_argument("flappy.max_fall_speed must be > 0");
    if (min_gap_center() > max_gap_center())
      throw std::invalid_argument("flappy.gap_margin leaves no room for the gap");
  }

  friend bool operator==(const FlappyConfig&, const FlappyConfig&) = default;
};

class FlappyEnv final : public Environment {
 public:
  static constexpr std::size_t kNoop = 0;
  static constexpr std::size_t kFlap = 1;

  explicit FlappyEnv(FlappyConfig config = {}) : config_(config) { config_.validate(); }

  std::size_t observation_dim() const override { return 5; }
  std::size_t action_count() const override { return 2; }

  std::vector<double> reset(std::uint64_t episode_seed) override {
    rng_ = SplitMix64(derive_seed(episode_seed, 0xF1A9'9B1D'0000'0001ULL));
    y_ = config_.world_height / 2.0;
    vy_ = 0.0;
    ticks_ = 0;
    ticks_survived_ = 0;
    pipes_passed_ = 0;
    crashed_ = false;
    done_ = false;
    pipes_.clear();
    next_spawn_x_ = static_cast<double>(config_.pipe_spacing);
    spawn_ahead();
    return observe();
  }

  EnvStep step(std::size_t action) override {
    if (done_) throw StepAfterDone();
    if (action >= action_count()) throw std::invalid_argument("flappy: action out of range");

    std::size_t survived = 0;
    std::size_t passed = 0;
    bool crashed = false;
    bool truncated = false;
    for (std::size_t k = 0; k < config_.frame_skip; ++k) {
      if (action == kFlap) {
        vy_ = config_.flap_impulse;
      } else {
        vy_ = std::min(vy_ + config_.gravity, config_.max_fall_speed);
      }
      y_ += vy_;
      for (auto& pipe : pipes_) pipe.x -= 1.0;
      next_spawn_x_ -= 1.0;
      ++ticks_;

      if (collides()) {
        crashed = true;
        break;
      }
      while (!pipes_.empty() && pipes_.front().x + config_.pipe_width / 2.0 < 0.0) {
        pipes_.pop_front();
        ++passed;
      }
      spawn_ahead();
      ++survived;
      if (ticks_ >= config_.max_episode_ticks) {
        truncated = true;
        break;
      }
    }

    ticks_survived_ += survived;
    pipes_passed_ += passed;
    crashed_ = crashed;
    done_ = crashed || truncated;

    EnvStep out;
    out.reward = 0.1 * static_cast<double>(survived) / static_cast<double>(config_.frame_skip) +
                 1.0 * static_cast<double>(passed) - (crashed ? 1.0 : 0.0);
    out.done = done_;
    out.observation = observe();
    out.info = {{"pipes_passed", static_cast<double>(pipes_passed_)},
                {"ticks_survived", static_cast<double>(ticks_survived_)},
                {"ticks", static_cast<double>(ticks_)},
                {"crashed", crashed ? 1.0 : 0.0},
                {"truncated", truncated ? 1.0 : 0.0}};
    return out;
  }

  // Gap centre of the next pipe ahead of the bird.
  double next_gap_center() const { return next_pipe().gap_center; }
  double bird_y() const { return y_; }
  double bird_vy() const { return vy_; }
  double next_pipe_dx() const { return next_pipe().x; }
  const FlappyConfig& config() const { return config_; }

 private:
  struct Pipe {
    double x;
    double gap_center;
  };

  void spawn_ahead() {
    // Keep two pipes queued so the observation always has a "next" pipe.
    while (pipes_.size() < 2) {
      const double center = rng_.uniform(config_.min_gap_center(), config_.max_gap_center());
      pipes_.push_back({next_spawn_x_, center});
      next_spawn_x_ += static_cast<double>(config_.pipe_spacing);
    }
  }

  const Pipe& next_pipe() const {
    for (const auto& p : pipes_)
      if (p.x + config_.pipe_width / 2.0 >= 0.0) return p;
    return pipes_.back();
  }

  bool collides() const {
    if (y_ < 0.0 || y_ > config_.world_height) return true;
    for (const auto& p : pipes_) {
      if (std::abs(p.x) <= config_.pipe_width / 2.0) {
        const double top = p.gap_center - config_.pipe_gap / 2.0;
        const double bottom = p.gap_center + config_.pipe_gap / 2.0;
        if (y_ < top || y_ > bottom) return true;
      }
    }
    return false;
  }

  static double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

  std::vector<double> observe() const {
    const double h = config_.world_height;
    const Pipe& p = next_pipe();
    const double speed_scale = std::max(std::abs(config_.flap_impulse), config_.max_fall_speed);
    const double half_w = config_.pipe_width / 2.0;
    const double span = static_cast<double>(config_.pipe_spacing) + half_w;
    return {
        clamp_unit(2.0 * y_ / h - 1.0),
        clamp_unit(vy_ / speed_scale),
        clamp_unit(2.0 * (p.x + half_w) / span - 1.0),
        clamp_unit(2.0 * (p.gap_center - config_.pipe_gap / 2.0) / h - 1.0),
        clamp_unit(2.0 * (p.gap_center + config_.pipe_gap / 2.0) / h - 1.0),
    };
  }

  FlappyConfig config_;
  SplitMix64 rng_{0};
  double y_ = 0.0;
  double vy_ = 0.0;
  std::size_t ticks_ = 0;
  std::size_t ticks_survived_ = 0;
  std::size_t pipes_passed_ = 0;
  bool crashed_ = false;
  bool done_ = true;
  double next_spawn_x_ = 0.0;
  std::deque<Pipe> pipes_;
};

// ---------------------------------------------------------------------------
// LineWorld: corridor of `length` cells, start at 0, goal at length-1.

struct LineWorldConfig {
  std::size_t length = 10;
  double step_penalty = 0.01;
  double goal_reward = 1.0;
  std::size_t max_steps = 100;

  void validate() const {
    if (length < 2) throw std::invalid_argument("lineworld.length must be >= 2");
    if (max_steps < 1) throw std::invalid_argument("lineworld.max_steps must be >= 1");
  }

  friend bool operator==(const LineWorldConfig&, const LineWorldConfig&) = default;
};

class LineWorldEnv final : public Environment {
 public:
  static constexpr std::size_t kLeft = 0;
  static constexpr std::size_t kRight = 1;

  explicit LineWorldEnv(LineWorldConfig config = {}) : config_(config) { config_.validate(); }

  std::size_t observation_dim() const override { return config_.length; }
  std::size_t action_count() const override { return 2; }

  std::vector<double> reset(std::uint64_t /*episode_seed*/) override {
    position_ = 0;
    steps_ = 0;
    done_ = false;
    return observe();
  }

  EnvStep step(std::size_t action) override {
    if (done_) throw StepAfterDone();
    if (action >= action_count()) throw std::invalid_argument("lineworld: action out of range");
    if (action == kRight) {
      ++position_;
    } else if (position_ > 0) {
      --position_;
    }
    ++steps_;
    const bool at_goal = position_ + 1 == config_.length;
    const bool truncated = !at_goal && steps_ >= config_.max_steps;
    done_ = at_goal || truncated;

    EnvStep out;
    out.reward = at_goal ? config_.goal_reward : -config_.step_penalty;
    out.done = done_;
    out.observation = observe();
    out.info = {{"position", static_cast<double>(position_)},
                {"steps", static_cast<double>(steps_)},
                {"truncated", truncated ? 1.0 : 0.0}};
    return out;
  }

  std::size_t position() const { return position_; }
  const LineWorldConfig& config() const { return config_; }

  static std::vector<double> one_hot(std::size_t length, std::size_t cell) {
    std::vector<double> v(length, 0.0);
    v.at(cell) = 1.0;
    return v;
  }

 private:
  std::vector<double> observe() const { return one_hot(config_.length, position_); }

  LineWorldConfig config_;
  std::size_t position_ = 0;
  std::size_t steps_ = 0;
  bool done_ = true;
};

// ---------------------------------------------------------------------------

enum class EnvKind { Flappy, LineWorld };

inline const char* to_string(EnvKind k) { return k == EnvKind::Flappy ? "flappy" : "lineworld"; }

inline EnvKind parse_env_kind(const std::string& s) {
  if (s == "flappy") return EnvKind::Flappy;
  if (s == "lineworld") return EnvKind::LineWorld;
  throw std::invalid_argument("unknown environment '" + s + "'");
}

// Everything needed to build identical environment instances anywhere.
struct EnvConfig {
  EnvKind kind = EnvKind::Flappy;
  FlappyConfig flappy;
  LineWorldConfig lineworld;

  void validate() const {
    if (kind == EnvKind::Flappy) flappy.validate();
    else lineworld.validate();
  }

  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

inline std::unique_ptr<Environment> make_env(const EnvConfig& config) {
  if (config.kind == EnvKind::Flappy) return std::make_unique<FlappyEnv>(config.flappy);
  return std::make_unique<LineWorldEnv>(config.lineworld);
}

struct EpisodeResult {
  double total_reward = 0.0;
  std::uint64_t steps = 0;
};

// Roll out the argmax policy for one episode.
inline EpisodeResult run_greedy_episode(const Mlp& policy, Environment& env, std::uint64_t episode_seed) {
  EpisodeResult result;
  auto obs = env.reset(episode_seed);
  for (;;) {
    const EnvStep s = env.step(greedy_action(policy, obs));
    result.total_reward += s.reward;
    ++result.steps;
    if (s.done) break;
    obs = s.observation;
  }
  return result;
}

struct EvalSummary {
  double mean_reward = 0.0;
  double std_reward = 0.0;
  std::uint64_t env_steps = 0;
};

// Greedy evaluation over a fixed list of episode seeds.
inline EvalSummary evaluate_greedy(const Mlp& policy, Environment& env, std::span<const std::uint64_t> seeds) {
  EvalSummary out;
  if (seeds.empty()) return out;
  std::vector<double> rewards;
  rewards.reserve(seeds.size());
  for (auto seed : seeds) {
    const auto r = run_greedy_episode(policy, env, seed);
    rewards.push_back(r.total_reward);
    out.env_steps += r.steps;
  }
  double sum = 0.0;
  for (double r : rewards) sum += r;
  out.mean_reward = sum / static_cast<double>(rewards.size());
  double var = 0.0;
  for (double r : rewards) var += (r - out.mean_reward) * (r - out.mean_reward);
  out.std_reward = std::sqrt(var / static_cast<double>(rewards.size()));
  return out;
}

}  // namespace esdrl
