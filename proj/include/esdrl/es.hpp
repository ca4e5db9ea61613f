#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <vector>

#include "esdrl/nn.hpp"
#include "esdrl/rng.hpp"

namespace esdrl {

enum class FitnessShaping { Raw, CenteredRank };

inline const char* to_string(FitnessShaping f) { return f == FitnessShaping::Raw ? "raw" : "centered_rank"; }

inline FitnessShaping parse_fitness_shaping(const std::string& s) {
  if (s == "raw") return FitnessShaping::Raw;
  if (s == "centered_rank") return FitnessShaping::CenteredRank;
  throw std::invalid_argument("unknown fitness shaping '" + s + "'");
}

struct EsConfig {
  double sigma = 0.05;
  double learning_rate = 0.005;
  std::size_t population_size = 16;
  bool antithetic = true;
  FitnessShaping fitness_shaping = FitnessShaping::CenteredRank;
  std::uint64_t master_seed = 0;
  std::size_t max_generations = 1000;
  std::size_t episodes_per_eval = 1;
  // Evaluate every population member of a generation on the same episode seeds.
  bool common_episode_seeds = true;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("es.sigma must be > 0");
    // A zero step size is accepted; it freezes theta.
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("es.learning_rate must be >= 0");
    if (population_size < 2) throw std::invalid_argument("es.population_size must be >= 2");
    if (antithetic && population_size % 2 != 0)
      throw std::invalid_argument("es.population_size must be even with antithetic sampling");
    if (episodes_per_eval == 0) throw std::invalid_argument("es.episodes_per_eval must be >= 1");
  }

  friend bool operator==(const EsConfig&, const EsConfig&) = default;
};

struct Perturbation {
  std::uint64_t seed = 0;
  int sign = 1;

  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

// Seeds for one generation. Antithetic populations list each seed twice,
// positive mirror first.
inline std::vector<Perturbation> make_population(const EsConfig& config, std::uint64_t generation) {
  config.validate();
  const std::size_t distinct = config.antithetic ? config.population_size / 2 : config.population_size;
  SplitMix64 stream(config.master_seed ^ mix64(generation ^ 0x5EED5EED5EED5EEDULL));
  std::unordered_set<std::uint64_t> seen;
  std::vector<Perturbation> population;
  population.reserve(config.population_size);
  while (seen.size() < distinct) {
    const std::uint64_t seed = stream();
    if (!seen.insert(seed).second) continue;
    population.push_back({seed, +1});
    if (config.antithetic) population.push_back({seed, -1});
  }
  return population;
}

// Episode seed k for population member `index` of a generation.
inline std::uint64_t episode_seed(const EsConfig& config, std::uint64_t generation, std::size_t index,
                                  std::size_t k) {
  const std::uint64_t member = config.common_episode_seeds ? 0 : index + 1;
  return derive_seed(config.master_seed, 0xE915'0DE5'0000'0000ULL ^ generation, member * 1'000'003ULL + k);
}

inline std::vector<std::uint64_t> episode_seeds(const EsConfig& config, std::uint64_t generation,
                                                std::size_t index) {
  std::vector<std::uint64_t> seeds(config.episodes_per_eval);
  for (std::size_t k = 0; k < seeds.size(); ++k) seeds[k] = episode_seed(config, generation, index, k);
  return seeds;
}

// Centered ranks: rank/(n-1) - 0.5 with ascending ranks; tied rewards share
// the mean of their ranks.
inline std::vector<double> shape_fitness(std::span<const double> rewards, FitnessShaping mode) {
  const std::size_t n = rewards.size();
  if (n < 2) throw std::invalid_argument("shape_fitness needs at least two rewards");
  std::vector<double> out(rewards.begin(), rewards.end());
  if (mode == FitnessShaping::Raw) return out;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rewards[a] < rewards[b]; });
  const double denom = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && !(rewards[order[i]] < rewards[order[j]])) ++j;
    const double rank = 0.5 * static_cast<double>(i + j - 1);
    for (std::size_t k = i; k < j; ++k) out[order[k]] = rank / denom - 0.5;
    i = j;
  }
  return out;
}

struct GradientEstimate {
  std::vector<double> values;
  double population_mean_reward = 0.0;
  double population_max_reward = 0.0;
};

// g = 1/(n sigma) * sum_i F_i sign_i eps(seed_i). Adjacent members sharing a
// seed have their coefficients combined before the noise is regenerated, so
// mirrored pairs with equal fitness cancel exactly.
inline GradientEstimate estimate_gradient(const EsConfig& config, std::span<const Perturbation> perturbations,
                                          std::span<const double> shaped_rewards, std::size_t d,
                                          std::span<const double> raw_rewards = {}) {
  if (perturbations.size() != shaped_rewards.size())
    throw std::invalid_argument("estimate_gradient: " + std::to_string(perturbations.size()) +
                                " perturbations but " + std::to_string(shaped_rewards.size()) + " rewards");
  if (!raw_rewards.empty() && raw_rewards.size() != perturbations.size())
    throw std::invalid_argument("estimate_gradient: raw reward count mismatch");
  if (perturbations.empty()) throw std::invalid_argument("estimate_gradient: empty population");

  GradientEstimate est;
  est.values.assign(d, 0.0);
  const double scale = 1.0 / (static_cast<double>(perturbations.size()) * config.sigma);
  for (std::size_t i = 0; i < perturbations.size();) {
    double coeff = 0.0;
    std::size_t j = i;
    for (; j < perturbations.size() && perturbations[j].seed == perturbations[i].seed; ++j)
      coeff += shaped_rewards[j] * static_cast<double>(perturbations[j].sign);
    if (coeff != 0.0) {
      const auto eps = derive_noise(perturbations[i].seed, d);
      for (std::size_t k = 0; k < d; ++k) est.values[k] += coeff * eps[k];
    }
    i = j;
  }
  for (double& g : est.values) g *= scale;

  const auto stats = raw_rewards.empty() ? shaped_rewards : raw_rewards;
  est.population_mean_reward = std::accumulate(stats.begin(), stats.end(), 0.0) / static_cast<double>(stats.size());
  est.population_max_reward = *std::max_element(stats.begin(), stats.end());
  return est;
}

// theta + sigma * sign * eps(seed)
inline ParameterVector perturb(std::span<const double> theta, double sigma, const Perturbation& p) {
  ParameterVector out(theta.begin(), theta.end());
  const auto eps = derive_noise(p.seed, theta.size());
  const double s = sigma * static_cast<double>(p.sign);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += s * eps[k];
  return out;
}

struct EvalOutcome {
  double reward = 0.0;
  std::uint64_t env_steps = 0;
};

struct GenerationLog {
  std::uint64_t generation = 0;
  std::uint64_t env_steps_cum = 0;
  double wall_clock_s = 0.0;
  double mean_reward = 0.0;
  double max_reward = 0.0;
  double std_reward = 0.0;
  double grad_norm = 0.0;
  std::vector<double> raw_rewards;
};

// Running totals carried from one generation to the next.
struct EsProgress {
  std::uint64_t env_steps_cum = 0;
  double wall_clock_s = 0.0;
};

struct EsStepResult {
  ParameterVector theta;
  GenerationLog log;
};

class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(std::uint64_t generation, std::uint64_t seed, int sign, const std::string& what)
      : std::runtime_error("evaluation failed at generation " + std::to_string(generation) + ", seed " +
                           std::to_string(seed) + ", sign " + (sign > 0 ? "+" : "-") + ": " + what),
        generation_(generation),
        seed_(seed) {}

  std::uint64_t generation() const noexcept { return generation_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t generation_;
  std::uint64_t seed_;
};

inline double population_std(std::span<const double> values) {
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / n);
}

inline double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

// Shaping, gradient estimate and the ascent step for rewards gathered by any
// evaluator (local function or worker pool). `elapsed_s` and `env_steps` are
// this generation's costs.
inline EsStepResult es_apply(std::span<const double> theta, const EsConfig& config, std::uint64_t generation,
                             std::span<const Perturbation> population, std::span<const double> raw_rewards,
                             std::uint64_t env_steps, double elapsed_s, const EsProgress& before) {
  const auto shaped = shape_fitness(raw_rewards, config.fitness_shaping);
  const auto grad = estimate_gradient(config, population, shaped, theta.size(), raw_rewards);

  EsStepResult out;
  out.theta.assign(theta.begin(), theta.end());
  for (std::size_t k = 0; k < out.theta.size(); ++k) out.theta[k] += config.learning_rate * grad.values[k];

  GenerationLog& log = out.log;
  log.generation = generation;
  log.env_steps_cum = before.env_steps_cum + env_steps;
  log.wall_clock_s = before.wall_clock_s + elapsed_s;
  log.mean_reward = grad.population_mean_reward;
  log.max_reward = grad.population_max_reward;
  log.std_reward = population_std(raw_rewards);
  log.grad_norm = l2_norm(grad.values);
  log.raw_rewards.assign(raw_rewards.begin(), raw_rewards.end());
  return out;
}

namespace detail {

template <typename Evaluator>
EvalOutcome invoke_evaluator(Evaluator& evaluator, const ParameterVector& candidate, const EsConfig& config,
                             std::uint64_t generation, std::size_t index) {
  auto call = [&]() -> decltype(auto) {
    if constexpr (std::is_invocable_v<Evaluator&, const ParameterVector&, const std::vector<std::uint64_t>&>)
      return evaluator(candidate, episode_seeds(config, generation, index));
    else
      return evaluator(candidate);
  };
  if constexpr (std::is_same_v<std::decay_t<decltype(call())>, EvalOutcome>) {
    return call();
  } else {
    return EvalOutcome{static_cast<double>(call()), 0};
  }
}

}  // namespace detail

// One generation against a black-box evaluator. The evaluator receives the
// perturbed parameters (and, if it accepts them, the member's episode seeds)
// and returns either a reward or an EvalOutcome.
template <typename Evaluator>
EsStepResult es_step(std::span<const double> theta, const EsConfig& config, Evaluator&& evaluator,
                     std::uint64_t generation, const EsProgress& before = {}) {
  const auto start = std::chrono::steady_clock::now();
  const auto population = make_population(config, generation);
  std::vector<double> rewards(population.size());
  std::uint64_t env_steps = 0;
  for (std::size_t i = 0; i < population.size(); ++i) {
    const ParameterVector candidate = perturb(theta, config.sigma, population[i]);
    try {
      const EvalOutcome r = detail::invoke_evaluator(evaluator, candidate, config, generation, i);
      rewards[i] = r.reward;
      env_steps += r.env_steps;
    } catch (const EvaluationError&) {
      throw;
    } catch (const std::exception& e) {
      throw EvaluationError(generation, population[i].seed, population[i].sign, e.what());
    }
    if (!std::isfinite(rewards[i]))
      throw EvaluationError(generation, population[i].seed, population[i].sign, "non-finite reward");
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return es_apply(theta, config, generation, population, rewards, env_steps, elapsed, before);
}

inline void write_generation_csv_header(std::ostream& os) {
  os << "generation,env_steps_cum,wall_clock_s,mean_reward,max_reward,std_reward,grad_norm\n";
}

inline void write_generation_csv_row(std::ostream& os, const GenerationLog& log) {
  os << log.generation << ',' << log.env_steps_cum << ',' << log.wall_clock_s << ',' << log.mean_reward << ','
     << log.max_reward << ',' << log.std_reward << ',' << log.grad_norm << '\n';
}

}  // namespace esdrl
