#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "esdrl/envs.hpp"

namespace esdrl {

struct TabularSolution {
  // q[s][a] for a in {left, right}; the goal cell's row stays zero.
  std::vector<std::array<double, 2>> q;
  std::vector<std::size_t> greedy;  // one entry per cell; goal cell entry is unused
  std::vector<double> residuals;    // sup-norm change per sweep
};

// Exact Q* for LineWorld by synchronous Bellman sweeps.
inline TabularSolution value_iteration_oracle(const LineWorldConfig& config, double gamma, double tolerance = 1e-12,
                                              std::size_t max_sweeps = 1'000'000) {
  config.validate();
  const std::size_t n = config.length;
  const std::size_t goal = n - 1;
  TabularSolution sol;
  sol.q.assign(n, {0.0, 0.0});

  auto successor = [&](std::size_t s, std::size_t a) {
    if (a == LineWorldEnv::kRight) return s + 1;
    return s == 0 ? s : s - 1;
  };

  std::vector<std::array<double, 2>> next(n, {0.0, 0.0});
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double residual = 0.0;
    for (std::size_t s = 0; s < goal; ++s) {
      for (std::size_t a = 0; a < 2; ++a) {
        const std::size_t s2 = successor(s, a);
        double value;
        if (s2 == goal) {
          value = config.goal_reward;
        } else {
          value = -config.step_penalty + gamma * std::max(sol.q[s2][0], sol.q[s2][1]);
        }
        residual = std::max(residual, std::abs(value - sol.q[s][a]));
        next[s][a] = value;
      }
    }
    sol.q.swap(next);
    sol.residuals.push_back(residual);
    if (residual < tolerance) break;
  }

  sol.greedy.assign(n, LineWorldEnv::kRight);
  for (std::size_t s = 0; s < goal; ++s) sol.greedy[s] = sol.q[s][1] > sol.q[s][0] ? 1 : 0;
  return sol;
}

// Greedy action of a network in every non-terminal LineWorld cell.
inline std::vector<std::size_t> lineworld_greedy_policy(const Mlp& policy, std::size_t length) {
  std::vector<std::size_t> actions(length - 1);
  for (std::size_t s = 0; s + 1 < length; ++s)
    actions[s] = greedy_action(policy, LineWorldEnv::one_hot(length, s));
  return actions;
}

inline bool matches_oracle(const Mlp& policy, const TabularSolution& oracle) {
  const auto actions = lineworld_greedy_policy(policy, oracle.q.size());
  for (std::size_t s = 0; s < actions.size(); ++s)
    if (actions[s] != oracle.greedy[s]) return false;
  return true;
}

}  // namespace esdrl
