#pragma once

// Reference computations the library is checked against. Nothing here calls
// into the code under test except Mlp::forward.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "esdrl/nn.hpp"

namespace oracle {

struct Sample {
  std::vector<double> x;
  std::size_t action;
  double target;
};

inline double td_loss(const esdrl::Mlp& net, const std::vector<Sample>& batch) {
  double loss = 0.0;
  for (const auto& s : batch) {
    const double r = s.target - net.forward(s.x)[s.action];
    loss += r * r;
  }
  return loss / static_cast<double>(batch.size());
}

// Central differences of td_loss with step h.
inline std::vector<double> fd_gradient(const esdrl::Mlp& net, const std::vector<Sample>& batch, double h = 1e-5) {
  std::vector<double> g(net.parameter_count());
  esdrl::Mlp probe = net;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double orig = net.parameters()[k];
    probe.mutable_parameters()[k] = orig + h;
    const double up = td_loss(probe, batch);
    probe.mutable_parameters()[k] = orig - h;
    const double down = td_loss(probe, batch);
    probe.mutable_parameters()[k] = orig;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Objective F(theta) = -|theta - target|^2 and its exact gradient.
inline double quadratic(const std::vector<double>& theta, const std::vector<double>& target) {
  double acc = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) acc += (theta[i] - target[i]) * (theta[i] - target[i]);
  return -acc;
}

inline std::vector<double> quadratic_gradient(const std::vector<double>& theta, const std::vector<double>& target) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) g[i] = -2.0 * (theta[i] - target[i]);
  return g;
}

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

inline double relative_l2(const std::vector<double>& estimate, const std::vector<double>& truth) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    num += (estimate[i] - truth[i]) * (estimate[i] - truth[i]);
    den += truth[i] * truth[i];
  }
  return std::sqrt(num / den);
}

// Linear scan for the first row at or above a threshold.
template <typename Rows>
std::optional<double> first_crossing(const Rows& times, const Rows& values, double threshold) {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] >= threshold) return times[i];
  return std::nullopt;
}

}  // namespace oracle
