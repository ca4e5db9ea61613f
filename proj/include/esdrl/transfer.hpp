#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "esdrl/nn.hpp"

namespace esdrl {

enum class TransferMode { Full, HiddenOnly };

inline const char* to_string(TransferMode m) { return m == TransferMode::Full ? "full" : "hidden_only"; }

inline TransferMode parse_transfer_mode(const std::string& s) {
  if (s == "full") return TransferMode::Full;
  if (s == "hidden_only" || s == "hidden") return TransferMode::HiddenOnly;
  throw std::invalid_argument("unknown transfer mode '" + s + "'");
}

struct WarmStart {
  Mlp online;
  Mlp target;
};

// Initialise a DQN online/target pair from an ES policy. HiddenOnly copies
// every hidden layer and draws a fresh output layer from `seed`; Full copies
// all layers. The target is an exact copy of the online network.
inline WarmStart warm_start_dqn(const Mlp& es_policy, const MlpSpec& dqn_spec, TransferMode mode, std::uint64_t seed) {
  const MlpSpec& src = es_policy.spec();
  dqn_spec.validate();
  const std::size_t layers = dqn_spec.layer_count();
  if (src.layer_count() != layers)
    throw std::invalid_argument("cannot transfer: ES policy has " + std::to_string(src.layer_count()) +
                                " layers, DQN network has " + std::to_string(layers));
  const std::size_t checked = mode == TransferMode::Full ? layers : layers - 1;
  for (std::size_t l = 0; l < checked; ++l) {
    if (src.fan_in(l) != dqn_spec.fan_in(l) || src.fan_out(l) != dqn_spec.fan_out(l))
      throw std::invalid_argument("cannot transfer: layer " + std::to_string(l) + " is " +
                                  std::to_string(src.fan_in(l)) + "x" + std::to_string(src.fan_out(l)) +
                                  " in the ES policy but " + std::to_string(dqn_spec.fan_in(l)) + "x" +
                                  std::to_string(dqn_spec.fan_out(l)) + " in the DQN network");
  }
  if (layers > 1 && src.activation != dqn_spec.activation)
    throw std::invalid_argument("cannot transfer: hidden activations differ");

  Mlp online = Mlp::glorot(dqn_spec, seed);
  const std::size_t copy_len = dqn_spec.layer_offset(checked);
  auto dst = online.mutable_parameters();
  std::copy_n(es_policy.parameters().begin(), copy_len, dst.begin());
  Mlp target = online;
  return {std::move(online), std::move(target)};
}

}  // namespace esdrl
