#pragma once

#include "esdrl/checkpoint.hpp"
#include "esdrl/config.hpp"
#include "esdrl/dqn.hpp"
#include "esdrl/envs.hpp"
#include "esdrl/es.hpp"
#include "esdrl/harness.hpp"
#include "esdrl/net.hpp"
#include "esdrl/nn.hpp"
#include "esdrl/protocol.hpp"
#include "esdrl/rng.hpp"
#include "esdrl/transfer.hpp"
#include "esdrl/value_iteration.hpp"
#include "esdrl/worker.hpp"
