#pragma once

#include "acc/agents.hpp"
#include "acc/analysis.hpp"
#include "acc/calibrator.hpp"
#include "acc/config.hpp"
#include "acc/critic.hpp"
#include "acc/envs.hpp"
#include "acc/errors.hpp"
#include "acc/harness.hpp"
#include "acc/nn.hpp"
#include "acc/policy.hpp"
#include "acc/replay.hpp"
#include "acc/rng.hpp"
