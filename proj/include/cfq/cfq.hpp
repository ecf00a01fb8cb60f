#pragma once

// Umbrella header: the whole library.

#include "cfq/actor.hpp"
#include "cfq/autodiff.hpp"
#include "cfq/balanced_repr.hpp"
#include "cfq/checkpoint.hpp"
#include "cfq/config.hpp"
#include "cfq/critic.hpp"
#include "cfq/data.hpp"
#include "cfq/diagnostics.hpp"
#include "cfq/layers.hpp"
#include "cfq/optim.hpp"
#include "cfq/policy_expert.hpp"
#include "cfq/rng.hpp"
#include "cfq/simulator.hpp"
#include "cfq/svg.hpp"
#include "cfq/tensor.hpp"
#include "cfq/trainer.hpp"
