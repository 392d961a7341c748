#pragma once

// Umbrella header for the whole library.

#include "smoe/checkpoint.hpp"
#include "smoe/ep_sim.hpp"
#include "smoe/error.hpp"
#include "smoe/eval.hpp"
#include "smoe/gradcheck.hpp"
#include "smoe/model_config.hpp"
#include "smoe/moe.hpp"
#include "smoe/rng.hpp"
#include "smoe/routing_analytics.hpp"
#include "smoe/tensor.hpp"
#include "smoe/threading.hpp"
#include "smoe/tokenizer.hpp"
#include "smoe/trace.hpp"
#include "smoe/trainer.hpp"
#include "smoe/transformer.hpp"
#include "smoe/version.hpp"
