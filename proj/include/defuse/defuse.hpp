#pragma once

#include "defuse/dataset.hpp"
#include "defuse/engine.hpp"
#include "defuse/error.hpp"
#include "defuse/evaluation.hpp"
#include "defuse/experiment.hpp"
#include "defuse/graph.hpp"
#include "defuse/io.hpp"
#include "defuse/network.hpp"
#include "defuse/regressor.hpp"
#include "defuse/rng.hpp"
#include "defuse/stats.hpp"
#include "defuse/synth.hpp"
