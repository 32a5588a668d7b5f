#pragma once

#include "droptop/tensor.hpp"
#include "droptop/rng.hpp"
#include "droptop/backbone.hpp"
#include "droptop/debias.hpp"
#include "droptop/intensity.hpp"
#include "droptop/replay.hpp"
#include "droptop/stream.hpp"
#include "droptop/metrics.hpp"
#include "droptop/config.hpp"
#include "droptop/harness.hpp"
