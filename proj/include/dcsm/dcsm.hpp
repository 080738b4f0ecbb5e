#pragma once

// Umbrella header.

#include "dcsm/dataset.hpp"
#include "dcsm/errors.hpp"
#include "dcsm/gating.hpp"
#include "dcsm/io.hpp"
#include "dcsm/metrics.hpp"
#include "dcsm/model.hpp"
#include "dcsm/rng.hpp"
#include "dcsm/synthetic.hpp"
#include "dcsm/trainer.hpp"
#include "dcsm/weibull.hpp"
