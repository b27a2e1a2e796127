#pragma once

#include "gridmanip/config.hpp"
#include "gridmanip/core.hpp"
#include "gridmanip/gridsim.hpp"
#include "gridmanip/harness.hpp"
#include "gridmanip/policy.hpp"
#include "gridmanip/qfunc.hpp"
#include "gridmanip/replay.hpp"
#include "gridmanip/reward.hpp"
#include "gridmanip/selfcheck.hpp"
#include "gridmanip/transition.hpp"
