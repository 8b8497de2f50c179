#pragma once

#include "config.hpp"
#include "core.hpp"
#include "dynamics.hpp"
#include "error.hpp"
#include "expm.hpp"
#include "nelder_mead.hpp"
#include "optimal_control.hpp"
#include "reduction.hpp"
#include "stability.hpp"
