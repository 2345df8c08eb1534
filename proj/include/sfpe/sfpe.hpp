#pragma once

#include "sfpe/error.hpp"
#include "sfpe/expr.hpp"
#include "sfpe/random.hpp"
#include "sfpe/parallel.hpp"
#include "sfpe/problem.hpp"
#include "sfpe/sde.hpp"
#include "sfpe/lyapunov.hpp"
#include "sfpe/grid.hpp"
#include "sfpe/solver.hpp"
#include "sfpe/oracle.hpp"
#include "sfpe/config.hpp"
#include "sfpe/commands.hpp"
