#pragma once

#include "ovsim/errors.hpp"
#include "ovsim/parameters.hpp"
#include "ovsim/grid.hpp"
#include "ovsim/model.hpp"
#include "ovsim/solver.hpp"
#include "ovsim/diagnostics.hpp"
#include "ovsim/config.hpp"
#include "ovsim/io.hpp"
#include "ovsim/app.hpp"
#include "ovsim/cli.hpp"
