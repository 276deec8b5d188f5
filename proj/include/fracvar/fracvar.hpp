#pragma once

#include "fracvar/cli.hpp"
#include "fracvar/coeffs.hpp"
#include "fracvar/config.hpp"
#include "fracvar/energy.hpp"
#include "fracvar/error.hpp"
#include "fracvar/experiments.hpp"
#include "fracvar/fracops.hpp"
#include "fracvar/grid.hpp"
#include "fracvar/io.hpp"
#include "fracvar/manifest.hpp"
#include "fracvar/solvers.hpp"
#include "fracvar/spectral.hpp"
