#pragma once

#include "commands.hpp"
#include "config.hpp"
#include "control.hpp"
#include "delayed_ml.hpp"
#include "detsolver.hpp"
#include "errors.hpp"
#include "initial_function.hpp"
#include "linalg.hpp"
#include "mesh.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "sde_sim.hpp"
#include "specfun.hpp"
#include "system.hpp"
