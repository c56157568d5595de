#pragma once

#include "prsrg/baselines.hpp"
#include "prsrg/certify.hpp"
#include "prsrg/config.hpp"
#include "prsrg/diagnostics.hpp"
#include "prsrg/errors.hpp"
#include "prsrg/experiment.hpp"
#include "prsrg/geometry.hpp"
#include "prsrg/matrix_io.hpp"
#include "prsrg/objective.hpp"
#include "prsrg/parallel.hpp"
#include "prsrg/problems.hpp"
#include "prsrg/pullback.hpp"
#include "prsrg/random.hpp"
#include "prsrg/solver.hpp"
#include "prsrg/trace.hpp"
#include "prsrg/tssrg.hpp"
