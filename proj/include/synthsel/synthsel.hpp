#pragma once

#include "synthsel/benchmark.hpp"
#include "synthsel/bootstrap.hpp"
#include "synthsel/constrained_ls.hpp"
#include "synthsel/diagnostics.hpp"
#include "synthsel/divergence.hpp"
#include "synthsel/errors.hpp"
#include "synthsel/estimators.hpp"
#include "synthsel/factor_model.hpp"
#include "synthsel/io.hpp"
#include "synthsel/linalg.hpp"
#include "synthsel/mc_dof.hpp"
#include "synthsel/panel.hpp"
#include "synthsel/parallel.hpp"
#include "synthsel/rng.hpp"
#include "synthsel/selection.hpp"
#include "synthsel/simplex_qp.hpp"
#include "synthsel/stats.hpp"
