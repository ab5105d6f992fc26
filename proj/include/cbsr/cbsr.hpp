#pragma once

// Covariate balancing propensity scores via tailored loss functions:
// Beta-family scoring rules, GLM / regularized / RKHS / boosted fitters,
// entropy-balancing duals, balance diagnostics, WATE estimators with honest
// finite-sample confidence intervals, and the simulation designs.

#include "cbsr/data_model.hpp"
#include "cbsr/dual_balance.hpp"
#include "cbsr/errors.hpp"
#include "cbsr/estimators.hpp"
#include "cbsr/fit_boost.hpp"
#include "cbsr/fit_kernel.hpp"
#include "cbsr/fit_regularized.hpp"
#include "cbsr/glm_fit.hpp"
#include "cbsr/inference.hpp"
#include "cbsr/mathutil.hpp"
#include "cbsr/rng.hpp"
#include "cbsr/scoring.hpp"
#include "cbsr/simulate.hpp"
