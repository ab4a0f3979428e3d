#pragma once

#include "pgmm/config.hpp"
#include "pgmm/coverage.hpp"
#include "pgmm/criterion.hpp"
#include "pgmm/dataset.hpp"
#include "pgmm/inference.hpp"
#include "pgmm/kde.hpp"
#include "pgmm/local_approx.hpp"
#include "pgmm/models.hpp"
#include "pgmm/moment_model.hpp"
#include "pgmm/optimize.hpp"
#include "pgmm/priors.hpp"
#include "pgmm/rng.hpp"
#include "pgmm/runner.hpp"
#include "pgmm/sampler.hpp"
#include "pgmm/stats.hpp"
