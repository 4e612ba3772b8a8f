#pragma once

#include "adjsurv/errors.hpp"
#include "adjsurv/dataset.hpp"
#include "adjsurv/root_finding.hpp"
#include "adjsurv/stats.hpp"
#include "adjsurv/survival_core.hpp"
#include "adjsurv/adjustment.hpp"
#include "adjsurv/stratified.hpp"
#include "adjsurv/rng.hpp"
#include "adjsurv/forest.hpp"
#include "adjsurv/prognostic.hpp"
#include "adjsurv/design.hpp"
#include "adjsurv/parallel.hpp"
#include "adjsurv/simulation.hpp"
#include "adjsurv/version.hpp"
#include "adjsurv/csv.hpp"
#include "adjsurv/serialization.hpp"
