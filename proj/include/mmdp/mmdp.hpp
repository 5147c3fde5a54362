#pragma once

// Everything: simulation, oracles, nuisance fitting, estimators, corruption
// scenarios and the experiment harness.

#include "mmdp/types.hpp"
#include "mmdp/rng.hpp"
#include "mmdp/regime.hpp"
#include "mmdp/policy.hpp"
#include "mmdp/spec.hpp"
#include "mmdp/simulate.hpp"
#include "mmdp/environments.hpp"
#include "mmdp/tabular.hpp"
#include "mmdp/oracle.hpp"
#include "mmdp/features.hpp"
#include "mmdp/models.hpp"
#include "mmdp/nuisance.hpp"
#include "mmdp/oracle_nuisance.hpp"
#include "mmdp/estimators.hpp"
#include "mmdp/scenarios.hpp"
#include "mmdp/io.hpp"
#include "mmdp/harness.hpp"
