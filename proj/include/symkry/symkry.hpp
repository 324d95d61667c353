#pragma once

// Umbrella header.

#include "symkry/core.hpp"
#include "symkry/harness.hpp"
#include "symkry/integrators.hpp"
#include "symkry/krylov.hpp"
#include "symkry/matfun.hpp"
#include "symkry/problems.hpp"
