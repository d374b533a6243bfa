#pragma once

#include "locex/config.hpp"
#include "locex/generators.hpp"
#include "locex/io.hpp"
#include "locex/local_empirical.hpp"
#include "locex/numeric.hpp"
#include "locex/premetric.hpp"
#include "locex/premetric_estimation.hpp"
#include "locex/randomization.hpp"
#include "locex/rng.hpp"
