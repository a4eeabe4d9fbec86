#pragma once

#include "excursion/error.hpp"
#include "excursion/rng.hpp"
#include "excursion/panel.hpp"
#include "excursion/design.hpp"
#include "excursion/estimate.hpp"
#include "excursion/simulate.hpp"
#include "excursion/mc.hpp"
#include "excursion/json_io.hpp"
#include "excursion/cli.hpp"
