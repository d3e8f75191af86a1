#pragma once

#include "nowcast/calendar.hpp"
#include "nowcast/common.hpp"
#include "nowcast/config.hpp"
#include "nowcast/csv.hpp"
#include "nowcast/date.hpp"
#include "nowcast/delay.hpp"
#include "nowcast/epi.hpp"
#include "nowcast/mcmc.hpp"
#include "nowcast/posterior.hpp"
#include "nowcast/predict.hpp"
#include "nowcast/report.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/runner.hpp"
#include "nowcast/scoring.hpp"
#include "nowcast/series.hpp"
#include "nowcast/simulate.hpp"
#include "nowcast/triangle.hpp"
