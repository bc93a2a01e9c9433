#pragma once

#include "fcshrink/connectivity.hpp"
#include "fcshrink/error.hpp"
#include "fcshrink/pipeline.hpp"
#include "fcshrink/reliability.hpp"
#include "fcshrink/shrinkage.hpp"
#include "fcshrink/simulator.hpp"
#include "fcshrink/timeseries.hpp"
