#pragma once

#include "noisy_esn/analytics.hpp"
#include "noisy_esn/errors.hpp"
#include "noisy_esn/esn.hpp"
#include "noisy_esn/experiments.hpp"
#include "noisy_esn/io.hpp"
#include "noisy_esn/noise.hpp"
#include "noisy_esn/timeseries.hpp"
#include "noisy_esn/topology.hpp"
