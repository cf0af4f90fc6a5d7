#pragma once

#include "gridshock/analyze.hpp"
#include "gridshock/csv.hpp"
#include "gridshock/error.hpp"
#include "gridshock/graph.hpp"
#include "gridshock/ingest.hpp"
#include "gridshock/mlp.hpp"
#include "gridshock/model.hpp"
#include "gridshock/rng.hpp"
#include "gridshock/simulate.hpp"
#include "gridshock/tensor.hpp"
#include "gridshock/timeutil.hpp"
#include "gridshock/topology.hpp"
#include "gridshock/train.hpp"
#include "gridshock/weather_effect.hpp"
