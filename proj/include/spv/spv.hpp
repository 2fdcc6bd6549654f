#pragma once

#include "spv/error.hpp"
#include "spv/matrixio.hpp"
#include "spv/prox.hpp"
#include "spv/exemplars.hpp"
#include "spv/solvers.hpp"
#include "spv/dictionaries.hpp"
#include "spv/classifier.hpp"
#include "spv/metrics.hpp"
#include "spv/benchmark.hpp"
#include "spv/experiment.hpp"
#include "spv/report.hpp"
