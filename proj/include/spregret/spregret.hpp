#pragma once

#include "spregret/errors.hpp"
#include "spregret/json_io.hpp"
#include "spregret/sparsity.hpp"
#include "spregret/model.hpp"
#include "spregret/conic.hpp"
#include "spregret/sls.hpp"
#include "spregret/synthesis.hpp"
#include "spregret/evaluation.hpp"
#include "spregret/experiments.hpp"
