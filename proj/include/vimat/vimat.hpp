#pragma once

// Umbrella header: the full assembly-monitoring toolkit.

#include "vimat/calib_io.hpp"
#include "vimat/errors.hpp"
#include "vimat/evaluation.hpp"
#include "vimat/fusion.hpp"
#include "vimat/geometry.hpp"
#include "vimat/ingest.hpp"
#include "vimat/pipeline.hpp"
#include "vimat/planner.hpp"
#include "vimat/protocol.hpp"
#include "vimat/reasoner.hpp"
#include "vimat/simulator.hpp"
#include "vimat/task.hpp"
#include "vimat/task_parser.hpp"
