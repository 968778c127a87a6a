// Umbrella header.
#ifndef HTCL_HTCL_HPP
#define HTCL_HTCL_HPP

#include "htcl/model.hpp"
#include "htcl/tasks.hpp"
#include "htcl/replay_buffer.hpp"
#include "htcl/learners.hpp"
#include "htcl/curvature.hpp"
#include "htcl/consolidation.hpp"
#include "htcl/metrics.hpp"
#include "htcl/orchestrator.hpp"
#include "htcl/federated.hpp"
#include "htcl/experiment.hpp"
#include "htcl/audit.hpp"

#endif  // HTCL_HTCL_HPP
