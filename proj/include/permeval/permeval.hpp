#pragma once

// Umbrella header: the whole library in dependency order.

#include "permeval/errors.hpp"
#include "permeval/rng.hpp"
#include "permeval/dataset.hpp"
#include "permeval/protocol.hpp"
#include "permeval/extraction.hpp"
#include "permeval/matching.hpp"
#include "permeval/metrics.hpp"
#include "permeval/backends.hpp"
#include "permeval/report.hpp"
#include "permeval/runner.hpp"
