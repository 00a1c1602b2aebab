#pragma once

// Umbrella header: the whole periodic evolution-inclusion toolkit.

#include "evi/errors.hpp"
#include "evi/grid.hpp"
#include "evi/monotone.hpp"
#include "evi/multimap.hpp"
#include "evi/cauchy.hpp"
#include "evi/periodic.hpp"
#include "evi/relaxation.hpp"
#include "evi/scenario.hpp"
