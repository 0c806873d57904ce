#pragma once

#include "sproad/crf/bp.hpp"
#include "sproad/crf/compose.hpp"
#include "sproad/crf/gmm.hpp"
#include "sproad/crf/icm.hpp"
#include "sproad/crf/meanfield.hpp"
#include "sproad/crf/params.hpp"
#include "sproad/crf/region.hpp"
