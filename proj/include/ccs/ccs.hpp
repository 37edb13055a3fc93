#pragma once

#include "ccs/config.hpp"
#include "ccs/control.hpp"
#include "ccs/errors.hpp"
#include "ccs/geometry.hpp"
#include "ccs/metrics.hpp"
#include "ccs/mixture.hpp"
#include "ccs/parallel.hpp"
#include "ccs/protocols.hpp"
#include "ccs/report.hpp"
#include "ccs/rng.hpp"
#include "ccs/sampler.hpp"
#include "ccs/schedule.hpp"
#include "ccs/testbeds.hpp"
#include "ccs/verify.hpp"
