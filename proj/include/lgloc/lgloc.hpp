#pragma once

#include "lgloc/error.hpp"
#include "lgloc/quadrature.hpp"
#include "lgloc/beam.hpp"
#include "lgloc/psf.hpp"
#include "lgloc/rng.hpp"
#include "lgloc/detector.hpp"
#include "lgloc/readout.hpp"
#include "lgloc/fisher.hpp"
#include "lgloc/estimator.hpp"
#include "lgloc/harness.hpp"
#include "lgloc/lgis.hpp"
#include "lgloc/config.hpp"
