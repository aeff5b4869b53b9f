#pragma once

#include "dgmm/datasets.hpp"
#include "dgmm/em.hpp"
#include "dgmm/error.hpp"
#include "dgmm/evaluation.hpp"
#include "dgmm/gaussian.hpp"
#include "dgmm/mixture.hpp"
#include "dgmm/model_io.hpp"
#include "dgmm/motion_model.hpp"
#include "dgmm/rng.hpp"
