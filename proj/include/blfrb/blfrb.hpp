#pragma once

#include "blfrb/blb.hpp"
#include "blfrb/data_io.hpp"
#include "blfrb/dataset.hpp"
#include "blfrb/errors.hpp"
#include "blfrb/frb.hpp"
#include "blfrb/inference.hpp"
#include "blfrb/losses.hpp"
#include "blfrb/mscale.hpp"
#include "blfrb/robust_fit.hpp"
#include "blfrb/robustness.hpp"
#include "blfrb/rng.hpp"
#include "blfrb/wls.hpp"
