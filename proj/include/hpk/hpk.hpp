#pragma once

#include "hpk/checkpoint.hpp"
#include "hpk/data.hpp"
#include "hpk/error.hpp"
#include "hpk/estimators.hpp"
#include "hpk/evaluation.hpp"
#include "hpk/geometry.hpp"
#include "hpk/inference.hpp"
#include "hpk/model.hpp"
#include "hpk/optimizer.hpp"
#include "hpk/rng.hpp"
#include "hpk/sampling.hpp"
#include "hpk/tensor.hpp"
#include "hpk/train.hpp"
