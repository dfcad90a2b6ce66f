#pragma once

#include "boostmt/autodiff.hpp"
#include "boostmt/data.hpp"
#include "boostmt/episodes.hpp"
#include "boostmt/errors.hpp"
#include "boostmt/eval.hpp"
#include "boostmt/gradcheck.hpp"
#include "boostmt/metrics.hpp"
#include "boostmt/model.hpp"
#include "boostmt/rng.hpp"
#include "boostmt/tensor.hpp"
#include "boostmt/trainers.hpp"
