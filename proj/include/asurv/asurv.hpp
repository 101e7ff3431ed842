#pragma once

#include "asurv/data.hpp"
#include "asurv/errors.hpp"
#include "asurv/estimators.hpp"
#include "asurv/evaluate.hpp"
#include "asurv/io.hpp"
#include "asurv/kernel.hpp"
#include "asurv/policy.hpp"
#include "asurv/rng.hpp"
#include "asurv/simulate.hpp"
