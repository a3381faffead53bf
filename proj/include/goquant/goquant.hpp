// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "goquant/error.hpp"
#include "goquant/format.hpp"
#include "goquant/geometry.hpp"
#include "goquant/kernel.hpp"
#include "goquant/lattice.hpp"
#include "goquant/matrix.hpp"
#include "goquant/oracle.hpp"
#include "goquant/precondition.hpp"
#include "goquant/quantizer.hpp"
#include "goquant/solver.hpp"
