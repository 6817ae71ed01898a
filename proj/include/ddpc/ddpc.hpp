#pragma once

/// Umbrella header for the data-driven predictive control library.

#include <ddpc/controller.hpp>
#include <ddpc/error.hpp>
#include <ddpc/estimation.hpp>
#include <ddpc/linalg.hpp>
#include <ddpc/mpc.hpp>
#include <ddpc/qp.hpp>
#include <ddpc/scenario.hpp>
#include <ddpc/simsys.hpp>
