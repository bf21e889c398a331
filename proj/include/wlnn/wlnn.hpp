#ifndef WLNN_WLNN_HPP
#define WLNN_WLNN_HPP

#include "chain_basis.hpp"
#include "data.hpp"
#include "finite_width.hpp"
#include "flow.hpp"
#include "harness.hpp"
#include "limit_system.hpp"
#include "multilayer.hpp"
#include "numerics.hpp"
#include "stats.hpp"

#endif
