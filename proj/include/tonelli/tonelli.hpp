#pragma once

// Umbrella header for the library.

#include "tonelli/action.hpp"
#include "tonelli/errors.hpp"
#include "tonelli/fixtures.hpp"
#include "tonelli/flow.hpp"
#include "tonelli/levels.hpp"
#include "tonelli/mane.hpp"
#include "tonelli/model.hpp"
#include "tonelli/parallel.hpp"
#include "tonelli/search.hpp"
#include "tonelli/shoot.hpp"
#include "tonelli/torus.hpp"
