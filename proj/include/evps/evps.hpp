#pragma once

#include "evps/core.hpp"
#include "evps/simulator.hpp"
#include "evps/representation.hpp"
#include "evps/analytic.hpp"
#include "evps/network.hpp"
#include "evps/eval.hpp"
#include "evps/io.hpp"
