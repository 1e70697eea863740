#pragma once

#include "grid.hpp"
#include "io.hpp"
#include "geometry.hpp"
#include "connection.hpp"
#include "flows.hpp"
#include "acs.hpp"
#include "calabi.hpp"
#include "star.hpp"
