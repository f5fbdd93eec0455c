#pragma once

#include "pdqd/units.hpp"
#include "pdqd/error.hpp"
#include "pdqd/capnet.hpp"
#include "pdqd/network_file.hpp"
#include "pdqd/honeycomb.hpp"
#include "pdqd/map_io.hpp"
#include "pdqd/extract.hpp"
#include "pdqd/cli.hpp"
