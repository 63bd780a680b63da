#pragma once

#include "stic/error.hpp"
#include "stic/mesh.hpp"
#include "stic/time_grid.hpp"
#include "stic/kernel.hpp"
#include "stic/noise.hpp"
#include "stic/model.hpp"
#include "stic/parallel.hpp"
#include "stic/forward.hpp"
#include "stic/adjoint.hpp"
#include "stic/control.hpp"
#include "stic/config.hpp"
#include "stic/io.hpp"
#include "stic/scenario.hpp"
#include "stic/verify.hpp"
