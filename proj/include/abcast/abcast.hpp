#pragma once

#include "abcast/adversaries.hpp"
#include "abcast/clients.hpp"
#include "abcast/core_types.hpp"
#include "abcast/download_manager.hpp"
#include "abcast/engine.hpp"
#include "abcast/metrics.hpp"
#include "abcast/pools.hpp"
#include "abcast/reference_slot_table.hpp"
#include "abcast/replication_manager.hpp"
#include "abcast/scenario.hpp"
#include "abcast/sim_net.hpp"
#include "abcast/simulation.hpp"
#include "abcast/transport.hpp"
#include "abcast/update_manager.hpp"
#include "abcast/wire.hpp"
