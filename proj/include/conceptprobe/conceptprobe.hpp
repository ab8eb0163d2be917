#pragma once

#include "conceptprobe/adapters.hpp"
#include "conceptprobe/batch.hpp"
#include "conceptprobe/config.hpp"
#include "conceptprobe/embedding.hpp"
#include "conceptprobe/embedding_io.hpp"
#include "conceptprobe/error.hpp"
#include "conceptprobe/eval.hpp"
#include "conceptprobe/http_adapters.hpp"
#include "conceptprobe/rewards.hpp"
#include "conceptprobe/search.hpp"
#include "conceptprobe/sim_scenario.hpp"
#include "conceptprobe/sim_world.hpp"
#include "conceptprobe/trace_io.hpp"
