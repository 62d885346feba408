#pragma once

#include "sslgcil/adir.hpp"
#include "sslgcil/augment.hpp"
#include "sslgcil/backbone.hpp"
#include "sslgcil/benchmark.hpp"
#include "sslgcil/checkpoint.hpp"
#include "sslgcil/common.hpp"
#include "sslgcil/config.hpp"
#include "sslgcil/dataset_io.hpp"
#include "sslgcil/experiment.hpp"
#include "sslgcil/metrics.hpp"
#include "sslgcil/parallel.hpp"
#include "sslgcil/rng.hpp"
#include "sslgcil/signal.hpp"
#include "sslgcil/task_store.hpp"
