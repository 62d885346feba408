#pragma once

// Small configuration shared by the harness and CLI tests: 3 tasks over a
// 15-class universe, short frames and a narrow backbone.

#include "sslgcil/config.hpp"

namespace sslgcil::testing {

inline Json tiny_config_json() {
  return Json::parse(R"({
    "geometry": { "frame_length": 2048, "azimuth_jitter_deg": 3.0 },
    "benchmark": {
      "num_tasks": 3, "classes_per_task": 8, "new_per_task": 4, "class_stride_deg": 24,
      "lambda_schedule": { "start": 0.1, "step": 0.1 }, "max_count": 24
    },
    "backbone": { "hidden_dim": 32, "epochs": 4, "batch_size": 32, "dropout": 0.1 },
    "run": { "seed": 3, "snr_list": ["clean", 0] }
  })");
}

inline ExperimentConfig tiny_config() { return config_from_json(tiny_config_json()); }

}  // namespace sslgcil::testing
