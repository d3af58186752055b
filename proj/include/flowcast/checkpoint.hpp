#pragma once

#include <string>
#include <vector>

#include "flowcast/config.hpp"
#include "flowcast/metrics.hpp"
#include "flowcast/model.hpp"
#include "flowcast/training.hpp"

namespace flowcast {

/// Everything needed to reproduce an evaluation bit for bit: the run config,
/// the fitted scalers, the training history, the test-partition KGE recorded
/// at train time, and the parameter tensors.
struct Checkpoint {
  RunConfig config;
  Scaler precip_scaler, temp_scaler, flow_scaler;
  std::vector<EpochRecord> history;
  KgeComponents test_kge;
  ModelParams params;
};

/// One JSON header line (config echo, scalers, history, test KGE, parameter
/// manifest) followed by the parameter values as little-endian float64 in
/// manifest order.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace flowcast
