#pragma once

#include <string>

#include "chdqr/baselines.hpp"
#include "chdqr/conformal.hpp"
#include "chdqr/training.hpp"

namespace chdqr {

// Container: magic "CHDQRCK1", little-endian u64 header length, JSON header
// with a tensor manifest (name, rows, cols, offset in doubles), then all
// tensor payloads as little-endian f64 in row-major order.
struct Checkpoint {
  std::string method;
  std::string config_hash;
  TrainState state;  // density methods; optimizer state is not persisted
  CqrModel cqr;      // method == "cqr"
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void save_calibration(const CalibrationResult& cal, const std::string& path);
CalibrationResult load_calibration(const std::string& path);

}  // namespace chdqr
