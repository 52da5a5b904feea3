#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "chdqr/evaluation.hpp"
#include "chdqr/training.hpp"

namespace chdqr {

// One train/calibrate/evaluate pipeline configuration.
struct RunConfig {
  SuiteDataset dataset;
  std::string method = "chdqr-dynamic";
  double alpha = 0.1;
  TrainConfig train;
  CqrConfig cqr;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

SuiteConfig suite_config_from_json(const nlohmann::json& j);
nlohmann::json suite_config_to_json(const SuiteConfig& cfg);

// Reads a JSON file and applies dotted-key overrides ("train.epochs=5").
// Override values are parsed as JSON when possible, else taken as strings.
nlohmann::json load_json_with_overrides(
    const std::string& path, const std::vector<std::string>& overrides);

// Applies overrides to an in-memory document (empty path case).
void apply_overrides(nlohmann::json& j,
                     const std::vector<std::string>& overrides);

// FNV-1a hash of the canonical dump, as fixed-width hex.
std::string config_hash(const nlohmann::json& j);

}  // namespace chdqr
