#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "chdqr/baselines.hpp"
#include "chdqr/conformal.hpp"
#include "chdqr/data.hpp"
#include "chdqr/training.hpp"

namespace chdqr {

// Frozen predictor snapshot: coverage and region size queries.
class RegionPredictor {
 public:
  virtual ~RegionPredictor() = default;
  virtual bool covers(const Eigen::VectorXd& x, const Eigen::VectorXd& y) = 0;
  virtual double region_area(const Eigen::VectorXd& x) = 0;
};

// Density-model path (grid / chdqr / chdqr-dynamic): conformal HDR regions.
class DensityRegionPredictor : public RegionPredictor {
 public:
  DensityRegionPredictor(const TrainState& state, double q_hat)
      : state_(state), q_hat_(q_hat) {}
  bool covers(const Eigen::VectorXd& x, const Eigen::VectorXd& y) override;
  double region_area(const Eigen::VectorXd& x) override;
  PredictionRegion region(const Eigen::VectorXd& x);

 private:
  RegionProbabilities probs_for(const Eigen::VectorXd& x);
  const TrainState& state_;
  double q_hat_;
};

class CqrRegionPredictor : public RegionPredictor {
 public:
  explicit CqrRegionPredictor(CqrModel& model) : model_(model) {}
  bool covers(const Eigen::VectorXd& x, const Eigen::VectorXd& y) override {
    return model_.covers(x, y);
  }
  double region_area(const Eigen::VectorXd& x) override {
    return model_.region_volume(x);
  }

 private:
  CqrModel& model_;
};

// Fraction of test pairs with y inside the predicted region.
double coverage(const Dataset& test, RegionPredictor& predictor);

// Mean region size over test inputs, in raw target units.
double pinaw(const Dataset& test, RegionPredictor& predictor);

struct MetricsReport {
  std::string method, dataset;
  double alpha = 0.1;
  std::uint64_t seed = 0;
  double coverage = 0.0;
  double pinaw = 0.0;             // raw target units
  double pinaw_normalized = 0.0;  // divided by the product of target stds
  int final_k = 0;
  double runtime_seconds = 0.0;
  long cqr_crossings = 0;
  bool failed = false;
  std::string error;
};

struct SuiteDataset {
  std::string name;  // uncond1d | uncond2d | csv path handled via csv_path
  int n = 10000;
  std::uint64_t data_seed = 1;
  int outliers_per_component = 0;
  std::string csv_path;
  std::vector<std::string> target_columns;
};

struct SuiteConfig {
  std::vector<SuiteDataset> datasets;
  std::vector<std::string> methods = {"grid", "cqr", "chdqr", "chdqr-dynamic"};
  std::vector<double> alphas = {0.1, 0.5, 0.9};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  TrainConfig train;
  CqrConfig cqr;
  int workers = 1;
  bool emit_regions = false;
  std::string out_dir;
};

Dataset make_dataset(const SuiteDataset& spec);

// Method-specific switches layered onto a shared base config.
TrainConfig config_for_method(TrainConfig base, Method m);

// Trains, calibrates, and evaluates one (dataset, method, alpha, seed) cell.
// Density methods are trained once per seed and calibrated per alpha by the
// suite driver; this entry point is the single-run building block.
MetricsReport run_single(const SuiteDataset& dspec, const std::string& method,
                         double alpha, std::uint64_t seed,
                         const SuiteConfig& cfg);

// Full protocol: every (dataset, method, alpha, seed) cell on byte-identical
// splits, aggregated mean +/- std per cell. Individual failures are recorded
// and skipped.
std::vector<MetricsReport> run_suite(const SuiteConfig& cfg);

void write_runs_jsonl(const std::vector<MetricsReport>& runs,
                      const std::string& path, bool include_runtime = true);
void write_results_csv(const std::vector<MetricsReport>& runs,
                       const std::string& path);

}  // namespace chdqr
