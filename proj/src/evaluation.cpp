#include "chdqr/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "chdqr/error.hpp"
#include "chdqr/io_util.hpp"
#include "chdqr/quantizer.hpp"

namespace chdqr {

RegionProbabilities DensityRegionPredictor::probs_for(
    const Eigen::VectorXd& x) {
  Eigen::MatrixXd xs = state_.standardize(x.transpose());
  return region_probabilities(state_.net, xs.row(0).transpose(), state_.areas);
}

bool DensityRegionPredictor::covers(const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& y) {
  if (!state_.protos.box.contains(y)) return false;
  RegionProbabilities rp = probs_for(x);
  return nonconformity_score(rp, hard_assign(y, state_.protos)) <= q_hat_;
}

double DensityRegionPredictor::region_area(const Eigen::VectorXd& x) {
  return region(x).total_area;
}

PredictionRegion DensityRegionPredictor::region(const Eigen::VectorXd& x) {
  return predict_region(probs_for(x), state_.areas, q_hat_);
}

double coverage(const Dataset& test, RegionPredictor& predictor) {
  if (test.n() == 0) throw DataError("coverage: empty test split");
  long hits = 0;
  for (Eigen::Index i = 0; i < test.n(); ++i)
    if (predictor.covers(test.features.row(i).transpose(),
                         test.targets.row(i).transpose()))
      ++hits;
  return static_cast<double>(hits) / static_cast<double>(test.n());
}

double pinaw(const Dataset& test, RegionPredictor& predictor) {
  if (test.n() == 0) throw DataError("pinaw: empty test split");
  double total = 0.0;
  for (Eigen::Index i = 0; i < test.n(); ++i)
    total += predictor.region_area(test.features.row(i).transpose());
  return total / static_cast<double>(test.n());
}

Dataset make_dataset(const SuiteDataset& spec) {
  Dataset ds;
  if (!spec.csv_path.empty()) {
    ds = load_csv(spec.csv_path, spec.target_columns);
  } else if (spec.name == "uncond1d") {
    ds = gen_uncond1d(spec.n, spec.data_seed);
  } else if (spec.name == "uncond2d") {
    ds = gen_uncond2d(spec.n, spec.data_seed);
  } else {
    throw ConfigError("unknown dataset '" + spec.name +
                      "' (expected uncond1d, uncond2d, or a csv_path)");
  }
  if (spec.outliers_per_component > 0)
    ds = add_outliers(ds, spec.outliers_per_component, spec.data_seed + 777);
  return ds;
}

TrainConfig config_for_method(TrainConfig base, Method m) {
  switch (m) {
    case Method::grid:
      base.learn_protos = false;
      base.proto_init = "grid";
      base.dynamics.enabled = false;
      break;
    case Method::chdqr:
      base.learn_protos = true;
      base.dynamics.enabled = false;
      break;
    case Method::chdqr_dynamic:
      base.learn_protos = true;
      base.dynamics.enabled = true;
      break;
    case Method::cqr:
      throw ConfigError("config_for_method: cqr has its own config");
  }
  return base;
}

namespace {

double normalizer(const Eigen::VectorXd& target_std) {
  double z = 1.0;
  for (Eigen::Index j = 0; j < target_std.size(); ++j) z *= target_std[j];
  return z;
}

MetricsReport base_report(const SuiteDataset& dspec, const std::string& method,
                          double alpha, std::uint64_t seed) {
  MetricsReport r;
  r.dataset = dspec.name.empty() ? dspec.csv_path : dspec.name;
  if (dspec.outliers_per_component > 0)
    r.dataset += "+out" + std::to_string(dspec.outliers_per_component);
  r.method = method;
  r.alpha = alpha;
  r.seed = seed;
  return r;
}

Eigen::VectorXd dataset_target_std(const Dataset& train) {
  Eigen::VectorXd std(train.target_dim());
  for (int j = 0; j < train.target_dim(); ++j) {
    double mu = train.targets.col(j).mean();
    std[j] = std::sqrt((train.targets.col(j).array() - mu).square().mean());
    if (!(std[j] > 0)) std[j] = 1.0;
  }
  return std;
}

}  // namespace

MetricsReport run_single(const SuiteDataset& dspec, const std::string& method,
                         double alpha, std::uint64_t seed,
                         const SuiteConfig& cfg) {
  MetricsReport r = base_report(dspec, method, alpha, seed);
  auto start = std::chrono::steady_clock::now();
  try {
    Dataset ds = make_dataset(dspec);
    Splits s = split(ds, seed);
    Method m = method_from_string(method);
    if (m == Method::cqr) {
      CqrConfig cc = cfg.cqr;
      cc.alpha = alpha;
      cc.seed = seed;
      CqrModel model = cqr_fit(s.train, cc);
      cqr_calibrate(model, s.cal);
      CqrRegionPredictor pred(model);
      r.coverage = coverage(s.test, pred);
      r.pinaw = pinaw(s.test, pred);
      r.pinaw_normalized = r.pinaw / normalizer(dataset_target_std(s.train));
      r.final_k = 0;
      r.cqr_crossings = model.crossings_seen;
    } else {
      TrainConfig tc = config_for_method(cfg.train, m);
      tc.seed = seed;
      TrainState state = fit(s.train, tc);
      CalibrationResult cal =
          calibrate(state.net, state.protos, state.areas,
                    state.standardize(s.cal.features), s.cal.targets, alpha);
      DensityRegionPredictor pred(state, cal.q_hat);
      r.coverage = coverage(s.test, pred);
      r.pinaw = pinaw(s.test, pred);
      r.pinaw_normalized = r.pinaw / normalizer(state.target_std);
      r.final_k = state.protos.k();
    }
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
  }
  r.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return r;
}

std::vector<MetricsReport> run_suite(const SuiteConfig& cfg) {
  if (cfg.datasets.empty()) throw ConfigError("run_suite: no datasets");
  if (cfg.alphas.empty()) throw ConfigError("run_suite: no alphas");
  if (cfg.seeds.empty()) throw ConfigError("run_suite: no seeds");

  // A task trains one (dataset, seed, method); density models are calibrated
  // once per alpha from the same fit.
  struct Task {
    std::size_t dataset;
    std::uint64_t seed;
    std::string method;
  };
  std::vector<Task> tasks;
  for (std::size_t di = 0; di < cfg.datasets.size(); ++di)
    for (auto seed : cfg.seeds)
      for (const auto& method : cfg.methods)
        tasks.push_back({di, seed, method});

  std::vector<MetricsReport> all;
  std::mutex mu;
  std::size_t next = 0;

  auto worker = [&]() {
    for (;;) {
      std::size_t t;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= tasks.size()) return;
        t = next++;
      }
      const Task& task = tasks[t];
      const SuiteDataset& dspec = cfg.datasets[task.dataset];
      std::vector<MetricsReport> local;
      Method m = Method::cqr;
      bool parse_ok = true;
      try {
        m = method_from_string(task.method);
      } catch (const std::exception& e) {
        MetricsReport r = base_report(dspec, task.method, 0.0, task.seed);
        r.failed = true;
        r.error = e.what();
        local.push_back(r);
        parse_ok = false;
      }
      if (parse_ok && m == Method::cqr) {
        for (double alpha : cfg.alphas)
          local.push_back(run_single(dspec, task.method, alpha, task.seed, cfg));
      } else if (parse_ok) {
        // Train once, calibrate per alpha on the shared pre-saved split.
        auto start = std::chrono::steady_clock::now();
        try {
          Dataset ds = make_dataset(dspec);
          Splits s = split(ds, task.seed);
          TrainConfig tc = config_for_method(cfg.train, m);
          tc.seed = task.seed;
          TrainState state = fit(s.train, tc);
          double fit_time = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - start)
                                .count();
          for (double alpha : cfg.alphas) {
            MetricsReport r = base_report(dspec, task.method, alpha, task.seed);
            auto t0 = std::chrono::steady_clock::now();
            CalibrationResult cal = calibrate(
                state.net, state.protos, state.areas,
                state.standardize(s.cal.features), s.cal.targets, alpha);
            DensityRegionPredictor pred(state, cal.q_hat);
            r.coverage = coverage(s.test, pred);
            r.pinaw = pinaw(s.test, pred);
            r.pinaw_normalized = r.pinaw / normalizer(state.target_std);
            r.final_k = state.protos.k();
            r.runtime_seconds =
                fit_time + std::chrono::duration<double>(
                               std::chrono::steady_clock::now() - t0)
                               .count();
            local.push_back(r);
          }
        } catch (const std::exception& e) {
          for (double alpha : cfg.alphas) {
            MetricsReport r = base_report(dspec, task.method, alpha, task.seed);
            r.failed = true;
            r.error = e.what();
            local.push_back(r);
          }
        }
      }
      std::lock_guard<std::mutex> lock(mu);
      for (auto& r : local) all.push_back(std::move(r));
    }
  };

  int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Deterministic output order regardless of worker interleaving.
  std::sort(all.begin(), all.end(), [](const MetricsReport& a,
                                       const MetricsReport& b) {
    return std::tie(a.dataset, a.method, a.alpha, a.seed) <
           std::tie(b.dataset, b.method, b.alpha, b.seed);
  });
  return all;
}

void write_runs_jsonl(const std::vector<MetricsReport>& runs,
                      const std::string& path, bool include_runtime) {
  std::ostringstream out;
  for (const auto& r : runs) {
    nlohmann::json j = {
        {"dataset", r.dataset},   {"method", r.method},
        {"alpha", r.alpha},       {"seed", r.seed},
        {"coverage", r.coverage}, {"pinaw", r.pinaw},
        {"pinaw_normalized", r.pinaw_normalized},
        {"final_k", r.final_k},   {"failed", r.failed}};
    if (r.method == "cqr") j["cqr_crossings"] = r.cqr_crossings;
    if (r.failed) j["error"] = r.error;
    if (include_runtime) j["runtime_seconds"] = r.runtime_seconds;
    out << j.dump() << "\n";
  }
  atomic_write_text(path, out.str());
}

void write_results_csv(const std::vector<MetricsReport>& runs,
                       const std::string& path) {
  struct Cell {
    std::vector<double> coverage, pinaw, pinaw_norm;
    std::vector<int> k;
    long failures = 0;
  };
  std::map<std::tuple<std::string, std::string, double>, Cell> cells;
  for (const auto& r : runs) {
    Cell& c = cells[{r.dataset, r.method, r.alpha}];
    if (r.failed) {
      ++c.failures;
      continue;
    }
    c.coverage.push_back(r.coverage);
    c.pinaw.push_back(r.pinaw);
    c.pinaw_norm.push_back(r.pinaw_normalized);
    c.k.push_back(r.final_k);
  }
  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return std::nan("");
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto stdev = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  std::ostringstream out;
  out << "dataset,method,alpha,n_runs,n_failed,coverage_mean,coverage_std,"
         "pinaw_mean,pinaw_std,pinaw_norm_mean,pinaw_norm_std,final_k_mean\n";
  for (const auto& [key, c] : cells) {
    const auto& [dataset, method, alpha] = key;
    double k_mean = 0;
    for (int k : c.k) k_mean += k;
    if (!c.k.empty()) k_mean /= static_cast<double>(c.k.size());
    out << dataset << "," << method << "," << alpha << ","
        << c.coverage.size() << "," << c.failures << ","
        << sig4(mean(c.coverage)) << "," << sig4(stdev(c.coverage)) << ","
        << sig4(mean(c.pinaw)) << "," << sig4(stdev(c.pinaw)) << ","
        << sig4(mean(c.pinaw_norm)) << "," << sig4(stdev(c.pinaw_norm)) << ","
        << sig4(k_mean) << "\n";
  }
  atomic_write_text(path, out.str());
}

}  // namespace chdqr
