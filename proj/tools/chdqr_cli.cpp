#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "chdqr/checkpoint.hpp"
#include "chdqr/config.hpp"
#include "chdqr/error.hpp"
#include "chdqr/evaluation.hpp"
#include "chdqr/io_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "chdqr 1.0.0";
bool g_quiet = false;

void note(const std::string& msg) {
  if (!g_quiet) std::cerr << msg << "\n";
}

void echo_config(const std::string& out_dir, const json& effective) {
  chdqr::atomic_write_text(out_dir + "/effective_config.json",
                           effective.dump(2) + "\n");
  chdqr::atomic_write_text(out_dir + "/version.txt",
                           std::string(kVersion) + "\n");
}

chdqr::Splits load_splits(const chdqr::RunConfig& cfg) {
  chdqr::Dataset ds = chdqr::make_dataset(cfg.dataset);
  return chdqr::split(ds, cfg.train.seed);
}

void write_regions_csv(const chdqr::Dataset& test,
                       chdqr::DensityRegionPredictor& pred,
                       const std::string& path) {
  std::ostringstream out;
  out << "index,covered,n_regions,cumulative_prob,total_area,region_indices\n";
  for (Eigen::Index i = 0; i < test.n(); ++i) {
    Eigen::VectorXd x = test.features.row(i).transpose();
    Eigen::VectorXd y = test.targets.row(i).transpose();
    chdqr::PredictionRegion region = pred.region(x);
    out << i << "," << (pred.covers(x, y) ? 1 : 0) << ","
        << region.region_indices.size() << "," << region.cumulative_prob
        << "," << region.total_area << ",";
    for (std::size_t r = 0; r < region.region_indices.size(); ++r)
      out << region.region_indices[r]
          << (r + 1 < region.region_indices.size() ? ";" : "");
    out << "\n";
  }
  chdqr::atomic_write_text(path, out.str());
}

int cmd_gen_data(const std::string& dataset, int n, std::uint64_t seed,
                 int outliers, const std::string& out_dir) {
  chdqr::SuiteDataset spec;
  spec.name = dataset;
  spec.n = n;
  spec.data_seed = seed;
  spec.outliers_per_component = outliers;
  chdqr::Dataset ds = chdqr::make_dataset(spec);
  fs::create_directories(out_dir);
  const std::string csv = out_dir + "/" + ds.name + ".csv";
  // save_csv streams directly; route through a string for the atomic rename.
  {
    std::ostringstream tmp;
    const std::string tmp_path = csv + ".gen";
    chdqr::save_csv(ds, tmp_path);
    std::error_code ec;
    fs::rename(tmp_path, csv, ec);
    if (ec) throw chdqr::DataError("rename failed: " + ec.message());
  }
  chdqr::atomic_write_text(out_dir + "/" + ds.name + ".provenance.json",
                           ds.provenance.dump(2) + "\n");
  note("wrote " + csv + " (" + std::to_string(ds.n()) + " rows)");
  return 0;
}

int cmd_train(const chdqr::RunConfig& cfg, const json& effective,
              const std::string& out_dir) {
  fs::create_directories(out_dir);
  echo_config(out_dir, effective);
  chdqr::Splits s = load_splits(cfg);
  chdqr::Checkpoint ck;
  ck.method = cfg.method;
  ck.config_hash = chdqr::config_hash(effective);
  std::ostringstream log;
  if (cfg.method == "cqr") {
    ck.cqr = chdqr::cqr_fit(s.train, cfg.cqr);
    log << "epoch,loss,k\n";  // CQR keeps no per-epoch trace; header only
  } else {
    chdqr::TrainConfig tc =
        chdqr::config_for_method(cfg.train, chdqr::method_from_string(cfg.method));
    ck.state = chdqr::fit(s.train, tc);
    log << "epoch,loss,k\n";
    for (std::size_t e = 0; e < ck.state.epoch_loss.size(); ++e)
      log << (e + 1) << "," << ck.state.epoch_loss[e] << ","
          << ck.state.k_trajectory[e + 1] << "\n";
    note("trained " + cfg.method + ": K=" +
         std::to_string(ck.state.protos.k()));
  }
  chdqr::save_checkpoint(ck, out_dir + "/checkpoint.bin");
  chdqr::atomic_write_text(out_dir + "/train_log.csv", log.str());
  return 0;
}

int cmd_calibrate(const std::string& checkpoint_path,
                  const chdqr::RunConfig& cfg, double alpha,
                  const std::string& out_dir) {
  fs::create_directories(out_dir);
  chdqr::Checkpoint ck = chdqr::load_checkpoint(checkpoint_path);
  chdqr::Splits s = load_splits(cfg);
  if (ck.method == "cqr") {
    chdqr::cqr_calibrate(ck.cqr, s.cal);
    json j = {{"method", "cqr"},
              {"alpha", ck.cqr.alpha},
              {"n_cal", s.cal.n()},
              {"corrections", std::vector<double>(
                                  ck.cqr.corrections.data(),
                                  ck.cqr.corrections.data() +
                                      ck.cqr.corrections.size())}};
    chdqr::atomic_write_text(out_dir + "/calibration.json", j.dump(2) + "\n");
  } else {
    chdqr::CalibrationResult cal = chdqr::calibrate(
        ck.state.net, ck.state.protos, ck.state.areas,
        ck.state.standardize(s.cal.features), s.cal.targets, alpha);
    chdqr::save_calibration(cal, out_dir + "/calibration.json");
    note("q_hat=" + std::to_string(cal.q_hat));
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint_path,
                 const std::string& calibration_path,
                 const chdqr::RunConfig& cfg, const std::string& out_dir,
                 bool emit_regions) {
  fs::create_directories(out_dir);
  chdqr::Checkpoint ck = chdqr::load_checkpoint(checkpoint_path);
  chdqr::Splits s = load_splits(cfg);
  json metrics;
  if (ck.method == "cqr") {
    std::ifstream in(calibration_path);
    if (!in) throw chdqr::DataError("cannot open " + calibration_path);
    json cj;
    in >> cj;
    std::vector<double> corr = cj.at("corrections");
    ck.cqr.corrections =
        Eigen::Map<Eigen::VectorXd>(corr.data(), static_cast<long>(corr.size()));
    chdqr::CqrRegionPredictor pred(ck.cqr);
    metrics["coverage"] = chdqr::coverage(s.test, pred);
    metrics["pinaw"] = chdqr::pinaw(s.test, pred);
    metrics["cqr_crossings"] = ck.cqr.crossings_seen;
    metrics["alpha"] = ck.cqr.alpha;
  } else {
    chdqr::CalibrationResult cal = chdqr::load_calibration(calibration_path);
    chdqr::DensityRegionPredictor pred(ck.state, cal.q_hat);
    double pw = chdqr::pinaw(s.test, pred);
    double norm = 1.0;
    for (Eigen::Index j = 0; j < ck.state.target_std.size(); ++j)
      norm *= ck.state.target_std[j];
    metrics["coverage"] = chdqr::coverage(s.test, pred);
    metrics["pinaw"] = pw;
    metrics["pinaw_normalized"] = pw / norm;
    metrics["final_k"] = ck.state.protos.k();
    metrics["alpha"] = cal.alpha;
    metrics["q_hat"] = cal.q_hat;
    if (emit_regions) write_regions_csv(s.test, pred, out_dir + "/regions.csv");
  }
  metrics["method"] = ck.method;
  metrics["dataset"] = cfg.dataset.name;
  metrics["seed"] = cfg.train.seed;
  chdqr::atomic_write_text(out_dir + "/metrics.json", metrics.dump(2) + "\n");
  note(metrics.dump());
  return 0;
}

int cmd_predict(const std::string& checkpoint_path,
                const std::string& calibration_path, const std::string& x_str) {
  chdqr::Checkpoint ck = chdqr::load_checkpoint(checkpoint_path);
  if (ck.method == "cqr")
    throw chdqr::ConfigError("predict supports density-model checkpoints");
  chdqr::CalibrationResult cal = chdqr::load_calibration(calibration_path);
  std::vector<double> xs;
  std::stringstream ss(x_str);
  std::string cell;
  while (std::getline(ss, cell, ',')) xs.push_back(std::stod(cell));
  if (static_cast<int>(xs.size()) != ck.state.net.input_dim())
    throw chdqr::ConfigError("predict: expected " +
                             std::to_string(ck.state.net.input_dim()) +
                             " feature values");
  Eigen::VectorXd x =
      Eigen::Map<Eigen::VectorXd>(xs.data(), static_cast<long>(xs.size()));
  chdqr::DensityRegionPredictor pred(ck.state, cal.q_hat);
  chdqr::PredictionRegion region = pred.region(x);
  json cells = json::array();
  auto vcells = chdqr::voronoi_cells(ck.state.protos);
  for (int idx : region.region_indices) {
    json cell_j = {{"index", idx},
                   {"prototype", std::vector<double>(
                                     ck.state.protos.coords.row(idx).data(),
                                     ck.state.protos.coords.row(idx).data() +
                                         ck.state.protos.dim())},
                   {"area", ck.state.areas[idx]}};
    if (ck.state.protos.dim() == 1)
      cell_j["interval"] = {vcells[idx].lo, vcells[idx].hi};
    else {
      json poly = json::array();
      for (const auto& v : vcells[idx].polygon)
        poly.push_back({v.x(), v.y()});
      cell_j["polygon"] = poly;
    }
    cells.push_back(cell_j);
  }
  json out = {{"q_hat", cal.q_hat},
              {"alpha", cal.alpha},
              {"cumulative_prob", region.cumulative_prob},
              {"total_area", region.total_area},
              {"n_regions", region.region_indices.size()},
              {"regions", cells}};
  std::cout << out.dump(2) << std::endl;
  return 0;
}

int cmd_suite(chdqr::SuiteConfig cfg, const json& effective,
              const std::string& out_dir, int workers) {
  fs::create_directories(out_dir);
  echo_config(out_dir, effective);
  if (workers > 0) cfg.workers = workers;
  cfg.out_dir = out_dir;
  std::vector<chdqr::MetricsReport> runs = chdqr::run_suite(cfg);
  chdqr::write_runs_jsonl(runs, out_dir + "/runs.jsonl");
  chdqr::write_results_csv(runs, out_dir + "/results.csv");
  long failures = 0;
  for (const auto& r : runs)
    if (r.failed) {
      ++failures;
      note("run failed: " + r.dataset + "/" + r.method + "/a=" +
           std::to_string(r.alpha) + "/s=" + std::to_string(r.seed) + ": " +
           r.error);
    }
  note("suite: " + std::to_string(runs.size()) + " runs, " +
       std::to_string(failures) + " failed");
  return failures == 0 ? 0 : 4;
}

int error_record(const char* type, const std::string& msg, int code) {
  json j = {{"error", msg}, {"type", type}};
  std::cerr << j.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformalized high-density quantile regression pipeline"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.add_flag("--quiet", g_quiet, "suppress progress notes");

  std::string config_path, out_dir = "out", checkpoint_path, calibration_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed_flag;
  std::optional<double> alpha_flag;
  int workers = 0;
  bool emit_regions = false;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "JSON config file");
    if (needs_config) opt->required();
    sub->add_option("--set", overrides,
                    "dotted-key override, e.g. train.epochs=5");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed_flag, "override train.seed");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_dataset;
  int gen_n = 10000, gen_outliers = 0;
  std::uint64_t gen_seed = 1;
  gen->add_option("dataset", gen_dataset, "uncond1d | uncond2d")->required();
  gen->add_option("--n", gen_n, "sample count");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--outliers", gen_outliers, "outliers per far component");
  gen->add_option("--out", out_dir, "output directory");

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, true);

  auto* cal = app.add_subcommand("calibrate", "conformal calibration");
  add_common(cal, true);
  cal->add_option("--checkpoint", checkpoint_path)->required();
  cal->add_option("--alpha", alpha_flag, "target miscoverage");

  auto* ev = app.add_subcommand("evaluate", "coverage/PINAW on the test split");
  add_common(ev, true);
  ev->add_option("--checkpoint", checkpoint_path)->required();
  ev->add_option("--calibration", calibration_path)->required();
  ev->add_flag("--regions", emit_regions, "emit per-test-point regions.csv");

  auto* pr = app.add_subcommand("predict", "prediction region for one input");
  pr->add_option("--checkpoint", checkpoint_path)->required();
  pr->add_option("--calibration", calibration_path)->required();
  std::string x_str = "0";
  pr->add_option("--x", x_str, "comma-separated feature values");

  auto* suite = app.add_subcommand("suite", "full experiment protocol");
  add_common(suite, true);
  suite->add_option("--workers", workers, "parallel run workers");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_dataset, gen_n, gen_seed, gen_outliers, out_dir);
    json doc = chdqr::load_json_with_overrides(config_path, overrides);
    if (suite->parsed()) {
      chdqr::SuiteConfig cfg = chdqr::suite_config_from_json(doc);
      return cmd_suite(cfg, chdqr::suite_config_to_json(cfg), out_dir, workers);
    }
    chdqr::RunConfig cfg = chdqr::run_config_from_json(doc);
    if (seed_flag) cfg.train.seed = *seed_flag;
    if (alpha_flag) cfg.alpha = *alpha_flag;
    cfg.cqr.alpha = cfg.alpha;
    cfg.cqr.seed = cfg.train.seed;
    json effective = chdqr::run_config_to_json(cfg);
    if (train->parsed()) return cmd_train(cfg, effective, out_dir);
    if (cal->parsed())
      return cmd_calibrate(checkpoint_path, cfg, cfg.alpha, out_dir);
    if (ev->parsed())
      return cmd_evaluate(checkpoint_path, calibration_path, cfg, out_dir,
                          emit_regions);
    if (pr->parsed())
      return cmd_predict(checkpoint_path, calibration_path, x_str);
    return error_record("config", "no subcommand", 2);
  } catch (const chdqr::ConfigError& e) {
    return error_record("config", e.what(), 2);
  } catch (const chdqr::DataError& e) {
    return error_record("data", e.what(), 3);
  } catch (const chdqr::NumericError& e) {
    return error_record("numeric", e.what(), 4);
  } catch (const std::exception& e) {
    return error_record("internal", e.what(), 1);
  }
}
