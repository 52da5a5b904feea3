#include "chdqr/config.hpp"

#include <fstream>
#include <sstream>

#include "chdqr/error.hpp"

namespace chdqr {

namespace {

using nlohmann::json;

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

TrainConfig train_from_json(const json& root) {
  TrainConfig tc;
  const json j = root.value("train", json::object());
  tc.epochs = get_or(j, "epochs", tc.epochs);
  tc.batch = get_or(j, "batch", tc.batch);
  tc.lr_theta = get_or(j, "lr_theta", tc.lr_theta);
  tc.lr_protos = get_or(j, "lr_protos", tc.lr_protos);
  tc.seed = get_or(j, "seed", tc.seed);
  tc.padding = get_or(j, "padding", tc.padding);
  tc.hidden = get_or(j, "hidden", tc.hidden);
  tc.k_init = get_or(j, "k_init", tc.k_init);
  tc.bins_per_dim = get_or(j, "bins_per_dim", tc.bins_per_dim);
  tc.proto_init = get_or(j, "proto_init", tc.proto_init);
  const json l = root.value("loss", json::object());
  tc.loss.lambda_q = get_or(l, "lambda_q", tc.loss.lambda_q);
  tc.loss.lambda_rep = get_or(l, "lambda_rep", tc.loss.lambda_rep);
  tc.loss.delta_rep = get_or(l, "delta_rep", tc.loss.delta_rep);
  tc.loss.tau = get_or(l, "tau", tc.loss.tau);
  const json d = root.value("dynamics", json::object());
  tc.dynamics.delta_add_scale =
      get_or(d, "delta_add_scale", tc.dynamics.delta_add_scale);
  tc.dynamics.delta_del_scale =
      get_or(d, "delta_del_scale", tc.dynamics.delta_del_scale);
  tc.dynamics.sigma = get_or(d, "sigma", tc.dynamics.sigma);
  tc.dynamics.k_min = get_or(d, "k_min", tc.dynamics.k_min);
  tc.dynamics.k_max = get_or(d, "k_max", tc.dynamics.k_max);
  if (!(tc.loss.tau > 0)) throw ConfigError("loss.tau must be > 0");
  if (tc.loss.lambda_q < 0 || tc.loss.lambda_rep < 0)
    throw ConfigError("loss weights must be >= 0");
  if (!(tc.dynamics.delta_del_scale < tc.dynamics.delta_add_scale))
    throw ConfigError("dynamics.delta_del_scale must be < delta_add_scale");
  return tc;
}

json train_to_json(const TrainConfig& tc, json& root) {
  root["train"] = {{"epochs", tc.epochs},
                   {"batch", tc.batch},
                   {"lr_theta", tc.lr_theta},
                   {"lr_protos", tc.lr_protos},
                   {"seed", tc.seed},
                   {"padding", tc.padding},
                   {"hidden", tc.hidden},
                   {"k_init", tc.k_init},
                   {"bins_per_dim", tc.bins_per_dim},
                   {"proto_init", tc.proto_init}};
  root["loss"] = {{"lambda_q", tc.loss.lambda_q},
                  {"lambda_rep", tc.loss.lambda_rep},
                  {"delta_rep", tc.loss.delta_rep},
                  {"tau", tc.loss.tau}};
  root["dynamics"] = {{"delta_add_scale", tc.dynamics.delta_add_scale},
                      {"delta_del_scale", tc.dynamics.delta_del_scale},
                      {"sigma", tc.dynamics.sigma},
                      {"k_min", tc.dynamics.k_min},
                      {"k_max", tc.dynamics.k_max}};
  return root;
}

CqrConfig cqr_from_json(const json& root) {
  CqrConfig cc;
  const json j = root.value("cqr", json::object());
  cc.epochs = get_or(j, "epochs", cc.epochs);
  cc.batch = get_or(j, "batch", cc.batch);
  cc.lr = get_or(j, "lr", cc.lr);
  cc.hidden = get_or(j, "hidden", cc.hidden);
  return cc;
}

SuiteDataset dataset_from_json(const json& j) {
  SuiteDataset ds;
  ds.name = get_or(j, "name", ds.name);
  ds.n = get_or(j, "n", ds.n);
  ds.data_seed = get_or(j, "seed", ds.data_seed);
  ds.outliers_per_component =
      get_or(j, "outliers_per_component", ds.outliers_per_component);
  ds.csv_path = get_or(j, "csv_path", ds.csv_path);
  ds.target_columns = get_or(j, "target_columns", ds.target_columns);
  return ds;
}

json dataset_to_json(const SuiteDataset& ds) {
  return {{"name", ds.name},
          {"n", ds.n},
          {"seed", ds.data_seed},
          {"outliers_per_component", ds.outliers_per_component},
          {"csv_path", ds.csv_path},
          {"target_columns", ds.target_columns}};
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (j.contains("dataset")) cfg.dataset = dataset_from_json(j.at("dataset"));
  cfg.method = get_or(j, "method", cfg.method);
  method_from_string(cfg.method);  // validate early
  cfg.alpha = get_or(j, "alpha", cfg.alpha);
  if (!(cfg.alpha > 0 && cfg.alpha < 1))
    throw ConfigError("alpha must be in (0, 1)");
  cfg.train = train_from_json(j);
  cfg.cqr = cqr_from_json(j);
  cfg.cqr.alpha = cfg.alpha;
  cfg.cqr.seed = cfg.train.seed;
  return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["dataset"] = dataset_to_json(cfg.dataset);
  j["method"] = cfg.method;
  j["alpha"] = cfg.alpha;
  train_to_json(cfg.train, j);
  j["cqr"] = {{"epochs", cfg.cqr.epochs},
              {"batch", cfg.cqr.batch},
              {"lr", cfg.cqr.lr},
              {"hidden", cfg.cqr.hidden}};
  return j;
}

SuiteConfig suite_config_from_json(const nlohmann::json& j) {
  SuiteConfig cfg;
  if (!j.contains("datasets") || !j.at("datasets").is_array() ||
      j.at("datasets").empty())
    throw ConfigError("suite config needs a nonempty 'datasets' array");
  for (const auto& dj : j.at("datasets"))
    cfg.datasets.push_back(dataset_from_json(dj));
  cfg.methods = get_or(j, "methods", cfg.methods);
  for (const auto& m : cfg.methods) method_from_string(m);
  cfg.alphas = get_or(j, "alphas", cfg.alphas);
  for (double a : cfg.alphas)
    if (!(a > 0 && a < 1)) throw ConfigError("suite alphas must be in (0, 1)");
  cfg.seeds = get_or(j, "seeds", cfg.seeds);
  cfg.train = train_from_json(j);
  cfg.cqr = cqr_from_json(j);
  cfg.workers = get_or(j, "workers", cfg.workers);
  cfg.emit_regions = get_or(j, "emit_regions", cfg.emit_regions);
  return cfg;
}

nlohmann::json suite_config_to_json(const SuiteConfig& cfg) {
  nlohmann::json j;
  j["datasets"] = nlohmann::json::array();
  for (const auto& ds : cfg.datasets) j["datasets"].push_back(dataset_to_json(ds));
  j["methods"] = cfg.methods;
  j["alphas"] = cfg.alphas;
  j["seeds"] = cfg.seeds;
  train_to_json(cfg.train, j);
  j["cqr"] = {{"epochs", cfg.cqr.epochs},
              {"batch", cfg.cqr.batch},
              {"lr", cfg.cqr.lr},
              {"hidden", cfg.cqr.hidden}};
  j["workers"] = cfg.workers;
  j["emit_regions"] = cfg.emit_regions;
  return j;
}

void apply_overrides(nlohmann::json& j,
                     const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + ov + "'");
    std::string key = ov.substr(0, eq);
    std::string value = ov.substr(eq + 1);
    std::string pointer = "/";
    for (char c : key) pointer += c == '.' ? '/' : c;
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
      parsed = value;  // plain string
    }
    j[nlohmann::json::json_pointer(pointer)] = parsed;
  }
}

nlohmann::json load_json_with_overrides(
    const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config parse error in " + path + ": " + e.what());
    }
  }
  apply_overrides(j, overrides);
  return j;
}

std::string config_hash(const nlohmann::json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace chdqr
