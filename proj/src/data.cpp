#include "chdqr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "chdqr/error.hpp"
#include "chdqr/rng.hpp"

namespace chdqr {

void Dataset::validate() const {
  if (features.rows() != targets.rows())
    throw DataError("dataset: feature/target row counts differ");
  if (n() < 10) throw DataError("dataset: need at least 10 rows, got " +
                                std::to_string(n()));
  if (target_dim() < 1 || target_dim() > 2)
    throw DataError("dataset: target dimension must be 1 or 2");
  if (!features.allFinite() || !targets.allFinite())
    throw DataError("dataset: non-finite entries");
}

Dataset gen_uncond1d(int n, std::uint64_t seed, bool second_param_is_std) {
  if (n < 10) throw ConfigError("gen_uncond1d: n must be >= 10");
  Rng rng(seed);
  double stddev = second_param_is_std ? 0.05 : std::sqrt(0.05);
  Dataset ds;
  ds.name = "uncond1d";
  ds.features = Eigen::MatrixXd::Zero(n, 1);
  ds.targets.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    double mean = rng.uniform() < 0.5 ? 0.75 : -0.75;
    ds.targets(i, 0) = rng.normal(mean, stddev);
  }
  ds.provenance = {{"generator", "uncond1d"},
                   {"n", n},
                   {"seed", seed},
                   {"component_std", stddev}};
  return ds;
}

Dataset gen_uncond2d(int n, std::uint64_t seed,
                     std::vector<int>* component_labels) {
  if (n < 10) throw ConfigError("gen_uncond2d: n must be >= 10");
  const Eigen::Vector2d means[3] = {{0.0, 0.0}, {3.0, 3.0}, {-3.0, -4.0}};
  Eigen::Matrix2d covs[3];
  covs[0] << 1.0, 0.0, 0.0, 1.0;
  covs[1] << 0.5, 0.2, 0.2, 0.5;
  covs[2] << 0.7, -0.2, -0.2, 0.5;
  Eigen::Matrix2d chol[3];
  for (int c = 0; c < 3; ++c) {
    Eigen::LLT<Eigen::Matrix2d> llt(covs[c]);
    if (llt.info() != Eigen::Success)
      throw NumericError("gen_uncond2d: covariance not positive-definite");
    chol[c] = llt.matrixL();
  }
  Rng rng(seed);
  Dataset ds;
  ds.name = "uncond2d";
  ds.features = Eigen::MatrixXd::Zero(n, 1);
  ds.targets.resize(n, 2);
  if (component_labels) component_labels->resize(n);
  for (int i = 0; i < n; ++i) {
    int c = static_cast<int>(rng.uniform_int(3));
    Eigen::Vector2d z(rng.normal(), rng.normal());
    ds.targets.row(i) = (means[c] + chol[c] * z).transpose();
    if (component_labels) (*component_labels)[i] = c;
  }
  ds.provenance = {{"generator", "uncond2d"}, {"n", n}, {"seed", seed}};
  return ds;
}

Dataset add_outliers(const Dataset& base, int n_per_component,
                     std::uint64_t seed) {
  if (base.target_dim() != 2)
    throw DataError("add_outliers: base must be 2-dimensional");
  if (n_per_component < 0) throw ConfigError("add_outliers: negative count");
  Dataset ds = base;
  ds.provenance["outliers_per_component"] = n_per_component;
  ds.provenance["outlier_seed"] = seed;
  if (n_per_component == 0) return ds;
  const Eigen::Vector2d means[2] = {{8.0, -8.0}, {-8.0, 8.0}};
  Rng rng(seed);
  const Eigen::Index n0 = base.n();
  const Eigen::Index n = n0 + 2 * n_per_component;
  ds.features.conservativeResize(n, Eigen::NoChange);
  ds.targets.conservativeResize(n, Eigen::NoChange);
  Eigen::Index row = n0;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < n_per_component; ++i, ++row) {
      ds.features.row(row).setZero();
      ds.targets(row, 0) = means[c][0] + rng.normal();
      ds.targets(row, 1) = means[c][1] + rng.normal();
    }
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Eigen::MatrixXd f(n, ds.features.cols()), t(n, ds.targets.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    f.row(i) = ds.features.row(perm[static_cast<std::size_t>(i)]);
    t.row(i) = ds.targets.row(perm[static_cast<std::size_t>(i)]);
  }
  ds.features = std::move(f);
  ds.targets = std::move(t);
  ds.name = base.name + "_outlier";
  return ds;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

Dataset load_csv(const std::string& path,
                 const std::vector<std::string>& target_columns) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open " + path);
  if (target_columns.empty())
    throw ConfigError("load_csv: no target columns given");
  std::string line;
  if (!std::getline(in, line)) throw DataError("load_csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_line(line);
  std::vector<int> target_idx, feature_idx;
  for (const auto& name : target_columns) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw DataError("load_csv: missing target column '" + name + "'");
    target_idx.push_back(static_cast<int>(it - header.begin()));
  }
  for (int j = 0; j < static_cast<int>(header.size()); ++j)
    if (std::find(target_idx.begin(), target_idx.end(), j) == target_idx.end())
      feature_idx.push_back(j);
  std::vector<std::vector<double>> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw DataError("load_csv: line " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " fields, expected " +
                      std::to_string(header.size()));
    std::vector<double> row(header.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      try {
        std::size_t pos = 0;
        row[j] = std::stod(cells[j], &pos);
        if (pos != cells[j].size()) throw std::invalid_argument(cells[j]);
      } catch (const std::exception&) {
        throw DataError("load_csv: line " + std::to_string(line_no) +
                        ": cannot parse '" + cells[j] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  Dataset ds;
  ds.name = path;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  ds.targets.resize(n, static_cast<Eigen::Index>(target_idx.size()));
  // A dataset with no feature columns still needs a nonempty input; fall back
  // to a constant-zero column.
  const bool no_features = feature_idx.empty();
  ds.features.resize(n, no_features
                            ? 1
                            : static_cast<Eigen::Index>(feature_idx.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < target_idx.size(); ++j)
      ds.targets(i, static_cast<Eigen::Index>(j)) =
          rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(
              target_idx[j])];
    if (no_features)
      ds.features(i, 0) = 0.0;
    else
      for (std::size_t j = 0; j < feature_idx.size(); ++j)
        ds.features(i, static_cast<Eigen::Index>(j)) =
            rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(
                feature_idx[j])];
  }
  ds.provenance = {{"source", path}, {"target_columns", target_columns}};
  ds.validate();
  return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("save_csv: cannot open " + path);
  const int p = static_cast<int>(ds.features.cols());
  const int d = ds.target_dim();
  for (int j = 0; j < p; ++j) out << "x" << j << ",";
  for (int j = 0; j < d; ++j) out << "y" << j << (j + 1 < d ? "," : "\n");
  out.precision(17);
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < p; ++j) out << ds.features(i, j) << ",";
    for (int j = 0; j < d; ++j)
      out << ds.targets(i, j) << (j + 1 < d ? "," : "\n");
  }
}

Splits split(const Dataset& ds, std::uint64_t seed) {
  ds.validate();
  const Eigen::Index n = ds.n();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  const Eigen::Index n_train = static_cast<Eigen::Index>(0.8 * n);
  const Eigen::Index n_cal = static_cast<Eigen::Index>(0.1 * n);
  auto take = [&](Eigen::Index begin, Eigen::Index count, const char* tag) {
    Dataset part;
    part.name = ds.name + "/" + tag;
    part.provenance = ds.provenance;
    part.provenance["split"] = tag;
    part.provenance["split_seed"] = seed;
    part.features.resize(count, ds.features.cols());
    part.targets.resize(count, ds.targets.cols());
    for (Eigen::Index i = 0; i < count; ++i) {
      part.features.row(i) = ds.features.row(perm[begin + i]);
      part.targets.row(i) = ds.targets.row(perm[begin + i]);
    }
    return part;
  };
  Splits s;
  s.train = take(0, n_train, "train");
  s.cal = take(n_train, n_cal, "cal");
  s.test = take(n_train + n_cal, n - n_train - n_cal, "test");
  return s;
}

}  // namespace chdqr
