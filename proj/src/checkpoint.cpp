#include "chdqr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "chdqr/error.hpp"
#include "chdqr/io_util.hpp"
#include "json.hpp"

namespace chdqr {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'H', 'D', 'Q', 'R', 'C', 'K', '1'};

struct TensorOut {
  nlohmann::json manifest = nlohmann::json::array();
  std::string payload;

  void add(const std::string& name, const Eigen::MatrixXd& t) {
    manifest.push_back({{"name", name},
                        {"rows", t.rows()},
                        {"cols", t.cols()},
                        {"offset", payload.size() / sizeof(double)}});
    // Row-major on disk regardless of Eigen's in-memory layout.
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        double v = t(r, c);
        payload.append(reinterpret_cast<const char*>(&v), sizeof v);
      }
  }
  void add(const std::string& name, const Eigen::VectorXd& t) {
    add(name, Eigen::MatrixXd(t));
  }
};

struct TensorIn {
  nlohmann::json manifest;
  std::string payload;

  Eigen::MatrixXd get(const std::string& name) const {
    for (const auto& e : manifest)
      if (e.at("name") == name) {
        Eigen::Index rows = e.at("rows"), cols = e.at("cols");
        std::size_t offset = e.at("offset").get<std::size_t>() * sizeof(double);
        if (offset + static_cast<std::size_t>(rows * cols) * sizeof(double) >
            payload.size())
          throw DataError("checkpoint: tensor '" + name + "' out of bounds");
        Eigen::MatrixXd t(rows, cols);
        const char* p = payload.data() + offset;
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index c = 0; c < cols; ++c) {
            std::memcpy(&t(r, c), p, sizeof(double));
            p += sizeof(double);
          }
        return t;
      }
    throw DataError("checkpoint: missing tensor '" + name + "'");
  }
  Eigen::VectorXd get_vec(const std::string& name) const {
    Eigen::MatrixXd m = get(name);
    return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(m.data(), m.size()));
  }
  bool has(const std::string& name) const {
    for (const auto& e : manifest)
      if (e.at("name") == name) return true;
    return false;
  }
};

void add_network(TensorOut& out, const DensityNetwork& net) {
  for (std::size_t l = 0; l < net.weights().size(); ++l) {
    out.add("hidden_w_" + std::to_string(l), net.weights()[l]);
    out.add("hidden_b_" + std::to_string(l), net.biases()[l]);
  }
  out.add("head_w", net.head_weight());
  out.add("head_b", net.head_bias());
}

DensityNetwork read_network(const TensorIn& in, int input_dim, int n_hidden) {
  std::vector<Eigen::MatrixXd> ws;
  std::vector<Eigen::VectorXd> bs;
  for (int l = 0; l < n_hidden; ++l) {
    ws.push_back(in.get("hidden_w_" + std::to_string(l)));
    bs.push_back(in.get_vec("hidden_b_" + std::to_string(l)));
  }
  return DensityNetwork::from_parameters(input_dim, std::move(ws),
                                         std::move(bs), in.get("head_w"),
                                         in.get_vec("head_b"));
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  TensorOut out;
  nlohmann::json header;
  header["format"] = 1;
  header["method"] = ck.method;
  header["config_hash"] = ck.config_hash;
  if (ck.method == "cqr") {
    const CqrModel& m = ck.cqr;
    add_network(out, m.net);
    out.add("feat_mean", m.feat_mean);
    out.add("feat_std", m.feat_std);
    if (m.corrections.size() > 0) out.add("corrections", m.corrections);
    header["input_dim"] = m.net.input_dim();
    header["n_hidden"] = m.net.n_hidden_layers();
    header["target_dim"] = m.target_dim;
    header["alpha"] = m.alpha;
    header["crossings_seen"] = m.crossings_seen;
    header["train_crossings"] = m.train_crossings;
  } else {
    const TrainState& s = ck.state;
    add_network(out, s.net);
    out.add("prototypes", s.protos.coords);
    out.add("areas", s.areas);
    out.add("box_lower", s.protos.box.lower);
    out.add("box_upper", s.protos.box.upper);
    out.add("feat_mean", s.feat_mean);
    out.add("feat_std", s.feat_std);
    out.add("target_std", s.target_std);
    header["input_dim"] = s.net.input_dim();
    header["n_hidden"] = s.net.n_hidden_layers();
    header["k"] = s.protos.k();
    header["target_dim"] = s.protos.dim();
    header["tau_eff"] = s.tau_eff;
    header["delta_rep_eff"] = s.delta_rep_eff;
    header["sigma_eff"] = s.sigma_eff;
    header["epoch"] = s.epoch;
    header["k_trajectory"] = s.k_trajectory;
    header["epoch_loss"] = s.epoch_loss;
  }
  header["tensors"] = out.manifest;
  const std::string hs = header.dump();
  std::string blob(kMagic, sizeof kMagic);
  std::uint64_t len = hs.size();
  blob.append(reinterpret_cast<const char*>(&len), sizeof len);
  blob += hs;
  blob += out.payload;
  atomic_write_text(path, blob);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string blob = ss.str();
  if (blob.size() < sizeof(kMagic) + sizeof(std::uint64_t) ||
      std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0)
    throw DataError("not a checkpoint file: " + path);
  std::uint64_t len = 0;
  std::memcpy(&len, blob.data() + sizeof kMagic, sizeof len);
  std::size_t header_start = sizeof(kMagic) + sizeof(std::uint64_t);
  if (header_start + len > blob.size())
    throw DataError("truncated checkpoint header: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(header_start, len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint header in " + path + ": " + e.what());
  }
  TensorIn tin{header.at("tensors"), blob.substr(header_start + len)};
  Checkpoint ck;
  ck.method = header.at("method");
  ck.config_hash = header.value("config_hash", "");
  const int input_dim = header.at("input_dim");
  const int n_hidden = header.at("n_hidden");
  if (ck.method == "cqr") {
    ck.cqr.net = read_network(tin, input_dim, n_hidden);
    ck.cqr.feat_mean = tin.get_vec("feat_mean");
    ck.cqr.feat_std = tin.get_vec("feat_std");
    ck.cqr.target_dim = header.at("target_dim");
    ck.cqr.alpha = header.at("alpha");
    ck.cqr.crossings_seen = header.value("crossings_seen", 0L);
    ck.cqr.train_crossings = header.value("train_crossings", 0L);
    if (tin.has("corrections")) ck.cqr.corrections = tin.get_vec("corrections");
  } else {
    TrainState& s = ck.state;
    s.net = read_network(tin, input_dim, n_hidden);
    s.protos.coords = tin.get("prototypes");
    s.protos.box.lower = tin.get_vec("box_lower");
    s.protos.box.upper = tin.get_vec("box_upper");
    s.areas = tin.get_vec("areas");
    s.feat_mean = tin.get_vec("feat_mean");
    s.feat_std = tin.get_vec("feat_std");
    s.target_std = tin.get_vec("target_std");
    s.tau_eff = header.at("tau_eff");
    s.delta_rep_eff = header.at("delta_rep_eff");
    s.sigma_eff = header.at("sigma_eff");
    s.epoch = header.at("epoch");
    s.k_trajectory = header.value("k_trajectory", std::vector<int>{});
    s.epoch_loss = header.value("epoch_loss", std::vector<double>{});
    if (s.protos.k() != s.net.output_dim() ||
        s.protos.k() != s.areas.size())
      throw DataError("checkpoint: K mismatch between head, prototypes, areas");
  }
  return ck;
}

void save_calibration(const CalibrationResult& cal, const std::string& path) {
  nlohmann::json j = {{"alpha", cal.alpha},
                      {"n_cal", cal.n_cal},
                      {"q_hat", cal.q_hat},
                      {"scores", cal.scores}};
  atomic_write_text(path, j.dump(2) + "\n");
}

CalibrationResult load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open calibration file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad calibration file " + path + ": " + e.what());
  }
  CalibrationResult cal;
  cal.alpha = j.at("alpha");
  cal.n_cal = j.at("n_cal");
  cal.q_hat = j.at("q_hat");
  cal.scores = j.value("scores", std::vector<double>{});
  return cal;
}

}  // namespace chdqr
