#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "test_util.hpp"

#include <cmath>

#include "chdqr/quantizer.hpp"
#include "chdqr/rng.hpp"
#include "chdqr/training.hpp"

using namespace chdqr;

namespace {

Eigen::MatrixXd random_coords(Rng& rng, int k, int d, double lo, double hi) {
  Eigen::MatrixXd c(k, d);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j) c(i, j) = rng.uniform(lo, hi);
  return c;
}

}  // namespace

TEST_CASE("method string round trip") {
  for (auto* name : {"grid", "cqr", "chdqr", "chdqr-dynamic"})
    CHECK(method_to_string(method_from_string(name)) == name);
  CHECK_THROWS(method_from_string("nope"));
}

TEST_CASE("cross-entropy values") {
  // One-hot label on a certain prediction -> 0.
  Eigen::VectorXd q = Eigen::VectorXd::Zero(3);
  q[1] = 1.0;
  Eigen::VectorXd logits(3);
  logits << -60, 0, -60;  // softmax ~ (0,1,0)
  Eigen::VectorXd log_areas = Eigen::VectorXd::Zero(3);
  CHECK(loss_cross_entropy(q, logits, log_areas) == doctest::Approx(0.0).epsilon(1e-9));

  // Uniform q and P over K=4 -> log 4.
  Eigen::VectorXd qu = Eigen::VectorXd::Constant(4, 0.25);
  CHECK(loss_cross_entropy(qu, Eigen::VectorXd::Zero(4),
                           Eigen::VectorXd::Zero(4)) ==
        doctest::Approx(std::log(4.0)));
}

TEST_CASE("cross-entropy matches brute force") {
  Rng rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    int k = 2 + static_cast<int>(rng.uniform_int(10));
    Eigen::VectorXd raw(k), logits(k), areas(k);
    for (int i = 0; i < k; ++i) {
      raw[i] = rng.uniform() + 1e-3;
      logits[i] = 3.0 * rng.normal();
      areas[i] = rng.uniform() + 0.1;
    }
    Eigen::VectorXd q = raw / raw.sum();
    Eigen::VectorXd log_areas = areas.array().log().matrix();
    // Brute force: P_i = exp(l_i + log A_i) / sum.
    Eigen::ArrayXd unn = (logits + log_areas).array().exp();
    Eigen::ArrayXd P = unn / unn.sum();
    double brute = -(q.array() * P.log()).sum();
    CHECK(loss_cross_entropy(q, logits, log_areas) ==
          doctest::Approx(brute).epsilon(1e-10));
  }
}

TEST_CASE("quantization loss and gradient sign") {
  Eigen::MatrixXd coords(2, 1);
  coords << 0, 1;
  Eigen::VectorXd y(1);
  y << 0.4;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(2, 1);
  CHECK(loss_quantization(y, coords, &grad) == doctest::Approx(0.4));
  CHECK(grad(0, 0) < 0);      // moves prototype 0 toward y = 0.4 (c - y < 0... )
  CHECK(grad(1, 0) == 0.0);   // non-argmin untouched

  // y atop a prototype: loss 0, zero gradient.
  Eigen::VectorXd y0(1);
  y0 << 1.0;
  Eigen::MatrixXd g0 = Eigen::MatrixXd::Zero(2, 1);
  CHECK(loss_quantization(y0, coords, &g0) == doctest::Approx(0.0));
  CHECK(g0.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("quantization gradient moves the closest prototype toward y") {
  Eigen::MatrixXd coords(2, 1);
  coords << 0, 1;
  Eigen::VectorXd y(1);
  y << 0.4;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(2, 1);
  loss_quantization(y, coords, &grad);
  Eigen::MatrixXd stepped = coords - 0.1 * grad;
  CHECK(std::abs(stepped(0, 0) - 0.4) < std::abs(coords(0, 0) - 0.4));
}

TEST_CASE("quantization gradient vs finite differences") {
  Rng rng(99);
  int bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    int d = 1 + static_cast<int>(rng.uniform_int(2));
    int k = 2 + static_cast<int>(rng.uniform_int(8));
    Eigen::MatrixXd coords = random_coords(rng, k, d, -1, 1);
    Eigen::VectorXd y(d);
    for (int j = 0; j < d; ++j) y[j] = rng.uniform(-1.0, 1.0);
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(k, d);
    loss_quantization(y, coords, &grad);
    const double h = 1e-6;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < d; ++j) {
        Eigen::MatrixXd up = coords, dn = coords;
        up(i, j) += h;
        dn(i, j) -= h;
        double numeric =
            (loss_quantization(y, up) - loss_quantization(y, dn)) / (2 * h);
        double denom = std::max({std::abs(numeric), std::abs(grad(i, j)), 1e-8});
        if (std::abs(numeric - grad(i, j)) > 1e-7 &&
            std::abs(numeric - grad(i, j)) / denom > 1e-4)
          ++bad;
      }
  }
  // Kinks at argmin switches can spoil a few entries; the bulk must agree.
  CHECK(bad <= 3);
}

TEST_CASE("repulsion loss values") {
  Eigen::MatrixXd spread(3, 1);
  spread << 0, 1, 2;
  CHECK(loss_repulsion(spread, 0.5) == doctest::Approx(0.0));

  Eigen::MatrixXd close(2, 1);
  close << 0.0, 0.0;
  // Ordered-pair double count: 2 * max(0, 0.1 - 0) = 0.2.
  CHECK(loss_repulsion(close, 0.1) == doctest::Approx(0.2));
}

TEST_CASE("repulsion gradient pushes near prototypes apart") {
  Eigen::MatrixXd coords(2, 1);
  coords << 0.0, 0.05;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(2, 1);
  double before_gap = 0.05;
  loss_repulsion(coords, 0.2, &grad);
  Eigen::MatrixXd stepped = coords - 0.01 * grad;
  CHECK(stepped(1, 0) - stepped(0, 0) > before_gap);
}

TEST_CASE("repulsion gradient vs finite differences") {
  Rng rng(101);
  int bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    int d = 1 + static_cast<int>(rng.uniform_int(2));
    int k = 2 + static_cast<int>(rng.uniform_int(8));
    Eigen::MatrixXd coords = random_coords(rng, k, d, -1, 1);
    double delta = 0.1 + rng.uniform();
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(k, d);
    loss_repulsion(coords, delta, &grad);
    const double h = 1e-6;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < d; ++j) {
        Eigen::MatrixXd up = coords, dn = coords;
        up(i, j) += h;
        dn(i, j) -= h;
        double numeric =
            (loss_repulsion(up, delta) - loss_repulsion(dn, delta)) / (2 * h);
        double denom = std::max({std::abs(numeric), std::abs(grad(i, j)), 1e-8});
        if (std::abs(numeric - grad(i, j)) > 1e-7 &&
            std::abs(numeric - grad(i, j)) / denom > 1e-4)
          ++bad;
      }
  }
  CHECK(bad <= 3);  // hinge kinks only
}

TEST_CASE("grid-hash repulsion matches brute force on large K") {
  Rng rng(333);
  Eigen::MatrixXd coords = random_coords(rng, 400, 2, 0, 1);
  double delta = 0.04;
  double fast = loss_repulsion(coords, delta);
  double brute = 0.0;
  for (int i = 0; i < 400; ++i)
    for (int j = 0; j < 400; ++j) {
      if (i == j) continue;
      double dist = (coords.row(i) - coords.row(j)).norm();
      brute += std::max(0.0, delta - dist);
    }
  CHECK(fast == doctest::Approx(brute).epsilon(1e-10));
}

TEST_CASE("dynamics: uniform usage between thresholds leaves K unchanged") {
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.k_init = 10;
  cfg.proto_init = "data";
  cfg.hidden = {8};
  Dataset train = gen_uncond1d(200, 3);
  TrainState state = fit(train, cfg);
  int k0 = state.protos.k();

  DynamicsConfig dyn;
  dyn.enabled = true;
  Rng rng(4);
  // All usages are ~1/K for data-seeded prototypes; thresholds straddle 1/K.
  add_remove_prototypes(state, dyn, train.targets, state.tau_eff, rng);
  CHECK(state.protos.k() == k0);
}

TEST_CASE("dynamics: a dead prototype is deleted with its head row") {
  // Hand-built state: all targets live in [0, 0.15]; prototype 4 sits at 0.9
  // where every target is far closer to another prototype, so U(c_4) ~ 0.
  TrainState state;
  state.protos.coords.resize(5, 1);
  state.protos.coords << 0.0, 0.05, 0.1, 0.15, 0.9;
  state.protos.box.lower = Eigen::VectorXd::Constant(1, -0.1);
  state.protos.box.upper = Eigen::VectorXd::Constant(1, 1.0);
  Rng init_rng(3);
  state.net = DensityNetwork::create(1, {8}, 5, init_rng);
  state.opt_theta = AdamState::for_network(state.net);
  state.opt_protos.init(5, 1);
  state.sigma_eff = 0.01;
  state.areas = voronoi_areas(state.protos);
  Eigen::MatrixXd targets(200, 1);
  Rng data_rng(5);
  for (int i = 0; i < 200; ++i) targets(i, 0) = data_rng.uniform(0.0, 0.15);

  DynamicsConfig dyn;
  dyn.enabled = true;
  dyn.delta_del_scale = 1e-4 * 5;  // delta_del = 1e-4
  dyn.delta_add_scale = 100.0;     // no additions
  Rng rng(4);
  add_remove_prototypes(state, dyn, targets, 1e-3, rng);
  CHECK(state.protos.k() == 4);
  CHECK(state.net.output_dim() == 4);
  CHECK(state.areas.size() == 4);
  CHECK(std::abs(state.areas.sum() - state.protos.box.volume()) <=
        1e-9 * state.protos.box.volume());
}

TEST_CASE("dynamics: overused prototype is cloned") {
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.k_init = 4;
  cfg.proto_init = "data";
  cfg.hidden = {8};
  Dataset train = gen_uncond1d(400, 3);
  TrainState state = fit(train, cfg);
  // Concentrate all prototypes except 0 far away so prototype 0 absorbs
  // nearly all usage.
  for (int i = 1; i < 4; ++i)
    state.protos.coords(i, 0) = state.protos.box.upper[0] - 1e-3 * i;
  state.protos.coords(0, 0) = 0.0;
  int k0 = state.protos.k();

  DynamicsConfig dyn;
  dyn.enabled = true;
  dyn.delta_add_scale = 2.0;   // delta_add = 0.5: only the hog qualifies
  dyn.delta_del_scale = 0.0;   // no deletions (usage 0 imposible here? keep 0)
  Rng rng(4);
  add_remove_prototypes(state, dyn, train.targets, 1e-2, rng);
  CHECK(state.protos.k() == k0 + 1);
  CHECK(state.net.output_dim() == k0 + 1);
}

TEST_CASE("fit: 0 epochs returns initial state; static never changes K") {
  Dataset train = gen_uncond1d(500, 8);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.bins_per_dim = 20;
  cfg.hidden = {8};
  TrainState s0 = fit(train, cfg);
  CHECK(s0.epoch == 0);
  CHECK(s0.protos.k() == 20);
  CHECK(s0.epoch_loss.empty());

  cfg.epochs = 3;
  TrainState s3 = fit(train, cfg);
  CHECK(s3.k_trajectory.size() == 4);  // initial K plus one entry per epoch
  for (int k : s3.k_trajectory) CHECK(k == 20);
}

TEST_CASE("fit: loss decreases on uncond1d (smoothed)") {
  Dataset train = gen_uncond1d(2000, 12);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.bins_per_dim = 30;
  cfg.hidden = {32};
  cfg.lr_theta = 1e-2;  // the zero-init head must outpace prototype movement
  cfg.dynamics.enabled = true;
  TrainState s = fit(train, cfg);
  REQUIRE(s.epoch_loss.size() == 10);
  auto avg3 = [&](int start) {
    return (s.epoch_loss[start] + s.epoch_loss[start + 1] +
            s.epoch_loss[start + 2]) / 3.0;
  };
  CHECK(avg3(7) < avg3(0));
}

TEST_CASE("fit is deterministic") {
  Dataset train = gen_uncond1d(500, 12);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.bins_per_dim = 15;
  cfg.hidden = {16};
  cfg.seed = 77;
  TrainState a = fit(train, cfg);
  TrainState b = fit(train, cfg);
  CHECK(same(a.protos.coords, b.protos.coords));
  CHECK(same(a.net.head_weight(), b.net.head_weight()));
  CHECK(a.epoch_loss == b.epoch_loss);
}

TEST_CASE("prototypes stay inside the bounding box") {
  Dataset train = gen_uncond1d(500, 2);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.bins_per_dim = 10;
  cfg.hidden = {16};
  cfg.lr_protos = 0.1;  // aggressive steps
  TrainState s = fit(train, cfg);
  for (int i = 0; i < s.protos.k(); ++i) {
    CHECK(s.protos.coords(i, 0) >= s.protos.box.lower[0]);
    CHECK(s.protos.coords(i, 0) <= s.protos.box.upper[0]);
  }
}
