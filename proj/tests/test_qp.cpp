#include "doctest.h"

#include <cmath>

#include "uphes/qp.hpp"
#include "uphes/sim.hpp"

using namespace uphes;
using Eigen::VectorXd;

namespace {

struct Fixture {
  PlantConfig config = default_config();
  UpcModel model;
  GlobalLinearModel global;
  Fixture() {
    model = upc_fit(synth_upc_dataset(config, {31, 31}), {}, config);
    global = fit_global(model, config, {});
  }
};

const Fixture& fx() {
  static Fixture f;
  return f;
}

VectorXd daily_prices(int T) {
  VectorXd lam(T);
  for (int t = 0; t < T; ++t) {
    const double x = (t + 0.5) / T * 24.0;
    lam(t) = 70.0 + 45.0 * std::exp(-0.5 * std::pow((x - 8.5) / 2.0, 2)) +
             60.0 * std::exp(-0.5 * std::pow((x - 19.0) / 2.5, 2)) -
             25.0 * std::exp(-0.5 * std::pow((x - 3.5) / 2.5, 2));
  }
  return lam;
}

// mixed schedule that stays inside the volume window and ends with
// terminal slack (net pumping exceeds net generation)
VectorXd mixed_schedule() {
  VectorXd p = VectorXd::Zero(24);
  const double pump[] = {-8, -9, -10, -8, -7};
  const double gen[] = {7, 8, 9, 8};
  for (int i = 0; i < 5; ++i) p(1 + i) = pump[i];
  for (int i = 0; i < 4; ++i) p(8 + i) = gen[i];
  p(17) = -5.0;
  p(18) = -6.0;
  p(21) = 6.0;
  return p;
}

Trajectory idle_trajectory(int T, const PlantConfig& c) {
  Trajectory x;
  x.resize(T);
  for (int t = 0; t < T; ++t) {
    x.v[t] = c.v_init;
    x.h[t] = c.h_init;
  }
  return x;
}

}  // namespace

TEST_CASE("penalty weight validation and scaling") {
  auto w = PenaltyWeights::constant(24, 1.0, 2.0, 3);
  w.validate();
  auto w2 = w.scaled(2);
  CHECK(w2.w_p(0) == doctest::Approx(4.0));
  w.w_q(3) = 1e4;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w.w_q(3) = 1.0;
  w.growth = 0.9;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}

TEST_CASE("raw solver detects inconsistent equalities") {
  QpProblem qp;
  qp.H = Eigen::MatrixXd::Identity(1, 1);
  qp.g = VectorXd::Zero(1);
  qp.Ae = Eigen::MatrixXd::Ones(2, 1);
  qp.be = VectorXd(2);
  qp.be << 0.0, 1.0;
  qp.Ci = Eigen::MatrixXd::Zero(0, 1);
  qp.di = VectorXd::Zero(0);
  auto sol = solve_qp_raw(qp, {});
  CHECK(sol.status == QpStatus::Infeasible);
}

TEST_CASE("dominant penalty collapses the trust region") {
  const auto& f = fx();
  PlantConfig c = f.config;
  c.c_op = 0.0;  // penalties must dominate every objective term
  c.finalize();
  VectorXd p = mixed_schedule();
  Trajectory xh = integrate_schedule(p, f.model, c);
  auto lin = local_linearize(f.model, c, xh);
  auto w = PenaltyWeights::constant(24, kWeightHi, 2.0, 1);
  VectorXd lam = VectorXd::Constant(24, 1.0);
  auto inst = build_penalized_qp(lam, lin, w, c, f.global);
  auto sol = solve_qp(inst);
  REQUIRE(sol.status == QpStatus::Optimal);
  CHECK(sol.kkt_residual <= 1e-6);
  for (int t = 0; t < 24; ++t)
    CHECK(std::abs(sol.trajectory.p[t] - xh.p[t]) <= 1e-3);
}

TEST_CASE("all-idle instance solves to the zero schedule and is a fixed point") {
  const auto& f = fx();
  Trajectory xh = idle_trajectory(24, f.config);
  auto lin = local_linearize(f.model, f.config, xh);
  auto w = PenaltyWeights::constant(24, 1.0, 2.0, 3);
  VectorXd lam = daily_prices(24);
  auto inst = build_penalized_qp(lam, lin, w, f.config, f.global);
  auto sol = solve_qp(inst);
  REQUIRE(sol.status == QpStatus::Optimal);
  CHECK(std::abs(sol.objective) <= 1e-7);
  for (int t = 0; t < 24; ++t) {
    CHECK(sol.trajectory.p[t] == 0.0);
    CHECK(sol.trajectory.q[t] == 0.0);
    CHECK(std::abs(sol.trajectory.v[t] - f.config.v_init) <= 1e-4);
  }

  auto res = recursive_refine(lam, xh, w, f.model, f.config, f.global);
  REQUIRE(res.completed_steps == 3);
  for (int t = 0; t < 24; ++t) {
    CHECK(res.final.p[t] == 0.0);
    CHECK(std::abs(res.final.h[t] - f.config.h_init) <= 1e-6);
  }
}

TEST_CASE("two-hour toy matches the hand-eliminated KKT optimum") {
  const auto& f = fx();
  VectorXd p(2);
  p << -8.0, 0.0;
  Trajectory xh = integrate_schedule(p, f.model, f.config);
  auto lin = local_linearize(f.model, f.config, xh);
  PenaltyWeights w = PenaltyWeights::constant(2, 1.0, 2.0, 1);
  w.w_p << 0.7, 0.9;
  w.w_q << 0.4, 0.6;
  w.w_h << 1.3, 0.8;
  VectorXd lam(2);
  lam << 3.0, 50.0;
  auto inst = build_penalized_qp(lam, lin, w, f.config, f.global);
  auto sol = solve_qp(inst);
  REQUIRE(sol.status == QpStatus::Optimal);

  // eliminate q, h, v by hand from the linearized relations
  const double dt = f.config.dt_s;
  const double xi1 = lin.xi_q[0][0], xi2 = lin.xi_q[0][1], xi3 = lin.xi_q[0][2];
  const double xv1a = lin.xi_v[0][0], xv2a = lin.xi_v[0][1];
  const double xv1b = lin.xi_v[1][0], xv2b = lin.xi_v[1][1];
  const double denom_q = 1.0 - xi2 * dt / xv1a;
  const double a = xi1 / denom_q;
  const double b = (xi2 * (f.config.v_init - xv2a) / xv1a + xi3) / denom_q;
  const double cc = dt * a / xv1a;
  const double d = (f.config.v_init + dt * b - xv2a) / xv1a;
  const double c2 = dt * a / xv1b;
  const double d2 = (f.config.v_init + dt * b - xv2b) / xv1b;
  const double dth = f.config.dt_h();
  const double num = dth * lam(0) + 2 * w.w_p(0) * xh.p[0] +
                     2 * a * w.w_q(0) * (xh.q[0] - b) +
                     2 * cc * w.w_h(0) * (xh.h[0] - d) +
                     2 * c2 * w.w_h(1) * (xh.h[1] - d2);
  const double den = 2 * dth * f.config.c_op + 2 * w.w_p(0) +
                     2 * a * a * w.w_q(0) + 2 * cc * cc * w.w_h(0) +
                     2 * c2 * c2 * w.w_h(1);
  const double p_expect = num / den;
  CHECK(sol.trajectory.p[0] == doctest::Approx(p_expect).epsilon(1e-7));
  CHECK(sol.trajectory.q[0] ==
        doctest::Approx(a * p_expect + b).epsilon(1e-7));
}

TEST_CASE("decoupled stationarity closed form and its weight derivative") {
  const auto& f = fx();
  VectorXd p(1);
  p << -8.0;
  Trajectory xh = integrate_schedule(p, f.model, f.config);
  auto lin = local_linearize(f.model, f.config, xh);
  PenaltyWeights w = PenaltyWeights::constant(1, 1.0, 2.0, 1);
  w.w_q(0) = 0.0;  // decouple flow and head from the stationarity in p
  w.w_h(0) = 0.0;
  VectorXd lam(1);
  lam << 2.0;
  auto inst = build_penalized_qp(lam, lin, w, f.config, f.global);
  auto sol = solve_qp(inst);
  REQUIRE(sol.status == QpStatus::Optimal);
  const double dth = f.config.dt_h();
  const double expect = (dth * lam(0) + 2.0 * w.w_p(0) * xh.p[0]) /
                        (2.0 * dth * f.config.c_op + 2.0 * w.w_p(0));
  CHECK(sol.trajectory.p[0] == doctest::Approx(expect).epsilon(1e-8));

  auto jac = differentiate_qp(sol, inst);
  const double den = 2.0 * dth * f.config.c_op + 2.0 * w.w_p(0);
  const double dp_dw =
      (4.0 * dth * f.config.c_op * xh.p[0] - 2.0 * dth * lam(0)) / (den * den);
  CHECK(jac.dx_dw(inst.idx_p(0), 0) == doctest::Approx(dp_dw).epsilon(1e-6));
}

TEST_CASE("terminal volume infeasibility is certified") {
  const auto& f = fx();
  // all-turbine warm start only adds water; v_init == v_target leaves no
  // room, and mode locking forbids pumping it back
  VectorXd p = VectorXd::Constant(6, 8.0);
  Trajectory xh = integrate_schedule(p, f.model, f.config);
  auto lin = local_linearize(f.model, f.config, xh);
  auto w = PenaltyWeights::constant(6, 1.0, 2.0, 1);
  auto inst = build_penalized_qp(daily_prices(6), lin, w, f.config, f.global);
  auto sol = solve_qp(inst);
  CHECK(sol.status == QpStatus::Infeasible);

  auto res =
      recursive_refine(daily_prices(6), xh, w, f.model, f.config, f.global);
  CHECK(res.fallback);
  CHECK(res.completed_steps == 0);
  for (int t = 0; t < 6; ++t) CHECK(res.final.p[t] == xh.p[t]);
}

TEST_CASE("solution dominates random feasible points") {
  const auto& f = fx();
  VectorXd p = mixed_schedule();
  Trajectory xh = integrate_schedule(p, f.model, f.config);
  auto lin = local_linearize(f.model, f.config, xh);
  auto w = PenaltyWeights::constant(24, 1.0, 2.0, 1);
  VectorXd lam = daily_prices(24);
  auto inst = build_penalized_qp(lam, lin, w, f.config, f.global);
  auto sol = solve_qp(inst);
  REQUIRE(sol.status == QpStatus::Optimal);

  // feasible points: random powers, dependent variables from the
  // linearized chain, bounds rejected
  Rng rng(99);
  const double dt = f.config.dt_s;
  int accepted = 0;
  int tries = 0;
  while (accepted < 1000 && tries < 100000) {
    ++tries;
    VectorXd xp(24), xq(24), xhd(24), xv(24);
    bool ok = true;
    double v_prev = f.config.v_init;
    for (int t = 0; t < 24 && ok; ++t) {
      double pt = 0.0;
      if (std::abs(xh.p[t]) >= kIdlePowerEps)
        pt = xh.p[t] + rng.uniform(-1.0, 1.0);
      const double xi1 = lin.xi_q[t][0], xi2 = lin.xi_q[t][1],
                   xi3 = lin.xi_q[t][2];
      const double xv1 = lin.xi_v[t][0], xv2 = lin.xi_v[t][1];
      const double denom = 1.0 - xi2 * dt / xv1;
      const double q = (xi1 * pt + xi2 * (v_prev - xv2) / xv1 + xi3) / denom;
      const double v = v_prev + dt * q;
      const double h = (v - xv2) / xv1;
      if (h < f.config.h_min || h > f.config.h_max) ok = false;
      if (std::abs(xh.p[t]) >= kIdlePowerEps) {
        const Mode m = xh.mode[t];
        const double lo = f.global.power_min(m, h);
        const double hi = f.global.power_max(m, h);
        if (pt < lo || pt > hi) ok = false;
      }
      xp(t) = pt;
      xq(t) = q;
      xhd(t) = h;
      xv(t) = v;
      v_prev = v;
    }
    if (!ok || xv(23) > f.config.v_target) continue;
    ++accepted;
    VectorXd xfull(96);
    xfull << xp, xq, xhd, xv;
    CHECK(inst.objective(xfull) <= sol.objective + 1e-5);
  }
  CHECK(accepted == 1000);
}

TEST_CASE("jacobian columns vanish when the solution sits at the centers") {
  const auto& f = fx();
  Trajectory xh = idle_trajectory(6, f.config);
  auto lin = local_linearize(f.model, f.config, xh);
  auto w = PenaltyWeights::constant(6, 1.0, 2.0, 1);
  auto inst =
      build_penalized_qp(VectorXd::Constant(6, 80.0), lin, w, f.config,
                         f.global);
  auto sol = solve_qp(inst);
  REQUIRE(sol.status == QpStatus::Optimal);
  auto jac = differentiate_qp(sol, inst);
  CHECK(jac.dx_dw.cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("jacobian-vector products match finite differences on 24 hours") {
  const auto& f = fx();
  VectorXd p = mixed_schedule();
  Trajectory xh = integrate_schedule(p, f.model, f.config);
  auto lin = local_linearize(f.model, f.config, xh);
  VectorXd lam = daily_prices(24);
  auto base = PenaltyWeights::constant(24, 1.0, 2.0, 1);

  QpSolverOptions tight;
  tight.tol = 1e-11;
  tight.mu_tol = 1e-12;
  auto inst = build_penalized_qp(lam, lin, base, f.config, f.global);
  auto sol = solve_qp(inst, tight);
  REQUIRE(sol.status == QpStatus::Optimal);
  auto jac = differentiate_qp(sol, inst);

  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    VectorXd u(72);
    for (int i = 0; i < 72; ++i) u(i) = rng.uniform(-1.0, 1.0);
    u /= u.norm();
    const double eps = 1e-4;  // weights are O(1) here
    PenaltyWeights wp = base, wm = base;
    for (int t = 0; t < 24; ++t) {
      wp.w_p(t) += eps * u(t);
      wp.w_q(t) += eps * u(24 + t);
      wp.w_h(t) += eps * u(48 + t);
      wm.w_p(t) -= eps * u(t);
      wm.w_q(t) -= eps * u(24 + t);
      wm.w_h(t) -= eps * u(48 + t);
    }
    auto xp = solve_qp(build_penalized_qp(lam, lin, wp, f.config, f.global),
                       tight);
    auto xm = solve_qp(build_penalized_qp(lam, lin, wm, f.config, f.global),
                       tight);
    REQUIRE(xp.status == QpStatus::Optimal);
    REQUIRE(xm.status == QpStatus::Optimal);
    VectorXd fd = (xp.x - xm.x) / (2.0 * eps);
    for (int t = 0; t < 24; ++t) fd(inst.idx_v(t)) *= kVolUnit;
    VectorXd jv = jac.dx_dw * u;
    CHECK((jv - fd).norm() <= 1e-4 * std::max(1.0, fd.norm()));
  }
}

TEST_CASE("refinement preserves modes and anneals step sizes") {
  const auto& f = fx();
  VectorXd lam = daily_prices(24);
  Rng rng(17);
  VectorXd p = mixed_schedule();
  for (int t = 0; t < 24; ++t)
    if (p(t) != 0.0) p(t) *= 1.0 + 0.3 * rng.uniform(-1.0, 1.0);
  Trajectory warm = integrate_schedule(p, f.model, f.config);
  auto w = PenaltyWeights::constant(24, 1.0, 2.0, 3);
  auto res = recursive_refine(lam, warm, w, f.model, f.config, f.global);
  REQUIRE(res.completed_steps == 3);

  for (int t = 0; t < 24; ++t) {
    CHECK(res.final.mode[t] == warm.mode[t]);
    if (warm.p[t] > 0) CHECK(res.final.p[t] > 0);
    if (warm.p[t] < 0) CHECK(res.final.p[t] < 0);
    if (warm.p[t] == 0) CHECK(res.final.p[t] == 0);
  }

  // annealing: iterate displacement shrinks as weights grow
  std::vector<double> step(3);
  Trajectory prev = warm;
  for (int k = 0; k < 3; ++k) {
    const auto& cur = res.tape.steps[k].solution.trajectory;
    double s = 0.0;
    for (int t = 0; t < 24; ++t) s += std::pow(cur.p[t] - prev.p[t], 2);
    step[k] = std::sqrt(s);
    prev = cur;
  }
  CHECK(step[1] <= step[0] * (1.0 + 1e-9));
  CHECK(step[2] <= step[1] * (1.0 + 1e-9));
}

TEST_CASE("solver determinism") {
  const auto& f = fx();
  VectorXd p = mixed_schedule();
  Trajectory xh = integrate_schedule(p, f.model, f.config);
  auto lin = local_linearize(f.model, f.config, xh);
  auto w = PenaltyWeights::constant(24, 1.0, 2.0, 1);
  auto inst = build_penalized_qp(daily_prices(24), lin, w, f.config, f.global);
  auto s1 = solve_qp(inst);
  auto s2 = solve_qp(inst);
  REQUIRE(s1.x.size() == s2.x.size());
  for (int i = 0; i < s1.x.size(); ++i) CHECK(s1.x(i) == s2.x(i));
}
