#include "doctest.h"

#include <cmath>

#include "uphes/sim.hpp"

using namespace uphes;
using Eigen::VectorXd;

namespace {

struct Fixture {
  PlantConfig config = default_config();
  UpcModel model;
  Fixture() { model = upc_fit(synth_upc_dataset(config, {31, 31}), {}, config); }
};

const Fixture& fx() {
  static Fixture f;
  return f;
}

VectorXd flat_prices(int T, double lam) { return VectorXd::Constant(T, lam); }

// constant-envelope toy model: q = 0.01 p h, envelopes fixed per mode
UpcModel toy_model(double pmin_t, double pmax_t) {
  UpcModel m;
  m.degree = 2;
  m.coef_turbine.assign(6, 0.0);
  m.coef_turbine[4] = 0.01;  // (1,1)
  m.coef_pump = m.coef_turbine;
  m.pmin_turbine = {pmin_t};
  m.pmax_turbine = {pmax_t};
  m.pmin_pump = {-pmax_t};
  m.pmax_pump = {-pmin_t};
  return m;
}

}  // namespace

TEST_CASE("all-zero schedule is the idle identity") {
  const auto& f = fx();
  VectorXd p = VectorXd::Zero(24);
  auto out = simulate_profit(p, flat_prices(24, 100.0), f.model, f.config);
  for (int t = 0; t < 24; ++t) {
    CHECK(out.trajectory.p[t] == 0.0);
    CHECK(out.trajectory.q[t] == 0.0);
    CHECK(out.trajectory.v[t] == f.config.v_init);
    CHECK(out.trajectory.mode[t] == Mode::Idle);
  }
  // v_init == v_target: the zero-profit identity is exact
  CHECK(out.profit == 0.0);
  CHECK(out.si_penalty == 0.0);
  CHECK(out.vol_penalty == 0.0);
  CHECK(out.events.empty());
}

TEST_CASE("overscheduled power is clamped to the envelope") {
  const auto& f = fx();
  VectorXd p = VectorXd::Zero(24);
  p(0) = 500.0;  // far above any turbine envelope
  auto out = simulate(p, f.model, f.config);
  const double pu = envelope_max(f.model, Mode::Turbine, f.config.h_init);
  CHECK(out.trajectory.p[0] == doctest::Approx(pu));
  REQUIRE(out.events.size() >= 1);
  CHECK(out.events[0].kind == SimEventKind::ClampHigh);
  CHECK(out.events[0].hour == 0);
  CHECK(out.events[0].requested == 500.0);
}

TEST_CASE("sustained turbining hits the volume window and forces idle") {
  const auto& f = fx();
  VectorXd p = VectorXd::Constant(24, 13.0);
  auto out = simulate(p, f.model, f.config);
  bool forced = false;
  for (const auto& e : out.events)
    if (e.kind == SimEventKind::IdleForced) forced = true;
  CHECK(forced);
  // volume held on forced hours, never outside the window
  for (int t = 0; t < 24; ++t) {
    CHECK(out.trajectory.v[t] >= f.config.v_low_feas_min - 1e-6);
    CHECK(out.trajectory.v[t] <= f.config.v_low_feas_max + 1e-6);
    CHECK(out.trajectory.h[t] >= f.config.h_min - 1e-9);
    CHECK(out.trajectory.h[t] <= f.config.h_max + 1e-9);
  }
}

TEST_CASE("profit arithmetic on a single consistent hour") {
  PlantConfig c = default_config();
  auto m = toy_model(1.0, 50.0);
  VectorXd p(1), lam(1);
  p << 10.0;
  lam << 100.0;
  auto out = simulate_profit(p, lam, m, c);
  CHECK(out.trajectory.p[0] == doctest::Approx(10.0));
  CHECK(out.revenue - out.operating_cost == doctest::Approx(960.0));
  CHECK(out.si_penalty == 0.0);
}

TEST_CASE("settlement asymmetry identities") {
  PlantConfig c = default_config();
  c.c_op = 0.0;
  c.finalize();
  VectorXd lam(1);
  lam << 100.0;

  SUBCASE("shortfall charged at twice the day-ahead price") {
    auto m = toy_model(1.0, 8.0);  // clamps 10 MW down to 8
    VectorXd p(1);
    p << 10.0;
    auto out = simulate_profit(p, lam, m, c);
    CHECK(out.trajectory.p[0] == doctest::Approx(8.0));
    CHECK(out.si_penalty == doctest::Approx(200.0));
    const double net = out.revenue - out.operating_cost - out.si_penalty;
    CHECK(net == doctest::Approx(600.0));
    // identity: scheduled at lambda minus shortfall at 2*lambda
    CHECK(net == doctest::Approx(100.0 * 10.0 - 2.0 * 100.0 * 2.0));
  }

  SUBCASE("surplus compensated at half the day-ahead price") {
    auto m = toy_model(12.0, 15.0);  // clamps 10 MW up to 12
    VectorXd p(1);
    p << 10.0;
    auto out = simulate_profit(p, lam, m, c);
    CHECK(out.trajectory.p[0] == doctest::Approx(12.0));
    CHECK(out.si_penalty == doctest::Approx(100.0));
    const double net = out.revenue - out.operating_cost - out.si_penalty;
    CHECK(net == doctest::Approx(1100.0));
    CHECK(net == doctest::Approx(100.0 * 10.0 + 0.5 * 100.0 * 2.0));
  }
}

TEST_CASE("volume conservation and feasibility over random schedules") {
  const auto& f = fx();
  Rng rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    VectorXd p(24);
    for (int t = 0; t < 24; ++t) {
      const double u = rng.uniform01();
      if (u < 0.3)
        p(t) = 0.0;
      else if (u < 0.65)
        p(t) = rng.uniform(1.0, 16.0);
      else
        p(t) = -rng.uniform(1.0, 19.0);
    }
    auto out = simulate(p, f.model, f.config);
    double acc = f.config.v_init;
    for (int t = 0; t < 24; ++t) acc += f.config.dt_s * out.trajectory.q[t];
    CHECK(std::abs(acc - out.trajectory.v[23]) <= 1e-6 * f.config.v_total);
    for (int t = 0; t < 24; ++t) {
      const double pt = out.trajectory.p[t];
      CHECK(out.trajectory.h[t] >= f.config.h_min - 1e-9);
      CHECK(out.trajectory.h[t] <= f.config.h_max + 1e-9);
      CHECK(out.trajectory.v[t] >= f.config.v_low_feas_min - 1e-6);
      CHECK(out.trajectory.v[t] <= f.config.v_low_feas_max + 1e-6);
      if (pt != 0.0) {
        const Mode m = out.trajectory.mode[t];
        CHECK(pt >= envelope_min(f.model, m, out.trajectory.h[t]) - 1e-9);
        CHECK(pt <= envelope_max(f.model, m, out.trajectory.h[t]) + 1e-9);
      }
    }
  }
}

TEST_CASE("pathwise gradient matches finite differences away from clamps") {
  const auto& f = fx();
  VectorXd lam(24);
  for (int t = 0; t < 24; ++t)
    lam(t) = 60.0 + 50.0 * std::sin(0.26 * t) + 20.0 * std::cos(0.7 * t);
  Rng rng(7);
  int accepted = 0, tries = 0;
  while (accepted < 100 && tries < 2000) {
    ++tries;
    VectorXd p(24);
    for (int t = 0; t < 24; ++t) {
      const double u = rng.uniform01();
      if (u < 0.35)
        p(t) = 0.0;
      else if (u < 0.7)
        p(t) = rng.uniform(4.0, 9.0);
      else
        p(t) = -rng.uniform(5.0, 11.0);
    }
    // keep clear of clamp kinks and the volume window
    auto probe = simulate(p, f.model, f.config);
    if (!probe.events.empty()) continue;
    bool safe = true;
    for (int t = 0; t < 24 && safe; ++t) {
      if (p(t) == 0.0) continue;
      const Mode m = probe.trajectory.mode[t];
      const double h = probe.trajectory.h[t];
      if (p(t) < envelope_min(f.model, m, h) + 1e-2 ||
          p(t) > envelope_max(f.model, m, h) - 1e-2)
        safe = false;
    }
    const double margin = 5e3;
    for (int t = 0; t < 24 && safe; ++t)
      if (probe.trajectory.v[t] < f.config.v_low_feas_min + margin ||
          probe.trajectory.v[t] > f.config.v_low_feas_max - margin)
        safe = false;
    if (!safe) continue;
    ++accepted;

    VectorXd g = profit_grad(p, lam, f.model, f.config);
    const double step = 1e-4;
    for (int t = 0; t < 24; t += 5) {
      if (p(t) == 0.0) continue;
      VectorXd pp = p, pm = p;
      pp(t) += step;
      pm(t) -= step;
      const double fd =
          (simulate_profit(pp, lam, f.model, f.config).profit -
           simulate_profit(pm, lam, f.model, f.config).profit) /
          (2.0 * step);
      CHECK(g(t) == doctest::Approx(fd).epsilon(1e-3));
    }
  }
  CHECK(accepted == 100);
}

TEST_CASE("gradient conventions on flat regions") {
  const auto& f = fx();
  VectorXd lam = flat_prices(24, 80.0);
  VectorXd p = VectorXd::Zero(24);
  VectorXd g = profit_grad(p, lam, f.model, f.config);
  // idle hours: only the shortfall-side imbalance derivative survives
  for (int t = 0; t < 24; ++t)
    CHECK(g(t) == doctest::Approx(-80.0 * f.config.dt_h()));
}

TEST_CASE("consistent integration satisfies the simultaneous relations") {
  const auto& f = fx();
  VectorXd p(6);
  p << -8.0, -9.0, 0.0, 7.0, 9.0, 0.0;
  Trajectory x = integrate_schedule(p, f.model, f.config);
  x.validate();
  double v_prev = f.config.v_init;
  for (int t = 0; t < 6; ++t) {
    if (x.mode[t] != Mode::Idle) {
      CHECK(std::abs(x.q[t] -
                     upc_eval(f.model, x.mode[t], x.p[t], x.h[t], f.config)) <=
            1e-9);
    }
    CHECK(std::abs(x.v[t] - (v_prev + f.config.dt_s * x.q[t])) <=
          1e-6 * f.config.v_total);
    CHECK(std::abs(x.v[t] - v_of_head(x.h[t], f.config)) <=
          1e-5 * f.config.v_total);
    v_prev = x.v[t];
  }
}

TEST_CASE("sim outcome serializes to a json record") {
  const auto& f = fx();
  VectorXd p = VectorXd::Zero(2);
  p(0) = 5.0;
  auto out =
      simulate_profit(p, flat_prices(2, 90.0), f.model, f.config);
  const std::string line = sim_outcome_json(out);
  CHECK(line.find("\"profit\"") != std::string::npos);
  CHECK(line.find("\"schema\":1") != std::string::npos);
}
