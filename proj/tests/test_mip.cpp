#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "uphes/mip.hpp"
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

}  // namespace

TEST_CASE("gl model structure and big-M validation") {
  const auto& f = fx();
  VectorXd lam = VectorXd::Constant(24, 80.0);
  auto m = build_miqp_gl(lam, f.global, f.config, 500.0);
  int binaries = 0, modesum_rows = 0;
  for (const auto& v : m.vars)
    if (v.kind == VarKind::Binary) ++binaries;
  for (const auto& r : m.rows)
    if (r.name.rfind("modesum", 0) == 0) ++modesum_rows;
  CHECK(binaries == 72);
  CHECK(modesum_rows == 24);
  CHECK(m.formulation == "GL");

  CHECK_THROWS_AS(build_miqp_gl(lam, f.global, f.config, 1.0),
                  std::invalid_argument);
}

TEST_CASE("idle-only gl model has optimum zero") {
  const auto& f = fx();
  VectorXd lam(2);
  lam << 90.0, 120.0;
  auto m = build_miqp_gl(lam, f.global, f.config, 500.0);
  // lock every hour to idle through the binary bounds
  for (auto& v : m.vars) {
    if (v.name.rfind("zI", 0) == 0) v.lb = 1.0;
    if (v.name.rfind("zT", 0) == 0) v.ub = 0.0;
    if (v.name.rfind("zP", 0) == 0) v.ub = 0.0;
  }
  auto res = solve_mip_by_enumeration(m);
  REQUIRE(res.found);
  CHECK(std::abs(res.objective) <= 1e-6);
}

TEST_CASE("pw model weight bookkeeping and vertex selection") {
  const auto& f = fx();
  auto grid = build_sos2_grid(f.model, f.config, 8, 6, 6);
  VectorXd lam = VectorXd::Constant(24, 80.0);
  auto m = build_miqp_pw(lam, grid, f.config);
  long long weights = 0;
  for (const auto& v : m.vars)
    if (v.kind == VarKind::Sos2Weight) ++weights;
  CHECK(weights == 24LL * (8 * 6 + 8 * 6) + 24LL * 8);
  CHECK(weights == sos2_weight_count(grid, 24) + 24LL * grid.n_h());

  // one-hot weights at a vertex force the reconstruction to the samples
  auto m1 = build_miqp_pw(lam.head(1), grid, f.config);
  VectorXd x = VectorXd::Zero(m1.vars.size());
  const int i = 3, j = 2;
  x(m1.find_var("zT_t1")) = 1.0;
  x(m1.find_var("ovh_t1_i" + std::to_string(i))) = 1.0;
  x(m1.find_var("yT_t1_i" + std::to_string(i))) = 1.0;
  x(m1.find_var("oT_t1_i" + std::to_string(i) + "_j" + std::to_string(j))) =
      1.0;
  x(m1.find_var("pT_t1")) = grid.p_turbine[i][j];
  x(m1.find_var("qT_t1")) = grid.q_turbine[i][j];
  x(m1.find_var("p_t1")) = grid.p_turbine[i][j];
  x(m1.find_var("q_t1")) = grid.q_turbine[i][j];
  x(m1.find_var("h_t1")) = grid.h_knots[i];
  x(m1.find_var("v_t1")) = grid.v_knots[i];
  for (const auto& r : m1.rows) {
    if (r.name.rfind("recon_", 0) != 0 && r.name.rfind("wrow", 0) != 0 &&
        r.name.rfind("wsum", 0) != 0 && r.name.rfind("hdef", 0) != 0 &&
        r.name.rfind("vdef", 0) != 0)
      continue;
    double lhs = 0.0;
    for (const auto& t : r.terms) lhs += t.coef * x(t.var);
    CHECK(std::abs(lhs - r.rhs) <= 1e-9);
  }
  // moving the power off the sample breaks the reconstruction row
  x(m1.find_var("pT_t1")) += 0.5;
  double resid = 0.0;
  for (const auto& r : m1.rows) {
    if (r.name != "recon_pT_t1") continue;
    double lhs = 0.0;
    for (const auto& t : r.terms) lhs += t.coef * x(t.var);
    resid = std::abs(lhs - r.rhs);
  }
  CHECK(resid > 0.4);
}

TEST_CASE("mps export round trip and determinism") {
  const auto& f = fx();
  VectorXd lam(2);
  lam << 60.0, 140.0;
  auto dir = std::filesystem::temp_directory_path();
  const auto p1 = (dir / "uphes_gl_a.mps").string();
  const auto p2 = (dir / "uphes_gl_b.mps").string();

  auto m = build_miqp_gl(lam, f.global, f.config, 500.0);
  export_model(m, p1);
  export_model(m, p2);
  std::ifstream f1(p1), f2(p2);
  std::string s1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  auto m2 = import_model(p1);
  CHECK(models_structurally_equal(m, m2));

  auto grid = build_sos2_grid(f.model, f.config, 2, 2, 2);
  auto mp = build_miqp_pw(lam, grid, f.config);
  const auto p3 = (dir / "uphes_pw.mps").string();
  export_model(mp, p3);
  auto mp2 = import_model(p3);
  CHECK(models_structurally_equal(mp, mp2));

  // degenerate model still exports and parses
  MipModel tiny;
  tiny.name = "tiny";
  tiny.vars.push_back({"x", VarKind::Continuous, 0.0, 1.0});
  tiny.obj_linear.push_back(1.0);
  const auto p4 = (dir / "uphes_tiny.mps").string();
  export_model(tiny, p4);
  auto tiny2 = import_model(p4);
  CHECK(models_structurally_equal(tiny, tiny2));

  for (const auto& p : {p1, p2, p3, p4}) std::filesystem::remove(p);
}

TEST_CASE("gl objective encodes the market objective exactly") {
  const auto& f = fx();
  VectorXd lam(2);
  lam << 30.0, 160.0;
  auto m = build_miqp_gl(lam, f.global, f.config, 500.0);
  auto res = solve_mip_by_enumeration(m);
  REQUIRE(res.found);
  double direct = 0.0;
  for (int t = 0; t < 2; ++t) {
    const double p = res.x(m.find_var("p_t" + std::to_string(t + 1)));
    direct += f.config.dt_h() * (lam(t) * p - f.config.c_op * p * p);
  }
  CHECK(res.objective == doctest::Approx(direct).epsilon(1e-8));
}

TEST_CASE("pw objective encodes the market objective exactly") {
  const auto& f = fx();
  auto grid = build_sos2_grid(f.model, f.config, 2, 2, 2);
  VectorXd lam(2);
  lam << 30.0, 160.0;
  auto m = build_miqp_pw(lam, grid, f.config);
  auto res = solve_mip_by_enumeration(m);
  REQUIRE(res.found);
  double direct = 0.0;
  for (int t = 0; t < 2; ++t) {
    const double p = res.x(m.find_var("p_t" + std::to_string(t + 1)));
    direct += f.config.dt_h() * (lam(t) * p - f.config.c_op * p * p);
  }
  CHECK(res.objective == doctest::Approx(direct).epsilon(1e-8));
}

TEST_CASE("two-hour gl optimum is near the enumeration oracle") {
  const auto& f = fx();
  VectorXd lam(2);
  lam << 10.0, 200.0;
  auto m = build_miqp_gl(lam, f.global, f.config, 500.0);
  auto mip = solve_mip_by_enumeration(m);
  REQUIRE(mip.found);

  std::vector<double> actions = {0.0};
  for (int k = 0; k < 9; ++k) {
    actions.push_back(3.0 + k * 1.5);   // turbine levels
    actions.push_back(-3.0 - k * 2.0);  // pump levels
  }
  auto oracle = enumerate_exact(lam, 2, actions, f.model, f.config);
  // the two routes must land within the discretization tolerance
  CHECK(std::abs(mip.objective - oracle.value) <=
        0.15 * std::max(std::abs(oracle.value), 100.0));
}

TEST_CASE("dp on a no-arbitrage instance stays idle") {
  const auto& f = fx();
  // at a low flat price the quadratic operating cost dominates any margin
  // from draining water against the terminal-volume penalty
  VectorXd lam = VectorXd::Constant(6, 5.0);
  DpGrid grid = DpGrid::regular(f.model, f.config, 15, 4, 6);
  auto res = dp_schedule(lam, grid, f.model, f.config);
  CHECK(res.value == doctest::Approx(0.0).epsilon(1e-10));
  for (int t = 0; t < 6; ++t) CHECK(res.schedule(t) == 0.0);
}

TEST_CASE("dp matches the nine-leaf tree on a two-period toy") {
  const auto& f = fx();
  VectorXd lam(2);
  lam << 10.0, 200.0;
  std::vector<double> actions = {0.0, 9.0, -10.0};

  // knots: exactly the volumes reachable by the action tree
  std::vector<double> knots = {f.config.v_init};
  for (double a1 : actions) {
    const auto s1 = sim_step(f.config.v_init, a1, f.model, f.config);
    knots.push_back(s1.v_next);
    for (double a2 : actions)
      knots.push_back(sim_step(s1.v_next, a2, f.model, f.config).v_next);
  }
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());

  DpGrid grid;
  grid.volume_knots = knots;
  grid.turbine_levels = {9.0};
  grid.pump_levels = {-10.0};
  grid.horizon = 2;
  auto dp = dp_schedule(lam, grid, f.model, f.config);
  auto oracle = enumerate_exact(lam, 2, actions, f.model, f.config);
  CHECK(dp.value == doctest::Approx(oracle.value).epsilon(1e-9));
  CHECK(dp.schedule(0) == oracle.schedule(0));
  CHECK(dp.schedule(1) == oracle.schedule(1));
  // the pump-then-generate arbitrage must be profitable here
  CHECK(oracle.value > 0.0);
  CHECK(oracle.schedule(0) < 0.0);
  CHECK(oracle.schedule(1) > 0.0);
}

TEST_CASE("dp oracle equivalence on random instances with matched grids") {
  const auto& f = fx();
  Rng rng(31);
  for (int inst = 0; inst < 20; ++inst) {
    const int T = 2 + static_cast<int>(rng.below(3));  // 2..4
    VectorXd lam(T);
    for (int t = 0; t < T; ++t) lam(t) = rng.uniform(5.0, 250.0);
    const double tl = rng.uniform(5.0, 12.0);
    const double pl = -rng.uniform(6.0, 15.0);
    std::vector<double> actions = {0.0, tl, pl};

    std::vector<double> reach = {f.config.v_init};
    size_t begin = 0;
    for (int t = 0; t < T; ++t) {
      const size_t end = reach.size();
      for (size_t k = begin; k < end; ++k)
        for (double a : actions)
          reach.push_back(sim_step(reach[k], a, f.model, f.config).v_next);
      begin = end;
    }
    std::sort(reach.begin(), reach.end());
    reach.erase(std::unique(reach.begin(), reach.end()), reach.end());

    DpGrid grid;
    grid.volume_knots = reach;
    grid.turbine_levels = {tl};
    grid.pump_levels = {pl};
    grid.horizon = T;
    auto dp = dp_schedule(lam, grid, f.model, f.config);
    auto oracle = enumerate_exact(lam, T, actions, f.model, f.config);
    CHECK(std::abs(dp.value - oracle.value) <=
          1e-9 * std::max(1.0, std::abs(oracle.value)));
  }
}

TEST_CASE("dp value is monotone under nested grid refinement") {
  const auto& f = fx();
  VectorXd lam(6);
  lam << 40.0, 20.0, 60.0, 180.0, 220.0, 90.0;
  double prev = -1e100;
  for (int nk : {11, 21, 41}) {
    DpGrid grid = DpGrid::regular(f.model, f.config, nk, 5, 6);
    auto res = dp_schedule(lam, grid, f.model, f.config);
    CHECK(res.value >= prev - 1e-7);
    prev = res.value;
  }
}

TEST_CASE("enumeration contracts") {
  const auto& f = fx();
  VectorXd lam1(1);
  lam1 << 120.0;
  std::vector<double> actions = {0.0, 6.0, 11.0, -8.0};
  auto res = enumerate_exact(lam1, 1, actions, f.model, f.config);
  // horizon one reduces to the argmax over single actions
  double best = -1e100;
  double best_a = 0.0;
  for (double a : actions) {
    const auto st = sim_step(f.config.v_init, a, f.model, f.config);
    double r = stage_profit(st, a, lam1(0), f.config);
    r -= terminal_vol_penalty(st.v_next, st.h, lam1(0), f.config);
    if (r > best) {
      best = r;
      best_a = a;
    }
  }
  CHECK(res.value == doctest::Approx(best));
  CHECK(res.schedule(0) == best_a);

  // deterministic tie-break: everything ties at zero prices and zero
  // operating cost, so the lexicographically first schedule is returned
  PlantConfig cfree = f.config;
  cfree.c_op = 0.0;
  cfree.finalize();
  VectorXd lam0 = VectorXd::Zero(2);
  auto tie = enumerate_exact(lam0, 2, {5.0, 0.0}, f.model, cfree);
  CHECK(tie.value == doctest::Approx(0.0));
  CHECK(tie.schedule(0) == 5.0);
  CHECK(tie.schedule(1) == 5.0);

  CHECK_THROWS_AS(enumerate_exact(VectorXd::Zero(24), 24,
                                  std::vector<double>(10, 1.0), f.model,
                                  f.config),
                  std::invalid_argument);
}

TEST_CASE("solver shim is exercised when configured") {
  auto shim = shim_from_env();
  if (!shim) return;  // no external solver in this environment
  const auto& f = fx();
  VectorXd lam(2);
  lam << 10.0, 200.0;
  auto m = build_miqp_gl(lam, f.global, f.config, 500.0);
  auto dir = std::filesystem::temp_directory_path() / "uphes_shim";
  std::filesystem::create_directories(dir);
  auto ext = solve_with_shim(m, *shim, dir.string());
  REQUIRE(ext.found);
  auto internal = solve_mip_by_enumeration(m);
  CHECK(ext.objective == doctest::Approx(internal.objective).epsilon(1e-4));
}
