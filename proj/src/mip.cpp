#include "uphes/mip.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "uphes/qp.hpp"
#include "uphes/sim.hpp"

namespace uphes {

using Eigen::MatrixXd;
using Eigen::VectorXd;

int MipModel::find_var(const std::string& vname) const {
  for (size_t i = 0; i < vars.size(); ++i)
    if (vars[i].name == vname) return static_cast<int>(i);
  return -1;
}

void MipModel::normalize() {
  for (auto& r : rows)
    std::sort(r.terms.begin(), r.terms.end(),
              [](const LinTerm& a, const LinTerm& b) { return a.var < b.var; });
}

double MipModel::eval_objective(const VectorXd& x) const {
  double v = 0.0;
  for (size_t i = 0; i < vars.size(); ++i) v += obj_linear[i] * x(i);
  for (const auto& q : obj_quad) v += 0.5 * q.coef * x(q.var_i) * x(q.var_j);
  return v;
}

double MipModel::max_violation(const VectorXd& x, double int_tol) const {
  double worst = 0.0;
  for (size_t i = 0; i < vars.size(); ++i) {
    worst = std::max(worst, vars[i].lb - x(i));
    worst = std::max(worst, x(i) - vars[i].ub);
    if (vars[i].kind == VarKind::Binary)
      worst = std::max(worst, std::abs(x(i) - std::round(x(i))) - int_tol);
  }
  for (const auto& r : rows) {
    double lhs = 0.0;
    for (const auto& t : r.terms) lhs += t.coef * x(t.var);
    if (r.sense == RowSense::LE) worst = std::max(worst, lhs - r.rhs);
    if (r.sense == RowSense::GE) worst = std::max(worst, r.rhs - lhs);
    if (r.sense == RowSense::EQ) worst = std::max(worst, std::abs(lhs - r.rhs));
  }
  for (const auto& g : sos2) {
    int first = -1, last = -1, count = 0;
    for (size_t k = 0; k < g.vars.size(); ++k)
      if (std::abs(x(g.vars[k])) > int_tol) {
        if (first < 0) first = static_cast<int>(k);
        last = static_cast<int>(k);
        ++count;
      }
    if (count > 2 || (count == 2 && last - first != 1))
      worst = std::max(worst, 1.0);
  }
  return worst;
}

void MipModel::validate() const {
  if (vars.empty()) throw std::invalid_argument("model has no variables");
  if (obj_linear.size() != vars.size())
    throw std::invalid_argument("objective size mismatch");
  for (const auto& r : rows)
    for (const auto& t : r.terms)
      if (t.var < 0 || t.var >= static_cast<int>(vars.size()))
        throw std::invalid_argument("row references unknown variable");
  for (const auto& g : sos2) {
    for (size_t k = 1; k < g.vars.size(); ++k)
      if (g.vars[k] != g.vars[k - 1] + 1)
        throw std::invalid_argument(
            "SOS2 group must reference consecutive weights");
    if (g.weights.size() != g.vars.size())
      throw std::invalid_argument("SOS2 weights size mismatch");
  }
}

// ---------------------------------------------------------------------------
// builders

namespace {

struct ModelBuilder {
  MipModel m;
  int add_var(const std::string& name, VarKind kind, double lb, double ub) {
    m.vars.push_back({name, kind, lb, ub});
    m.obj_linear.push_back(0.0);
    return static_cast<int>(m.vars.size()) - 1;
  }
  MipRow& add_row(const std::string& name, RowSense sense, double rhs) {
    m.rows.push_back({name, sense, rhs, {}});
    return m.rows.back();
  }
};

std::string tn(const std::string& base, int t) {
  return base + "_t" + std::to_string(t + 1);
}

}  // namespace

MipModel build_miqp_gl(const VectorXd& prices, const GlobalLinearModel& global,
                       const PlantConfig& c, double big_m) {
  const int T = static_cast<int>(prices.size());
  if (T < 1) throw std::invalid_argument("empty horizon");

  // the big-M must dominate every gated quantity over the head range
  double m_req = 0.0;
  for (double h : {c.h_min, c.h_max}) {
    m_req = std::max(m_req, std::abs(global.power_max(Mode::Turbine, h)));
    m_req = std::max(m_req, std::abs(global.power_min(Mode::Pump, h)));
    for (Mode mode : {Mode::Turbine, Mode::Pump}) {
      const auto& a =
          (mode == Mode::Turbine) ? global.alpha_turbine : global.alpha_pump;
      for (double p : {global.power_min(mode, h), global.power_max(mode, h)})
        m_req = std::max(m_req, std::abs(a[0] * p + a[1] * h + a[2]));
      m_req = std::max(m_req, std::abs(a[1] * h + a[2]));
    }
  }
  if (big_m < m_req)
    throw std::invalid_argument("big-M " + format_double(big_m) +
                                " below required " + format_double(m_req));

  ModelBuilder b;
  b.m.name = "uphes-gl-" + std::to_string(T) + "h";
  b.m.formulation = "GL";
  b.m.horizon = T;

  const double pmax_t = std::max(global.power_max(Mode::Turbine, c.h_min),
                                 global.power_max(Mode::Turbine, c.h_max));
  const double pmin_p = std::min(global.power_min(Mode::Pump, c.h_min),
                                 global.power_min(Mode::Pump, c.h_max));

  std::vector<int> zi(T), zt(T), zp(T), p(T), pt(T), pp(T), q(T), qt(T),
      qp(T), h(T), v(T);
  for (int t = 0; t < T; ++t) {
    zi[t] = b.add_var(tn("zI", t), VarKind::Binary, 0, 1);
    zt[t] = b.add_var(tn("zT", t), VarKind::Binary, 0, 1);
    zp[t] = b.add_var(tn("zP", t), VarKind::Binary, 0, 1);
    p[t] = b.add_var(tn("p", t), VarKind::Continuous, pmin_p, pmax_t);
    pt[t] = b.add_var(tn("pT", t), VarKind::Continuous, 0, pmax_t);
    pp[t] = b.add_var(tn("pP", t), VarKind::Continuous, pmin_p, 0);
    q[t] = b.add_var(tn("q", t), VarKind::Continuous, -big_m, big_m);
    qt[t] = b.add_var(tn("qT", t), VarKind::Continuous, -big_m, big_m);
    qp[t] = b.add_var(tn("qP", t), VarKind::Continuous, -big_m, big_m);
    h[t] = b.add_var(tn("h", t), VarKind::Continuous, c.h_min, c.h_max);
    v[t] = b.add_var(tn("v", t), VarKind::Continuous, c.v_low_feas_min,
                     c.v_low_feas_max);
    b.m.obj_linear[p[t]] = c.dt_h() * prices(t);
    b.m.obj_quad.push_back({p[t], p[t], -2.0 * c.dt_h() * c.c_op});
  }

  for (int t = 0; t < T; ++t) {
    auto& ms = b.add_row(tn("modesum", t), RowSense::EQ, 1.0);
    ms.terms = {{zi[t], 1}, {zt[t], 1}, {zp[t], 1}};
    auto& ap = b.add_row(tn("aggp", t), RowSense::EQ, 0.0);
    ap.terms = {{p[t], 1}, {pt[t], -1}, {pp[t], -1}};
    auto& aq = b.add_row(tn("aggq", t), RowSense::EQ, 0.0);
    aq.terms = {{q[t], 1}, {qt[t], -1}, {qp[t], -1}};

    struct ModeBits {
      const char* tag;
      int zv, pv, qv;
      const std::array<double, 3>& alpha;
      const std::array<double, 2>& bmin;
      const std::array<double, 2>& bmax;
    };
    const ModeBits bits[2] = {
        {"T", zt[t], pt[t], qt[t], global.alpha_turbine,
         global.beta_min_turbine, global.beta_max_turbine},
        {"P", zp[t], pp[t], qp[t], global.alpha_pump, global.beta_min_pump,
         global.beta_max_pump}};
    for (const auto& mb : bits) {
      const std::string s = mb.tag;
      auto& u = b.add_row(tn("upc" + s + "_up", t), RowSense::LE,
                          mb.alpha[2] + big_m);
      u.terms = {{mb.qv, 1},
                 {mb.pv, -mb.alpha[0]},
                 {h[t], -mb.alpha[1]},
                 {mb.zv, big_m}};
      auto& l = b.add_row(tn("upc" + s + "_lo", t), RowSense::GE,
                          mb.alpha[2] - big_m);
      l.terms = {{mb.qv, 1},
                 {mb.pv, -mb.alpha[0]},
                 {h[t], -mb.alpha[1]},
                 {mb.zv, -big_m}};
      auto& eu =
          b.add_row(tn("env" + s + "_up", t), RowSense::LE, mb.bmax[1] + big_m);
      eu.terms = {{mb.pv, 1}, {h[t], -mb.bmax[0]}, {mb.zv, big_m}};
      auto& el =
          b.add_row(tn("env" + s + "_lo", t), RowSense::GE, mb.bmin[1] - big_m);
      el.terms = {{mb.pv, 1}, {h[t], -mb.bmin[0]}, {mb.zv, -big_m}};
      auto& gu = b.add_row(tn("gatep" + s + "_up", t), RowSense::LE, 0.0);
      gu.terms = {{mb.pv, 1}, {mb.zv, -big_m}};
      auto& gl2 = b.add_row(tn("gatep" + s + "_lo", t), RowSense::GE, 0.0);
      gl2.terms = {{mb.pv, 1}, {mb.zv, big_m}};
      auto& gqu = b.add_row(tn("gateq" + s + "_up", t), RowSense::LE, 0.0);
      gqu.terms = {{mb.qv, 1}, {mb.zv, -big_m}};
      auto& gql = b.add_row(tn("gateq" + s + "_lo", t), RowSense::GE, 0.0);
      gql.terms = {{mb.qv, 1}, {mb.zv, big_m}};
    }

    auto& vol = b.add_row(tn("vol", t), RowSense::EQ, t == 0 ? c.v_init : 0.0);
    vol.terms = {{v[t], 1}, {q[t], -c.dt_s}};
    if (t > 0) vol.terms.push_back({v[t - 1], -1});
    auto& hl = b.add_row(tn("headlink", t), RowSense::EQ, global.delta[1]);
    hl.terms = {{h[t], 1}, {v[t], -global.delta[0]}};
  }
  auto& term = b.add_row("terminal", RowSense::LE, c.v_target);
  term.terms = {{v[T - 1], 1}};

  b.m.normalize();
  b.m.validate();
  return b.m;
}

MipModel build_miqp_pw(const VectorXd& prices, const Sos2Grid& grid,
                       const PlantConfig& c) {
  const int T = static_cast<int>(prices.size());
  if (T < 1) throw std::invalid_argument("empty horizon");
  const int nh = grid.n_h();
  const int npt = grid.n_p(Mode::Turbine);
  const int npp = grid.n_p(Mode::Pump);

  ModelBuilder b;
  b.m.name = "uphes-pw-" + std::to_string(T) + "h";
  b.m.formulation = "PW";
  b.m.horizon = T;

  double pmax_t = 0.0, pmin_p = 0.0, qabs = 0.0;
  for (int i = 0; i < nh; ++i) {
    pmax_t = std::max(pmax_t, grid.p_turbine[i].back());
    pmin_p = std::min(pmin_p, grid.p_pump[i].front());
    for (int j = 0; j < npt; ++j)
      qabs = std::max(qabs, std::abs(grid.q_turbine[i][j]));
    for (int j = 0; j < npp; ++j)
      qabs = std::max(qabs, std::abs(grid.q_pump[i][j]));
  }

  std::vector<int> zi(T), zt(T), zp(T), p(T), pt(T), pp(T), q(T), qt(T),
      qp(T), h(T), v(T);
  std::vector<std::vector<int>> ovh(T), yt(T), yp(T);
  std::vector<std::vector<std::vector<int>>> ot(T), op(T);
  for (int t = 0; t < T; ++t) {
    zi[t] = b.add_var(tn("zI", t), VarKind::Binary, 0, 1);
    zt[t] = b.add_var(tn("zT", t), VarKind::Binary, 0, 1);
    zp[t] = b.add_var(tn("zP", t), VarKind::Binary, 0, 1);
    p[t] = b.add_var(tn("p", t), VarKind::Continuous, pmin_p, pmax_t);
    pt[t] = b.add_var(tn("pT", t), VarKind::Continuous, 0, pmax_t);
    pp[t] = b.add_var(tn("pP", t), VarKind::Continuous, pmin_p, 0);
    q[t] = b.add_var(tn("q", t), VarKind::Continuous, -qabs, qabs);
    qt[t] = b.add_var(tn("qT", t), VarKind::Continuous, -qabs, qabs);
    qp[t] = b.add_var(tn("qP", t), VarKind::Continuous, -qabs, qabs);
    h[t] = b.add_var(tn("h", t), VarKind::Continuous, c.h_min, c.h_max);
    v[t] = b.add_var(tn("v", t), VarKind::Continuous, c.v_low_feas_min,
                     c.v_low_feas_max);
    b.m.obj_linear[p[t]] = c.dt_h() * prices(t);
    b.m.obj_quad.push_back({p[t], p[t], -2.0 * c.dt_h() * c.c_op});

    ovh[t].resize(nh);
    for (int i = 0; i < nh; ++i)
      ovh[t][i] = b.add_var(tn("ovh", t) + "_i" + std::to_string(i),
                            VarKind::Sos2Weight, 0, 1);
    ot[t].assign(nh, {});
    for (int i = 0; i < nh; ++i) {
      ot[t][i].resize(npt);
      for (int j = 0; j < npt; ++j)
        ot[t][i][j] = b.add_var(tn("oT", t) + "_i" + std::to_string(i) + "_j" +
                                    std::to_string(j),
                                VarKind::Sos2Weight, 0, 1);
    }
    op[t].assign(nh, {});
    for (int i = 0; i < nh; ++i) {
      op[t][i].resize(npp);
      for (int j = 0; j < npp; ++j)
        op[t][i][j] = b.add_var(tn("oP", t) + "_i" + std::to_string(i) + "_j" +
                                    std::to_string(j),
                                VarKind::Sos2Weight, 0, 1);
    }
    yt[t].resize(nh);
    yp[t].resize(nh);
    for (int i = 0; i < nh; ++i)
      yt[t][i] = b.add_var(tn("yT", t) + "_i" + std::to_string(i),
                           VarKind::Continuous, 0, 1);
    for (int i = 0; i < nh; ++i)
      yp[t][i] = b.add_var(tn("yP", t) + "_i" + std::to_string(i),
                           VarKind::Continuous, 0, 1);
  }

  for (int t = 0; t < T; ++t) {
    auto& ms = b.add_row(tn("modesum", t), RowSense::EQ, 1.0);
    ms.terms = {{zi[t], 1}, {zt[t], 1}, {zp[t], 1}};
    auto& ap = b.add_row(tn("aggp", t), RowSense::EQ, 0.0);
    ap.terms = {{p[t], 1}, {pt[t], -1}, {pp[t], -1}};
    auto& aq = b.add_row(tn("aggq", t), RowSense::EQ, 0.0);
    aq.terms = {{q[t], 1}, {qt[t], -1}, {qp[t], -1}};

    auto& vs = b.add_row(tn("vhsum", t), RowSense::EQ, 1.0);
    for (int i = 0; i < nh; ++i) vs.terms.push_back({ovh[t][i], 1});
    auto& hd = b.add_row(tn("hdef", t), RowSense::EQ, 0.0);
    hd.terms.push_back({h[t], 1});
    for (int i = 0; i < nh; ++i)
      hd.terms.push_back({ovh[t][i], -grid.h_knots[i]});
    auto& vd = b.add_row(tn("vdef", t), RowSense::EQ, 0.0);
    vd.terms.push_back({v[t], 1});
    for (int i = 0; i < nh; ++i)
      vd.terms.push_back({ovh[t][i], -grid.v_knots[i]});

    struct ModeBits {
      const char* tag;
      int zv, pv, qv;
      const std::vector<std::vector<int>>& o;
      const std::vector<int>& y;
      const std::vector<std::vector<double>>& ps;
      const std::vector<std::vector<double>>& qs;
      int np;
    };
    const ModeBits bits[2] = {{"T", zt[t], pt[t], qt[t], ot[t], yt[t],
                               grid.p_turbine, grid.q_turbine, npt},
                              {"P", zp[t], pp[t], qp[t], op[t], yp[t],
                               grid.p_pump, grid.q_pump, npp}};
    for (const auto& mb : bits) {
      const std::string s = mb.tag;
      for (int i = 0; i < nh; ++i) {
        const std::string si = "_i" + std::to_string(i);
        // y = z * ovh linearized exactly (binary times a [0,1] variable)
        auto& y1 = b.add_row(tn("y" + s + "lez", t) + si, RowSense::LE, 0.0);
        y1.terms = {{mb.y[i], 1}, {mb.zv, -1}};
        auto& y2 = b.add_row(tn("y" + s + "leo", t) + si, RowSense::LE, 0.0);
        y2.terms = {{mb.y[i], 1}, {ovh[t][i], -1}};
        auto& y3 = b.add_row(tn("y" + s + "ge", t) + si, RowSense::GE, -1.0);
        y3.terms = {{mb.y[i], 1}, {mb.zv, -1}, {ovh[t][i], -1}};
        auto& wr = b.add_row(tn("wrow" + s, t) + si, RowSense::EQ, 0.0);
        wr.terms.push_back({mb.y[i], -1});
        for (int j = 0; j < mb.np; ++j) wr.terms.push_back({mb.o[i][j], 1});
      }
      auto& ws = b.add_row(tn("wsum" + s, t), RowSense::EQ, 0.0);
      ws.terms.push_back({mb.zv, -1});
      for (int i = 0; i < nh; ++i)
        for (int j = 0; j < mb.np; ++j) ws.terms.push_back({mb.o[i][j], 1});
      auto& rp = b.add_row(tn("recon_p" + s, t), RowSense::EQ, 0.0);
      rp.terms.push_back({mb.pv, 1});
      for (int i = 0; i < nh; ++i)
        for (int j = 0; j < mb.np; ++j)
          rp.terms.push_back({mb.o[i][j], -mb.ps[i][j]});
      auto& rq = b.add_row(tn("recon_q" + s, t), RowSense::EQ, 0.0);
      rq.terms.push_back({mb.qv, 1});
      for (int i = 0; i < nh; ++i)
        for (int j = 0; j < mb.np; ++j)
          rq.terms.push_back({mb.o[i][j], -mb.qs[i][j]});
    }

    auto& vol = b.add_row(tn("vol", t), RowSense::EQ, t == 0 ? c.v_init : 0.0);
    vol.terms = {{v[t], 1}, {q[t], -c.dt_s}};
    if (t > 0) vol.terms.push_back({v[t - 1], -1});

    Sos2Group gvh;
    gvh.name = tn("sos_vh", t);
    for (int i = 0; i < nh; ++i) {
      gvh.vars.push_back(ovh[t][i]);
      gvh.weights.push_back(grid.h_knots[i]);
    }
    b.m.sos2.push_back(gvh);
    for (int i = 0; i < nh; ++i) {
      Sos2Group gt;
      gt.name = tn("sos_T", t) + "_i" + std::to_string(i);
      for (int j = 0; j < npt; ++j) {
        gt.vars.push_back(ot[t][i][j]);
        gt.weights.push_back(grid.p_turbine[i][j]);
      }
      b.m.sos2.push_back(gt);
      Sos2Group gp;
      gp.name = tn("sos_P", t) + "_i" + std::to_string(i);
      for (int j = 0; j < npp; ++j) {
        gp.vars.push_back(op[t][i][j]);
        gp.weights.push_back(grid.p_pump[i][j]);
      }
      b.m.sos2.push_back(gp);
    }
  }
  auto& term = b.add_row("terminal", RowSense::LE, c.v_target);
  term.terms = {{v[T - 1], 1}};

  b.m.normalize();
  b.m.validate();
  return b.m;
}

// ---------------------------------------------------------------------------
// MPS export / import

void export_model(const MipModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "NAME " << m.name << "\n";
  out << "OBJSENSE\n    " << (m.maximize ? "MAX" : "MIN") << "\n";
  out << "ROWS\n N  obj\n";
  for (const auto& r : m.rows) {
    const char s = r.sense == RowSense::LE   ? 'L'
                   : r.sense == RowSense::GE ? 'G'
                                             : 'E';
    out << " " << s << "  " << r.name << "\n";
  }
  out << "COLUMNS\n";
  std::vector<std::vector<std::pair<std::string, double>>> col(m.vars.size());
  for (size_t i = 0; i < m.vars.size(); ++i)
    if (m.obj_linear[i] != 0.0) col[i].push_back({"obj", m.obj_linear[i]});
  for (const auto& r : m.rows)
    for (const auto& t : r.terms) col[t.var].push_back({r.name, t.coef});
  bool in_int = false;
  int marker = 0;
  for (size_t i = 0; i < m.vars.size(); ++i) {
    const bool want_int = m.vars[i].kind == VarKind::Binary;
    if (want_int != in_int) {
      out << "    MARKER" << marker++ << "  'MARKER'  '"
          << (want_int ? "INTORG" : "INTEND") << "'\n";
      in_int = want_int;
    }
    if (col[i].empty()) out << "    " << m.vars[i].name << "  obj  0\n";
    for (const auto& [row, coef] : col[i])
      out << "    " << m.vars[i].name << "  " << row << "  "
          << format_double(coef) << "\n";
  }
  if (in_int) out << "    MARKER" << marker++ << "  'MARKER'  'INTEND'\n";
  out << "RHS\n";
  for (const auto& r : m.rows)
    if (r.rhs != 0.0)
      out << "    RHS  " << r.name << "  " << format_double(r.rhs) << "\n";
  out << "BOUNDS\n";
  for (const auto& v : m.vars) {
    out << " LO BND  " << v.name << "  " << format_double(v.lb) << "\n";
    out << " UP BND  " << v.name << "  " << format_double(v.ub) << "\n";
  }
  if (!m.sos2.empty()) {
    out << "SOS\n";
    int prio = 1;
    for (const auto& g : m.sos2) {
      out << " S2 " << g.name << "  " << prio++ << "\n";
      for (size_t k = 0; k < g.vars.size(); ++k)
        out << "    " << m.vars[g.vars[k]].name << "  "
            << format_double(g.weights[k]) << "\n";
    }
  }
  if (!m.obj_quad.empty()) {
    out << "QMATRIX\n";
    for (const auto& q : m.obj_quad)
      out << "    " << m.vars[q.var_i].name << "  " << m.vars[q.var_j].name
          << "  " << format_double(q.coef) << "\n";
  }
  out << "ENDATA\n";
}

MipModel import_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  MipModel m;
  enum Section { None, ObjSense, Rows, Columns, Rhs, Bounds, Sos, Qmatrix };
  Section sec = None;
  std::string line;
  std::map<std::string, int> row_index, var_index;
  bool in_int = false;
  Sos2Group* cur_sos = nullptr;
  auto get_var = [&](const std::string& name) {
    auto it = var_index.find(name);
    if (it != var_index.end()) return it->second;
    m.vars.push_back(
        {name, in_int ? VarKind::Binary : VarKind::Continuous, 0.0, 0.0});
    m.obj_linear.push_back(0.0);
    var_index[name] = static_cast<int>(m.vars.size()) - 1;
    return static_cast<int>(m.vars.size()) - 1;
  };
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<std::string> tok;
    std::string w;
    while (ss >> w) tok.push_back(w);
    if (tok.empty()) continue;
    if (tok[0] == "NAME") {
      if (tok.size() > 1) m.name = tok[1];
      continue;
    }
    if (tok[0] == "OBJSENSE") { sec = ObjSense; continue; }
    if (tok[0] == "ROWS") { sec = Rows; continue; }
    if (tok[0] == "COLUMNS") { sec = Columns; continue; }
    if (tok[0] == "RHS" && tok.size() == 1) { sec = Rhs; continue; }
    if (tok[0] == "BOUNDS") { sec = Bounds; continue; }
    if (tok[0] == "SOS") { sec = Sos; continue; }
    if (tok[0] == "QMATRIX") { sec = Qmatrix; continue; }
    if (tok[0] == "ENDATA") break;
    switch (sec) {
      case ObjSense:
        m.maximize = (tok[0] == "MAX" || tok[0] == "MAXIMIZE");
        break;
      case Rows: {
        if (tok.size() < 2) throw std::invalid_argument("bad ROWS line");
        if (tok[0] == "N") break;
        MipRow r;
        r.name = tok[1];
        r.sense = tok[0] == "L"   ? RowSense::LE
                  : tok[0] == "G" ? RowSense::GE
                                  : RowSense::EQ;
        row_index[r.name] = static_cast<int>(m.rows.size());
        m.rows.push_back(r);
        break;
      }
      case Columns: {
        if (tok.size() >= 3 && tok[1] == "'MARKER'") {
          in_int = (tok[2] == "'INTORG'");
          break;
        }
        if (tok.size() < 3 || tok.size() % 2 == 0)
          throw std::invalid_argument("bad COLUMNS line: " + line);
        const int vi = get_var(tok[0]);
        for (size_t k = 1; k + 1 < tok.size(); k += 2) {
          const std::string& row = tok[k];
          const double coef = parse_double(tok[k + 1], "COLUMNS");
          if (row == "obj") {
            if (coef != 0.0) m.obj_linear[vi] = coef;
          } else {
            auto it = row_index.find(row);
            if (it == row_index.end())
              throw std::invalid_argument("unknown row " + row);
            if (coef != 0.0) m.rows[it->second].terms.push_back({vi, coef});
          }
        }
        break;
      }
      case Rhs: {
        for (size_t k = 1; k + 1 < tok.size(); k += 2)
          {
            auto it = row_index.find(tok[k]);
            if (it == row_index.end())
              throw std::invalid_argument("unknown RHS row " + tok[k]);
            m.rows[it->second].rhs = parse_double(tok[k + 1], "RHS");
          }
        break;
      }
      case Bounds: {
        if (tok.size() < 3) throw std::invalid_argument("bad BOUNDS line");
        const std::string& kind = tok[0];
        const int vi = get_var(tok[2]);
        const double val =
            tok.size() > 3 ? parse_double(tok[3], "BOUNDS") : 0.0;
        if (kind == "LO") m.vars[vi].lb = val;
        else if (kind == "UP") m.vars[vi].ub = val;
        else if (kind == "FX") m.vars[vi].lb = m.vars[vi].ub = val;
        else if (kind == "BV") {
          m.vars[vi].kind = VarKind::Binary;
          m.vars[vi].lb = 0;
          m.vars[vi].ub = 1;
        } else if (kind == "MI") m.vars[vi].lb = -1e30;
        else if (kind == "PL") m.vars[vi].ub = 1e30;
        break;
      }
      case Sos: {
        if (tok[0] == "S2") {
          m.sos2.push_back({});
          cur_sos = &m.sos2.back();
          if (tok.size() > 1) cur_sos->name = tok[1];
        } else {
          if (!cur_sos)
            throw std::invalid_argument("SOS entry before group header");
          if (tok.size() < 2) throw std::invalid_argument("bad SOS entry");
          cur_sos->vars.push_back(get_var(tok[0]));
          cur_sos->weights.push_back(parse_double(tok[1], "SOS"));
        }
        break;
      }
      case Qmatrix: {
        if (tok.size() < 3) throw std::invalid_argument("bad QMATRIX line");
        m.obj_quad.push_back(
            {get_var(tok[0]), get_var(tok[1]), parse_double(tok[2], "QMATRIX")});
        break;
      }
      default:
        break;
    }
  }
  for (const auto& g : m.sos2)
    for (int vi : g.vars)
      if (m.vars[vi].kind == VarKind::Continuous)
        m.vars[vi].kind = VarKind::Sos2Weight;
  m.normalize();
  return m;
}

bool models_structurally_equal(const MipModel& a, const MipModel& b,
                               double tol) {
  auto close = [tol](double x, double y) { return std::abs(x - y) <= tol; };
  if (a.vars.size() != b.vars.size() || a.rows.size() != b.rows.size() ||
      a.sos2.size() != b.sos2.size() ||
      a.obj_quad.size() != b.obj_quad.size() || a.maximize != b.maximize)
    return false;
  for (size_t i = 0; i < a.vars.size(); ++i) {
    if (a.vars[i].name != b.vars[i].name) return false;
    if (a.vars[i].kind != b.vars[i].kind) return false;
    if (!close(a.vars[i].lb, b.vars[i].lb)) return false;
    if (!close(a.vars[i].ub, b.vars[i].ub)) return false;
    if (!close(a.obj_linear[i], b.obj_linear[i])) return false;
  }
  for (size_t i = 0; i < a.rows.size(); ++i) {
    const auto& ra = a.rows[i];
    const auto& rb = b.rows[i];
    if (ra.name != rb.name || ra.sense != rb.sense || !close(ra.rhs, rb.rhs) ||
        ra.terms.size() != rb.terms.size())
      return false;
    for (size_t k = 0; k < ra.terms.size(); ++k)
      if (ra.terms[k].var != rb.terms[k].var ||
          !close(ra.terms[k].coef, rb.terms[k].coef))
        return false;
  }
  for (size_t i = 0; i < a.sos2.size(); ++i) {
    if (a.sos2[i].vars != b.sos2[i].vars) return false;
    for (size_t k = 0; k < a.sos2[i].weights.size(); ++k)
      if (!close(a.sos2[i].weights[k], b.sos2[i].weights[k])) return false;
  }
  for (size_t i = 0; i < a.obj_quad.size(); ++i)
    if (a.obj_quad[i].var_i != b.obj_quad[i].var_i ||
        a.obj_quad[i].var_j != b.obj_quad[i].var_j ||
        !close(a.obj_quad[i].coef, b.obj_quad[i].coef))
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// external solver shim

std::optional<SolverShim> shim_from_env() {
  const char* exe = std::getenv("UPHES_MIP_SOLVER");
  if (!exe || !*exe) return std::nullopt;
  SolverShim s;
  s.executable = exe;
  if (const char* args = std::getenv("UPHES_MIP_ARGS")) s.arg_template = args;
  return s;
}

namespace {

std::string replace_all(std::string s, const std::string& from,
                        const std::string& to) {
  size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

}  // namespace

MipSolveResult solve_with_shim(const MipModel& m, const SolverShim& shim,
                               const std::string& workdir) {
  MipSolveResult res;
  const std::string model_path = workdir + "/model.mps";
  const std::string sol_path = workdir + "/model.sol";
  export_model(m, model_path);
  std::remove(sol_path.c_str());
  const std::string cmd =
      shim.executable + " " +
      replace_all(replace_all(shim.arg_template, "{model}", model_path),
                  "{sol}", sol_path) +
      " > " + workdir + "/solver.log 2>&1";
  const int rc = std::system(cmd.c_str());
  (void)rc;  // some solvers return nonzero despite writing a solution
  std::ifstream in(sol_path);
  if (!in) return res;
  VectorXd x = VectorXd::Zero(m.vars.size());
  std::string line;
  int matched = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<std::string> tok;
    std::string w;
    while (ss >> w) tok.push_back(w);
    if (tok.empty() || tok[0][0] == '#' || tok[0][0] == '=') continue;
    // accept "name value" and indexed "idx name value [...]" layouts
    int vi = -1;
    double val = 0.0;
    if (tok.size() >= 2 && (vi = m.find_var(tok[0])) >= 0) {
      val = parse_double(tok[1], "solution value");
    } else if (tok.size() >= 3 && (vi = m.find_var(tok[1])) >= 0) {
      val = parse_double(tok[2], "solution value");
    } else {
      continue;
    }
    x(vi) = val;
    ++matched;
  }
  if (matched == 0) return res;
  res.x = x;
  res.objective = m.eval_objective(x);
  res.found = true;
  return res;
}

// ---------------------------------------------------------------------------
// enumeration solve

namespace {

struct WorkRow {
  RowSense sense;
  double rhs;
  std::vector<LinTerm> terms;
};

// continuous subproblem value for one binary assignment; nullopt when the
// combination is infeasible or the subsolve fails
std::optional<std::pair<VectorXd, double>> eval_combo(
    const MipModel& m, const std::vector<double>& fixed) {
  const int n = static_cast<int>(m.vars.size());
  std::vector<double> lb(n), ub(n);
  for (int i = 0; i < n; ++i) {
    lb[i] = m.vars[i].lb;
    ub[i] = m.vars[i].ub;
    if (!std::isnan(fixed[i])) lb[i] = ub[i] = fixed[i];
  }
  const double tol = 1e-7;
  auto is_fixed = [&](int i) {
    return ub[i] - lb[i] <= 1e-11 * (1.0 + std::abs(ub[i]));
  };

  std::vector<WorkRow> work;
  for (const auto& r : m.rows) work.push_back({r.sense, r.rhs, r.terms});

  bool changed = true;
  while (changed) {
    changed = false;
    for (auto& r : work) {
      if (r.terms.empty()) continue;
      std::vector<LinTerm> free_terms;
      double rhs = r.rhs;
      for (const auto& t : r.terms) {
        if (is_fixed(t.var))
          rhs -= t.coef * lb[t.var];
        else
          free_terms.push_back(t);
      }
      if (free_terms.size() != r.terms.size()) {
        r.terms = std::move(free_terms);
        r.rhs = rhs;
        changed = true;
      }
      if (r.terms.empty()) continue;
      if (r.terms.size() == 1) {
        const int vi = r.terms[0].var;
        const double c0 = r.terms[0].coef;
        const double val = r.rhs / c0;
        if (r.sense == RowSense::EQ) {
          if (val < lb[vi] - tol * (1 + std::abs(val)) ||
              val > ub[vi] + tol * (1 + std::abs(val)))
            return std::nullopt;
          lb[vi] = ub[vi] = val;
        } else {
          const bool upper = (r.sense == RowSense::LE) == (c0 > 0);
          if (upper)
            ub[vi] = std::min(ub[vi], val);
          else
            lb[vi] = std::max(lb[vi], val);
        }
        r.terms.clear();
        r.rhs = 0.0;
        r.sense = RowSense::LE;
        changed = true;
        continue;
      }
      // zero-sum rows of same-sign terms force every member to zero
      if (r.sense == RowSense::EQ && std::abs(r.rhs) <= tol) {
        bool all_pos = true, all_neg = true;
        for (const auto& t : r.terms) {
          if (!(t.coef > 0 && lb[t.var] >= -1e-12)) all_pos = false;
          if (!(t.coef < 0 && ub[t.var] <= 1e-12)) all_neg = false;
        }
        if (all_pos || all_neg) {
          for (const auto& t : r.terms) {
            lb[t.var] = std::max(lb[t.var], 0.0);
            ub[t.var] = std::min(ub[t.var], 0.0);
          }
          r.terms.clear();
          changed = true;
        }
      }
    }
    for (int i = 0; i < n; ++i)
      if (lb[i] > ub[i] + tol * (1.0 + std::abs(lb[i]))) return std::nullopt;
  }
  for (const auto& r : work) {
    if (!r.terms.empty()) continue;
    if (r.sense == RowSense::LE && r.rhs < -tol) return std::nullopt;
    if (r.sense == RowSense::GE && r.rhs > tol) return std::nullopt;
    if (r.sense == RowSense::EQ && std::abs(r.rhs) > tol) return std::nullopt;
  }
  for (const auto& g : m.sos2) {
    int free_members = 0;
    for (int vi : g.vars)
      if (!is_fixed(vi) || std::abs(lb[vi]) > 1e-11) ++free_members;
    if (free_members > 2)
      throw numeric_error(
          "SOS2 group with more than two free members; the internal "
          "enumeration supports 2-knot grids only");
  }

  // normalize remaining inequalities and merge opposing pairs into equalities
  std::vector<WorkRow> le, eq;
  for (const auto& r : work) {
    if (r.terms.empty()) continue;
    if (r.sense == RowSense::EQ) {
      eq.push_back(r);
    } else if (r.sense == RowSense::LE) {
      le.push_back(r);
    } else {
      WorkRow w2{RowSense::LE, -r.rhs, r.terms};
      for (auto& t : w2.terms) t.coef = -t.coef;
      le.push_back(w2);
    }
  }
  auto sorted_terms = [](std::vector<LinTerm> ts) {
    std::sort(ts.begin(), ts.end(),
              [](const LinTerm& a, const LinTerm& b) { return a.var < b.var; });
    return ts;
  };
  std::vector<bool> merged(le.size(), false);
  for (size_t i = 0; i < le.size(); ++i) {
    if (merged[i]) continue;
    const auto ti = sorted_terms(le[i].terms);
    for (size_t j = i + 1; j < le.size(); ++j) {
      if (merged[j] || le[j].terms.size() != ti.size()) continue;
      if (std::abs(le[i].rhs + le[j].rhs) >
          1e-9 * (1.0 + std::abs(le[i].rhs)))
        continue;
      const auto tj = sorted_terms(le[j].terms);
      bool opp = true;
      for (size_t k = 0; k < ti.size() && opp; ++k)
        if (ti[k].var != tj[k].var ||
            std::abs(ti[k].coef + tj[k].coef) >
                1e-9 * (1.0 + std::abs(ti[k].coef)))
          opp = false;
      if (opp) {
        eq.push_back({RowSense::EQ, le[i].rhs, le[i].terms});
        merged[i] = merged[j] = true;
        break;
      }
    }
  }

  std::vector<int> pos_of(n, -1), free_vars;
  for (int i = 0; i < n; ++i)
    if (!is_fixed(i)) {
      pos_of[i] = static_cast<int>(free_vars.size());
      free_vars.push_back(i);
    }
  const int nf = static_cast<int>(free_vars.size());
  VectorXd xfull(n);
  for (int i = 0; i < n; ++i) xfull(i) = 0.5 * (lb[i] + ub[i]);

  if (nf > 0) {
    QpProblem qp;
    qp.H = MatrixXd::Zero(nf, nf);
    qp.g = VectorXd::Zero(nf);
    for (int k = 0; k < nf; ++k) qp.g(k) = -m.obj_linear[free_vars[k]];
    for (const auto& qt : m.obj_quad) {
      const int pi = pos_of[qt.var_i];
      const int pj = pos_of[qt.var_j];
      if (pi >= 0 && pj >= 0)
        qp.H(pi, pj) -= qt.coef;
      else if (pi >= 0)
        qp.g(pi) -= 0.5 * qt.coef * xfull(qt.var_j);
      else if (pj >= 0)
        qp.g(pj) -= 0.5 * qt.coef * xfull(qt.var_i);
    }
    int n_le = 0;
    for (size_t i = 0; i < le.size(); ++i)
      if (!merged[i]) ++n_le;
    int n_bnd = 0;
    for (int k = 0; k < nf; ++k) {
      if (lb[free_vars[k]] > -1e29) ++n_bnd;
      if (ub[free_vars[k]] < 1e29) ++n_bnd;
    }
    qp.Ae = MatrixXd::Zero(eq.size(), nf);
    qp.be = VectorXd::Zero(eq.size());
    for (size_t r = 0; r < eq.size(); ++r) {
      qp.be(r) = eq[r].rhs;
      for (const auto& t : eq[r].terms) qp.Ae(r, pos_of[t.var]) = t.coef;
    }
    qp.Ci = MatrixXd::Zero(n_le + n_bnd, nf);
    qp.di = VectorXd::Zero(n_le + n_bnd);
    int r = 0;
    for (size_t i = 0; i < le.size(); ++i) {
      if (merged[i]) continue;
      qp.di(r) = le[i].rhs;
      for (const auto& t : le[i].terms) qp.Ci(r, pos_of[t.var]) = t.coef;
      ++r;
    }
    for (int k = 0; k < nf; ++k) {
      if (ub[free_vars[k]] < 1e29) {
        qp.Ci(r, k) = 1.0;
        qp.di(r) = ub[free_vars[k]];
        ++r;
      }
      if (lb[free_vars[k]] > -1e29) {
        qp.Ci(r, k) = -1.0;
        qp.di(r) = -lb[free_vars[k]];
        ++r;
      }
    }
    QpSolverOptions opt;
    opt.tol = 1e-9;
    opt.mu_tol = 1e-10;
    opt.max_iterations = 150;
    auto sol = solve_qp_raw(qp, opt);
    if (sol.status != QpStatus::Optimal) return std::nullopt;
    for (int k = 0; k < nf; ++k) xfull(free_vars[k]) = sol.x(k);
  }
  if (m.max_violation(xfull, 1e-5) > 1e-4) return std::nullopt;
  return std::make_pair(xfull, m.eval_objective(xfull));
}

}  // namespace

MipSolveResult solve_mip_by_enumeration(const MipModel& m, int max_patterns) {
  m.validate();
  const int n = static_cast<int>(m.vars.size());

  // exclusive one-hot groups discovered from explicit sum-to-one binary rows
  std::vector<std::vector<int>> groups;
  std::vector<bool> grouped(n, false);
  for (const auto& r : m.rows) {
    if (r.sense != RowSense::EQ || r.rhs != 1.0 || r.terms.empty()) continue;
    bool all_bin = true;
    for (const auto& t : r.terms)
      if (t.coef != 1.0 || m.vars[t.var].kind != VarKind::Binary ||
          grouped[t.var])
        all_bin = false;
    if (!all_bin) continue;
    std::vector<int> g;
    for (const auto& t : r.terms) {
      g.push_back(t.var);
      grouped[t.var] = true;
    }
    groups.push_back(std::move(g));
  }
  std::vector<int> loose;
  for (int i = 0; i < n; ++i)
    if (m.vars[i].kind == VarKind::Binary && !grouped[i]) loose.push_back(i);

  double patterns = std::pow(2.0, loose.size());
  for (const auto& g : groups) patterns *= static_cast<double>(g.size());
  if (patterns > static_cast<double>(max_patterns))
    throw numeric_error("mode-pattern count " + format_double(patterns) +
                        " exceeds the enumeration budget; configure an "
                        "external solver instead");

  MipSolveResult best;
  best.objective = -std::numeric_limits<double>::infinity();

  std::vector<int> gsel(groups.size(), 0);
  const long long loose_combos = 1LL << loose.size();
  while (true) {
    for (long long bits = 0; bits < loose_combos; ++bits) {
      std::vector<double> fixed(n, std::numeric_limits<double>::quiet_NaN());
      for (size_t gi = 0; gi < groups.size(); ++gi)
        for (size_t k = 0; k < groups[gi].size(); ++k)
          fixed[groups[gi][k]] = (static_cast<int>(k) == gsel[gi]) ? 1.0 : 0.0;
      for (size_t k = 0; k < loose.size(); ++k)
        fixed[loose[k]] = static_cast<double>((bits >> k) & 1);
      auto res = eval_combo(m, fixed);
      if (res && res->second > best.objective) {
        best.x = res->first;
        best.objective = res->second;
        best.found = true;
      }
    }
    // odometer over the one-hot groups
    size_t gi = 0;
    while (gi < groups.size()) {
      if (++gsel[gi] < static_cast<int>(groups[gi].size())) break;
      gsel[gi] = 0;
      ++gi;
    }
    if (gi == groups.size()) break;
    if (groups.empty()) break;
  }
  return best;
}

// ---------------------------------------------------------------------------
// oracles

std::vector<double> DpGrid::actions() const {
  std::vector<double> a;
  a.push_back(0.0);
  for (double x : turbine_levels) a.push_back(x);
  for (double x : pump_levels) a.push_back(x);
  return a;
}

void DpGrid::validate(const PlantConfig& c) const {
  if (volume_knots.size() < 2)
    throw std::invalid_argument("need >= 2 volume knots");
  for (size_t i = 1; i < volume_knots.size(); ++i)
    if (!(volume_knots[i] > volume_knots[i - 1]))
      throw std::invalid_argument("volume knots must increase");
  if (volume_knots.front() < c.v_low_feas_min - 1e-6 ||
      volume_knots.back() > c.v_low_feas_max + 1e-6)
    throw std::invalid_argument("knots outside the feasible volume window");
  for (double x : turbine_levels)
    if (!(x > 0))
      throw std::invalid_argument("turbine level must be positive");
  for (double x : pump_levels)
    if (!(x < 0)) throw std::invalid_argument("pump level must be negative");
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
}

DpGrid DpGrid::regular(const UpcModel& m, const PlantConfig& c, int n_volumes,
                       int n_levels, int horizon) {
  DpGrid g;
  g.horizon = horizon;
  for (int i = 0; i < n_volumes; ++i)
    g.volume_knots.push_back(
        c.v_low_feas_min +
        (c.v_low_feas_max - c.v_low_feas_min) * i / (n_volumes - 1.0));
  g.volume_knots.push_back(c.v_init);
  g.volume_knots.push_back(c.v_target);
  std::sort(g.volume_knots.begin(), g.volume_knots.end());
  g.volume_knots.erase(
      std::unique(g.volume_knots.begin(), g.volume_knots.end(),
                  [](double a, double b) { return std::abs(a - b) < 1e-6; }),
      g.volume_knots.end());
  const double t_lo = envelope_min(m, Mode::Turbine, c.h_min);
  const double t_hi = envelope_max(m, Mode::Turbine, c.h_max);
  const double p_lo = envelope_min(m, Mode::Pump, c.h_max);
  const double p_hi = envelope_max(m, Mode::Pump, c.h_min);
  for (int i = 0; i < n_levels; ++i) {
    g.turbine_levels.push_back(t_lo + (t_hi - t_lo) * i / (n_levels - 1.0));
    g.pump_levels.push_back(p_lo + (p_hi - p_lo) * i / (n_levels - 1.0));
  }
  return g;
}

namespace {

double interp_value(const std::vector<double>& knots,
                    const std::vector<double>& values, double v) {
  if (v <= knots.front()) return values.front();
  if (v >= knots.back()) return values.back();
  const auto it = std::upper_bound(knots.begin(), knots.end(), v);
  const size_t i = static_cast<size_t>(it - knots.begin()) - 1;
  const double w = (v - knots[i]) / (knots[i + 1] - knots[i]);
  return values[i] + w * (values[i + 1] - values[i]);
}

}  // namespace

OracleResult dp_schedule(const VectorXd& prices, const DpGrid& grid,
                         const UpcModel& m, const PlantConfig& c) {
  grid.validate(c);
  const int T = grid.horizon;
  if (prices.size() != T) throw std::invalid_argument("price horizon mismatch");
  const auto actions = grid.actions();
  const auto& knots = grid.volume_knots;
  const int nk = static_cast<int>(knots.size());
  const double lam_med = median_price(prices);

  std::vector<std::vector<double>> V(T + 1, std::vector<double>(nk, 0.0));
  for (int t = T - 1; t >= 0; --t) {
    for (int i = 0; i < nk; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (double a : actions) {
        const SimStep st = sim_step(knots[i], a, m, c);
        double r = stage_profit(st, a, prices(t), c);
        if (t == T - 1) r -= terminal_vol_penalty(st.v_next, st.h, lam_med, c);
        const double val =
            r + (t + 1 < T ? interp_value(knots, V[t + 1], st.v_next) : 0.0);
        if (val > best) best = val;
      }
      V[t][i] = best;
    }
  }

  OracleResult out;
  out.schedule = VectorXd::Zero(T);
  double v = c.v_init;
  for (int t = 0; t < T; ++t) {
    double best = -std::numeric_limits<double>::infinity();
    double best_a = 0.0;
    SimStep best_st;
    for (double a : actions) {
      const SimStep st = sim_step(v, a, m, c);
      double r = stage_profit(st, a, prices(t), c);
      if (t == T - 1) r -= terminal_vol_penalty(st.v_next, st.h, lam_med, c);
      const double val =
          r + (t + 1 < T ? interp_value(knots, V[t + 1], st.v_next) : 0.0);
      if (val > best) {
        best = val;
        best_a = a;
        best_st = st;
      }
    }
    if (t == 0) out.value = best;
    out.schedule(t) = best_a;
    v = best_st.v_next;
  }
  out.trajectory = simulate(out.schedule, m, c).trajectory;
  out.trajectory.role = Role::WarmStart;
  return out;
}

OracleResult enumerate_exact(const VectorXd& prices, int horizon,
                             const std::vector<double>& actions,
                             const UpcModel& m, const PlantConfig& c,
                             long long max_leaves) {
  if (actions.empty()) throw std::invalid_argument("empty action set");
  if (prices.size() != horizon)
    throw std::invalid_argument("price horizon mismatch");
  double leaves = 1.0;
  for (int t = 0; t < horizon; ++t) leaves *= actions.size();
  if (leaves > static_cast<double>(max_leaves))
    throw std::invalid_argument("enumeration budget exceeded");
  const double lam_med = median_price(prices);

  OracleResult best;
  best.value = -std::numeric_limits<double>::infinity();
  std::vector<int> idx(horizon, 0);
  std::vector<double> sched(horizon, 0.0);
  struct Frame {
    double v;
    double acc;
  };
  std::vector<Frame> stack(horizon + 1);
  stack[0] = {c.v_init, 0.0};
  int depth = 0;

  // depth-first in action order, so the first optimum found is the
  // lexicographically earliest one
  while (depth >= 0) {
    if (idx[depth] >= static_cast<int>(actions.size())) {
      --depth;
      if (depth >= 0) ++idx[depth];
      continue;
    }
    const double a = actions[idx[depth]];
    const SimStep st = sim_step(stack[depth].v, a, m, c);
    double r = stage_profit(st, a, prices(depth), c);
    if (depth == horizon - 1)
      r -= terminal_vol_penalty(st.v_next, st.h, lam_med, c);
    const double acc = stack[depth].acc + r;
    sched[depth] = a;
    if (depth == horizon - 1) {
      if (acc > best.value) {
        best.value = acc;
        best.schedule = Eigen::Map<const VectorXd>(sched.data(), horizon);
      }
      ++idx[depth];
    } else {
      stack[depth + 1] = {st.v_next, acc};
      ++depth;
      idx[depth] = 0;
    }
  }
  best.trajectory = simulate(best.schedule, m, c).trajectory;
  best.trajectory.role = Role::WarmStart;
  return best;
}

}  // namespace uphes
