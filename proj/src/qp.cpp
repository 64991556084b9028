#include "uphes/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace uphes {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void PenaltyWeights::validate() const {
  const int T = horizon();
  if (T < 1 || w_q.size() != T || w_h.size() != T)
    throw std::invalid_argument("penalty weight vectors must share a length");
  if (!(growth > 1.0))
    throw std::invalid_argument("penalty growth factor must exceed 1");
  if (iterations < 1)
    throw std::invalid_argument("iteration count must be >= 1");
  for (const auto* v : {&w_p, &w_q, &w_h})
    for (int t = 0; t < T; ++t) {
      const double w = (*v)(t);
      if (!(w >= kWeightLo) || !(w <= kWeightHi))
        throw std::invalid_argument("penalty weight outside prescribed bounds");
    }
}

PenaltyWeights PenaltyWeights::scaled(int k) const {
  PenaltyWeights out = *this;
  const double f = std::pow(growth, k);
  out.w_p *= f;
  out.w_q *= f;
  out.w_h *= f;
  return out;
}

PenaltyWeights PenaltyWeights::constant(int T, double value,
                                        double growth_factor,
                                        int iterations_count) {
  PenaltyWeights w;
  w.w_p = VectorXd::Constant(T, value);
  w.w_q = VectorXd::Constant(T, value);
  w.w_h = VectorXd::Constant(T, value);
  w.growth = growth_factor;
  w.iterations = iterations_count;
  return w;
}

const char* qp_status_name(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::MaxIterations: return "max_iterations";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// interior point solver

namespace {

double inf_norm(const VectorXd& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

QpRawSolution solve_qp_raw_impl(const QpProblem& qp, const QpSolverOptions& opt,
                                bool allow_phase1);

// Elastic feasibility probe: min 1/2|e|^2 (plus a tiny x regularization)
// s.t. Ae x = be, Ci x - e <= di. Strictly feasible by construction, so a
// positive optimal violation certifies primal infeasibility.
double phase1_max_violation(const QpProblem& qp, const QpSolverOptions& opt) {
  const int n = static_cast<int>(qp.H.rows());
  const int me = static_cast<int>(qp.Ae.rows());
  const int mi = static_cast<int>(qp.Ci.rows());
  QpProblem p1;
  p1.H = MatrixXd::Zero(n + mi, n + mi);
  p1.H.topLeftCorner(n, n) = 1e-8 * MatrixXd::Identity(n, n);
  p1.H.bottomRightCorner(mi, mi) = MatrixXd::Identity(mi, mi);
  p1.g = VectorXd::Zero(n + mi);
  p1.Ae = MatrixXd::Zero(me, n + mi);
  if (me > 0) p1.Ae.leftCols(n) = qp.Ae;
  p1.be = qp.be;
  p1.Ci = MatrixXd::Zero(mi, n + mi);
  p1.Ci.leftCols(n) = qp.Ci;
  p1.Ci.rightCols(mi) = -MatrixXd::Identity(mi, mi);
  p1.di = qp.di;
  QpSolverOptions o1 = opt;
  o1.tol = 1e-8;
  o1.mu_tol = 1e-9;
  auto sol = solve_qp_raw_impl(p1, o1, false);
  if (sol.status != QpStatus::Optimal)
    return std::numeric_limits<double>::quiet_NaN();
  const VectorXd viol = qp.Ci * sol.x.head(n) - qp.di;
  return viol.size() ? std::max(0.0, viol.maxCoeff()) : 0.0;
}

QpRawSolution solve_qp_raw_impl(const QpProblem& qp, const QpSolverOptions& opt,
                                bool allow_phase1) {
  const int n = static_cast<int>(qp.H.rows());
  const int me = static_cast<int>(qp.Ae.rows());
  const int mi = static_cast<int>(qp.Ci.rows());
  QpRawSolution out;

  const double gscale = 1.0 + inf_norm(qp.g);
  const double bscale = 1.0 + inf_norm(qp.be);
  const double dscale = 1.0 + inf_norm(qp.di);

  // inconsistent equalities are certified without iterating
  if (me > 0) {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(qp.Ae);
    const VectorXd xls = qr.solve(qp.be);
    if (inf_norm(qp.Ae * xls - qp.be) > 1e-7 * bscale) {
      out.status = QpStatus::Infeasible;
      return out;
    }
  }

  // starting point from the equality-constrained subproblem
  VectorXd x(n), y = VectorXd::Zero(me);
  {
    MatrixXd K0 = MatrixXd::Zero(n + me, n + me);
    K0.topLeftCorner(n, n) = qp.H + 1e-11 * gscale * MatrixXd::Identity(n, n);
    if (me > 0) {
      K0.topRightCorner(n, me) = qp.Ae.transpose();
      K0.bottomLeftCorner(me, n) = qp.Ae;
    }
    VectorXd rhs(n + me);
    rhs.head(n) = -qp.g;
    rhs.tail(me) = qp.be;
    const VectorXd sol0 = K0.partialPivLu().solve(rhs);
    x = sol0.head(n);
    y = sol0.tail(me);
    if (!x.allFinite() || !y.allFinite()) {
      x.setZero();
      y.setZero();
    }
  }

  if (mi == 0) {
    VectorXd rd = qp.H * x + qp.g;
    if (me > 0) rd += qp.Ae.transpose() * y;
    const double rel_d = inf_norm(rd) / gscale;
    const double rel_p = me > 0 ? inf_norm(qp.Ae * x - qp.be) / bscale : 0.0;
    out.x = x;
    out.y = y;
    out.kkt_residual = std::max(rel_d, rel_p);
    out.status = (out.kkt_residual <= 1e-6) ? QpStatus::Optimal
                                            : QpStatus::MaxIterations;
    return out;
  }

  VectorXd s = qp.di - qp.Ci * x;
  const double smin = s.minCoeff();
  if (smin <= 0.0) s.array() += 1.0 - smin;
  s = s.cwiseMax(1e-2 * dscale);
  VectorXd lam = VectorXd::Constant(mi, 1.0);

  struct Step {
    VectorXd dx, dy, ds, dlam;
    bool ok = false;
  };

  for (int it = 0; it < opt.max_iterations; ++it) {
    VectorXd rd = qp.H * x + qp.g + qp.Ci.transpose() * lam;
    if (me > 0) rd += qp.Ae.transpose() * y;
    const VectorXd rp = me > 0 ? VectorXd(qp.Ae * x - qp.be) : VectorXd();
    const VectorXd ri = qp.Ci * x + s - qp.di;
    const double mu = s.dot(lam) / mi;

    const double rel_d = inf_norm(rd) / gscale;
    const double rel_p = me > 0 ? inf_norm(rp) / bscale : 0.0;
    const double rel_i = inf_norm(ri) / dscale;
    if (rel_d <= opt.tol && rel_p <= opt.tol && rel_i <= opt.tol &&
        mu <= opt.mu_tol * dscale) {
      out.status = QpStatus::Optimal;
      break;
    }
    if (!std::isfinite(mu) || mu > 1e16 || inf_norm(lam) > 1e14) break;

    const VectorXd d = lam.cwiseQuotient(s);
    MatrixXd K = MatrixXd::Zero(n + me, n + me);
    K.topLeftCorner(n, n) = qp.H + qp.Ci.transpose() * d.asDiagonal() * qp.Ci;
    if (me > 0) {
      K.topRightCorner(n, me) = qp.Ae.transpose();
      K.bottomLeftCorner(me, n) = qp.Ae;
    }
    Eigen::PartialPivLU<MatrixXd> lu(K);

    auto solve_step = [&](const VectorXd& rc) {
      Step st;
      VectorXd rhs(n + me);
      rhs.head(n) = -rd - qp.Ci.transpose() *
                              ((lam.cwiseProduct(ri) - rc).cwiseQuotient(s));
      if (me > 0) rhs.tail(me) = -rp;
      const VectorXd sol = lu.solve(rhs);
      if (!sol.allFinite()) return st;
      st.dx = sol.head(n);
      st.dy = sol.tail(me);
      st.ds = -ri - qp.Ci * st.dx;
      st.dlam = (-rc - lam.cwiseProduct(st.ds)).cwiseQuotient(s);
      st.ok = true;
      return st;
    };
    auto max_step = [](const VectorXd& v, const VectorXd& dv) {
      double a = 1.0;
      for (int i = 0; i < v.size(); ++i)
        if (dv(i) < 0.0) a = std::min(a, -v(i) / dv(i));
      return a;
    };

    // predictor
    const Step aff = solve_step(s.cwiseProduct(lam));
    if (!aff.ok) break;
    const double ap_aff = max_step(s, aff.ds);
    const double ad_aff = max_step(lam, aff.dlam);
    const double mu_aff =
        (s + ap_aff * aff.ds).dot(lam + ad_aff * aff.dlam) / mi;
    const double sigma = std::pow(std::max(mu_aff, 0.0) / mu, 3.0);

    // corrector
    const VectorXd rc = s.cwiseProduct(lam) + aff.ds.cwiseProduct(aff.dlam) -
                        VectorXd::Constant(mi, sigma * mu);
    const Step st = solve_step(rc);
    if (!st.ok) break;
    const double eta = 0.995;
    const double ap = std::min(1.0, eta * max_step(s, st.ds));
    const double ad = std::min(1.0, eta * max_step(lam, st.dlam));
    x += ap * st.dx;
    s += ap * st.ds;
    if (me > 0) y += ad * st.dy;
    lam += ad * st.dlam;
    out.iterations = it + 1;
  }

  {
    VectorXd rd = qp.H * x + qp.g + qp.Ci.transpose() * lam;
    if (me > 0) rd += qp.Ae.transpose() * y;
    const double rel_d = inf_norm(rd) / gscale;
    const double rel_p = me > 0 ? inf_norm(qp.Ae * x - qp.be) / bscale : 0.0;
    const double rel_i = inf_norm(qp.Ci * x + s - qp.di) / dscale;
    const double mu = s.dot(lam) / mi;
    out.kkt_residual = std::max({rel_d, rel_p, rel_i, mu / dscale});
  }
  out.x = x;
  out.y = y;
  out.lam = lam;
  out.s = s;

  if (out.status != QpStatus::Optimal && allow_phase1) {
    const double viol = phase1_max_violation(qp, opt);
    if (std::isfinite(viol) && viol > 1e-6 * dscale)
      out.status = QpStatus::Infeasible;
  }
  return out;
}

}  // namespace

QpRawSolution solve_qp_raw(const QpProblem& qp, const QpSolverOptions& opt) {
  return solve_qp_raw_impl(qp, opt, true);
}

// ---------------------------------------------------------------------------
// penalized scheduling QP

QpInstance build_penalized_qp(const Eigen::VectorXd& prices,
                              const LocalLinearization& lin,
                              const PenaltyWeights& w, const PlantConfig& c,
                              const GlobalLinearModel& env) {
  const int T = lin.horizon();
  if (prices.size() != T || w.horizon() != T)
    throw std::invalid_argument("penalized QP: dimension mismatch");
  const Trajectory& xh = lin.expansion;

  QpInstance inst;
  inst.T = T;
  inst.lin = lin;
  inst.prices = prices;
  inst.w_p = w.w_p;
  inst.w_q = w.w_q;
  inst.w_h = w.w_h;
  inst.dt_hours = c.dt_h();
  inst.dt_seconds = c.dt_s;
  inst.c_op = c.c_op;

  const int n = 4 * T;
  inst.prob.H = MatrixXd::Zero(n, n);
  inst.prob.g = VectorXd::Zero(n);
  inst.obj_const = 0.0;
  for (int t = 0; t < T; ++t) {
    const double wp = w.w_p(t), wq = w.w_q(t), wh = w.w_h(t);
    const double ph = xh.p[t], qh = xh.q[t], hh = xh.h[t];
    inst.prob.H(inst.idx_p(t), inst.idx_p(t)) =
        2.0 * (inst.dt_hours * c.c_op + wp);
    inst.prob.H(inst.idx_q(t), inst.idx_q(t)) = 2.0 * wq;
    inst.prob.H(inst.idx_h(t), inst.idx_h(t)) = 2.0 * wh;
    inst.prob.g(inst.idx_p(t)) = -(inst.dt_hours * prices(t) + 2.0 * wp * ph);
    inst.prob.g(inst.idx_q(t)) = -2.0 * wq * qh;
    inst.prob.g(inst.idx_h(t)) = -2.0 * wh * hh;
    inst.obj_const += wp * ph * ph + wq * qh * qh + wh * hh * hh;
  }

  int idle_count = 0;
  for (int t = 0; t < T; ++t)
    if (std::abs(xh.p[t]) < kIdlePowerEps) ++idle_count;

  const int me = 3 * T + idle_count;
  MatrixXd Ae = MatrixXd::Zero(me, n);
  VectorXd be = VectorXd::Zero(me);
  int r = 0;
  for (int t = 0; t < T; ++t) {  // flow link (reads q_t = 0 on idle hours)
    Ae(r, inst.idx_q(t)) = 1.0;
    Ae(r, inst.idx_p(t)) = -lin.xi_q[t][0];
    Ae(r, inst.idx_h(t)) = -lin.xi_q[t][1];
    be(r) = lin.xi_q[t][2];
    inst.eq_rows.push_back({RowKind::FlowLink, t});
    ++r;
  }
  for (int t = 0; t < T; ++t) {  // volume-head link, scaled volume units
    Ae(r, inst.idx_v(t)) = 1.0;
    Ae(r, inst.idx_h(t)) = -lin.xi_v[t][0] / kVolUnit;
    be(r) = lin.xi_v[t][1] / kVolUnit;
    inst.eq_rows.push_back({RowKind::VolumeLink, t});
    ++r;
  }
  for (int t = 0; t < T; ++t) {  // forward Euler volume recursion
    Ae(r, inst.idx_v(t)) = 1.0;
    Ae(r, inst.idx_q(t)) = -c.dt_s / kVolUnit;
    if (t > 0)
      Ae(r, inst.idx_v(t - 1)) = -1.0;
    else
      be(r) = c.v_init / kVolUnit;
    inst.eq_rows.push_back({RowKind::VolumeRecursion, t});
    ++r;
  }
  for (int t = 0; t < T; ++t) {
    if (std::abs(xh.p[t]) < kIdlePowerEps) {
      Ae(r, inst.idx_p(t)) = 1.0;
      inst.eq_rows.push_back({RowKind::IdlePower, t});
      ++r;
    }
  }

  const int mi = 2 * T + 1 + 2 * (T - idle_count);
  MatrixXd Ci = MatrixXd::Zero(mi, n);
  VectorXd di = VectorXd::Zero(mi);
  r = 0;
  for (int t = 0; t < T; ++t) {
    Ci(r, inst.idx_h(t)) = 1.0;
    di(r) = c.h_max;
    inst.ineq_rows.push_back({RowKind::HeadUpper, t});
    ++r;
    Ci(r, inst.idx_h(t)) = -1.0;
    di(r) = -c.h_min;
    inst.ineq_rows.push_back({RowKind::HeadLower, t});
    ++r;
  }
  Ci(r, inst.idx_v(T - 1)) = 1.0;
  di(r) = c.v_target / kVolUnit;
  inst.ineq_rows.push_back({RowKind::TerminalVolume, T - 1});
  ++r;
  for (int t = 0; t < T; ++t) {
    if (std::abs(xh.p[t]) < kIdlePowerEps) continue;
    const Mode m = xh.mode[t];
    const auto& bmax =
        (m == Mode::Turbine) ? env.beta_max_turbine : env.beta_max_pump;
    const auto& bmin =
        (m == Mode::Turbine) ? env.beta_min_turbine : env.beta_min_pump;
    Ci(r, inst.idx_p(t)) = 1.0;
    Ci(r, inst.idx_h(t)) = -bmax[0];
    di(r) = bmax[1];
    inst.ineq_rows.push_back({RowKind::EnvelopeUpper, t});
    ++r;
    Ci(r, inst.idx_p(t)) = -1.0;
    Ci(r, inst.idx_h(t)) = bmin[0];
    di(r) = -bmin[1];
    inst.ineq_rows.push_back({RowKind::EnvelopeLower, t});
    ++r;
  }

  inst.prob.Ae = std::move(Ae);
  inst.prob.be = std::move(be);
  inst.prob.Ci = std::move(Ci);
  inst.prob.di = std::move(di);
  return inst;
}

double QpInstance::objective(const Eigen::VectorXd& x_natural) const {
  VectorXd xs = x_natural;
  for (int t = 0; t < T; ++t) xs(idx_v(t)) /= kVolUnit;
  return -(0.5 * xs.dot(prob.H * xs) + prob.g.dot(xs)) - obj_const;
}

QpSolution solve_qp(const QpInstance& qp, const QpSolverOptions& opt) {
  auto raw = solve_qp_raw(qp.prob, opt);
  QpSolution sol;
  sol.x = raw.x;
  sol.eq_duals = raw.y;
  sol.ineq_duals = raw.lam;
  sol.slacks = raw.s;
  sol.status = raw.status;
  sol.iterations = raw.iterations;
  sol.kkt_residual = raw.kkt_residual;
  if (raw.x.size() == qp.num_vars()) {
    sol.trajectory.resize(qp.T);
    sol.trajectory.role = Role::Refined;
    for (int t = 0; t < qp.T; ++t) {
      const bool idle = std::abs(qp.lin.expansion.p[t]) < kIdlePowerEps;
      // idle hours are pinned by construction; drop solver roundoff
      sol.trajectory.p[t] = idle ? 0.0 : raw.x(qp.idx_p(t));
      sol.trajectory.q[t] = idle ? 0.0 : raw.x(qp.idx_q(t));
      sol.trajectory.h[t] = raw.x(qp.idx_h(t));
      sol.trajectory.v[t] = raw.x(qp.idx_v(t)) * kVolUnit;
      sol.trajectory.mode[t] = idle ? Mode::Idle : qp.lin.expansion.mode[t];
    }
    sol.objective =
        -(0.5 * raw.x.dot(qp.prob.H * raw.x) + qp.prob.g.dot(raw.x)) -
        qp.obj_const;
  }
  return sol;
}

// ---------------------------------------------------------------------------
// implicit differentiation with a frozen active set

namespace {

struct FrozenKkt {
  MatrixXd K;
  std::vector<int> active;
  int n = 0, m = 0;
  bool degenerate = false;
};

FrozenKkt build_frozen_kkt(const QpSolution& sol, const QpInstance& qp) {
  FrozenKkt fk;
  const int n = qp.num_vars();
  const int me = static_cast<int>(qp.prob.Ae.rows());
  for (int i = 0; i < qp.prob.Ci.rows(); ++i) {
    const double rowscale = 1.0 + std::abs(qp.prob.di(i));
    const bool active =
        sol.slacks(i) <= 1e-7 * rowscale || sol.ineq_duals(i) > sol.slacks(i);
    if (active) {
      fk.active.push_back(i);
      if (sol.ineq_duals(i) <= 1e-7) fk.degenerate = true;
    }
  }
  const int ma = static_cast<int>(fk.active.size());
  fk.n = n;
  fk.m = me + ma;
  fk.K = MatrixXd::Zero(n + fk.m, n + fk.m);
  fk.K.topLeftCorner(n, n) = qp.prob.H;
  if (me > 0) {
    fk.K.block(0, n, n, me) = qp.prob.Ae.transpose();
    fk.K.block(n, 0, me, n) = qp.prob.Ae;
  }
  for (int a = 0; a < ma; ++a) {
    fk.K.block(0, n + me + a, n, 1) = qp.prob.Ci.row(fk.active[a]).transpose();
    fk.K.block(n + me + a, 0, 1, n) = qp.prob.Ci.row(fk.active[a]);
  }
  return fk;
}

}  // namespace

QpJacobian differentiate_qp(const QpSolution& sol, const QpInstance& qp) {
  if (sol.status != QpStatus::Optimal)
    throw numeric_error("cannot differentiate a non-optimal QP solution");
  const int T = qp.T;
  const int n = qp.num_vars();
  auto fk = build_frozen_kkt(sol, qp);

  MatrixXd rhs = MatrixXd::Zero(n + fk.m, 3 * T);
  for (int t = 0; t < T; ++t) {
    rhs(qp.idx_p(t), t) = -2.0 * (sol.x(qp.idx_p(t)) - qp.lin.expansion.p[t]);
    rhs(qp.idx_q(t), T + t) =
        -2.0 * (sol.x(qp.idx_q(t)) - qp.lin.expansion.q[t]);
    rhs(qp.idx_h(t), 2 * T + t) =
        -2.0 * (sol.x(qp.idx_h(t)) - qp.lin.expansion.h[t]);
  }

  QpJacobian jac;
  jac.degenerate = fk.degenerate;
  Eigen::PartialPivLU<MatrixXd> lu(fk.K);
  MatrixXd full = lu.solve(rhs);
  const double resid = (fk.K * full - rhs).cwiseAbs().maxCoeff();
  if (!full.allFinite() || resid > 1e-6 * (1.0 + rhs.cwiseAbs().maxCoeff())) {
    jac.degenerate = true;
    full = fk.K.colPivHouseholderQr().solve(rhs);
  }
  jac.dx_dw = full.topRows(n);
  for (int t = 0; t < T; ++t) jac.dx_dw.row(qp.idx_v(t)) *= kVolUnit;
  return jac;
}

void dump_qp(const QpInstance& qp, std::ostream& os) {
  os << "penalized QP, T=" << qp.T << "\n";
  os << "objective (maximize): dt*sum(lambda_t*p_t - c_op*p_t^2) - penalties\n";
  for (int t = 0; t < qp.T; ++t)
    os << "  t=" << t + 1 << " lambda=" << qp.prices(t) << " w=(" << qp.w_p(t)
       << "," << qp.w_q(t) << "," << qp.w_h(t) << ") center=("
       << qp.lin.expansion.p[t] << "," << qp.lin.expansion.q[t] << ","
       << qp.lin.expansion.h[t] << ")\n";
  auto row_name = [](RowKind k) {
    switch (k) {
      case RowKind::FlowLink: return "flow-link";
      case RowKind::VolumeLink: return "volume-link";
      case RowKind::VolumeRecursion: return "volume-recursion";
      case RowKind::IdlePower: return "idle-power";
      case RowKind::HeadUpper: return "head-upper";
      case RowKind::HeadLower: return "head-lower";
      case RowKind::TerminalVolume: return "terminal-volume";
      case RowKind::EnvelopeUpper: return "envelope-upper";
      case RowKind::EnvelopeLower: return "envelope-lower";
    }
    return "?";
  };
  os << "equalities (" << qp.prob.Ae.rows() << "):\n";
  for (size_t i = 0; i < qp.eq_rows.size(); ++i)
    os << "  [" << row_name(qp.eq_rows[i].kind)
       << " t=" << qp.eq_rows[i].hour + 1 << "] rhs=" << qp.prob.be(i) << "\n";
  os << "inequalities (" << qp.prob.Ci.rows() << "):\n";
  for (size_t i = 0; i < qp.ineq_rows.size(); ++i)
    os << "  [" << row_name(qp.ineq_rows[i].kind)
       << " t=" << qp.ineq_rows[i].hour + 1 << "] rhs=" << qp.prob.di(i)
       << "\n";
}

// ---------------------------------------------------------------------------
// recursive refinement

RefineResult recursive_refine(const Eigen::VectorXd& prices,
                              const Trajectory& warm,
                              const PenaltyWeights& w0, const UpcModel& model,
                              const PlantConfig& c,
                              const GlobalLinearModel& env,
                              const QpSolverOptions& opt) {
  const int K = w0.iterations;
  RefineResult res;
  Trajectory x_hat = warm;
  for (int k = 0; k < K; ++k) {
    const PenaltyWeights wk = w0.scaled(k);
    auto lin = local_linearize(model, c, x_hat);
    auto inst = build_penalized_qp(prices, lin, wk, c, env);
    auto sol = solve_qp(inst, opt);
    if (sol.status != QpStatus::Optimal) {
      res.fallback = true;
      break;
    }
    x_hat = sol.trajectory;
    res.tape.steps.push_back(
        {std::move(inst), std::move(sol), std::pow(w0.growth, k)});
    res.completed_steps = k + 1;
  }
  res.final = x_hat;
  res.final.role = Role::Refined;
  return res;
}

Eigen::VectorXd RefineTape::backward(const Eigen::VectorXd& dL_dx_final,
                                     const UpcModel& model,
                                     const PlantConfig& c) const {
  if (steps.empty())
    throw numeric_error("refine tape is empty; nothing to differentiate");
  const int T = steps.front().instance.T;
  if (dL_dx_final.size() != 4 * T)
    throw std::invalid_argument("backward expects a 4T gradient vector");
  VectorXd dw0 = VectorXd::Zero(3 * T);
  VectorXd gx = dL_dx_final;  // dL/d(current step's solution), natural units

  for (int k = static_cast<int>(steps.size()) - 1; k >= 0; --k) {
    const auto& inst = steps[k].instance;
    const auto& sol = steps[k].solution;
    auto fk = build_frozen_kkt(sol, inst);
    const int n = fk.n;

    VectorXd rhs = VectorXd::Zero(n + fk.m);
    for (int t = 0; t < T; ++t) {
      rhs(inst.idx_p(t)) = gx(inst.idx_p(t));
      rhs(inst.idx_q(t)) = gx(inst.idx_q(t));
      rhs(inst.idx_h(t)) = gx(inst.idx_h(t));
      rhs(inst.idx_v(t)) = gx(inst.idx_v(t)) * kVolUnit;
    }
    Eigen::PartialPivLU<MatrixXd> lu(fk.K);
    VectorXd z = lu.solve(rhs);
    if (!z.allFinite()) z = fk.K.colPivHouseholderQr().solve(rhs);
    const VectorXd zx = z.head(n);
    const VectorXd znu = z.tail(fk.m);

    // dL/dw for this step's weights, chained by gamma^k to the base weights
    for (int t = 0; t < T; ++t) {
      const double dp = sol.x(inst.idx_p(t)) - inst.lin.expansion.p[t];
      const double dq = sol.x(inst.idx_q(t)) - inst.lin.expansion.q[t];
      const double dh = sol.x(inst.idx_h(t)) - inst.lin.expansion.h[t];
      dw0(t) += steps[k].weight_scale * (-zx(inst.idx_p(t)) * 2.0 * dp);
      dw0(T + t) += steps[k].weight_scale * (-zx(inst.idx_q(t)) * 2.0 * dq);
      dw0(2 * T + t) += steps[k].weight_scale * (-zx(inst.idx_h(t)) * 2.0 * dh);
    }

    if (k == 0) break;  // the first expansion point is the fixed warm start

    // dL/d(expansion trajectory), which is step k-1's solution
    VectorXd gx_prev = VectorXd::Zero(4 * T);
    for (int t = 0; t < T; ++t) {
      const double ph = inst.lin.expansion.p[t];
      const double hh = inst.lin.expansion.h[t];
      // penalty centers
      gx_prev(inst.idx_p(t)) += 2.0 * inst.w_p(t) * zx(inst.idx_p(t));
      gx_prev(inst.idx_q(t)) += 2.0 * inst.w_q(t) * zx(inst.idx_q(t));
      gx_prev(inst.idx_h(t)) += 2.0 * inst.w_h(t) * zx(inst.idx_h(t));
      // flow-link coefficients (idle hours carry constant zero xi)
      if (std::abs(ph) >= kIdlePowerEps) {
        const int r = t;  // flow-link rows lead the equality block
        const double nu = znu(r);
        const double p_t = sol.x(inst.idx_p(t));
        const double h_t = sol.x(inst.idx_h(t));
        const double dL_dxi1 = zx(inst.idx_p(t)) * nu + znu(r) * p_t;
        const double dL_dxi2 = zx(inst.idx_h(t)) * nu + znu(r) * h_t;
        const double dL_dxi3 = znu(r);
        const auto hs = upc_hess(model, inst.lin.expansion.mode[t], ph, hh, c);
        gx_prev(inst.idx_p(t)) +=
            dL_dxi1 * hs.d2q_dp2 + dL_dxi2 * hs.d2q_dpdh +
            dL_dxi3 * (-hs.d2q_dp2 * ph - hs.d2q_dpdh * hh);
        gx_prev(inst.idx_h(t)) +=
            dL_dxi1 * hs.d2q_dpdh + dL_dxi2 * hs.d2q_dh2 +
            dL_dxi3 * (-hs.d2q_dpdh * ph - hs.d2q_dh2 * hh);
      }
      // volume-link coefficients
      {
        const int r = T + t;  // volume-link rows follow the flow links
        const double nu = znu(r);
        const double h_t = sol.x(inst.idx_h(t));
        const double vpp = v_of_head_deriv2(hh, c);
        const double dL_dxiv1 =
            (zx(inst.idx_h(t)) * nu + znu(r) * h_t) / kVolUnit;
        const double dL_dxiv2 = znu(r) / kVolUnit;
        gx_prev(inst.idx_h(t)) += dL_dxiv1 * vpp + dL_dxiv2 * (-vpp * hh);
      }
    }
    gx = gx_prev;
  }
  return dw0;
}

}  // namespace uphes
