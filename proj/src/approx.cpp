#include "uphes/approx.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace uphes {

double GlobalLinearModel::flow(Mode m, double p, double h) const {
  if (m == Mode::Idle) throw std::invalid_argument("idle mode has no flow");
  const auto& a = (m == Mode::Turbine) ? alpha_turbine : alpha_pump;
  return a[0] * p + a[1] * h + a[2];
}

double GlobalLinearModel::power_min(Mode m, double h) const {
  if (m == Mode::Turbine) return beta_min_turbine[0] * h + beta_min_turbine[1];
  if (m == Mode::Pump) return beta_min_pump[0] * h + beta_min_pump[1];
  throw std::invalid_argument("idle mode has no envelope");
}

double GlobalLinearModel::power_max(Mode m, double h) const {
  if (m == Mode::Turbine) return beta_max_turbine[0] * h + beta_max_turbine[1];
  if (m == Mode::Pump) return beta_max_pump[0] * h + beta_max_pump[1];
  throw std::invalid_argument("idle mode has no envelope");
}

void GlobalLinearModel::validate(const PlantConfig& c) const {
  for (int i = 0; i <= 200; ++i) {
    const double h = c.h_min + (c.h_max - c.h_min) * i / 200.0;
    if (!(power_max(Mode::Turbine, h) >= power_min(Mode::Turbine, h)))
      throw std::invalid_argument("turbine affine envelope crosses");
    if (!(power_min(Mode::Pump, h) <= power_max(Mode::Pump, h)))
      throw std::invalid_argument("pump affine envelope crosses");
  }
}

namespace {

std::array<double, 2> fit_affine_1d(const std::vector<double>& x,
                                    const std::vector<double>& y) {
  Eigen::MatrixXd A(x.size(), 2);
  Eigen::VectorXd b(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    A(i, 0) = x[i];
    A(i, 1) = 1.0;
    b(i) = y[i];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < 2) throw numeric_error("degenerate affine fit");
  Eigen::Vector2d sol = qr.solve(b);
  return {sol(0), sol(1)};
}

std::array<double, 3> fit_alpha(const UpcModel& m, Mode mode,
                                const PlantConfig& c, int n_p, int n_h) {
  Eigen::MatrixXd A(n_p * n_h, 3);
  Eigen::VectorXd b(n_p * n_h);
  int row = 0;
  for (int i = 0; i < n_h; ++i) {
    const double h = c.h_min + (c.h_max - c.h_min) * i / (n_h - 1.0);
    const double lo = envelope_min(m, mode, h);
    const double hi = envelope_max(m, mode, h);
    for (int j = 0; j < n_p; ++j) {
      const double p = lo + (hi - lo) * j / (n_p - 1.0);
      A(row, 0) = p;
      A(row, 1) = h;
      A(row, 2) = 1.0;
      b(row) = upc_eval(m, mode, p, h, c);
      ++row;
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < 3) throw numeric_error("degenerate UPC sampling");
  Eigen::Vector3d sol = qr.solve(b);
  return {sol(0), sol(1), sol(2)};
}

}  // namespace

GlobalLinearModel fit_global(const UpcModel& m, const PlantConfig& c,
                             const GlobalFitSpec& spec) {
  if (spec.n_p < 3 || spec.n_h < 3 || spec.n_v < 3)
    throw std::invalid_argument("global fit needs >= 3 samples per relation");
  GlobalLinearModel g;
  g.alpha_turbine = fit_alpha(m, Mode::Turbine, c, spec.n_p, spec.n_h);
  g.alpha_pump = fit_alpha(m, Mode::Pump, c, spec.n_p, spec.n_h);

  std::vector<double> hgrid(spec.n_h);
  for (int i = 0; i < spec.n_h; ++i)
    hgrid[i] = c.h_min + (c.h_max - c.h_min) * i / (spec.n_h - 1.0);
  auto env = [&](Mode mode, bool maxside) {
    std::vector<double> y(hgrid.size());
    for (size_t i = 0; i < hgrid.size(); ++i)
      y[i] = maxside ? envelope_max(m, mode, hgrid[i])
                     : envelope_min(m, mode, hgrid[i]);
    return fit_affine_1d(hgrid, y);
  };
  g.beta_min_turbine = env(Mode::Turbine, false);
  g.beta_max_turbine = env(Mode::Turbine, true);
  g.beta_min_pump = env(Mode::Pump, false);
  g.beta_max_pump = env(Mode::Pump, true);

  std::vector<double> vs(spec.n_v), hs(spec.n_v);
  for (int i = 0; i < spec.n_v; ++i) {
    vs[i] = c.v_low_feas_min +
            (c.v_low_feas_max - c.v_low_feas_min) * i / (spec.n_v - 1.0);
    hs[i] = gross_head(vs[i], c);
  }
  g.delta = fit_affine_1d(vs, hs);
  return g;
}

// ---------------------------------------------------------------------------

int Sos2Grid::n_p(Mode m) const {
  const auto& t = p_table(m);
  return t.empty() ? 0 : static_cast<int>(t.front().size());
}

const std::vector<std::vector<double>>& Sos2Grid::p_table(Mode m) const {
  if (m == Mode::Turbine) return p_turbine;
  if (m == Mode::Pump) return p_pump;
  throw std::invalid_argument("idle mode has no UPC table");
}

const std::vector<std::vector<double>>& Sos2Grid::q_table(Mode m) const {
  if (m == Mode::Turbine) return q_turbine;
  if (m == Mode::Pump) return q_pump;
  throw std::invalid_argument("idle mode has no UPC table");
}

Sos2Grid build_sos2_grid(const UpcModel& m, const PlantConfig& c, int n_h,
                         int n_p_turbine, int n_p_pump) {
  if (n_h < 2 || n_p_turbine < 2 || n_p_pump < 2)
    throw std::invalid_argument("SOS2 grid needs >= 2 knots per axis");
  Sos2Grid g;
  g.h_knots.resize(n_h);
  g.v_knots.resize(n_h);
  for (int i = 0; i < n_h; ++i) {
    g.h_knots[i] = c.h_min + (c.h_max - c.h_min) * i / (n_h - 1.0);
    g.v_knots[i] = v_of_head(g.h_knots[i], c);
  }
  auto fill = [&](Mode mode, int n_p, std::vector<std::vector<double>>& pt,
                  std::vector<std::vector<double>>& qt) {
    pt.assign(n_h, std::vector<double>(n_p));
    qt.assign(n_h, std::vector<double>(n_p));
    for (int i = 0; i < n_h; ++i) {
      const double h = g.h_knots[i];
      const double lo = envelope_min(m, mode, h);
      const double hi = envelope_max(m, mode, h);
      for (int j = 0; j < n_p; ++j) {
        pt[i][j] = lo + (hi - lo) * j / (n_p - 1.0);
        qt[i][j] = upc_eval(m, mode, pt[i][j], h, c);
      }
    }
  };
  fill(Mode::Turbine, n_p_turbine, g.p_turbine, g.q_turbine);
  fill(Mode::Pump, n_p_pump, g.p_pump, g.q_pump);
  return g;
}

long long sos2_weight_count(const Sos2Grid& g, int horizon) {
  return static_cast<long long>(horizon) * g.n_h() *
         (g.n_p(Mode::Turbine) + g.n_p(Mode::Pump));
}

namespace {

// index of the cell containing x among strictly increasing knots
int locate(const std::vector<double>& knots, double x, const char* what) {
  const double span = knots.back() - knots.front();
  const double slack = 1e-9 * std::max(1.0, std::abs(span));
  if (x < knots.front() - slack || x > knots.back() + slack)
    throw std::domain_error(std::string(what) + " outside grid hull");
  const auto it = std::upper_bound(knots.begin(), knots.end(), x);
  int i = static_cast<int>(it - knots.begin()) - 1;
  return std::clamp(i, 0, static_cast<int>(knots.size()) - 2);
}

}  // namespace

double sos2_interpolate(const Sos2Grid& g, double h, double p, Mode mode) {
  const int i = locate(g.h_knots, h, "head");
  const double theta = (h - g.h_knots[i]) / (g.h_knots[i + 1] - g.h_knots[i]);
  const auto& pt = g.p_table(mode);
  const auto& qt = g.q_table(mode);
  const int n_p = g.n_p(mode);
  // power knots of the interpolated row
  std::vector<double> prow(n_p);
  for (int j = 0; j < n_p; ++j)
    prow[j] = (1.0 - theta) * pt[i][j] + theta * pt[i + 1][j];
  const int j = locate(prow, p, "power");
  const double mu = (p - prow[j]) / (prow[j + 1] - prow[j]);
  return (1.0 - theta) * ((1.0 - mu) * qt[i][j] + mu * qt[i][j + 1]) +
         theta * ((1.0 - mu) * qt[i + 1][j] + mu * qt[i + 1][j + 1]);
}

double sos2_head_of_volume(const Sos2Grid& g, double v) {
  // v_knots decrease with i; search on the reversed view
  std::vector<double> rev(g.v_knots.rbegin(), g.v_knots.rend());
  const int ri = locate(rev, v, "volume");
  const int i = g.n_h() - 2 - ri;
  const double w = (v - g.v_knots[i + 1]) / (g.v_knots[i] - g.v_knots[i + 1]);
  return g.h_knots[i + 1] + w * (g.h_knots[i] - g.h_knots[i + 1]);
}

double sos2_volume_of_head(const Sos2Grid& g, double h) {
  const int i = locate(g.h_knots, h, "head");
  const double theta = (h - g.h_knots[i]) / (g.h_knots[i + 1] - g.h_knots[i]);
  return (1.0 - theta) * g.v_knots[i] + theta * g.v_knots[i + 1];
}

// ---------------------------------------------------------------------------

LocalLinearization local_linearize(const UpcModel& m, const PlantConfig& c,
                                   const Trajectory& x_hat) {
  x_hat.validate();
  const int T = x_hat.horizon();
  LocalLinearization lin;
  lin.xi_q.resize(T);
  lin.xi_v.resize(T);
  lin.expansion = x_hat;
  const double slack = 1e-9 * (c.h_max - c.h_min);
  for (int t = 0; t < T; ++t) {
    const double ph = x_hat.p[t];
    const double hh = x_hat.h[t];
    if (hh < c.h_min - slack || hh > c.h_max + slack)
      throw std::domain_error("expansion head outside bounds at hour " +
                              std::to_string(t + 1));
    if (std::abs(ph) < kIdlePowerEps) {
      lin.xi_q[t] = {0.0, 0.0, 0.0};
    } else {
      const Mode mode = x_hat.mode[t];
      const double f = upc_eval(m, mode, ph, hh, c);
      const auto gr = upc_grad(m, mode, ph, hh, c);
      lin.xi_q[t] = {gr.dq_dp, gr.dq_dh, f - gr.dq_dp * ph - gr.dq_dh * hh};
    }
    const double vd = v_of_head_deriv(hh, c);
    lin.xi_v[t] = {vd, v_of_head(hh, c) - vd * hh};
  }
  return lin;
}

// ---------------------------------------------------------------------------

ErrorMetrics error_metrics(const std::vector<double>& truth,
                           const std::vector<double>& pred) {
  if (truth.size() != pred.size())
    throw std::invalid_argument("metric inputs have mismatched sizes");
  if (truth.size() < 2)
    throw std::invalid_argument("need >= 2 evaluation points");
  const double floor_guard = 1e-9;
  double abs_err_sum = 0.0, abs_true_sum = 0.0, mape_sum = 0.0, max_pct = 0.0;
  double ss_res = 0.0;
  double mean_true = 0.0;
  for (double y : truth) mean_true += y;
  mean_true /= truth.size();
  double ss_tot = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    const double e = pred[i] - truth[i];
    const double denom = std::max(std::abs(truth[i]), floor_guard);
    abs_err_sum += std::abs(e);
    abs_true_sum += std::abs(truth[i]);
    mape_sum += std::abs(e) / denom;
    max_pct = std::max(max_pct, std::abs(e) / denom);
    ss_res += e * e;
    ss_tot += (truth[i] - mean_true) * (truth[i] - mean_true);
  }
  ErrorMetrics out;
  const double n = static_cast<double>(truth.size());
  out.mean_pct =
      100.0 * (abs_err_sum / n) / std::max(abs_true_sum / n, floor_guard);
  out.max_pct = 100.0 * max_pct;
  out.mape_pct = 100.0 * mape_sum / n;
  out.r2 = (ss_tot > 0.0) ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return out;
}

ErrorMetrics upc_error_vs_global(const UpcModel& truth,
                                 const GlobalLinearModel& g,
                                 const std::vector<UpcPoint>& pts,
                                 const PlantConfig& c) {
  std::vector<double> y, yhat;
  for (const auto& pt : pts) {
    y.push_back(upc_eval(truth, pt.mode, pt.p, pt.h, c));
    yhat.push_back(g.flow(pt.mode, pt.p, pt.h));
  }
  return error_metrics(y, yhat);
}

ErrorMetrics upc_error_vs_grid(const UpcModel& truth, const Sos2Grid& grid,
                               const std::vector<UpcPoint>& pts,
                               const PlantConfig& c) {
  std::vector<double> y, yhat;
  for (const auto& pt : pts) {
    y.push_back(upc_eval(truth, pt.mode, pt.p, pt.h, c));
    yhat.push_back(sos2_interpolate(grid, pt.h, pt.p, pt.mode));
  }
  return error_metrics(y, yhat);
}

ErrorMetrics vol_error_vs_global(const PlantConfig& c,
                                 const GlobalLinearModel& g,
                                 const std::vector<double>& heads) {
  std::vector<double> y, yhat;
  for (double h : heads) {
    y.push_back(v_of_head(h, c));
    yhat.push_back((h - g.delta[1]) / g.delta[0]);
  }
  return error_metrics(y, yhat);
}

ErrorMetrics vol_error_vs_grid(const PlantConfig& c, const Sos2Grid& grid,
                               const std::vector<double>& heads) {
  std::vector<double> y, yhat;
  for (double h : heads) {
    y.push_back(v_of_head(h, c));
    yhat.push_back(sos2_volume_of_head(grid, h));
  }
  return error_metrics(y, yhat);
}

void write_error_report_csv(const std::vector<ApproxErrorRow>& rows,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "function,method,mean_pct,max_pct,mape_pct,r2\n";
  for (const auto& r : rows)
    out << r.function << ',' << r.method << ','
        << format_double(r.metrics.mean_pct) << ','
        << format_double(r.metrics.max_pct) << ','
        << format_double(r.metrics.mape_pct) << ','
        << format_double(r.metrics.r2) << '\n';
}

}  // namespace uphes
