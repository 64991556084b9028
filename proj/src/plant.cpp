#include "uphes/plant.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace uphes {

namespace {

constexpr double kPi = 3.14159265358979323846;

// rated-flow limits behind the synthetic envelopes
constexpr double kRatedFlowMax = 18.0;   // m^3/s
constexpr double kRatedFlowMin = 4.5;    // m^3/s
constexpr double kRefEfficiency = 0.9;

}  // namespace

Mode mode_from_name(const std::string& s) {
  if (s == "T" || s == "t" || s == "turbine") return Mode::Turbine;
  if (s == "P" || s == "p" || s == "pump") return Mode::Pump;
  if (s == "I" || s == "i" || s == "idle") return Mode::Idle;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

void PlantConfig::finalize() {
  if (!(h_min > 0.0) || !(h_min < h_max))
    throw std::invalid_argument("require 0 < h_min < h_max");
  if (h_init < h_min || h_init > h_max)
    throw std::invalid_argument("h_init outside [h_min, h_max]");
  if (v_init < 0.0 || v_init > v_total)
    throw std::invalid_argument("v_init outside [0, v_total]");
  if (!(v_target > 0.0) || v_target > v_total)
    throw std::invalid_argument("v_target outside (0, v_total]");
  if (!(dt_s > 0.0)) throw std::invalid_argument("dt must be positive");
  if (c_op < 0.0) throw std::invalid_argument("c_op must be nonnegative");
  if (n_pits < 1) throw std::invalid_argument("n_pits must be positive");
  if (!(slope_m > 0.0)) throw std::invalid_argument("slope_m must be positive");

  // full spheres hold exactly the lower-reservoir capacity
  const double derived_r = std::cbrt(3.0 * lower_capacity() / (4.0 * kPi * n_pits));
  if (pit_radius <= 0.0) {
    pit_radius = derived_r;
  } else {
    const double cap = n_pits * (4.0 / 3.0) * kPi * std::pow(pit_radius, 3);
    if (std::abs(cap - lower_capacity()) > 1e-6 * lower_capacity())
      throw std::invalid_argument("pit_radius inconsistent with lower capacity");
  }

  // base radius such that the frustum holds v_total at fill height h_up_fill_max
  if (r_base <= 0.0) {
    const double H = h_up_fill_max;
    const double a = kPi * H;
    const double b = kPi * slope_m * H * H;
    const double cc = kPi * slope_m * slope_m / 3.0 * H * H * H - v_total;
    const double disc = b * b - 4.0 * a * cc;
    if (disc <= 0.0) throw std::invalid_argument("frustum geometry unsolvable");
    r_base = (-b + std::sqrt(disc)) / (2.0 * a);
  }
  if (std::abs(v_up(h_up_fill_max, *this) - v_total) > 1e-6 * v_total)
    throw std::invalid_argument("r_base inconsistent with upper capacity");

  head_offset = 0.0;
  const double raw_at_init = gross_head_unchecked(v_init, *this);
  head_offset = h_init - raw_at_init;

  // head-feasible volume window; gross head is strictly decreasing in v_low
  const double h_at_empty = gross_head_unchecked(0.0, *this);
  const double h_at_full = gross_head_unchecked(lower_capacity(), *this);
  v_low_feas_min = (h_at_empty > h_max) ? v_of_head(h_max, *this) : 0.0;
  v_low_feas_max =
      (h_at_full < h_min) ? v_of_head(h_min, *this) : lower_capacity();
}

PlantConfig default_config() {
  PlantConfig c;
  c.finalize();
  return c;
}

PlantConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file " + path);
  PlantConfig c;
  std::map<std::string, double*> keys = {
      {"h_min", &c.h_min},         {"h_max", &c.h_max},
      {"h_init", &c.h_init},       {"v_init", &c.v_init},
      {"v_target", &c.v_target},   {"v_total", &c.v_total},
      {"c_op", &c.c_op},           {"dt_s", &c.dt_s},
      {"slope_m", &c.slope_m},     {"pit_radius", &c.pit_radius},
      {"r_base", &c.r_base},       {"rho", &c.rho},
      {"g", &c.g},                 {"h_up_fill_max", &c.h_up_fill_max}};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key == "n_pits") {
      c.n_pits = static_cast<int>(parse_double(val, "config key n_pits"));
      continue;
    }
    auto it = keys.find(key);
    if (it == keys.end())
      throw std::invalid_argument("unknown config key '" + key + "' (line " +
                                  std::to_string(lineno) + ")");
    *it->second = parse_double(val, "config key " + key);
  }
  c.finalize();
  return c;
}

void save_config(const PlantConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write config file " + path);
  out << "h_min = " << format_double(c.h_min) << "\n";
  out << "h_max = " << format_double(c.h_max) << "\n";
  out << "h_init = " << format_double(c.h_init) << "\n";
  out << "v_init = " << format_double(c.v_init) << "\n";
  out << "v_target = " << format_double(c.v_target) << "\n";
  out << "v_total = " << format_double(c.v_total) << "\n";
  out << "c_op = " << format_double(c.c_op) << "\n";
  out << "dt_s = " << format_double(c.dt_s) << "\n";
  out << "slope_m = " << format_double(c.slope_m) << "\n";
  out << "n_pits = " << c.n_pits << "\n";
  out << "pit_radius = " << format_double(c.pit_radius) << "\n";
  out << "r_base = " << format_double(c.r_base) << "\n";
  out << "h_up_fill_max = " << format_double(c.h_up_fill_max) << "\n";
  out << "rho = " << format_double(c.rho) << "\n";
  out << "g = " << format_double(c.g) << "\n";
}

// ---------------------------------------------------------------------------
// reservoir geometry

double v_up(double h_up, const PlantConfig& c) {
  const double lim = c.h_up_fill_max;
  if (h_up < -1e-9 * lim || h_up > lim * (1.0 + 1e-9))
    throw std::domain_error("upper fill height out of range");
  h_up = std::clamp(h_up, 0.0, lim);
  const double r = c.r_base, m = c.slope_m;
  return kPi * r * r * h_up + kPi * m * r * h_up * h_up +
         kPi * m * m / 3.0 * h_up * h_up * h_up;
}

double v_up_deriv(double h_up, const PlantConfig& c) {
  const double r = c.r_base, m = c.slope_m;
  const double s = r + m * h_up;
  return kPi * s * s;
}

double v_low(double h_low, const PlantConfig& c) {
  const double lim = 2.0 * c.pit_radius;
  if (h_low < -1e-9 * lim || h_low > lim * (1.0 + 1e-9))
    throw std::domain_error("lower fill height out of range");
  h_low = std::clamp(h_low, 0.0, lim);
  const double n = c.n_pits, R = c.pit_radius;
  return n * kPi * R * h_low * h_low - n * kPi / 3.0 * h_low * h_low * h_low;
}

double v_low_deriv(double h_low, const PlantConfig& c) {
  const double n = c.n_pits, R = c.pit_radius;
  return n * kPi * h_low * (2.0 * R - h_low);
}

namespace {

// Safeguarded Newton for a strictly monotone increasing f on [lo, hi].
template <typename F, typename DF>
double invert_monotone(double target, double lo, double hi, F f, DF df,
                       double res_tol) {
  double flo = f(lo) - target;
  double fhi = f(hi) - target;
  if (flo > res_tol || fhi < -res_tol)
    throw std::domain_error("inversion target outside range");
  if (flo >= 0.0) return lo;
  if (fhi <= 0.0) return hi;
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double r = f(x) - target;
    if (std::abs(r) <= res_tol) {
      // one polishing step when the slope allows it
      const double d = df(x);
      if (d > 0.0) {
        const double xn = std::clamp(x - r / d, lo, hi);
        if (std::abs(f(xn) - target) < std::abs(r)) x = xn;
      }
      return x;
    }
    if (r > 0.0) hi = x; else lo = x;
    const double d = df(x);
    double xn = (d > 0.0) ? x - r / d : 0.5 * (lo + hi);
    if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
    if (std::abs(xn - x) < 1e-15 * (1.0 + std::abs(x))) return xn;
    x = xn;
  }
  return x;
}

}  // namespace

double invert_v_up(double v, const PlantConfig& c) {
  const double cap = v_up(c.h_up_fill_max, c);
  if (v < -1e-9 * cap || v > cap * (1.0 + 1e-9))
    throw std::domain_error("upper volume out of range");
  v = std::clamp(v, 0.0, cap);
  return invert_monotone(
      v, 0.0, c.h_up_fill_max, [&](double h) { return v_up(h, c); },
      [&](double h) { return v_up_deriv(h, c); }, 1e-12 * std::max(cap, 1.0));
}

double invert_v_low(double v, const PlantConfig& c) {
  const double cap = c.lower_capacity();
  if (v < -1e-9 * cap || v > cap * (1.0 + 1e-9))
    throw std::domain_error("lower volume out of range");
  v = std::clamp(v, 0.0, cap);
  return invert_monotone(
      v, 0.0, 2.0 * c.pit_radius, [&](double h) { return v_low(h, c); },
      [&](double h) { return v_low_deriv(h, c); }, 1e-12 * std::max(cap, 1.0));
}

double gross_head_unchecked(double v_low_vol, const PlantConfig& c) {
  const double h_up = invert_v_up(c.v_total - v_low_vol, c);
  const double h_low = invert_v_low(v_low_vol, c);
  return h_up - h_low + c.head_offset;
}

double gross_head(double v_low_vol, const PlantConfig& c) {
  if (v_low_vol < -1e-9 * c.v_total || v_low_vol > c.v_total * (1.0 + 1e-9))
    throw std::domain_error("lower volume out of range");
  const double h = gross_head_unchecked(v_low_vol, c);
  const double slack = 1e-9 * (c.h_max - c.h_min);
  if (h < c.h_min - slack || h > c.h_max + slack)
    throw std::domain_error("gross head " + format_double(h) +
                            " outside [" + format_double(c.h_min) + ", " +
                            format_double(c.h_max) + "]");
  return h;
}

namespace {

// keeps derivative evaluations off the degenerate sphere endpoints
double clamp_fill(double b, double lim) {
  const double eps = 1e-7 * lim;
  return std::clamp(b, eps, lim - eps);
}

}  // namespace

double gross_head_deriv(double v_low_vol, const PlantConfig& c) {
  const double a = invert_v_up(c.v_total - v_low_vol, c);
  const double b =
      clamp_fill(invert_v_low(v_low_vol, c), 2.0 * c.pit_radius);
  return -1.0 / v_up_deriv(a, c) - 1.0 / v_low_deriv(b, c);
}

double gross_head_deriv2(double v_low_vol, const PlantConfig& c) {
  const double a = invert_v_up(c.v_total - v_low_vol, c);
  const double b =
      clamp_fill(invert_v_low(v_low_vol, c), 2.0 * c.pit_radius);
  const double up = v_up_deriv(a, c);
  const double lp = v_low_deriv(b, c);
  const double upp = 2.0 * kPi * c.slope_m * (c.r_base + c.slope_m * a);
  const double lpp = c.n_pits * kPi * (2.0 * c.pit_radius - 2.0 * b);
  // d/dv [-1/u'(a)] with da/dv = -1/u';  d/dv [-1/l'(b)] with db/dv = 1/l'
  return -upp / (up * up * up) + lpp / (lp * lp * lp);
}

double v_of_head(double h, const PlantConfig& c) {
  const double h_lo = gross_head_unchecked(c.v_total, c);
  const double h_hi = gross_head_unchecked(0.0, c);
  const double slack = 1e-9 * (c.h_max - c.h_min);
  if (h < h_lo - slack || h > h_hi + slack)
    throw std::domain_error("head not reachable by any volume split");
  h = std::clamp(h, h_lo, h_hi);
  // gross head decreases in v; invert the negated map
  return invert_monotone(
      -h, 0.0, c.v_total,
      [&](double v) { return -gross_head_unchecked(v, c); },
      [&](double v) { return -gross_head_deriv(v, c); },
      1e-13 * (c.h_max - c.h_min));
}

double v_of_head_deriv(double h, const PlantConfig& c) {
  const double v = v_of_head(h, c);
  return 1.0 / gross_head_deriv(v, c);
}

double v_of_head_deriv2(double h, const PlantConfig& c) {
  const double v = v_of_head(h, c);
  const double hp = gross_head_deriv(v, c);
  const double hpp = gross_head_deriv2(v, c);
  return -hpp / (hp * hp * hp);
}

// ---------------------------------------------------------------------------
// UPC polynomial surrogate

const std::vector<double>& UpcModel::coefs(Mode m) const {
  if (m == Mode::Turbine) return coef_turbine;
  if (m == Mode::Pump) return coef_pump;
  throw std::invalid_argument("idle mode has no unit performance curve");
}

double poly_eval(const std::vector<double>& coef, double x) {
  double acc = 0.0;
  for (size_t i = coef.size(); i-- > 0;) acc = acc * x + coef[i];
  return acc;
}

double poly_deriv_eval(const std::vector<double>& coef, double x) {
  double acc = 0.0;
  for (size_t i = coef.size(); i-- > 1;)
    acc = acc * x + coef[i] * static_cast<double>(i);
  return acc;
}

double envelope_min(const UpcModel& m, Mode mode, double h) {
  if (mode == Mode::Turbine) return poly_eval(m.pmin_turbine, h);
  if (mode == Mode::Pump) return poly_eval(m.pmin_pump, h);
  throw std::invalid_argument("idle mode has no power envelope");
}

double envelope_max(const UpcModel& m, Mode mode, double h) {
  if (mode == Mode::Turbine) return poly_eval(m.pmax_turbine, h);
  if (mode == Mode::Pump) return poly_eval(m.pmax_pump, h);
  throw std::invalid_argument("idle mode has no power envelope");
}

namespace {

void check_upc_args(const UpcModel& m, Mode mode, double h,
                    const PlantConfig& c) {
  if (mode == Mode::Idle)
    throw std::invalid_argument("upc undefined for idle mode");
  const double slack = 1e-9 * (c.h_max - c.h_min);
  if (h < c.h_min - slack || h > c.h_max + slack)
    throw std::domain_error("head out of UPC range");
  if (m.coefs(mode).empty())
    throw std::invalid_argument("model has no coefficients for mode");
}

}  // namespace

double upc_eval(const UpcModel& m, Mode mode, double p, double h,
                const PlantConfig& c) {
  check_upc_args(m, mode, h, c);
  const auto& coef = m.coefs(mode);
  const int d = m.degree;
  double acc = 0.0;
  double pa = 1.0;
  int k = 0;
  for (int a = 0; a <= d; ++a) {
    double hb = 1.0;
    double row = 0.0;
    for (int b = 0; b <= d - a; ++b) {
      row += coef[k++] * hb;
      hb *= h;
    }
    acc += row * pa;
    pa *= p;
  }
  return acc;
}

UpcGrad upc_grad(const UpcModel& m, Mode mode, double p, double h,
                 const PlantConfig& c) {
  check_upc_args(m, mode, h, c);
  const auto& coef = m.coefs(mode);
  const int d = m.degree;
  UpcGrad g;
  int k = 0;
  for (int a = 0; a <= d; ++a) {
    for (int b = 0; b <= d - a; ++b) {
      const double cab = coef[k++];
      if (a > 0) g.dq_dp += cab * a * std::pow(p, a - 1) * std::pow(h, b);
      if (b > 0) g.dq_dh += cab * std::pow(p, a) * b * std::pow(h, b - 1);
    }
  }
  return g;
}

UpcHess upc_hess(const UpcModel& m, Mode mode, double p, double h,
                 const PlantConfig& c) {
  check_upc_args(m, mode, h, c);
  const auto& coef = m.coefs(mode);
  const int d = m.degree;
  UpcHess hs;
  int k = 0;
  for (int a = 0; a <= d; ++a) {
    for (int b = 0; b <= d - a; ++b) {
      const double cab = coef[k++];
      if (a > 1)
        hs.d2q_dp2 += cab * a * (a - 1) * std::pow(p, a - 2) * std::pow(h, b);
      if (a > 0 && b > 0)
        hs.d2q_dpdh += cab * a * b * std::pow(p, a - 1) * std::pow(h, b - 1);
      if (b > 1)
        hs.d2q_dh2 += cab * std::pow(p, a) * b * (b - 1) * std::pow(h, b - 2);
    }
  }
  return hs;
}

double upc_power_for_flow(const UpcModel& m, Mode mode, double q, double h,
                          const PlantConfig& c) {
  double lo = envelope_min(m, mode, h);
  double hi = envelope_max(m, mode, h);
  double qlo = upc_eval(m, mode, lo, h, c);
  double qhi = upc_eval(m, mode, hi, h, c);
  const double span = std::abs(qhi - qlo);
  if (q < qlo - 1e-9 * span || q > qhi + 1e-9 * span)
    throw std::domain_error("flow target outside the envelope flow range");
  q = std::clamp(q, std::min(qlo, qhi), std::max(qlo, qhi));
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double qm = upc_eval(m, mode, mid, h, c);
    const double r = qm - q;
    if (std::abs(r) <= 1e-12 * std::max(1.0, std::abs(q))) return mid;
    // flow increases with power in both modes under the sign convention
    if (r > 0.0) hi = mid; else lo = mid;
    if (hi - lo < 1e-14 * (1.0 + std::abs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

void UpcModel::validate(const PlantConfig& c) const {
  const int n = coef_count(degree);
  if (static_cast<int>(coef_turbine.size()) != n ||
      static_cast<int>(coef_pump.size()) != n)
    throw std::invalid_argument("coefficient table size mismatch");
  for (int i = 0; i <= 200; ++i) {
    const double h = c.h_min + (c.h_max - c.h_min) * i / 200.0;
    const double tmin = poly_eval(pmin_turbine, h);
    const double tmax = poly_eval(pmax_turbine, h);
    const double pmin = poly_eval(pmin_pump, h);
    const double pmax = poly_eval(pmax_pump, h);
    if (!(tmin > 0.0) || !(tmax >= tmin))
      throw std::invalid_argument("turbine envelope violates sign/order");
    if (!(pmax < 0.0) || !(pmin <= pmax))
      throw std::invalid_argument("pump envelope violates sign/order");
  }
}

// ---------------------------------------------------------------------------
// least-squares fit

namespace {

struct ModeFit {
  std::vector<double> coef;
  double r2 = 0.0;
};

ModeFit fit_mode(const std::vector<UpcSample>& samples, Mode mode, int degree,
                 const std::string& mode_label) {
  std::vector<const UpcSample*> rows;
  for (const auto& s : samples)
    if (s.mode == mode) rows.push_back(&s);
  const int ncoef = UpcModel::coef_count(degree);
  if (static_cast<int>(rows.size()) < ncoef)
    throw numeric_error("upc fit: mode " + mode_label + " has " +
                        std::to_string(rows.size()) + " samples, need >= " +
                        std::to_string(ncoef));

  // scaled monomial basis for conditioning; converted back exactly below
  double sp = 0.0, sh = 0.0;
  for (const auto* s : rows) {
    sp = std::max(sp, std::abs(s->p));
    sh = std::max(sh, std::abs(s->h));
  }
  if (sp == 0.0) sp = 1.0;
  if (sh == 0.0) sh = 1.0;

  Eigen::MatrixXd A(rows.size(), ncoef);
  Eigen::VectorXd y(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    const double ps = rows[i]->p / sp;
    const double hs = rows[i]->h / sh;
    int k = 0;
    double pa = 1.0;
    for (int a = 0; a <= degree; ++a) {
      double hb = 1.0;
      for (int b = 0; b <= degree - a; ++b) {
        A(i, k++) = pa * hb;
        hb *= hs;
      }
      pa *= ps;
    }
    y(i) = rows[i]->q;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < ncoef)
    throw numeric_error("upc fit: rank-deficient design matrix for mode " +
                        mode_label + " (samples must span a 2-D region)");
  Eigen::VectorXd csc = qr.solve(y);

  ModeFit out;
  out.coef.resize(ncoef);
  int k = 0;
  double spa = 1.0;
  for (int a = 0; a <= degree; ++a) {
    double shb = 1.0;
    for (int b = 0; b <= degree - a; ++b) {
      out.coef[k] = csc(k) / (spa * shb);
      ++k;
      shb *= sh;
    }
    spa *= sp;
  }

  const Eigen::VectorXd resid = A * csc - y;
  const double ss_res = resid.squaredNorm();
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  out.r2 = (ss_tot > 0.0) ? 1.0 - ss_res / ss_tot : 1.0;
  return out;
}

std::vector<double> fit_envelope(const std::vector<UpcSample>& samples,
                                 Mode mode, bool want_max, int degree,
                                 const std::string& what) {
  // group samples by head value, then fit the per-head extreme power
  std::map<long long, std::pair<double, std::pair<double, double>>> groups;
  for (const auto& s : samples) {
    if (s.mode != mode) continue;
    const long long key = llround(s.h * 1e7);
    auto it = groups.find(key);
    if (it == groups.end()) {
      groups[key] = {s.h, {s.p, s.p}};
    } else {
      it->second.second.first = std::min(it->second.second.first, s.p);
      it->second.second.second = std::max(it->second.second.second, s.p);
    }
  }
  const int ncoef = degree + 1;
  if (static_cast<int>(groups.size()) < ncoef)
    throw numeric_error("envelope fit: need >= " + std::to_string(ncoef) +
                        " distinct head values for " + what);
  double sh = 0.0;
  for (const auto& [key, g] : groups) sh = std::max(sh, std::abs(g.first));
  if (sh == 0.0) sh = 1.0;
  Eigen::MatrixXd A(groups.size(), ncoef);
  Eigen::VectorXd y(groups.size());
  int i = 0;
  for (const auto& [key, g] : groups) {
    const double hs = g.first / sh;
    double hb = 1.0;
    for (int b = 0; b < ncoef; ++b) {
      A(i, b) = hb;
      hb *= hs;
    }
    y(i) = want_max ? g.second.second : g.second.first;
    ++i;
  }
  Eigen::VectorXd csc = A.colPivHouseholderQr().solve(y);
  std::vector<double> coef(ncoef);
  double shb = 1.0;
  for (int b = 0; b < ncoef; ++b) {
    coef[b] = csc(b) / shb;
    shb *= sh;
  }
  return coef;
}

}  // namespace

UpcModel upc_fit(const std::vector<UpcSample>& samples, const UpcFitOptions& opt,
                 const PlantConfig& c) {
  (void)c;
  UpcModel m;
  m.degree = opt.degree;
  bool has_turbine = false, has_pump = false;
  for (const auto& s : samples) {
    if (s.mode == Mode::Turbine) has_turbine = true;
    if (s.mode == Mode::Pump) has_pump = true;
    if (s.mode == Mode::Idle)
      throw std::invalid_argument("idle samples not allowed in upc fit");
  }
  if (has_turbine) {
    auto f = fit_mode(samples, Mode::Turbine, opt.degree, "turbine");
    m.coef_turbine = std::move(f.coef);
    m.r2_turbine = f.r2;
    m.pmin_turbine =
        fit_envelope(samples, Mode::Turbine, false, opt.envelope_degree,
                     "turbine p_min");
    m.pmax_turbine =
        fit_envelope(samples, Mode::Turbine, true, opt.envelope_degree,
                     "turbine p_max");
  }
  if (has_pump) {
    auto f = fit_mode(samples, Mode::Pump, opt.degree, "pump");
    m.coef_pump = std::move(f.coef);
    m.r2_pump = f.r2;
    m.pmin_pump = fit_envelope(samples, Mode::Pump, false, opt.envelope_degree,
                               "pump p_min");
    m.pmax_pump = fit_envelope(samples, Mode::Pump, true, opt.envelope_degree,
                               "pump p_max");
  }
  if (!has_turbine && !has_pump)
    throw std::invalid_argument("no samples supplied to upc fit");
  return m;
}

// ---------------------------------------------------------------------------
// synthetic dataset

double synth_envelope_min(Mode mode, double h, const PlantConfig& c) {
  const double kt = kRefEfficiency * c.rho * c.g / 1e6;
  const double kp = c.rho * c.g / (kRefEfficiency * 1e6);
  if (mode == Mode::Turbine) return kt * kRatedFlowMin * h;
  if (mode == Mode::Pump) return -kp * kRatedFlowMax * h;
  throw std::invalid_argument("idle mode has no envelope");
}

double synth_envelope_max(Mode mode, double h, const PlantConfig& c) {
  const double kt = kRefEfficiency * c.rho * c.g / 1e6;
  const double kp = c.rho * c.g / (kRefEfficiency * 1e6);
  if (mode == Mode::Turbine) return kt * kRatedFlowMax * h;
  if (mode == Mode::Pump) return -kp * kRatedFlowMin * h;
  throw std::invalid_argument("idle mode has no envelope");
}

double synth_efficiency(Mode mode, double p, double h, const PlantConfig& c) {
  const double pc =
      0.5 * (synth_envelope_min(mode, h, c) + synth_envelope_max(mode, h, c));
  const double u = (p - pc) / pc;
  return 0.93 - 0.10 * u * u;
}

double synth_flow(Mode mode, double p, double h, double eta,
                  const PlantConfig& c) {
  if (mode == Mode::Turbine) return p * 1e6 / (eta * c.rho * c.g * h);
  if (mode == Mode::Pump) return -std::abs(p) * 1e6 * eta / (c.rho * c.g * h);
  throw std::invalid_argument("idle mode has no flow");
}

std::vector<UpcSample> synth_upc_dataset(const PlantConfig& c,
                                         const SynthGridSpec& spec) {
  if (spec.n_h < 2 || spec.n_p < 2)
    throw std::invalid_argument("synthetic grid needs >= 2 points per axis");
  std::vector<UpcSample> out;
  out.reserve(2 * spec.n_h * spec.n_p);
  for (Mode mode : {Mode::Turbine, Mode::Pump}) {
    for (int i = 0; i < spec.n_h; ++i) {
      const double h = c.h_min + (c.h_max - c.h_min) * i / (spec.n_h - 1.0);
      const double plo = synth_envelope_min(mode, h, c);
      const double phi = synth_envelope_max(mode, h, c);
      for (int j = 0; j < spec.n_p; ++j) {
        const double p = plo + (phi - plo) * j / (spec.n_p - 1.0);
        UpcSample s;
        s.mode = mode;
        s.p = p;
        s.h = h;
        s.q = synth_flow(mode, p, h, synth_efficiency(mode, p, h, c), c);
        out.push_back(s);
      }
    }
  }
  return out;
}

void save_upc_samples(const std::vector<UpcSample>& samples,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "mode,p_mw,h_m,q_m3s\n";
  for (const auto& s : samples)
    out << mode_name(s.mode) << ',' << format_double(s.p) << ','
        << format_double(s.h) << ',' << format_double(s.q) << '\n';
}

std::vector<UpcSample> load_upc_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("empty sample file " + path);
  if (trim(line) != "mode,p_mw,h_m,q_m3s")
    throw std::invalid_argument("bad sample header in " + path);
  std::vector<UpcSample> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected 4 fields");
    UpcSample s;
    s.mode = mode_from_name(trim(f[0]));
    s.p = parse_double(f[1], "p_mw");
    s.h = parse_double(f[2], "h_m");
    s.q = parse_double(f[3], "q_m3s");
    out.push_back(s);
  }
  return out;
}

void save_upc_model(const UpcModel& m, const std::string& path) {
  nlohmann::json j;
  j["schema"] = 1;
  j["degree"] = m.degree;
  j["turbine"] = {{"coef", m.coef_turbine},
                  {"pmin", m.pmin_turbine},
                  {"pmax", m.pmax_turbine},
                  {"r2", m.r2_turbine}};
  j["pump"] = {{"coef", m.coef_pump},
               {"pmin", m.pmin_pump},
               {"pmax", m.pmax_pump},
               {"r2", m.r2_pump}};
  j["turbine_positive"] = m.turbine_positive;
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

UpcModel load_upc_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("schema", 0) != 1)
    throw std::invalid_argument("unsupported model schema in " + path);
  UpcModel m;
  m.degree = j.at("degree").get<int>();
  m.coef_turbine = j.at("turbine").at("coef").get<std::vector<double>>();
  m.pmin_turbine = j.at("turbine").at("pmin").get<std::vector<double>>();
  m.pmax_turbine = j.at("turbine").at("pmax").get<std::vector<double>>();
  m.r2_turbine = j.at("turbine").at("r2").get<double>();
  m.coef_pump = j.at("pump").at("coef").get<std::vector<double>>();
  m.pmin_pump = j.at("pump").at("pmin").get<std::vector<double>>();
  m.pmax_pump = j.at("pump").at("pmax").get<std::vector<double>>();
  m.r2_pump = j.at("pump").at("r2").get<double>();
  m.turbine_positive = j.value("turbine_positive", true);
  return m;
}

// ---------------------------------------------------------------------------

void Trajectory::resize(int T) {
  p.assign(T, 0.0);
  q.assign(T, 0.0);
  h.assign(T, 0.0);
  v.assign(T, 0.0);
  mode.assign(T, Mode::Idle);
}

void Trajectory::validate() const {
  const size_t T = p.size();
  if (q.size() != T || h.size() != T || v.size() != T || mode.size() != T)
    throw std::invalid_argument("trajectory arrays have mismatched lengths");
  for (size_t t = 0; t < T; ++t) {
    if (!std::isfinite(p[t]) || !std::isfinite(q[t]) || !std::isfinite(h[t]) ||
        !std::isfinite(v[t]))
      throw std::invalid_argument("trajectory has non-finite entries");
    switch (mode[t]) {
      case Mode::Idle:
        if (p[t] != 0.0 || q[t] != 0.0)
          throw std::invalid_argument("idle hour with nonzero power or flow");
        break;
      case Mode::Turbine:
        if (!(p[t] > 0.0))
          throw std::invalid_argument("turbine hour with nonpositive power");
        break;
      case Mode::Pump:
        if (!(p[t] < 0.0))
          throw std::invalid_argument("pump hour with nonnegative power");
        break;
    }
  }
}

}  // namespace uphes
