#include "uphes/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace uphes {

using Eigen::VectorXd;

double median_price(const VectorXd& prices) {
  std::vector<double> v(prices.data(), prices.data() + prices.size());
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  if (n == 0) throw std::invalid_argument("empty price vector");
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SimStep sim_step(double v_prev, double p_scheduled, const UpcModel& m,
                 const PlantConfig& c) {
  SimStep st;
  st.h = gross_head(v_prev, c);
  st.v_next = v_prev;
  const Mode mode = mode_of_power(p_scheduled);
  if (mode == Mode::Idle) return st;
  const double pl = envelope_min(m, mode, st.h);
  const double pu = envelope_max(m, mode, st.h);
  double p = p_scheduled;
  if (p < pl) {
    st.clamped_lo = true;
    st.requested = p;
    p = pl;
  } else if (p > pu) {
    st.clamped_hi = true;
    st.requested = p;
    p = pu;
  }
  const double q = upc_eval(m, mode, p, st.h, c);
  const double v_trial = v_prev + c.dt_s * q;
  const double v_slack = 1e-9 * c.v_total;
  if (v_trial < c.v_low_feas_min - v_slack ||
      v_trial > c.v_low_feas_max + v_slack) {
    st.forced = true;
    st.requested = v_trial;
    st.clamped_lo = st.clamped_hi = false;
    return st;
  }
  st.p = p;
  st.q = q;
  st.mode = mode;
  st.v_next = std::clamp(v_trial, c.v_low_feas_min, c.v_low_feas_max);
  return st;
}

double stage_profit(const SimStep& step, double p_scheduled, double lambda,
                    const PlantConfig& c) {
  const double dt = c.dt_h();
  const double shortfall = std::max(p_scheduled - step.p, 0.0);
  const double surplus = std::max(step.p - p_scheduled, 0.0);
  return dt * (lambda * step.p - c.c_op * step.p * step.p) -
         dt * lambda * (shortfall + 0.5 * surplus);
}

double terminal_vol_penalty(double v_end, double h_last, double lambda_median,
                            const PlantConfig& c) {
  const double excess = std::max(v_end - c.v_target, 0.0);
  return lambda_median * kVolPenaltyEfficiency * c.rho * c.g * h_last *
         excess / 3.6e9;
}

SimOutcome simulate(const VectorXd& p_schedule, const UpcModel& m,
                    const PlantConfig& c) {
  const int T = static_cast<int>(p_schedule.size());
  for (int t = 0; t < T; ++t)
    if (!std::isfinite(p_schedule(t)))
      throw std::invalid_argument("schedule has non-finite power");

  SimOutcome out;
  out.trajectory.resize(T);
  out.trajectory.role = Role::Simulated;
  double v_prev = c.v_init;
  for (int t = 0; t < T; ++t) {
    const SimStep st = sim_step(v_prev, p_schedule(t), m, c);
    out.trajectory.p[t] = st.p;
    out.trajectory.q[t] = st.q;
    out.trajectory.h[t] = st.h;
    out.trajectory.v[t] = st.v_next;
    out.trajectory.mode[t] = st.mode;
    if (st.clamped_lo)
      out.events.push_back({t, SimEventKind::ClampLow, st.requested, st.p});
    if (st.clamped_hi)
      out.events.push_back({t, SimEventKind::ClampHigh, st.requested, st.p});
    if (st.forced)
      out.events.push_back({t, SimEventKind::IdleForced, st.requested, v_prev});
    v_prev = st.v_next;
  }
  return out;
}

SimOutcome expost_profit(SimOutcome outcome, const VectorXd& p_schedule,
                         const VectorXd& prices, const PlantConfig& c) {
  const int T = outcome.trajectory.horizon();
  if (p_schedule.size() != T || prices.size() != T)
    throw std::invalid_argument("profit inputs have mismatched horizons");
  const double dt = c.dt_h();
  double revenue = 0.0, cost = 0.0, si = 0.0;
  for (int t = 0; t < T; ++t) {
    const double pt = outcome.trajectory.p[t];
    revenue += dt * prices(t) * pt;
    cost += dt * c.c_op * pt * pt;
    const double shortfall = std::max(p_schedule(t) - pt, 0.0);
    const double surplus = std::max(pt - p_schedule(t), 0.0);
    si += dt * prices(t) * (shortfall + 0.5 * surplus);
  }
  const double excess = std::max(outcome.trajectory.v[T - 1] - c.v_target, 0.0);
  const double h_last = outcome.trajectory.h[T - 1];
  const double vol = median_price(prices) * kVolPenaltyEfficiency * c.rho *
                     c.g * h_last * excess / 3.6e9;
  outcome.revenue = revenue;
  outcome.operating_cost = cost;
  outcome.si_penalty = si;
  outcome.vol_penalty = vol;
  outcome.profit = revenue - cost - si - vol;
  return outcome;
}

SimOutcome simulate_profit(const VectorXd& p_schedule, const VectorXd& prices,
                           const UpcModel& m, const PlantConfig& c) {
  return expost_profit(simulate(p_schedule, m, c), p_schedule, prices, c);
}

VectorXd profit_grad(const VectorXd& p_schedule, const VectorXd& prices,
                     const UpcModel& m, const PlantConfig& c) {
  const int T = static_cast<int>(p_schedule.size());
  const double dt = c.dt_h();

  SimOutcome out = simulate(p_schedule, m, c);
  const auto& x = out.trajectory;
  std::vector<bool> forced(T, false), clamped_lo(T, false),
      clamped_hi(T, false);
  for (const auto& e : out.events) {
    if (e.kind == SimEventKind::IdleForced) forced[e.hour] = true;
    if (e.kind == SimEventKind::ClampLow) clamped_lo[e.hour] = true;
    if (e.kind == SimEventKind::ClampHigh) clamped_hi[e.hour] = true;
  }
  std::vector<double> v_before(T);
  for (int t = 0; t < T; ++t) v_before[t] = (t == 0) ? c.v_init : x.v[t - 1];

  VectorXd grad = VectorXd::Zero(T);
  std::vector<double> a_v(T, 0.0);  // adjoints of end-of-hour volumes

  const double lam_med = median_price(prices);
  const double excess = x.v[T - 1] - c.v_target;
  const double kvol = lam_med * kVolPenaltyEfficiency * c.rho * c.g / 3.6e9;
  if (excess > 0.0) {
    a_v[T - 1] += -kvol * x.h[T - 1];
    if (T >= 2)  // the final operating head is set by the volume before it
      a_v[T - 2] += -kvol * excess * gross_head_deriv(v_before[T - 1], c);
  }

  for (int t = T - 1; t >= 0; --t) {
    const bool idle = mode_of_power(p_schedule(t)) == Mode::Idle;
    const double lam = prices(t);
    const double diff = p_schedule(t) - x.p[t];
    // d(SI_t)/d(diff); shortfall side at the tie
    const double dsi_ddiff =
        dt * lam * (diff > 0.0 ? 1.0 : diff < 0.0 ? -0.5 : 1.0);
    if (idle || forced[t]) {
      grad(t) += -dsi_ddiff;  // only the imbalance term sees the schedule
      if (t >= 1) a_v[t - 1] += a_v[t];
      continue;
    }
    const Mode mode = x.mode[t];
    double d_pt = dt * (lam - 2.0 * c.c_op * x.p[t]);  // revenue and cost
    d_pt += dsi_ddiff;  // SI via diff = p_hat - p_realized
    double d_ht = 0.0;
    const double d_q = a_v[t] * c.dt_s;
    const auto gr = upc_grad(m, mode, x.p[t], x.h[t], c);
    d_pt += d_q * gr.dq_dp;
    d_ht += d_q * gr.dq_dh;
    grad(t) += -dsi_ddiff;  // direct SI term
    if (clamped_lo[t] || clamped_hi[t]) {
      // realized power rides the envelope; sensitivity moves to the head
      const auto& env_coef =
          clamped_hi[t] ? (mode == Mode::Turbine ? m.pmax_turbine : m.pmax_pump)
                        : (mode == Mode::Turbine ? m.pmin_turbine : m.pmin_pump);
      d_ht += d_pt * poly_deriv_eval(env_coef, x.h[t]);
    } else {
      grad(t) += d_pt;
    }
    if (t >= 1) {
      a_v[t - 1] += a_v[t];
      a_v[t - 1] += d_ht * gross_head_deriv(v_before[t], c);
    }
  }
  return grad;
}

Trajectory integrate_schedule(const VectorXd& p_schedule, const UpcModel& m,
                              const PlantConfig& c) {
  const int T = static_cast<int>(p_schedule.size());
  Trajectory x;
  x.resize(T);
  x.role = Role::WarmStart;
  const double v_lo = c.v_low_feas_min;
  const double v_hi = c.v_low_feas_max;
  double v_prev = c.v_init;
  for (int t = 0; t < T; ++t) {
    const Mode mode = mode_of_power(p_schedule(t));
    if (mode == Mode::Idle) {
      x.v[t] = v_prev;
      x.h[t] = gross_head(v_prev, c);
      continue;
    }
    double h = gross_head(v_prev, c);
    double p = 0.0, q = 0.0, v = v_prev;
    for (int it = 0; it < 200; ++it) {
      p = std::clamp(p_schedule(t), envelope_min(m, mode, h),
                     envelope_max(m, mode, h));
      q = upc_eval(m, mode, p, h, c);
      v = v_prev + c.dt_s * q;
      if (v < v_lo || v > v_hi) {
        v = std::clamp(v, v_lo, v_hi);
        const double q_req = (v - v_prev) / c.dt_s;
        p = upc_power_for_flow(m, mode, q_req, h, c);  // may throw
        q = upc_eval(m, mode, p, h, c);
        v = v_prev + c.dt_s * q;
        v = std::clamp(v, v_lo, v_hi);
      }
      const double h_new = gross_head(v, c);
      if (std::abs(h_new - h) < 1e-11) {
        h = h_new;
        break;
      }
      h = h_new;
    }
    x.p[t] = p;
    x.q[t] = upc_eval(m, mode, p, h, c);
    x.h[t] = h;
    x.v[t] = v;
    x.mode[t] = mode;
    v_prev = v;
  }
  return x;
}

std::string sim_outcome_json(const SimOutcome& out) {
  nlohmann::json j;
  j["schema"] = 1;
  j["p_mw"] = out.trajectory.p;
  j["q_m3s"] = out.trajectory.q;
  j["h_m"] = out.trajectory.h;
  j["v_m3"] = out.trajectory.v;
  std::vector<std::string> modes;
  for (Mode m : out.trajectory.mode) modes.push_back(mode_name(m));
  j["mode"] = modes;
  j["revenue"] = out.revenue;
  j["operating_cost"] = out.operating_cost;
  j["si"] = out.si_penalty;
  j["vol"] = out.vol_penalty;
  j["profit"] = out.profit;
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : out.events) {
    const char* kind = e.kind == SimEventKind::ClampLow    ? "clamp_low"
                       : e.kind == SimEventKind::ClampHigh ? "clamp_high"
                                                           : "idle_forced";
    ev.push_back({{"hour", e.hour + 1},
                  {"kind", kind},
                  {"requested", e.requested},
                  {"applied", e.applied}});
  }
  j["events"] = ev;
  return j.dump();
}

void append_sim_outcome(const SimOutcome& out, const std::string& path) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw io_error("cannot write " + path);
  f << sim_outcome_json(out) << "\n";
}

}  // namespace uphes
