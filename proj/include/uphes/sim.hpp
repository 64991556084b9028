#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "uphes/plant.hpp"

namespace uphes {

// reference efficiency for converting terminal excess water to energy value
constexpr double kVolPenaltyEfficiency = 0.9;

enum class SimEventKind { ClampLow, ClampHigh, IdleForced };

struct SimEvent {
  int hour = 0;  // 0-based
  SimEventKind kind = SimEventKind::IdleForced;
  double requested = 0.0;  // scheduled power (MW) or trial volume (m^3)
  double applied = 0.0;
};

// Simulated trajectory under true nonlinear dynamics plus the ex-post
// profit decomposition. profit = revenue - operating_cost - si - vol.
struct SimOutcome {
  Trajectory trajectory;  // role Simulated
  double revenue = 0.0;
  double operating_cost = 0.0;
  double si_penalty = 0.0;
  double vol_penalty = 0.0;
  double profit = 0.0;
  std::vector<SimEvent> events;
};

// One hour of the sequential physics: mode from the sign of the scheduled
// power, power clamped to the head-dependent envelope, flow from the UPC,
// forward Euler volume update, idle forcing when the volume leaves the
// admissible window. Shared by the simulator and the desk-scale oracles.
struct SimStep {
  double p = 0.0;       // realized power
  double q = 0.0;       // realized flow
  double h = 0.0;       // operating head (from the entering volume)
  double v_next = 0.0;  // end-of-hour volume
  Mode mode = Mode::Idle;
  bool clamped_lo = false, clamped_hi = false, forced = false;
  double requested = 0.0;  // clamp request or trial volume for the event log
};

SimStep sim_step(double v_prev, double p_scheduled, const UpcModel& m,
                 const PlantConfig& c);

// hourly profit contribution of a step under the asymmetric settlement
double stage_profit(const SimStep& step, double p_scheduled, double lambda,
                    const PlantConfig& c);

// monetized value of terminal excess water at the median day-ahead rate
double terminal_vol_penalty(double v_end, double h_last, double lambda_median,
                            const PlantConfig& c);

// Sequential physics over the whole horizon. Total on finite inputs.
SimOutcome simulate(const Eigen::VectorXd& p_schedule, const UpcModel& m,
                    const PlantConfig& c);

// Fills the profit decomposition of a simulated outcome. The imbalance
// penalty charges shortfalls at lambda and credits half of surpluses,
// making net settlement equal scheduled-at-lambda minus 2*lambda*shortfall
// plus lambda/2*surplus.
SimOutcome expost_profit(SimOutcome outcome, const Eigen::VectorXd& p_schedule,
                         const Eigen::VectorXd& prices, const PlantConfig& c);

// simulate + expost_profit in one call
SimOutcome simulate_profit(const Eigen::VectorXd& p_schedule,
                           const Eigen::VectorXd& prices, const UpcModel& m,
                           const PlantConfig& c);

// Reverse-mode pathwise derivative of profit with respect to the scheduled
// powers. Active clamps and idle forcing propagate zero derivative from the
// schedule; points exactly at a clamp kink use the inactive-side convention.
Eigen::VectorXd profit_grad(const Eigen::VectorXd& p_schedule,
                            const Eigen::VectorXd& prices, const UpcModel& m,
                            const PlantConfig& c);

double median_price(const Eigen::VectorXd& prices);

// Builds a schedule trajectory satisfying the optimization-side relations
// exactly: q_t = f_UPC(p_t, h_t), v_t = v_{t-1} + dt q_t and v_t = f_vol(h_t)
// simultaneously. Powers are clamped into the envelope at the converged
// head; flows are reduced (power re-solved from the UPC) when the volume
// window binds. Throws std::domain_error when a binding hour cannot keep
// its mode (even the minimum in-mode flow overshoots the window).
Trajectory integrate_schedule(const Eigen::VectorXd& p_schedule,
                              const UpcModel& m, const PlantConfig& c);

// line-oriented JSON record of the outcome (one object per line)
std::string sim_outcome_json(const SimOutcome& out);
void append_sim_outcome(const SimOutcome& out, const std::string& path);

}  // namespace uphes
