#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <vector>

#include "uphes/approx.hpp"
#include "uphes/plant.hpp"

namespace uphes {

// prescribed interval for neural penalty weights
constexpr double kWeightLo = 1e-3;
constexpr double kWeightHi = 1e3;

// Per-hour trust-region penalty weights plus the annealing schedule.
struct PenaltyWeights {
  Eigen::VectorXd w_p, w_q, w_h;  // length T, positive
  double growth = 2.0;            // gamma > 1
  int iterations = 3;             // K >= 1

  int horizon() const { return static_cast<int>(w_p.size()); }
  // enforces the prescribed interval [kWeightLo, kWeightHi] and gamma > 1
  void validate() const;
  // entries multiplied by growth^k (annealed copies may exceed the interval)
  PenaltyWeights scaled(int k) const;

  static PenaltyWeights constant(int T, double value, double growth_factor,
                                 int iterations_count);
};

// --------------------------------------------------------------------------
// low-level dense convex QP:  min 1/2 x'Hx + g'x  s.t.  Ae x = be, Ci x <= di

enum class QpStatus { Optimal, Infeasible, MaxIterations };

const char* qp_status_name(QpStatus s);

struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd Ae;
  Eigen::VectorXd be;
  Eigen::MatrixXd Ci;
  Eigen::VectorXd di;
};

struct QpSolverOptions {
  double tol = 1e-10;       // relative residual tolerance
  double mu_tol = 1e-11;    // complementarity tolerance
  int max_iterations = 100;
};

struct QpRawSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd y;    // equality duals
  Eigen::VectorXd lam;  // inequality duals (>= 0)
  Eigen::VectorXd s;    // slacks (>= 0)
  QpStatus status = QpStatus::MaxIterations;
  int iterations = 0;
  double kkt_residual = 0.0;
};

// Mehrotra predictor-corrector interior point method. Deterministic for
// fixed inputs. Infeasibility is certified via an elastic phase-1 solve.
QpRawSolution solve_qp_raw(const QpProblem& qp, const QpSolverOptions& opt);

// --------------------------------------------------------------------------
// penalized scheduling QP (mode-locked refinement step)

enum class RowKind : int {
  FlowLink = 0,      // q_t - xi_q . [p_t h_t 1] = 0
  VolumeLink,        // v_t - xi_v . [h_t 1] = 0
  VolumeRecursion,   // v_t - v_{t-1} - dt q_t = 0
  IdlePower,         // p_t = 0
  HeadUpper,
  HeadLower,
  TerminalVolume,
  EnvelopeUpper,     // p_t <= beta_max . [h_t 1]
  EnvelopeLower      // p_t >= beta_min . [h_t 1]
};

struct RowInfo {
  RowKind kind;
  int hour;  // 0-based
};

struct QpInstance {
  int T = 0;
  QpProblem prob;  // minimization form, volumes in scaled units
  std::vector<RowInfo> eq_rows, ineq_rows;
  LocalLinearization lin;
  Eigen::VectorXd prices;
  Eigen::VectorXd w_p, w_q, w_h;  // weights used in this instance
  double dt_hours = 1.0;
  double dt_seconds = 3600.0;
  double c_op = 0.0;
  double obj_const = 0.0;  // constant dropped from the minimization form

  int idx_p(int t) const { return t; }
  int idx_q(int t) const { return T + t; }
  int idx_h(int t) const { return 2 * T + t; }
  int idx_v(int t) const { return 3 * T + t; }
  int num_vars() const { return 4 * T; }

  // maximization objective of a primal point in natural units
  double objective(const Eigen::VectorXd& x_natural) const;
};

// internal volume scaling (m^3 per QP volume unit) for conditioning
constexpr double kVolUnit = 1000.0;

QpInstance build_penalized_qp(const Eigen::VectorXd& prices,
                              const LocalLinearization& lin,
                              const PenaltyWeights& w, const PlantConfig& c,
                              const GlobalLinearModel& env);

struct QpSolution {
  Trajectory trajectory;     // natural units, role Refined
  Eigen::VectorXd x;         // raw primal (scaled volumes)
  Eigen::VectorXd eq_duals;
  Eigen::VectorXd ineq_duals;
  Eigen::VectorXd slacks;
  QpStatus status = QpStatus::MaxIterations;
  int iterations = 0;
  double kkt_residual = 0.0;
  double objective = 0.0;    // maximization value
};

QpSolution solve_qp(const QpInstance& qp, const QpSolverOptions& opt = {});

// d(primal)/d(w) for w ordered [w_p; w_q; w_h] (3T columns), active
// inequality set frozen at the solution. Primal rows are in natural units.
struct QpJacobian {
  Eigen::MatrixXd dx_dw;  // 4T x 3T
  bool degenerate = false;
};

QpJacobian differentiate_qp(const QpSolution& sol, const QpInstance& qp);

// human-readable dump of objective and constraint rows
void dump_qp(const QpInstance& qp, std::ostream& os);

// --------------------------------------------------------------------------
// recursive refinement with a reverse-mode tape

struct RefineStepRecord {
  QpInstance instance;
  QpSolution solution;
  double weight_scale = 1.0;  // gamma^k applied to the base weights
};

class RefineTape {
 public:
  // gradient of a scalar loss with respect to the flat weight vector
  // [w_p; w_q; w_h] given dL/d(final trajectory) components in natural
  // units (only p, q, h enter; pass zeros for unused parts)
  Eigen::VectorXd backward(const Eigen::VectorXd& dL_dp_final,
                           const UpcModel& model, const PlantConfig& c) const;

  std::vector<RefineStepRecord> steps;
};

struct RefineResult {
  Trajectory final;    // x_hat^(K)
  bool fallback = false;  // a QP failed; remaining iterations skipped
  int completed_steps = 0;
  RefineTape tape;
};

RefineResult recursive_refine(const Eigen::VectorXd& prices,
                              const Trajectory& warm,
                              const PenaltyWeights& w0, const UpcModel& model,
                              const PlantConfig& c,
                              const GlobalLinearModel& env,
                              const QpSolverOptions& opt = {});

}  // namespace uphes
