#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "uphes/approx.hpp"
#include "uphes/plant.hpp"

namespace uphes {

enum class VarKind { Continuous, Binary, Sos2Weight };
enum class RowSense { LE, GE, EQ };

struct MipVar {
  std::string name;
  VarKind kind = VarKind::Continuous;
  double lb = 0.0;
  double ub = 0.0;
};

struct LinTerm {
  int var = 0;
  double coef = 0.0;
};

struct MipRow {
  std::string name;
  RowSense sense = RowSense::LE;
  double rhs = 0.0;
  std::vector<LinTerm> terms;
};

// objective += 0.5 * coef * x_i * x_j (QMATRIX convention; off-diagonal
// entries listed symmetrically)
struct QuadTerm {
  int var_i = 0, var_j = 0;
  double coef = 0.0;
};

struct Sos2Group {
  std::string name;
  std::vector<int> vars;       // consecutive interpolation weights
  std::vector<double> weights; // reference weights (knot order)
};

struct MipModel {
  std::string name = "uphes";
  bool maximize = true;
  std::string formulation;  // "GL" or "PW"
  int horizon = 0;
  std::vector<MipVar> vars;
  std::vector<double> obj_linear;
  std::vector<QuadTerm> obj_quad;
  std::vector<MipRow> rows;
  std::vector<Sos2Group> sos2;

  int find_var(const std::string& name) const;  // -1 when absent
  void normalize();  // canonical term order inside each row
  double eval_objective(const Eigen::VectorXd& x) const;
  // largest violation over rows, bounds, integrality and SOS2 adjacency
  double max_violation(const Eigen::VectorXd& x, double int_tol = 1e-6) const;
  void validate() const;
};

// Global-linear MIQP: big-M linking of the affine UPC and envelopes to the
// mode binaries, affine volume-head row, quadratic operating cost.
MipModel build_miqp_gl(const Eigen::VectorXd& prices,
                       const GlobalLinearModel& global, const PlantConfig& c,
                       double big_m);

// Piecewise MIQP: SOS2 interpolation weights on the volume-head polyline
// and the per-mode UPC grids, with the binary-weight products linearized
// exactly.
MipModel build_miqp_pw(const Eigen::VectorXd& prices, const Sos2Grid& grid,
                       const PlantConfig& c);

// free-form MPS with SOS and QMATRIX sections; byte-deterministic
void export_model(const MipModel& m, const std::string& path);
MipModel import_model(const std::string& path);  // internal reader

// structural equality (names, kinds, bounds, rows, objective, SOS groups)
bool models_structurally_equal(const MipModel& a, const MipModel& b,
                               double tol = 0.0);

// --------------------------------------------------------------------------
// external solver shim

struct SolverShim {
  std::string executable;
  // argument template; {model} and {sol} are substituted
  std::string arg_template = "{model} {sol}";
};

// reads UPHES_MIP_SOLVER / UPHES_MIP_ARGS
std::optional<SolverShim> shim_from_env();

struct MipSolveResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  bool found = false;
};

MipSolveResult solve_with_shim(const MipModel& m, const SolverShim& shim,
                               const std::string& workdir);

// Exact solve by enumerating the per-hour mode patterns (and requiring any
// SOS2 group to have at most two free members after presolve); intended for
// desk-scale instances when no external solver is configured.
MipSolveResult solve_mip_by_enumeration(const MipModel& m,
                                        int max_patterns = 1 << 16);

// --------------------------------------------------------------------------
// desk-scale oracles

struct DpGrid {
  std::vector<double> volume_knots;    // ascending, includes v_init/v_target
  std::vector<double> turbine_levels;  // positive powers
  std::vector<double> pump_levels;     // negative powers
  int horizon = 24;

  // action list in deterministic order: 0, turbine levels, pump levels
  std::vector<double> actions() const;
  void validate(const PlantConfig& c) const;
  static DpGrid regular(const UpcModel& m, const PlantConfig& c,
                        int n_volumes = 41, int n_levels = 7,
                        int horizon = 24);
};

struct OracleResult {
  Eigen::VectorXd schedule;  // scheduled powers (actions)
  Trajectory trajectory;     // simulated under true dynamics
  double value = 0.0;        // ex-post profit of the schedule
};

// Backward induction over the volume knots with linear value interpolation;
// transitions run the true one-hour physics. Returns the greedy schedule
// reconstructed from the continuous state.
OracleResult dp_schedule(const Eigen::VectorXd& prices, const DpGrid& grid,
                         const UpcModel& m, const PlantConfig& c);

// Brute force over all action sequences through the simulator; exact argmax
// with lexicographic tie-break (earliest hour, lowest action index).
OracleResult enumerate_exact(const Eigen::VectorXd& prices, int horizon,
                             const std::vector<double>& actions,
                             const UpcModel& m, const PlantConfig& c,
                             long long max_leaves = 1000000);

}  // namespace uphes
