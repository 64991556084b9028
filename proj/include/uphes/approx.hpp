#pragma once

#include <array>
#include <string>
#include <vector>

#include "uphes/plant.hpp"

namespace uphes {

// Single affine surrogates fitted over the whole operating domain:
// flow vs [p, h, 1], power bounds vs [h, 1], head vs [v_low, 1].
struct GlobalLinearModel {
  std::array<double, 3> alpha_turbine{}, alpha_pump{};
  std::array<double, 2> beta_min_turbine{}, beta_max_turbine{};
  std::array<double, 2> beta_min_pump{}, beta_max_pump{};
  std::array<double, 2> delta{};

  double flow(Mode m, double p, double h) const;
  double power_min(Mode m, double h) const;
  double power_max(Mode m, double h) const;
  double head(double v) const { return delta[0] * v + delta[1]; }

  void validate(const PlantConfig& c) const;
};

struct GlobalFitSpec {
  int n_p = 30;
  int n_h = 30;
  int n_v = 30;
};

GlobalLinearModel fit_global(const UpcModel& m, const PlantConfig& c,
                             const GlobalFitSpec& spec);

// Sample grids backing the piecewise-bilinear (SOS2) approximation.
// Power knots are laid out per head row across the head-dependent envelope,
// so cell (i, j) spans [h_i, h_{i+1}] x the interpolated power interval.
struct Sos2Grid {
  std::vector<double> h_knots;          // size N_h, strictly increasing
  std::vector<double> v_knots;          // paired with h_knots (decreasing)
  // power/flow tables, indexed [mode][i][j]
  std::vector<std::vector<double>> p_turbine, q_turbine;
  std::vector<std::vector<double>> p_pump, q_pump;

  int n_h() const { return static_cast<int>(h_knots.size()); }
  int n_p(Mode m) const;
  const std::vector<std::vector<double>>& p_table(Mode m) const;
  const std::vector<std::vector<double>>& q_table(Mode m) const;
};

Sos2Grid build_sos2_grid(const UpcModel& m, const PlantConfig& c, int n_h,
                         int n_p_turbine, int n_p_pump);

// Number of SOS2 interpolation weights a MIP over `horizon` hours carries
// for the UPC tables of this grid.
long long sos2_weight_count(const Sos2Grid& g, int horizon);

// Continuous bilinear evaluation on the containing cell (what the SOS2 MIP
// reconstructs); throws std::domain_error outside the grid hull.
double sos2_interpolate(const Sos2Grid& g, double h, double p, Mode mode);

// Piecewise-linear evaluation along the (v, h) sample polyline.
double sos2_head_of_volume(const Sos2Grid& g, double v);
double sos2_volume_of_head(const Sos2Grid& g, double h);

// First-order Taylor data at an expansion trajectory: per hour, flow vs
// [p, h, 1] and volume vs [h, 1]. Hours with |p| below idle_eps carry
// xi_q = 0, pinning the flow to zero.
struct LocalLinearization {
  std::vector<std::array<double, 3>> xi_q;
  std::vector<std::array<double, 2>> xi_v;
  Trajectory expansion;
  int horizon() const { return static_cast<int>(xi_q.size()); }
};

constexpr double kIdlePowerEps = 1e-6;  // MW

LocalLinearization local_linearize(const UpcModel& m, const PlantConfig& c,
                                   const Trajectory& x_hat);

// Table-style error metrics; percentages are relative to true-value
// magnitude with a 1e-9 floor guard.
struct ErrorMetrics {
  double mean_pct = 0.0;
  double max_pct = 0.0;
  double mape_pct = 0.0;
  double r2 = 0.0;
};

ErrorMetrics error_metrics(const std::vector<double>& truth,
                           const std::vector<double>& pred);

struct UpcPoint {
  Mode mode = Mode::Turbine;
  double p = 0.0;
  double h = 0.0;
};

ErrorMetrics upc_error_vs_global(const UpcModel& truth,
                                 const GlobalLinearModel& g,
                                 const std::vector<UpcPoint>& pts,
                                 const PlantConfig& c);
ErrorMetrics upc_error_vs_grid(const UpcModel& truth, const Sos2Grid& grid,
                               const std::vector<UpcPoint>& pts,
                               const PlantConfig& c);
// Volume-direction errors of the volume-head surrogates: truth is
// v = f_vol(h) (cubic geometry), predictions come from the affine relation
// (inverted) or the sample polyline.
ErrorMetrics vol_error_vs_global(const PlantConfig& c,
                                 const GlobalLinearModel& g,
                                 const std::vector<double>& heads);
ErrorMetrics vol_error_vs_grid(const PlantConfig& c, const Sos2Grid& grid,
                               const std::vector<double>& heads);

struct ApproxErrorRow {
  std::string function;
  std::string method;
  ErrorMetrics metrics;
};

// CSV matching the benchmark-error table layout:
// function,method,mean_pct,max_pct,mape_pct,r2
void write_error_report_csv(const std::vector<ApproxErrorRow>& rows,
                            const std::string& path);

}  // namespace uphes
