#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uphes/common.hpp"

namespace uphes {

enum class Mode : std::uint8_t { Idle = 0, Turbine = 1, Pump = 2 };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Idle: return "I";
    case Mode::Turbine: return "T";
    case Mode::Pump: return "P";
  }
  return "?";
}

Mode mode_from_name(const std::string& s);

inline Mode mode_of_power(double p, double eps = 0.0) {
  if (p > eps) return Mode::Turbine;
  if (p < -eps) return Mode::Pump;
  return Mode::Idle;
}

// Plant parameters and reservoir geometry. Immutable after construction;
// derived geometry constants (pit radius, frustum base radius, head datum)
// are resolved once in the constructor.
struct PlantConfig {
  double h_min = 50.0;    // m
  double h_max = 99.0;    // m
  double h_init = 83.0;   // m, head at v_init after datum calibration
  double v_init = 294000.0;    // m^3, initial lower-reservoir volume
  double v_target = 294000.0;  // m^3, terminal upper bound on lower volume
  double v_total = 588000.0;   // m^3, conserved water volume = reservoir capacity
  double c_op = 0.4;      // EUR/MW^2
  double dt_s = 3600.0;   // s, hydraulic time step
  double slope_m = 1.8;   // frustum side slope
  int n_pits = 100;       // lower-reservoir sphere count
  double rho = 1000.0;    // kg/m^3
  double g = 9.81;        // m/s^2

  // derived in finalize(): geometry constants and head datum
  double pit_radius = 0.0;      // m
  double r_base = 0.0;          // m, frustum base radius
  double h_up_fill_max = 40.0;  // m, upper fill height at capacity
  double head_offset = 0.0;     // m, datum so gross_head(v_init) == h_init
  double v_low_feas_min = 0.0;  // m^3, head-feasible lower-volume range
  double v_low_feas_max = 0.0;

  // Resolves pit_radius / r_base / head_offset / feasible volume range and
  // validates invariants. Throws std::invalid_argument on a bad config.
  void finalize();

  double dt_h() const { return dt_s / 3600.0; }
  double lower_capacity() const { return v_total; }
};

PlantConfig default_config();

// flat "key = value" config file
PlantConfig load_config(const std::string& path);
void save_config(const PlantConfig& c, const std::string& path);

// Reservoir geometry. Fill heights are measured from each reservoir floor.
double v_up(double h_up, const PlantConfig& c);
double v_low(double h_low, const PlantConfig& c);
double v_up_deriv(double h_up, const PlantConfig& c);
double v_low_deriv(double h_low, const PlantConfig& c);

// Monotone cubic inversions (safeguarded Newton with bisection fallback).
double invert_v_up(double v, const PlantConfig& c);
double invert_v_low(double v, const PlantConfig& c);

// Gross head as a function of lower-reservoir volume, including the datum
// offset. Strictly decreasing. Throws std::domain_error when the head falls
// outside [h_min, h_max] (never clamps silently).
double gross_head(double v_low_vol, const PlantConfig& c);
// Same map without the range check; used by calibration and reporting.
double gross_head_unchecked(double v_low_vol, const PlantConfig& c);
double gross_head_deriv(double v_low_vol, const PlantConfig& c);   // dh/dv
double gross_head_deriv2(double v_low_vol, const PlantConfig& c);  // d2h/dv2

// Inverse of gross_head: lower volume at a given gross head, with analytic
// first/second derivatives dv/dh, d2v/dh2 used by local linearization.
double v_of_head(double h, const PlantConfig& c);
double v_of_head_deriv(double h, const PlantConfig& c);
double v_of_head_deriv2(double h, const PlantConfig& c);

// Bivariate polynomial surrogate of the unit performance curves, one
// coefficient table per active mode, plus head-dependent power envelopes.
struct UpcModel {
  int degree = 5;
  // coefficient c[k] multiplies p^a h^b; k indexes (a,b) with a+b<=degree,
  // ordered a-major: (0,0),(0,1),...,(0,d),(1,0),...,(d,0)
  std::vector<double> coef_turbine;
  std::vector<double> coef_pump;
  // envelope polynomials in h, ascending degree
  std::vector<double> pmin_turbine, pmax_turbine;
  std::vector<double> pmin_pump, pmax_pump;
  bool turbine_positive = true;  // sign convention marker
  double r2_turbine = 0.0, r2_pump = 0.0;

  static int coef_count(int degree) { return (degree + 1) * (degree + 2) / 2; }
  const std::vector<double>& coefs(Mode m) const;
  void validate(const PlantConfig& c) const;
};

double poly_eval(const std::vector<double>& coef, double x);
double poly_deriv_eval(const std::vector<double>& coef, double x);

double envelope_min(const UpcModel& m, Mode mode, double h);
double envelope_max(const UpcModel& m, Mode mode, double h);

// f_m^UPC(p, h): flow through the unit at power p and gross head h.
double upc_eval(const UpcModel& m, Mode mode, double p, double h,
                const PlantConfig& c);

struct UpcGrad {
  double dq_dp = 0.0;
  double dq_dh = 0.0;
};
UpcGrad upc_grad(const UpcModel& m, Mode mode, double p, double h,
                 const PlantConfig& c);

struct UpcHess {
  double d2q_dp2 = 0.0;
  double d2q_dpdh = 0.0;
  double d2q_dh2 = 0.0;
};
UpcHess upc_hess(const UpcModel& m, Mode mode, double p, double h,
                 const PlantConfig& c);

// Power producing flow q at head h, within the mode envelope. Requires the
// flow to be attainable inside the envelope (UPC monotone in p there).
double upc_power_for_flow(const UpcModel& m, Mode mode, double q, double h,
                          const PlantConfig& c);

struct UpcSample {
  Mode mode = Mode::Turbine;
  double p = 0.0;   // MW
  double h = 0.0;   // m
  double q = 0.0;   // m^3/s
};

struct UpcFitOptions {
  int degree = 5;
  int envelope_degree = 2;
};

// Per-mode ordinary least squares on the monomial basis (internally scaled
// for conditioning; coefficients reported in raw p,h monomials). Envelope
// polynomials are fitted to the per-head min/max sample powers.
UpcModel upc_fit(const std::vector<UpcSample>& samples, const UpcFitOptions& opt,
                 const PlantConfig& c);

// Synthetic generator standing in for laboratory UPC measurements.
// Flow from the energy-conversion identity at efficiency eta:
//   turbine: q =  p * 1e6 / (eta * rho * g * h)
//   pump:    q = -|p| * 1e6 * eta / (rho * g * h)
double synth_flow(Mode mode, double p, double h, double eta,
                  const PlantConfig& c);

// Smooth concave efficiency surface; pc is the mid-envelope power at h.
double synth_efficiency(Mode mode, double p, double h, const PlantConfig& c);

// Generator envelope limits (affine in h, derived from rated flows).
double synth_envelope_min(Mode mode, double h, const PlantConfig& c);
double synth_envelope_max(Mode mode, double h, const PlantConfig& c);

struct SynthGridSpec {
  int n_h = 31;
  int n_p = 31;
};

std::vector<UpcSample> synth_upc_dataset(const PlantConfig& c,
                                         const SynthGridSpec& spec);

// CSV with header mode,p_mw,h_m,q_m3s
void save_upc_samples(const std::vector<UpcSample>& samples,
                      const std::string& path);
std::vector<UpcSample> load_upc_samples(const std::string& path);

// JSON model container, exact round-trip.
void save_upc_model(const UpcModel& m, const std::string& path);
UpcModel load_upc_model(const std::string& path);

enum class Role : std::uint8_t { WarmStart = 0, Refined = 1, Simulated = 2 };

// One schedule over the horizon: power/flow/head/volume/mode per hour.
// h[t] is the head the unit operates at during hour t, i.e. the head
// implied by the volume at the end of hour t-1.
struct Trajectory {
  std::vector<double> p;  // MW, signed
  std::vector<double> q;  // m^3/s, signed
  std::vector<double> h;  // m
  std::vector<double> v;  // m^3, lower volume at end of hour
  std::vector<Mode> mode;
  Role role = Role::WarmStart;

  int horizon() const { return static_cast<int>(p.size()); }
  void resize(int T);
  void validate() const;  // throws std::invalid_argument on broken invariants
};

}  // namespace uphes
