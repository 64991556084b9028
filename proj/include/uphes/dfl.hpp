#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "uphes/data.hpp"
#include "uphes/mip.hpp"
#include "uphes/net.hpp"
#include "uphes/qp.hpp"
#include "uphes/sim.hpp"

namespace uphes {

// noise levels used for training-set generation; negative means "random",
// drawn uniformly from [0.1, 0.8] per sample
constexpr double kRandomNoise = -1.0;

struct TrainingSample {
  PriceScenario scenario;
  Trajectory warm;         // physically consistent warm start
  double noise_level = 0;  // realized level
  std::string provenance;  // e.g. "dp+30%" or "dp+random(0.37)"
  void validate(const UpcModel& m, const PlantConfig& c) const;
};

// Perturbs the baseline powers uniformly within +/- level * (envelope width
// at the baseline head), preserving modes, then re-integrates flows, heads
// and volumes. When the volume window makes a draw impossible the level is
// halved and retried; level 0 returns the baseline unchanged.
Trajectory perturb_schedule(const Trajectory& baseline, double noise_level,
                            const UpcModel& m, const PlantConfig& c, Rng& rng);

std::vector<TrainingSample> build_training_set(
    const std::vector<PriceScenario>& scenarios,
    const std::vector<double>& noise_levels, const UpcModel& m,
    const PlantConfig& c, const DpGrid& grid, std::uint64_t seed);

struct TrainConfig {
  int epochs = 200;
  double lr = 1e-3;
  int plateau_patience = 5;
  double plateau_factor = 0.5;
  int earlystop_patience = 15;
  double clip_norm = 1.0;
  int refine_iterations = 3;  // K
  double growth = 2.0;        // gamma
  int hidden = 32;
  std::uint64_t seed = 1;
  bool mean_batch = false;    // per-sample updates by default
  double val_fraction = 0.2;  // held-out split by scenario
  void validate() const;
};

struct TrainLogRow {
  int epoch = 0;
  double loss = 0.0;        // mean of -profit over training samples
  double val_profit = 0.0;  // mean profit on the held-out scenarios
  double lr = 0.0;
  double grad_norm = 0.0;  // mean pre-clip gradient norm
  double seconds = 0.0;
};

struct SampleOutcome {
  std::string provenance;
  Eigen::VectorXd refined_schedule;
  SimOutcome outcome;
};

struct TrainResult {
  Checkpoint best;            // best-validation checkpoint
  std::vector<TrainLogRow> log;
  int stopped_epoch = 0;
  bool early_stopped = false;
  // per-sample records from the final epoch, for the loss identity
  std::vector<SampleOutcome> last_epoch;
};

TrainResult train(const std::vector<TrainingSample>& dataset,
                  const NetParams& theta0, const TrainConfig& cfg,
                  const UpcModel& m, const PlantConfig& c,
                  const GlobalLinearModel& env);

void save_train_log(const std::vector<TrainLogRow>& log,
                    const std::string& path);

// evaluation harness -------------------------------------------------------

enum class EvalMethod { Dfl, NoRec, NoNn, Raw, Dp };

const char* eval_method_name(EvalMethod m);
EvalMethod eval_method_from_name(const std::string& s);

struct EvalDetail {
  EvalMethod method;
  std::string scenario_id;
  double noise_level = 0.0;
  double profit = 0.0, si = 0.0, vol = 0.0;
};

struct EvalRow {
  EvalMethod method;
  double profit_mean = 0.0;
  double profit_std = 0.0;
  double time_s = 0.0;  // wall time per scenario
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<EvalDetail> details;
};

// Evaluates the requested methods over the scenario set. Warm starts are
// DP baselines perturbed at each of the requested noise levels; Dp scores
// the unperturbed baseline and ignores the noise grid.
EvalReport evaluate(const std::vector<EvalMethod>& methods,
                    const Checkpoint* checkpoint,
                    const std::vector<PriceScenario>& scenarios,
                    const std::vector<double>& noise_levels, const UpcModel& m,
                    const PlantConfig& c, const GlobalLinearModel& env,
                    const DpGrid& grid, std::uint64_t seed);

void save_eval_report(const EvalReport& report, const std::string& path);
// Fig-4-style table: noise_pct,method,profit_mean,profit_std
void save_noise_profile(const EvalReport& report, const std::string& path);
// Fig-5-style table: method,scenario,noise_pct,profit,si,vol
void save_tradeoff_detail(const EvalReport& report, const std::string& path);

// operating points collected from simulated baseline trajectories, used by
// the benchmark approximation error report
struct OperatingPoints {
  std::vector<UpcPoint> upc_points;
  std::vector<double> heads;
};

OperatingPoints collect_operating_points(
    const std::vector<PriceScenario>& scenarios, const UpcModel& m,
    const PlantConfig& c, const DpGrid& grid);

}  // namespace uphes
