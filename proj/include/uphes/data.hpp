#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "uphes/common.hpp"

namespace uphes {

struct PriceScenario {
  std::string id;
  Eigen::VectorXd prices;  // 24 hourly values
  double weight = 1.0;     // cluster size
  void validate() const;
};

struct PriceDay {
  std::string date;  // YYYY-MM-DD
  Eigen::VectorXd prices;
};

struct PriceHistory {
  std::vector<PriceDay> days;
  void validate() const;  // finite values, no duplicate dates
};

enum class PriceFormat { Auto, Wide, Long };

// wide: date,h1..h24 one day per row
// long: timestamp,price with hourly rows, aggregated per date; days with
// missing or duplicated hours are rejected naming the date
PriceHistory load_prices(const std::string& path,
                         PriceFormat format = PriceFormat::Auto);
void save_prices(const PriceHistory& history, const std::string& path);

// documented stand-in for real market exports: two daily peaks, a night
// dip, and seeded noise
PriceHistory synth_price_history(int n_days, std::uint64_t seed);

struct KMedoidsResult {
  std::vector<PriceScenario> scenarios;  // medoids with cluster sizes
  std::vector<int> assignment;           // day -> cluster index
  std::vector<double> cost_trace;        // total cost after build and swaps
};

// PAM under Euclidean distance on the daily 24-vectors. Fully
// deterministic; ties break toward the lowest index (the seed only tags
// the run, matching the CLI surface).
KMedoidsResult kmedoids(const PriceHistory& history, int k,
                        std::uint64_t seed);

// combined scenario table: id,weight,h1..h24
void save_scenarios(const std::vector<PriceScenario>& scenarios,
                    const std::string& path);
std::vector<PriceScenario> load_scenarios(const std::string& path);

}  // namespace uphes
