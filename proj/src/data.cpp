#include "uphes/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace uphes {

using Eigen::VectorXd;

void PriceScenario::validate() const {
  if (prices.size() != 24)
    throw std::invalid_argument("scenario must carry exactly 24 prices");
  if (!prices.allFinite())
    throw std::invalid_argument("scenario has non-finite prices");
}

void PriceHistory::validate() const {
  std::set<std::string> seen;
  for (const auto& d : days) {
    if (!seen.insert(d.date).second)
      throw std::invalid_argument("duplicate date " + d.date);
    if (d.prices.size() != 24 || !d.prices.allFinite())
      throw std::invalid_argument("bad profile for date " + d.date);
  }
}

namespace {

PriceHistory load_wide(std::ifstream& in, const std::string& path) {
  PriceHistory h;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 25)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected date plus 24 prices");
    PriceDay d;
    d.date = trim(f[0]);
    d.prices.resize(24);
    for (int k = 0; k < 24; ++k)
      d.prices(k) = parse_double(f[k + 1], path + ":" + std::to_string(lineno));
    h.days.push_back(std::move(d));
  }
  h.validate();
  return h;
}

PriceHistory load_long(std::ifstream& in, const std::string& path) {
  std::map<std::string, std::array<std::pair<bool, double>, 24>> days;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 2)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected timestamp,price");
    const std::string ts = trim(f[0]);
    if (ts.size() < 13)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": bad timestamp '" + ts + "'");
    const std::string date = ts.substr(0, 10);
    const int hour = static_cast<int>(parse_double(ts.substr(11, 2), "hour"));
    if (hour < 0 || hour > 23)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": hour out of range");
    auto& slots = days[date];
    if (slots[hour].first)
      throw std::invalid_argument("duplicate hour " + std::to_string(hour) +
                                  " for date " + date);
    slots[hour] = {true, parse_double(f[1], path + ":" + std::to_string(lineno))};
  }
  PriceHistory h;
  for (const auto& [date, slots] : days) {
    PriceDay d;
    d.date = date;
    d.prices.resize(24);
    for (int k = 0; k < 24; ++k) {
      if (!slots[k].first)
        throw std::invalid_argument("date " + date + " is missing hour " +
                                    std::to_string(k));
      d.prices(k) = slots[k].second;
    }
    h.days.push_back(std::move(d));
  }
  h.validate();
  return h;
}

}  // namespace

PriceHistory load_prices(const std::string& path, PriceFormat format) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open price file " + path);
  std::string header;
  if (!std::getline(in, header))
    throw std::invalid_argument("empty price file " + path);
  const auto cols = split_csv_line(trim(header));
  PriceFormat f = format;
  if (f == PriceFormat::Auto) {
    if (cols.size() == 25 && trim(cols[0]) == "date")
      f = PriceFormat::Wide;
    else if (cols.size() == 2 && trim(cols[0]) == "timestamp")
      f = PriceFormat::Long;
    else
      throw std::invalid_argument("unrecognized price header in " + path);
  }
  return f == PriceFormat::Wide ? load_wide(in, path) : load_long(in, path);
}

void save_prices(const PriceHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "date";
  for (int k = 1; k <= 24; ++k) out << ",h" << k;
  out << "\n";
  for (const auto& d : history.days) {
    out << d.date;
    for (int k = 0; k < 24; ++k) out << ',' << format_double(d.prices(k));
    out << "\n";
  }
}

namespace {

// minimal date arithmetic for synthetic labels starting at 2024-01-01
std::string date_label(int day_index) {
  static const int mdays[12] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int y = 2024, m = 0, d = day_index;
  while (true) {
    const int len = mdays[m];
    if (d < len) break;
    d -= len;
    if (++m == 12) {
      m = 0;
      ++y;  // stays in 2024 for the sizes used here
    }
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m + 1, d + 1);
  return buf;
}

}  // namespace

PriceHistory synth_price_history(int n_days, std::uint64_t seed) {
  if (n_days < 1) throw std::invalid_argument("need at least one day");
  Rng rng(seed);
  PriceHistory h;
  for (int i = 0; i < n_days; ++i) {
    PriceDay d;
    d.date = date_label(i);
    d.prices.resize(24);
    const double base = rng.uniform(55.0, 95.0);
    const double am_amp = rng.uniform(20.0, 70.0);
    const double pm_amp = rng.uniform(25.0, 85.0);
    const double dip = rng.uniform(10.0, 35.0);
    const double am_c = 8.5 + rng.uniform(-1.0, 1.0);
    const double pm_c = 19.0 + rng.uniform(-1.0, 1.0);
    for (int t = 0; t < 24; ++t) {
      const double x = t + 0.5;
      double v = base;
      v += am_amp * std::exp(-0.5 * std::pow((x - am_c) / 2.0, 2));
      v += pm_amp * std::exp(-0.5 * std::pow((x - pm_c) / 2.5, 2));
      v -= dip * std::exp(-0.5 * std::pow((x - 3.5) / 2.5, 2));
      v += 3.0 * rng.normal();
      d.prices(t) = v;
    }
    h.days.push_back(std::move(d));
  }
  return h;
}

KMedoidsResult kmedoids(const PriceHistory& history, int k,
                        std::uint64_t seed) {
  (void)seed;  // PAM build+swap is deterministic; ties break by index
  history.validate();
  const int n = static_cast<int>(history.days.size());
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (k > n)
    throw std::invalid_argument("k = " + std::to_string(k) + " exceeds " +
                                std::to_string(n) + " days");

  Eigen::MatrixXd dist(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      dist(i, j) = (history.days[i].prices - history.days[j].prices).norm();

  std::vector<int> medoids;
  std::vector<bool> is_medoid(n, false);

  // BUILD: greedy cost reduction
  {
    int best = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const double cost = dist.row(i).sum();
      if (cost < best_cost) {
        best_cost = cost;
        best = i;
      }
    }
    medoids.push_back(best);
    is_medoid[best] = true;
  }
  std::vector<double> nearest(n);
  auto refresh_nearest = [&]() {
    for (int i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (int m : medoids) d = std::min(d, dist(i, m));
      nearest[i] = d;
    }
  };
  refresh_nearest();
  while (static_cast<int>(medoids.size()) < k) {
    int best = -1;
    double best_gain = -1.0;
    for (int c = 0; c < n; ++c) {
      if (is_medoid[c]) continue;
      double gain = 0.0;
      for (int i = 0; i < n; ++i)
        gain += std::max(0.0, nearest[i] - dist(i, c));
      if (gain > best_gain) {
        best_gain = gain;
        best = c;
      }
    }
    medoids.push_back(best);
    is_medoid[best] = true;
    refresh_nearest();
  }

  auto total_cost = [&]() {
    double c = 0.0;
    for (int i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (int m : medoids) d = std::min(d, dist(i, m));
      c += d;
    }
    return c;
  };

  KMedoidsResult out;
  out.cost_trace.push_back(total_cost());

  // SWAP to a local optimum, best-improvement steps
  bool improved = true;
  while (improved) {
    improved = false;
    double best_delta = -1e-12;
    int best_m = -1, best_h = -1;
    for (size_t mi = 0; mi < medoids.size(); ++mi) {
      for (int hcand = 0; hcand < n; ++hcand) {
        if (is_medoid[hcand]) continue;
        double cost = 0.0;
        for (int i = 0; i < n; ++i) {
          double d = dist(i, hcand);
          for (size_t mj = 0; mj < medoids.size(); ++mj)
            if (mj != mi) d = std::min(d, dist(i, medoids[mj]));
          cost += d;
        }
        const double delta = cost - out.cost_trace.back();
        if (delta < best_delta) {
          best_delta = delta;
          best_m = static_cast<int>(mi);
          best_h = hcand;
        }
      }
    }
    if (best_m >= 0) {
      is_medoid[medoids[best_m]] = false;
      medoids[best_m] = best_h;
      is_medoid[best_h] = true;
      out.cost_trace.push_back(total_cost());
      improved = true;
    }
  }

  std::sort(medoids.begin(), medoids.end());
  out.assignment.assign(n, 0);
  std::vector<int> sizes(medoids.size(), 0);
  for (int i = 0; i < n; ++i) {
    double d = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (size_t mi = 0; mi < medoids.size(); ++mi)
      if (dist(i, medoids[mi]) < d) {
        d = dist(i, medoids[mi]);
        arg = static_cast<int>(mi);
      }
    out.assignment[i] = arg;
    ++sizes[arg];
  }
  for (size_t mi = 0; mi < medoids.size(); ++mi) {
    PriceScenario s;
    s.id = history.days[medoids[mi]].date;
    s.prices = history.days[medoids[mi]].prices;
    s.weight = sizes[mi];
    out.scenarios.push_back(std::move(s));
  }
  return out;
}

void save_scenarios(const std::vector<PriceScenario>& scenarios,
                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "id,weight";
  for (int k = 1; k <= 24; ++k) out << ",h" << k;
  out << "\n";
  for (const auto& s : scenarios) {
    out << s.id << ',' << format_double(s.weight);
    for (int k = 0; k < 24; ++k) out << ',' << format_double(s.prices(k));
    out << "\n";
  }
}

std::vector<PriceScenario> load_scenarios(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("empty scenario file " + path);
  std::vector<PriceScenario> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 26)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected id,weight plus 24 prices");
    PriceScenario s;
    s.id = trim(f[0]);
    s.weight = parse_double(f[1], "weight");
    s.prices.resize(24);
    for (int k = 0; k < 24; ++k) s.prices(k) = parse_double(f[k + 2], "price");
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace uphes
