#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "uphes/data.hpp"

using namespace uphes;

TEST_CASE("wide price loading and exact round trip") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "uphes_prices_wide.csv").string();
  {
    std::ofstream out(path);
    out << "date";
    for (int k = 1; k <= 24; ++k) out << ",h" << k;
    out << "\n2024-03-01";
    for (int k = 0; k < 24; ++k) out << ',' << 50.0 + 0.3125 * k;
    out << "\n";
  }
  auto h = load_prices(path);
  REQUIRE(h.days.size() == 1);
  CHECK(h.days[0].date == "2024-03-01");
  CHECK(h.days[0].prices(3) == doctest::Approx(50.9375));

  const auto path2 = (dir / "uphes_prices_rt.csv").string();
  save_prices(h, path2);
  auto h2 = load_prices(path2);
  REQUIRE(h2.days.size() == 1);
  for (int k = 0; k < 24; ++k)
    CHECK(h2.days[0].prices(k) == h.days[0].prices(k));  // bit exact
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("long format aggregation and missing-hour rejection") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "uphes_prices_long.csv").string();
  {
    std::ofstream out(path);
    out << "timestamp,price\n";
    for (int k = 0; k < 24; ++k)
      out << "2024-05-05 " << (k < 10 ? "0" : "") << k << ":00,"
          << 40.0 + k << "\n";
    for (int k = 0; k < 23; ++k)  // second day misses hour 23
      out << "2024-05-06 " << (k < 10 ? "0" : "") << k << ":00,"
          << 80.0 + k << "\n";
  }
  try {
    load_prices(path);
    FAIL("expected a validation error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("2024-05-06") != std::string::npos);
    CHECK(std::string(e.what()).find("23") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("malformed rows are rejected with a line number") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "uphes_prices_bad.csv").string();
  {
    std::ofstream out(path);
    out << "date";
    for (int k = 1; k <= 24; ++k) out << ",h" << k;
    out << "\n2024-03-01,1,2,3\n";
  }
  try {
    load_prices(path);
    FAIL("expected a parse error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_prices("/nonexistent/prices.csv"), io_error);
}

TEST_CASE("pam clustering on a hand-checkable instance") {
  // three constant daily profiles at 0, 0.1 and 10
  PriceHistory h;
  for (double v : {0.0, 0.1, 10.0}) {
    PriceDay d;
    d.date = "2024-01-0" + std::to_string(1 + h.days.size());
    d.prices = Eigen::VectorXd::Constant(24, v);
    h.days.push_back(d);
  }
  auto res = kmedoids(h, 2, 42);
  REQUIRE(res.scenarios.size() == 2);
  // exhaustive check over the three medoid pairs: cost is minimized by
  // {one of {0, 0.1}, 10} with total cost |0.1 - 0| * sqrt(24)
  const double expected_cost = 0.1 * std::sqrt(24.0);
  CHECK(res.cost_trace.back() == doctest::Approx(expected_cost));
  bool has_ten = false;
  for (const auto& s : res.scenarios)
    if (s.prices(0) == 10.0) has_ten = true;
  CHECK(has_ten);

  CHECK_THROWS_AS(kmedoids(h, 4, 1), std::invalid_argument);
}

TEST_CASE("saturated k makes every day its own medoid") {
  auto h = synth_price_history(6, 9);
  auto res = kmedoids(h, 6, 0);
  REQUIRE(res.scenarios.size() == 6);
  for (const auto& s : res.scenarios) CHECK(s.weight == 1.0);
  CHECK(res.cost_trace.back() == doctest::Approx(0.0));
}

TEST_CASE("pam cost never increases across swap iterations") {
  auto h = synth_price_history(40, 17);
  auto res = kmedoids(h, 5, 123);
  REQUIRE(!res.cost_trace.empty());
  for (size_t i = 1; i < res.cost_trace.size(); ++i)
    CHECK(res.cost_trace[i] <= res.cost_trace[i - 1] + 1e-9);
  // determinism
  auto res2 = kmedoids(h, 5, 999);
  REQUIRE(res2.scenarios.size() == res.scenarios.size());
  for (size_t i = 0; i < res.scenarios.size(); ++i)
    CHECK(res.scenarios[i].id == res2.scenarios[i].id);
}

TEST_CASE("scenario table round trip") {
  auto h = synth_price_history(30, 5);
  auto res = kmedoids(h, 4, 0);
  const auto path =
      (std::filesystem::temp_directory_path() / "uphes_scen.csv").string();
  save_scenarios(res.scenarios, path);
  auto loaded = load_scenarios(path);
  REQUIRE(loaded.size() == res.scenarios.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].id == res.scenarios[i].id);
    CHECK(loaded[i].weight == res.scenarios[i].weight);
    for (int k = 0; k < 24; ++k)
      CHECK(loaded[i].prices(k) == res.scenarios[i].prices(k));
  }
  std::filesystem::remove(path);
}

TEST_CASE("synthetic price generator is seeded and daily-shaped") {
  auto a = synth_price_history(10, 7);
  auto b = synth_price_history(10, 7);
  auto c = synth_price_history(10, 8);
  REQUIRE(a.days.size() == 10);
  CHECK(a.days[0].date == "2024-01-01");
  CHECK(a.days[9].date == "2024-01-10");
  bool identical = true, differs = false;
  for (int k = 0; k < 24; ++k) {
    if (a.days[3].prices(k) != b.days[3].prices(k)) identical = false;
    if (a.days[3].prices(k) != c.days[3].prices(k)) differs = true;
  }
  CHECK(identical);
  CHECK(differs);
  // evening peak dominates the night dip on average
  double night = 0.0, evening = 0.0;
  for (const auto& d : a.days) {
    night += d.prices.segment(2, 3).mean();
    evening += d.prices.segment(17, 4).maxCoeff();
  }
  CHECK(evening / 10.0 > night / 10.0 + 20.0);
}
