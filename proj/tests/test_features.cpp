// Relationship metrics: lagged-window depth and intensity, panel builder vs
// nested-loop oracle, and client-flag classification.

#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>
#include <set>
#include <tuple>

#include "repometrics/datamodel.hpp"
#include "repometrics/features.hpp"

using namespace repometrics;
using datamodel::DyadPanel;
using datamodel::DyadRow;

namespace {

DyadRow make_row(int date, Segment seg, int dealer, int family, double volume) {
  DyadRow r;
  r.date = date;
  r.segment = seg;
  r.dealer = dealer;
  r.family = family;
  r.volume = volume;
  r.log_volume = std::log(volume);
  return r;
}

DyadPanel sorted_panel(std::vector<DyadRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const DyadRow& a, const DyadRow& b) {
    return std::tie(a.date, a.segment, a.dealer, a.family) <
           std::tie(b.date, b.segment, b.dealer, b.family);
  });
  return DyadPanel{std::move(rows)};
}

}  // namespace

TEST_CASE("depth: sole counterparty gets share 1") {
  auto panel = sorted_panel({make_row(3, Segment::repo, 0, 0, 50.0)});
  auto d = features::depth_at(panel, Segment::repo, 0, 0, 5, 20);
  REQUIRE(d.has_value());
  CHECK(*d == 1.0);
}

TEST_CASE("depth: volumes 30 and 70 split 0.3 / 0.7") {
  auto panel = sorted_panel({make_row(2, Segment::repo, 0, 0, 30.0),
                             make_row(2, Segment::repo, 0, 1, 70.0)});
  CHECK(*features::depth_at(panel, Segment::repo, 0, 0, 5, 20) ==
        Catch::Approx(0.3));
  CHECK(*features::depth_at(panel, Segment::repo, 0, 1, 5, 20) ==
        Catch::Approx(0.7));
}

TEST_CASE("depth window is strictly lagged") {
  // Trade on day 5 must not count toward day-5 depth.
  auto panel = sorted_panel({make_row(5, Segment::repo, 0, 0, 10.0)});
  CHECK_FALSE(features::depth_at(panel, Segment::repo, 0, 0, 5, 20)
                  .has_value());
  CHECK(*features::depth_at(panel, Segment::repo, 0, 0, 6, 20) == 1.0);
  // ... and is excluded once it falls out of the window.
  CHECK_FALSE(features::depth_at(panel, Segment::repo, 0, 0, 26, 20)
                  .has_value());
  CHECK(*features::depth_at(panel, Segment::repo, 0, 0, 25, 20) == 1.0);
}

TEST_CASE("depth undefined for inactive dealer, never 0/0") {
  auto panel = sorted_panel({make_row(2, Segment::repo, 0, 0, 30.0)});
  CHECK_FALSE(
      features::depth_at(panel, Segment::repo, 1, 0, 5, 20).has_value());
  CHECK_FALSE(
      features::depth_at(panel, Segment::reverse, 0, 0, 5, 20).has_value());
}

TEST_CASE("intensity counts trading days, one per day") {
  std::vector<DyadRow> rows;
  for (int d : {1, 2, 5, 7, 9})
    rows.push_back(make_row(d, Segment::repo, 0, 0, 4.0));
  auto panel = sorted_panel(rows);
  CHECK(features::intensity_at(panel, Segment::repo, 0, 0, 15, 20) == 5);

  // A day with several trades collapses to one dyad-day row upstream; the
  // indicator therefore counts it once.
  Transaction a, b;
  a.date = b.date = 4;
  a.dealer = b.dealer = 0;
  a.family = b.family = 0;
  a.segment = b.segment = Segment::repo;
  a.volume = 3.0;
  b.volume = 9.0;
  a.maturity_days = b.maturity_days = 1;
  auto agg = datamodel::aggregate_dyads({a, b});
  CHECK(features::intensity_at(agg, Segment::repo, 0, 0, 10, 20) == 1);
}

TEST_CASE("relationship panel equals nested-loop oracle on random data") {
  std::mt19937 gen(31);
  std::uniform_int_distribution<int> date(0, 59), dealer(0, 2), family(0, 7),
      seg(0, 1);
  std::uniform_real_distribution<double> vol(1.0, 50.0);

  std::map<std::tuple<int, int, int, int>, double> cell;
  for (int i = 0; i < 400; ++i)
    cell[{date(gen), seg(gen), dealer(gen), family(gen)}] += vol(gen);

  std::vector<DyadRow> rows;
  for (const auto& [key, v] : cell)
    rows.push_back(make_row(std::get<0>(key),
                            static_cast<Segment>(std::get<1>(key)),
                            std::get<2>(key), std::get<3>(key), v));
  auto panel = sorted_panel(rows);
  const int window = 20;
  auto rel = features::build_relationship(panel, window);

  // Oracle: for every (t, segment, dealer, family) combination, brute sums.
  std::set<std::tuple<int, int, int, int>> emitted;
  for (const auto& row : rel.rows) {
    emitted.insert({row.date, static_cast<int>(row.segment), row.dealer,
                    row.family});
    auto d = features::depth_at(panel, row.segment, row.dealer, row.family,
                                row.date, window);
    REQUIRE(d.has_value());
    CHECK(row.depth == Catch::Approx(*d).margin(1e-12));
    CHECK(row.intensity == features::intensity_at(panel, row.segment,
                                                  row.dealer, row.family,
                                                  row.date, window));
    CHECK(row.date >= window);
    CHECK(row.depth > 0.0);
    CHECK(row.depth <= 1.0 + 1e-12);
    CHECK(row.intensity >= 1);
    CHECK(row.intensity <= window);
  }
  // Completeness: every dyad-day with in-window activity is present.
  for (int t = window; t < 60; ++t)
    for (int sg = 0; sg < 2; ++sg)
      for (int dl = 0; dl < 3; ++dl)
        for (int fm = 0; fm < 8; ++fm) {
          double dyad_win = 0;
          for (const auto& [key, v] : cell)
            if (std::get<1>(key) == sg && std::get<2>(key) == dl &&
                std::get<3>(key) == fm && std::get<0>(key) >= t - window &&
                std::get<0>(key) < t)
              dyad_win += v;
          const bool present = emitted.count({t, sg, dl, fm}) > 0;
          CHECK(present == (dyad_win > 0.0));
        }
}

TEST_CASE("depth sums to 1 across active families") {
  std::mt19937 gen(77);
  std::uniform_int_distribution<int> date(0, 39), family(0, 9);
  std::uniform_real_distribution<double> vol(1.0, 50.0);
  std::map<std::tuple<int, int, int, int>, double> cell;
  for (int i = 0; i < 300; ++i)
    cell[{date(gen), 0, 0, family(gen)}] += vol(gen);
  std::vector<DyadRow> rows;
  for (const auto& [key, v] : cell)
    rows.push_back(make_row(std::get<0>(key), Segment::repo, 0,
                            std::get<3>(key), v));
  auto rel = features::build_relationship(sorted_panel(rows), 20);
  std::map<int, double> sums;
  for (const auto& row : rel.rows) sums[row.date] += row.depth;
  REQUIRE(!sums.empty());
  for (const auto& [t, s] : sums) CHECK(s == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("intensity is monotone in added trading days") {
  std::vector<DyadRow> rows;
  for (int d : {1, 3, 5}) rows.push_back(make_row(d, Segment::repo, 0, 0, 2.0));
  auto before = features::intensity_at(sorted_panel(rows), Segment::repo, 0, 0,
                                       10, 20);
  rows.push_back(make_row(7, Segment::repo, 0, 0, 2.0));
  auto after = features::intensity_at(sorted_panel(rows), Segment::repo, 0, 0,
                                      10, 20);
  CHECK(after == before + 1);
}

namespace {

features::RelationshipPanel flag_panel(
    const std::vector<std::pair<double, double>>& metrics) {
  features::RelationshipPanel panel;
  panel.window = 20;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    features::RelationshipRow row;
    row.date = 20;
    row.segment = Segment::repo;
    row.dealer = 0;
    row.family = static_cast<std::int32_t>(i);
    row.depth = metrics[i].first;
    row.intensity = static_cast<std::int32_t>(metrics[i].second);
    panel.rows.push_back(row);
  }
  return panel;
}

}  // namespace

TEST_CASE("client flags: max dyad is client_high, median dyad is neither") {
  std::vector<std::pair<double, double>> metrics;
  for (int i = 0; i < 12; ++i)
    metrics.emplace_back(0.01 * (i + 1), i + 1);  // strictly increasing both
  // Dyad 11 is the max of both; dyad 5 is near the median.
  auto flags = features::client_flags(flag_panel(metrics));
  REQUIRE(flags.flags.size() == 12);
  CHECK(flags.flags[11].client_high);
  CHECK_FALSE(flags.flags[11].client_low);
  CHECK_FALSE(flags.flags[5].client_high);
  CHECK_FALSE(flags.flags[5].client_low);
  CHECK(flags.flags[0].client_low);

  // Median in one metric blocks the flag even at max in the other.
  auto mixed = metrics;
  mixed[11].second = 6;  // max depth, middling intensity
  auto flags2 = features::client_flags(flag_panel(mixed));
  CHECK_FALSE(flags2.flags[11].client_high);
}

TEST_CASE("client flags are mutually exclusive and match a sort oracle") {
  std::mt19937 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<double, double>> metrics;
  for (int i = 0; i < 100; ++i)
    metrics.emplace_back(u(gen), std::floor(u(gen) * 20.0));
  auto flags = features::client_flags(flag_panel(metrics));

  std::vector<double> depths, intens;
  for (auto& m : metrics) {
    depths.push_back(m.first);
    intens.push_back(m.second);
  }
  const double dhi = features::quantile_type1(depths, 0.70);
  const double dlo = features::quantile_type1(depths, 0.30);
  const double ihi = features::quantile_type1(intens, 0.70);
  const double ilo = features::quantile_type1(intens, 0.30);

  int n_high = 0, n_low = 0;
  REQUIRE(flags.flags.size() == metrics.size());
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const auto& f = flags.flags[i];
    const auto fam = static_cast<std::size_t>(f.family);
    CHECK(f.client_high ==
          (metrics[fam].first > dhi && metrics[fam].second > ihi));
    CHECK(f.client_low ==
          (metrics[fam].first < dlo && metrics[fam].second < ilo));
    CHECK_FALSE((f.client_high && f.client_low));
    n_high += f.client_high;
    n_low += f.client_low;
  }
  CHECK(n_high > 0);
  CHECK(n_low > 0);
}

TEST_CASE("client flags: degenerate distribution yields all-zero flags") {
  std::vector<std::pair<double, double>> metrics(15, {0.5, 3.0});
  auto flags = features::client_flags(flag_panel(metrics));
  REQUIRE_FALSE(flags.warnings.empty());
  for (const auto& f : flags.flags) {
    CHECK_FALSE(f.client_high);
    CHECK_FALSE(f.client_low);
  }
}

TEST_CASE("client flags require 10 dyads and sane quantile order") {
  std::vector<std::pair<double, double>> metrics(5, {0.5, 3.0});
  CHECK_THROWS_AS(features::client_flags(flag_panel(metrics)), DataError);
  std::vector<std::pair<double, double>> ok(10, {0.5, 3.0});
  CHECK_THROWS_AS(features::client_flags(flag_panel(ok), 0.3, 0.7),
                  ConfigError);
}

TEST_CASE("quantile_type1 is the inclusive step function") {
  std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(features::quantile_type1(x, 0.70) == 7.0);
  CHECK(features::quantile_type1(x, 0.30) == 3.0);
  CHECK(features::quantile_type1(x, 0.05) == 1.0);
  CHECK(features::quantile_type1(x, 1.0) == 10.0);
}
