#pragma once

// End-to-end orchestration over the library modules: a fixed stage graph
// (synthetic market -> dyad features -> demand system -> granular
// instruments -> time-varying network VAR -> spectral connectedness ->
// yield-curve deviations -> panel regressions) driven by one structured
// configuration, with deterministic artifact emission and a hash-bearing
// run manifest for tamper detection.
//
// Stage graph (later stages consume the products of earlier ones):
//
//   sim ----> features --> demand --> giv
//    |            \___________\________\
//    |--> tvpvar --> connect            \
//    |--> curve ----------------------- regress
//
// When the simulation stage is disabled, the source tables are read from
// the configured input files instead.
//
// Determinism contract: given (config, seed), every emitted data byte is
// identical across runs and across thread counts. Work fanned out across
// evaluation points is written back by index, so scheduling never reorders
// floating-point arithmetic. The manifest records per-stage wall-clock
// times, which naturally vary run to run; every other manifest field is
// deterministic.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "connect.hpp"
#include "csv.hpp"
#include "curve.hpp"
#include "datamodel.hpp"
#include "demand.hpp"
#include "features.hpp"
#include "giv.hpp"
#include "panelreg.hpp"
#include "presets.hpp"
#include "rng.hpp"
#include "sim.hpp"
#include "tvpvar.hpp"
#include "types.hpp"

namespace repometrics::pipeline {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Configuration.

struct StageToggles {
  bool sim = true;
  bool features = true;
  bool demand = true;
  bool giv = true;
  bool tvpvar = true;
  bool connect = true;
  bool curve = true;
  bool regress = true;
};

// Source tables used when the simulation stage is disabled. Paths are
// resolved (must exist) at configuration-validation time.
struct InputPaths {
  std::string transactions;
  std::string bonds;
  std::string market_size;  // optional; a volume multiple is used when empty
  std::string macro;
};

struct FeaturesStageConfig {
  int window = 20;  // trailing window for depth/intensity, business days
};

struct DemandStageConfig {
  double top_share = 0.05;  // largest client families excluded before fitting
  // Level added to spreads when the source tables come from files; simulated
  // runs reuse the simulator's reference rate.
  double reference_rate = 1.0;
  // Market size per date when no size series is available: multiple of the
  // day's total traded volume.
  double market_size_multiple = 2.0;
};

struct TvpvarStageConfig {
  int lags = 2;
  double bandwidth = 0.0;      // kernel width in days; <= 0 uses sqrt(sample)
  double minnesota_phi = 0.5;  // overall prior tightness
  double intercept_kappa = 100.0;
  int stride = 1;   // spacing of evaluation points, days (1 = every day)
  int n_draws = 0;  // posterior draws per point; 0 = posterior mean only
};

struct ConnectStageConfig {
  double coverage = 0.4;    // cumulative-volume share for dealer selection
  double period_cut = 20.0; // cycle-length boundary between bands, days
  int grid = 100;           // frequency grid size and moving-average horizon
  bool write_adjacency = true;
};

struct CurveStageConfig {
  double min_maturity = 3.0;  // years; shorter quotes are excluded
  int min_quotes = 6;
  int min_buckets = 3;
  double lambda = 0.0;  // fixed smoothing penalty; <= 0 selects by GCV
  bool leave_one_out = false;
};

struct RegressStageConfig {
  std::string counterparty_period = "week";  // "week" or "month"
  int dk_lag = 20;  // serial-correlation horizon for the deviation panel SEs
};

struct PipelineConfig {
  std::string out_dir = "out";
  std::uint64_t seed = 42;
  int threads = 1;
  StageToggles stages;
  InputPaths inputs;
  sim::SimConfig sim;  // sim.seed is driven by the top-level seed
  FeaturesStageConfig features;
  DemandStageConfig demand;
  TvpvarStageConfig tvpvar;
  ConnectStageConfig connect;
  CurveStageConfig curve;
  RegressStageConfig regress;
};

inline constexpr std::array<const char*, 8> kStageNames = {
    "sim",     "features", "demand", "giv",
    "tvpvar",  "connect",  "curve",  "regress"};

// ---------------------------------------------------------------------------
// JSON configuration: strict parsing (unknown keys are errors) and a
// canonical echo used both for provenance and for the manifest's config
// fingerprint.

namespace detail {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

inline void check_keys(const json& j, const std::string& where,
                       std::initializer_list<std::string_view> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto a : allowed)
      if (it.key() == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("unknown config key '" +
                        (where.empty() ? it.key() : where + "." + it.key()) +
                        "'");
  }
}

template <class T>
inline void get_field(const json& j, const std::string& where,
                      const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" +
                      (where.empty() ? std::string(key)
                                     : where + "." + key) +
                      "' has the wrong type");
  }
}

inline const json* section(const json& j, const std::string& where,
                           const char* key) {
  auto it = j.find(key);
  if (it == j.end()) return nullptr;
  if (!it->is_object())
    throw ConfigError("config key '" +
                      (where.empty() ? std::string(key)
                                     : where + "." + key) +
                      "' must be an object");
  return &*it;
}

inline void apply_sim_json(sim::SimConfig& c, const json& j) {
  check_keys(j, "sim",
             {"n_dealers", "n_sectors", "n_families", "n_days", "n_bonds",
              "start_date", "reference_rate", "spread_lo", "spread_hi",
              "coverage", "fevd_grid", "period_cut", "fevd_knots",
              "intensity_window", "demand", "cost", "volume", "var", "curve",
              "effects"});
  get_field(j, "sim", "n_dealers", c.n_dealers);
  get_field(j, "sim", "n_sectors", c.n_sectors);
  get_field(j, "sim", "n_families", c.n_families);
  get_field(j, "sim", "n_days", c.n_days);
  get_field(j, "sim", "n_bonds", c.n_bonds);
  if (auto it = j.find("start_date"); it != j.end()) {
    std::string s;
    get_field(j, "sim", "start_date", s);
    c.start_date = parse_date(s);
  }
  get_field(j, "sim", "reference_rate", c.reference_rate);
  get_field(j, "sim", "spread_lo", c.spread_lo);
  get_field(j, "sim", "spread_hi", c.spread_hi);
  get_field(j, "sim", "coverage", c.coverage);
  get_field(j, "sim", "fevd_grid", c.fevd_grid);
  get_field(j, "sim", "period_cut", c.period_cut);
  get_field(j, "sim", "fevd_knots", c.fevd_knots);
  get_field(j, "sim", "intensity_window", c.intensity_window);
  if (const json* s = section(j, "sim", "demand")) {
    check_keys(*s, "sim.demand",
               {"alpha", "gamma", "core_edge", "attraction_sd", "state_load",
                "util_noise_sd", "shock_bound", "common_shock_sd",
                "outside_odds"});
    get_field(*s, "sim.demand", "alpha", c.demand.alpha);
    get_field(*s, "sim.demand", "gamma", c.demand.gamma);
    get_field(*s, "sim.demand", "core_edge", c.demand.core_edge);
    get_field(*s, "sim.demand", "attraction_sd", c.demand.attraction_sd);
    get_field(*s, "sim.demand", "state_load", c.demand.state_load);
    get_field(*s, "sim.demand", "util_noise_sd", c.demand.util_noise_sd);
    get_field(*s, "sim.demand", "shock_bound", c.demand.shock_bound);
    get_field(*s, "sim.demand", "common_shock_sd", c.demand.common_shock_sd);
    get_field(*s, "sim.demand", "outside_odds", c.demand.outside_odds);
  }
  if (const json* s = section(j, "sim", "cost")) {
    check_keys(*s, "sim.cost",
               {"base_repo_lo", "base_repo_hi", "base_rev_lo", "base_rev_hi",
                "factor_sd", "factor_rho", "endo_load"});
    get_field(*s, "sim.cost", "base_repo_lo", c.cost.base_repo_lo);
    get_field(*s, "sim.cost", "base_repo_hi", c.cost.base_repo_hi);
    get_field(*s, "sim.cost", "base_rev_lo", c.cost.base_rev_lo);
    get_field(*s, "sim.cost", "base_rev_hi", c.cost.base_rev_hi);
    get_field(*s, "sim.cost", "factor_sd", c.cost.factor_sd);
    get_field(*s, "sim.cost", "factor_rho", c.cost.factor_rho);
    get_field(*s, "sim.cost", "endo_load", c.cost.endo_load);
  }
  if (const json* s = section(j, "sim", "volume")) {
    check_keys(*s, "sim.volume",
               {"median", "log_sd", "sector_load", "captive_scale",
                "captive_log_sd", "overnight_repo", "overnight_rev",
                "term_lo", "term_hi", "collateral_haircut"});
    get_field(*s, "sim.volume", "median", c.volume.median);
    get_field(*s, "sim.volume", "log_sd", c.volume.log_sd);
    get_field(*s, "sim.volume", "sector_load", c.volume.sector_load);
    get_field(*s, "sim.volume", "captive_scale", c.volume.captive_scale);
    get_field(*s, "sim.volume", "captive_log_sd", c.volume.captive_log_sd);
    get_field(*s, "sim.volume", "overnight_repo", c.volume.overnight_repo);
    get_field(*s, "sim.volume", "overnight_rev", c.volume.overnight_rev);
    get_field(*s, "sim.volume", "term_lo", c.volume.term_lo);
    get_field(*s, "sim.volume", "term_hi", c.volume.term_hi);
    get_field(*s, "sim.volume", "collateral_haircut",
              c.volume.collateral_haircut);
  }
  if (const json* s = section(j, "sim", "var")) {
    check_keys(*s, "sim.var",
               {"own", "n_core", "core_in", "dealer_cross",
                "sector_to_dealer", "dealer_to_sector", "sector_cross",
                "cycle_amplitude", "rev_phase", "dealer_sd", "sector_sd"});
    get_field(*s, "sim.var", "own", c.var_spec.own);
    get_field(*s, "sim.var", "n_core", c.var_spec.n_core);
    get_field(*s, "sim.var", "core_in", c.var_spec.core_in);
    get_field(*s, "sim.var", "dealer_cross", c.var_spec.dealer_cross);
    get_field(*s, "sim.var", "sector_to_dealer", c.var_spec.sector_to_dealer);
    get_field(*s, "sim.var", "dealer_to_sector", c.var_spec.dealer_to_sector);
    get_field(*s, "sim.var", "sector_cross", c.var_spec.sector_cross);
    get_field(*s, "sim.var", "cycle_amplitude", c.var_spec.cycle_amplitude);
    get_field(*s, "sim.var", "rev_phase", c.var_spec.rev_phase);
    get_field(*s, "sim.var", "dealer_sd", c.var_spec.dealer_sd);
    get_field(*s, "sim.var", "sector_sd", c.var_spec.sector_sd);
  }
  if (const json* s = section(j, "sim", "curve")) {
    check_keys(*s, "sim.curve",
               {"level", "slope", "curvature", "tau", "level_sd", "level_rho",
                "a0", "b_bidask", "b_hilo", "b_duration", "b_maturity",
                "b_reserves", "b_stress", "noise_sd", "noise_rho"});
    get_field(*s, "sim.curve", "level", c.curve_spec.level);
    get_field(*s, "sim.curve", "slope", c.curve_spec.slope);
    get_field(*s, "sim.curve", "curvature", c.curve_spec.curvature);
    get_field(*s, "sim.curve", "tau", c.curve_spec.tau);
    get_field(*s, "sim.curve", "level_sd", c.curve_spec.level_sd);
    get_field(*s, "sim.curve", "level_rho", c.curve_spec.level_rho);
    get_field(*s, "sim.curve", "a0", c.curve_spec.a0);
    get_field(*s, "sim.curve", "b_bidask", c.curve_spec.b_bidask);
    get_field(*s, "sim.curve", "b_hilo", c.curve_spec.b_hilo);
    get_field(*s, "sim.curve", "b_duration", c.curve_spec.b_duration);
    get_field(*s, "sim.curve", "b_maturity", c.curve_spec.b_maturity);
    get_field(*s, "sim.curve", "b_reserves", c.curve_spec.b_reserves);
    get_field(*s, "sim.curve", "b_stress", c.curve_spec.b_stress);
    get_field(*s, "sim.curve", "noise_sd", c.curve_spec.noise_sd);
    get_field(*s, "sim.curve", "noise_rho", c.curve_spec.noise_rho);
  }
  if (const json* s = section(j, "sim", "effects")) {
    check_keys(*s, "sim.effects",
               {"markup", "markdown", "factor_repo", "factor_reverse"});
    get_field(*s, "sim.effects", "markup", c.effects.a1_markup);
    get_field(*s, "sim.effects", "markdown", c.effects.a2_markdown);
    get_field(*s, "sim.effects", "factor_repo", c.effects.a3_df_repo);
    get_field(*s, "sim.effects", "factor_reverse", c.effects.a4_df_rev);
  }
}

}  // namespace detail

inline void apply_json(PipelineConfig& c, const detail::json& j) {
  using detail::check_keys;
  using detail::get_field;
  using detail::section;
  if (!j.is_object())
    throw ConfigError("configuration root must be a JSON object");
  check_keys(j, "",
             {"out_dir", "seed", "threads", "stages", "inputs", "sim",
              "features", "demand", "tvpvar", "connect", "curve", "regress"});
  get_field(j, "", "out_dir", c.out_dir);
  get_field(j, "", "seed", c.seed);
  get_field(j, "", "threads", c.threads);
  if (const auto* s = section(j, "", "stages")) {
    check_keys(*s, "stages",
               {"sim", "features", "demand", "giv", "tvpvar", "connect",
                "curve", "regress"});
    get_field(*s, "stages", "sim", c.stages.sim);
    get_field(*s, "stages", "features", c.stages.features);
    get_field(*s, "stages", "demand", c.stages.demand);
    get_field(*s, "stages", "giv", c.stages.giv);
    get_field(*s, "stages", "tvpvar", c.stages.tvpvar);
    get_field(*s, "stages", "connect", c.stages.connect);
    get_field(*s, "stages", "curve", c.stages.curve);
    get_field(*s, "stages", "regress", c.stages.regress);
  }
  if (const auto* s = section(j, "", "inputs")) {
    check_keys(*s, "inputs",
               {"transactions", "bonds", "market_size", "macro"});
    get_field(*s, "inputs", "transactions", c.inputs.transactions);
    get_field(*s, "inputs", "bonds", c.inputs.bonds);
    get_field(*s, "inputs", "market_size", c.inputs.market_size);
    get_field(*s, "inputs", "macro", c.inputs.macro);
  }
  if (const auto* s = section(j, "", "sim")) detail::apply_sim_json(c.sim, *s);
  if (const auto* s = section(j, "", "features")) {
    check_keys(*s, "features", {"window"});
    get_field(*s, "features", "window", c.features.window);
  }
  if (const auto* s = section(j, "", "demand")) {
    check_keys(*s, "demand",
               {"top_share", "reference_rate", "market_size_multiple"});
    get_field(*s, "demand", "top_share", c.demand.top_share);
    get_field(*s, "demand", "reference_rate", c.demand.reference_rate);
    get_field(*s, "demand", "market_size_multiple",
              c.demand.market_size_multiple);
  }
  if (const auto* s = section(j, "", "tvpvar")) {
    check_keys(*s, "tvpvar",
               {"lags", "bandwidth", "minnesota_phi", "intercept_kappa",
                "stride", "n_draws"});
    get_field(*s, "tvpvar", "lags", c.tvpvar.lags);
    get_field(*s, "tvpvar", "bandwidth", c.tvpvar.bandwidth);
    get_field(*s, "tvpvar", "minnesota_phi", c.tvpvar.minnesota_phi);
    get_field(*s, "tvpvar", "intercept_kappa", c.tvpvar.intercept_kappa);
    get_field(*s, "tvpvar", "stride", c.tvpvar.stride);
    get_field(*s, "tvpvar", "n_draws", c.tvpvar.n_draws);
  }
  if (const auto* s = section(j, "", "connect")) {
    check_keys(*s, "connect",
               {"coverage", "period_cut", "grid", "write_adjacency"});
    get_field(*s, "connect", "coverage", c.connect.coverage);
    get_field(*s, "connect", "period_cut", c.connect.period_cut);
    get_field(*s, "connect", "grid", c.connect.grid);
    get_field(*s, "connect", "write_adjacency", c.connect.write_adjacency);
  }
  if (const auto* s = section(j, "", "curve")) {
    check_keys(*s, "curve",
               {"min_maturity", "min_quotes", "min_buckets", "lambda",
                "leave_one_out"});
    get_field(*s, "curve", "min_maturity", c.curve.min_maturity);
    get_field(*s, "curve", "min_quotes", c.curve.min_quotes);
    get_field(*s, "curve", "min_buckets", c.curve.min_buckets);
    get_field(*s, "curve", "lambda", c.curve.lambda);
    get_field(*s, "curve", "leave_one_out", c.curve.leave_one_out);
  }
  if (const auto* s = section(j, "", "regress")) {
    check_keys(*s, "regress", {"counterparty_period", "dk_lag"});
    get_field(*s, "regress", "counterparty_period",
              c.regress.counterparty_period);
    get_field(*s, "regress", "dk_lag", c.regress.dk_lag);
  }
}

inline PipelineConfig parse_config(const std::string& text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") +
                      e.what());
  }
  PipelineConfig c;
  apply_json(c, j);
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  return parse_config(read_file(path));
}

// Canonical JSON echo of a configuration: the source of the manifest's
// config fingerprint and of the CLI's config dump.
inline detail::ojson config_json(const PipelineConfig& c) {
  detail::ojson j;
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["stages"] = {{"sim", c.stages.sim},       {"features", c.stages.features},
                 {"demand", c.stages.demand}, {"giv", c.stages.giv},
                 {"tvpvar", c.stages.tvpvar}, {"connect", c.stages.connect},
                 {"curve", c.stages.curve},   {"regress", c.stages.regress}};
  j["inputs"] = {{"transactions", c.inputs.transactions},
                 {"bonds", c.inputs.bonds},
                 {"market_size", c.inputs.market_size},
                 {"macro", c.inputs.macro}};
  const auto& s = c.sim;
  j["sim"] = {
      {"n_dealers", s.n_dealers},
      {"n_sectors", s.n_sectors},
      {"n_families", s.n_families},
      {"n_days", s.n_days},
      {"n_bonds", s.n_bonds},
      {"start_date", format_date(s.start_date)},
      {"reference_rate", s.reference_rate},
      {"spread_lo", s.spread_lo},
      {"spread_hi", s.spread_hi},
      {"coverage", s.coverage},
      {"fevd_grid", s.fevd_grid},
      {"period_cut", s.period_cut},
      {"fevd_knots", s.fevd_knots},
      {"intensity_window", s.intensity_window},
      {"demand",
       {{"alpha", s.demand.alpha},
        {"gamma", s.demand.gamma},
        {"core_edge", s.demand.core_edge},
        {"attraction_sd", s.demand.attraction_sd},
        {"state_load", s.demand.state_load},
        {"util_noise_sd", s.demand.util_noise_sd},
        {"shock_bound", s.demand.shock_bound},
        {"common_shock_sd", s.demand.common_shock_sd},
        {"outside_odds", s.demand.outside_odds}}},
      {"cost",
       {{"base_repo_lo", s.cost.base_repo_lo},
        {"base_repo_hi", s.cost.base_repo_hi},
        {"base_rev_lo", s.cost.base_rev_lo},
        {"base_rev_hi", s.cost.base_rev_hi},
        {"factor_sd", s.cost.factor_sd},
        {"factor_rho", s.cost.factor_rho},
        {"endo_load", s.cost.endo_load}}},
      {"volume",
       {{"median", s.volume.median},
        {"log_sd", s.volume.log_sd},
        {"sector_load", s.volume.sector_load},
        {"captive_scale", s.volume.captive_scale},
        {"captive_log_sd", s.volume.captive_log_sd},
        {"overnight_repo", s.volume.overnight_repo},
        {"overnight_rev", s.volume.overnight_rev},
        {"term_lo", s.volume.term_lo},
        {"term_hi", s.volume.term_hi},
        {"collateral_haircut", s.volume.collateral_haircut}}},
      {"var",
       {{"own", s.var_spec.own},
        {"n_core", s.var_spec.n_core},
        {"core_in", s.var_spec.core_in},
        {"dealer_cross", s.var_spec.dealer_cross},
        {"sector_to_dealer", s.var_spec.sector_to_dealer},
        {"dealer_to_sector", s.var_spec.dealer_to_sector},
        {"sector_cross", s.var_spec.sector_cross},
        {"cycle_amplitude", s.var_spec.cycle_amplitude},
        {"rev_phase", s.var_spec.rev_phase},
        {"dealer_sd", s.var_spec.dealer_sd},
        {"sector_sd", s.var_spec.sector_sd}}},
      {"curve",
       {{"level", s.curve_spec.level},
        {"slope", s.curve_spec.slope},
        {"curvature", s.curve_spec.curvature},
        {"tau", s.curve_spec.tau},
        {"level_sd", s.curve_spec.level_sd},
        {"level_rho", s.curve_spec.level_rho},
        {"a0", s.curve_spec.a0},
        {"b_bidask", s.curve_spec.b_bidask},
        {"b_hilo", s.curve_spec.b_hilo},
        {"b_duration", s.curve_spec.b_duration},
        {"b_maturity", s.curve_spec.b_maturity},
        {"b_reserves", s.curve_spec.b_reserves},
        {"b_stress", s.curve_spec.b_stress},
        {"noise_sd", s.curve_spec.noise_sd},
        {"noise_rho", s.curve_spec.noise_rho}}},
      {"effects",
       {{"markup", s.effects.a1_markup},
        {"markdown", s.effects.a2_markdown},
        {"factor_repo", s.effects.a3_df_repo},
        {"factor_reverse", s.effects.a4_df_rev}}}};
  j["features"] = {{"window", c.features.window}};
  j["demand"] = {{"top_share", c.demand.top_share},
                 {"reference_rate", c.demand.reference_rate},
                 {"market_size_multiple", c.demand.market_size_multiple}};
  j["tvpvar"] = {{"lags", c.tvpvar.lags},
                 {"bandwidth", c.tvpvar.bandwidth},
                 {"minnesota_phi", c.tvpvar.minnesota_phi},
                 {"intercept_kappa", c.tvpvar.intercept_kappa},
                 {"stride", c.tvpvar.stride},
                 {"n_draws", c.tvpvar.n_draws}};
  j["connect"] = {{"coverage", c.connect.coverage},
                  {"period_cut", c.connect.period_cut},
                  {"grid", c.connect.grid},
                  {"write_adjacency", c.connect.write_adjacency}};
  j["curve"] = {{"min_maturity", c.curve.min_maturity},
                {"min_quotes", c.curve.min_quotes},
                {"min_buckets", c.curve.min_buckets},
                {"lambda", c.curve.lambda},
                {"leave_one_out", c.curve.leave_one_out}};
  j["regress"] = {{"counterparty_period", c.regress.counterparty_period},
                  {"dk_lag", c.regress.dk_lag}};
  return j;
}

// Fingerprint of the analytical configuration: everything except the output
// location and thread count, neither of which may affect a single emitted
// byte, so equal fingerprints promise byte-equal artifacts.
inline std::string config_fingerprint(const PipelineConfig& c) {
  detail::ojson j = config_json(c);
  j.erase("out_dir");
  j.erase("threads");
  const std::string dump = j.dump();
  return to_hex(fnv1a64(dump.data(), dump.size()));
}

// Environment overrides: only output location, input paths, and parallelism
// may come from the environment; analytical settings cannot.
inline void apply_env(PipelineConfig& c) {
  if (const char* v = std::getenv("REPOMETRICS_OUT_DIR")) c.out_dir = v;
  if (const char* v = std::getenv("REPOMETRICS_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1)
      throw ConfigError("REPOMETRICS_THREADS must be a positive integer");
    c.threads = static_cast<int>(n);
  }
  if (const char* v = std::getenv("REPOMETRICS_TRANSACTIONS"))
    c.inputs.transactions = v;
  if (const char* v = std::getenv("REPOMETRICS_BONDS")) c.inputs.bonds = v;
  if (const char* v = std::getenv("REPOMETRICS_MARKET_SIZE"))
    c.inputs.market_size = v;
  if (const char* v = std::getenv("REPOMETRICS_MACRO")) c.inputs.macro = v;
}

// ---------------------------------------------------------------------------
// Validation: parameter ranges, the stage dependency graph, and input-path
// resolution. All failures throw ConfigError before any stage runs.

inline void validate(const PipelineConfig& c) {
  if (c.out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (c.threads < 1) throw ConfigError("threads must be at least 1");
  if (c.features.window < 1)
    throw ConfigError("features.window must be at least 1");
  if (!(c.demand.top_share >= 0.0 && c.demand.top_share < 1.0))
    throw ConfigError("demand.top_share must lie in [0, 1)");
  if (c.tvpvar.stride < 1)
    throw ConfigError("tvpvar.stride must be at least 1");
  if (c.tvpvar.n_draws < 0)
    throw ConfigError("tvpvar.n_draws must not be negative");
  if (c.connect.grid < 4)
    throw ConfigError("connect.grid must be at least 4");
  if (!(c.connect.period_cut > 2.0))
    throw ConfigError("connect.period_cut must exceed 2 days");
  if (!(c.connect.coverage > 0.0 && c.connect.coverage <= 1.0))
    throw ConfigError("connect.coverage must lie in (0, 1]");
  if (c.regress.dk_lag < 0)
    throw ConfigError("regress.dk_lag must not be negative");
  if (c.regress.counterparty_period != "week" &&
      c.regress.counterparty_period != "month")
    throw ConfigError("regress.counterparty_period must be 'week' or 'month'");

  const auto& st = c.stages;
  auto require = [](bool enabled, bool dep, const char* stage,
                    const char* needs) {
    if (enabled && !dep)
      throw ConfigError(std::string("stage '") + stage +
                        "' requires stage '" + needs +
                        "'; enable it or disable '" + stage + "'");
  };
  require(st.demand, st.features, "demand", "features");
  require(st.giv, st.demand, "giv", "demand");
  require(st.connect, st.tvpvar, "connect", "tvpvar");
  require(st.regress, st.demand, "regress", "demand");
  require(st.regress, st.giv, "regress", "giv");
  require(st.regress, st.connect, "regress", "connect");
  require(st.regress, st.curve, "regress", "curve");

  const bool needs_transactions =
      st.features || st.demand || st.giv || st.tvpvar || st.regress;
  if (!st.sim) {
    if (needs_transactions && c.inputs.transactions.empty())
      throw ConfigError(
          "the enabled stages need transaction data: enable stage 'sim' or "
          "set inputs.transactions");
    if (st.curve && c.inputs.bonds.empty())
      throw ConfigError(
          "stage 'curve' needs bond quotes: enable stage 'sim' or set "
          "inputs.bonds");
    if (st.regress && c.inputs.macro.empty())
      throw ConfigError(
          "stage 'regress' needs the macro control series: enable stage "
          "'sim' or set inputs.macro");
    for (const std::string* p :
         {&c.inputs.transactions, &c.inputs.bonds, &c.inputs.market_size,
          &c.inputs.macro})
      if (!p->empty() && !std::filesystem::exists(*p))
        throw ConfigError("input file not found: " + *p);
  }
}

// ---------------------------------------------------------------------------
// Run manifest.

struct StageRecord {
  std::string name;
  std::string status;  // "ok", "skipped", "failed", "not_run"
  double wall_ms = 0.0;
  std::vector<std::string> outputs;  // file names relative to out_dir
  std::string error;                 // diagnostic when failed
};

struct Manifest {
  std::string version;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::map<std::string, std::string> input_hashes;   // path -> fnv-1a 64 hex
  std::vector<StageRecord> stages;
  std::map<std::string, std::string> output_hashes;  // file name -> hex
  std::vector<std::string> incomplete_outputs;  // written by a failed stage
};

inline detail::ojson manifest_json(const Manifest& m) {
  detail::ojson j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["input_hashes"] = detail::ojson::object();
  for (const auto& [k, v] : m.input_hashes) j["input_hashes"][k] = v;
  j["stages"] = detail::ojson::array();
  for (const auto& s : m.stages) {
    detail::ojson r;
    r["name"] = s.name;
    r["status"] = s.status;
    r["wall_ms"] = s.wall_ms;
    r["outputs"] = s.outputs;
    if (!s.error.empty()) r["error"] = s.error;
    j["stages"].push_back(std::move(r));
  }
  j["output_hashes"] = detail::ojson::object();
  for (const auto& [k, v] : m.output_hashes) j["output_hashes"][k] = v;
  if (!m.incomplete_outputs.empty())
    j["incomplete_outputs"] = m.incomplete_outputs;
  return j;
}

inline void write_manifest(const Manifest& m,
                           const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open output file: " + path.string());
  os << manifest_json(m).dump(2) << '\n';
}

inline Manifest read_manifest(const std::string& path) {
  detail::json j;
  try {
    j = detail::json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw DataError(std::string("manifest is not valid JSON: ") + e.what());
  }
  Manifest m;
  m.version = j.value("version", "");
  m.seed = j.value("seed", std::uint64_t{0});
  m.config_hash = j.value("config_hash", "");
  if (j.contains("input_hashes"))
    for (auto it = j["input_hashes"].begin(); it != j["input_hashes"].end();
         ++it)
      m.input_hashes[it.key()] = it.value().get<std::string>();
  if (j.contains("stages"))
    for (const auto& r : j["stages"]) {
      StageRecord s;
      s.name = r.value("name", "");
      s.status = r.value("status", "");
      s.wall_ms = r.value("wall_ms", 0.0);
      if (r.contains("outputs"))
        for (const auto& o : r["outputs"])
          s.outputs.push_back(o.get<std::string>());
      s.error = r.value("error", "");
      m.stages.push_back(std::move(s));
    }
  if (j.contains("output_hashes"))
    for (auto it = j["output_hashes"].begin(); it != j["output_hashes"].end();
         ++it)
      m.output_hashes[it.key()] = it.value().get<std::string>();
  if (j.contains("incomplete_outputs"))
    for (const auto& o : j["incomplete_outputs"])
      m.incomplete_outputs.push_back(o.get<std::string>());
  return m;
}

// Re-hashes every recorded output; returns one message per missing or
// tampered file (empty means everything verifies).
inline std::vector<std::string> verify_outputs(const Manifest& m,
                                               const std::string& out_dir) {
  std::vector<std::string> problems;
  for (const auto& [name, expect] : m.output_hashes) {
    const auto path = std::filesystem::path(out_dir) / name;
    if (!std::filesystem::exists(path)) {
      problems.push_back("missing output: " + name);
      continue;
    }
    if (hash_file(path.string()) != expect)
      problems.push_back("hash mismatch: " + name);
  }
  return problems;
}

// ---------------------------------------------------------------------------
// In-memory products handed from stage to stage (and returned to callers so
// tests and tools can inspect results without re-reading the artifacts).

struct Products {
  // Source tables.
  Calendar calendar;  // trading calendar of the transaction data
  std::vector<Transaction> records;
  Registry dealers, nondealers, families, isins;
  std::vector<Sector> family_sector;
  datamodel::BondData bonds;
  std::array<demand::MarketSizeRule, 2> market_size{};
  std::vector<double> log_reserves, cb_share, stress_a, stress_b;
  std::optional<sim::GroundTruth> truth;  // simulated runs only
  // Dyad features.
  datamodel::DyadPanel dyads;
  features::RelationshipPanel relationship;
  // Demand system.
  std::array<demand::SharePanel, 2> shares;  // full panels (all families)
  std::array<demand::DemandEstimates, 2> estimates;
  std::array<std::vector<demand::PowerRow>, 2> power;
  std::array<std::vector<demand::BondPowerRow>, 2> bond_power;
  // Granular instruments.
  giv::Series givs;
  // Time-varying VAR.
  struct TvpSegment {
    std::vector<std::int32_t> eval_days;  // calendar index per evaluation
    std::vector<tvpvar::Draw> states;     // posterior mean per evaluation
    std::vector<std::vector<tvpvar::Draw>> draws;  // when n_draws > 0
    std::vector<std::string> var_names;
    int n_dealer_vars = 0;
    int lags = 0;
  };
  std::array<TvpSegment, 2> tvp;
  // Connectedness.
  struct FactorSeries {
    std::vector<double> transitory, persistent;  // daily, calendar-aligned
  };
  std::array<FactorSeries, 2> factors;
  std::array<std::vector<int>, 2> selected_dealers;
  // Band-share tensors at the evaluation points: [segment][eval][band].
  std::array<std::vector<std::array<Eigen::MatrixXd, 2>>, 2> adjacency;
  // Yield curves.
  std::vector<curve::CurveDay> curve_days;
  // Regressions.
  std::array<panelreg::RepoImpactResult, 2> impact;
  panelreg::MispricingResults mispricing;
  panelreg::RegressionResult noise_regression;
};

// ---------------------------------------------------------------------------
// Stage implementations.

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open output file: " + path.string());
  return os;
}

// Index-parallel map: runs fn(i) for i in [0, n) on up to `threads` workers.
// Each index writes only its own slot, so results are identical for every
// thread count.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t k =
      std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> workers;
  workers.reserve(k);
  for (std::size_t w = 0; w < k; ++w)
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
        fn(i);
    }));
  std::exception_ptr first;
  for (auto& f : workers) {
    try {
      f.get();
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

inline std::string csv_safe(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return s;
}

// --- simulate -------------------------------------------------------------

inline void stage_sim(const PipelineConfig& config, Products& P,
                      const std::filesystem::path& dir) {
  sim::SimConfig sc = config.sim;
  sc.seed = config.seed;
  sim::SimResult r = sim::simulate_market(sc);
  sim::write_transactions(r, (dir / "transactions.csv").string());
  sim::write_bonds(r, (dir / "bonds.csv").string());
  sim::write_market_size(r, (dir / "market_size.csv").string());
  sim::write_macro(r, (dir / "macro.csv").string());
  sim::write_ground_truth(r, (dir / "ground_truth.json").string());

  P.calendar = r.calendar;
  P.records = std::move(r.transactions);
  P.dealers = std::move(r.dealers);
  P.nondealers = std::move(r.nondealers);
  P.families = std::move(r.families);
  P.isins = r.isins;
  P.family_sector = std::move(r.family_sector);
  P.bonds.records = std::move(r.bonds);
  P.bonds.isins = std::move(r.isins);
  P.bonds.calendar = P.calendar;
  for (int s = 0; s < 2; ++s)
    P.market_size[static_cast<std::size_t>(s)] =
        demand::MarketSizeRule::from_series(
            r.truth.market_size[static_cast<std::size_t>(s)]);
  P.log_reserves = std::move(r.log_reserves);
  P.cb_share = std::move(r.cb_share);
  P.stress_a = std::move(r.stress_a);
  P.stress_b = std::move(r.stress_b);
  P.truth = std::move(r.truth);
}

// --- file inputs (simulation disabled) -------------------------------------

inline void load_inputs(const PipelineConfig& config, Products& P,
                        Manifest& man) {
  const auto& in = config.inputs;
  const auto& st = config.stages;
  const bool needs_transactions =
      st.features || st.demand || st.giv || st.tvpvar || st.regress;

  auto reject_report = [](const char* what,
                          const std::vector<datamodel::Reject>& rejects) {
    if (rejects.empty()) return;
    throw DataError(std::string(what) + ": " +
                    std::to_string(rejects.size()) +
                    " malformed rows (line " +
                    std::to_string(rejects.front().line) + ": " +
                    rejects.front().reason + ")");
  };

  if (needs_transactions) {
    auto td = datamodel::load_transactions(in.transactions);
    reject_report("transactions file", td.rejects);
    man.input_hashes[in.transactions] = hash_file(in.transactions);
    P.records = std::move(td.records);
    P.calendar = std::move(td.calendar);
    P.dealers = std::move(td.dealers);
    P.nondealers = std::move(td.nondealers);
    P.families = std::move(td.families);
    P.isins = std::move(td.isins);
    P.family_sector = std::move(td.family_sector);
  }
  if (st.curve) {
    auto bd = datamodel::load_bonds(in.bonds);
    reject_report("bonds file", bd.rejects);
    man.input_hashes[in.bonds] = hash_file(in.bonds);
    if (P.calendar.size() == 0) P.calendar = bd.calendar;
    P.bonds = std::move(bd);
  }
  if (st.demand) {
    if (in.market_size.empty()) {
      for (auto& rule : P.market_size)
        rule = demand::MarketSizeRule::times(config.demand.market_size_multiple);
    } else {
      auto reader = csv::Reader::from_file(in.market_size);
      man.input_hashes[in.market_size] = hash_file(in.market_size);
      const auto ci_date = reader.column("date");
      const auto ci_seg = reader.column("segment");
      const auto ci_size = reader.column("market_size");
      std::array<std::map<std::int32_t, double>, 2> series;
      std::vector<std::string> fields;
      while (reader.next(fields)) {
        const auto where = " (market size file line " +
                           std::to_string(reader.line_number()) + ")";
        const auto t = P.calendar.index_of(parse_date(fields[ci_date]));
        if (t < 0)
          throw DataError("market-size date outside the trading calendar" +
                          where);
        const auto seg = static_cast<std::size_t>(segment_from(fields[ci_seg]));
        series[seg][t] = std::stod(fields[ci_size]);
      }
      for (int s = 0; s < 2; ++s)
        P.market_size[static_cast<std::size_t>(s)] =
            demand::MarketSizeRule::from_series(
                std::move(series[static_cast<std::size_t>(s)]));
    }
  }
  if (st.regress) {
    auto reader = csv::Reader::from_file(in.macro);
    man.input_hashes[in.macro] = hash_file(in.macro);
    const auto ci_date = reader.column("date");
    const auto ci_res = reader.column("log_reserves");
    const auto ci_cb = reader.column("cb_share");
    const auto ci_sa = reader.column("stress_a");
    const auto ci_sb = reader.column("stress_b");
    const auto T = static_cast<std::size_t>(P.calendar.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    P.log_reserves.assign(T, nan);
    P.cb_share.assign(T, nan);
    P.stress_a.assign(T, nan);
    P.stress_b.assign(T, nan);
    std::vector<std::string> fields;
    while (reader.next(fields)) {
      const auto t = P.calendar.index_of(parse_date(fields[ci_date]));
      if (t < 0) continue;  // dates outside the trading calendar are unused
      const auto i = static_cast<std::size_t>(t);
      P.log_reserves[i] = std::stod(fields[ci_res]);
      P.cb_share[i] = std::stod(fields[ci_cb]);
      P.stress_a[i] = std::stod(fields[ci_sa]);
      P.stress_b[i] = std::stod(fields[ci_sb]);
    }
    for (std::size_t i = 0; i < T; ++i)
      if (!std::isfinite(P.log_reserves[i]))
        throw DataError("macro series does not cover trading day " +
                        P.calendar.date_string(static_cast<std::int32_t>(i)));
  }
}

// --- features ---------------------------------------------------------------

inline void stage_features(const PipelineConfig& config, Products& P,
                           const std::filesystem::path& dir) {
  P.dyads = datamodel::aggregate_dyads(P.records);
  P.relationship =
      features::build_relationship(P.dyads, config.features.window);
  auto os = open_out(dir / "relationships.csv");
  csv::Writer w(os);
  w.row({"date", "segment", "dealer", "family", "depth", "intensity"});
  for (const auto& row : P.relationship.rows) {
    w.field(P.calendar.date_string(row.date));
    w.field(segment_name(row.segment));
    w.field(P.dealers.name(row.dealer));
    w.field(P.families.name(row.family));
    w.field(row.depth);
    w.field(row.intensity);
    w.endrow();
  }
}

// --- demand -----------------------------------------------------------------

inline void stage_demand(const PipelineConfig& config, Products& P,
                         const std::filesystem::path& dir) {
  const double ref = config.stages.sim ? config.sim.reference_rate
                                       : config.demand.reference_rate;
  // Full share panels over all families: the market-power basis.
  for (int s = 0; s < 2; ++s) {
    const auto seg = static_cast<Segment>(s);
    auto& panel = P.shares[static_cast<std::size_t>(s)];
    panel = demand::build_shares(P.records, seg,
                                 P.market_size[static_cast<std::size_t>(s)],
                                 ref);
    demand::attach_frequency(panel, P.relationship);
  }

  // Estimation sample: the largest client families are set aside so the
  // inverted shares are not dominated by a handful of megafunds.
  const auto est_records =
      demand::exclude_top_families(P.records, config.demand.top_share);

  ojson jest;
  for (int s = 0; s < 2; ++s) {
    const auto seg = static_cast<Segment>(s);
    const auto other = static_cast<std::size_t>(1 - s);
    auto panel = demand::build_shares(
        est_records, seg, P.market_size[static_cast<std::size_t>(s)], ref);
    demand::attach_frequency(panel, P.relationship);

    // Cost-side instrument: the same dealer's volume-weighted rate in the
    // other segment on the same day. The shared funding factor moves both
    // segments' rates, while this segment's demand shifters do not reach the
    // other side -- then the cross-dealer standardization strips market-wide
    // movements so only the dealer-specific cost variation remains.
    std::map<std::pair<std::int32_t, std::int32_t>, double> rate_other;
    for (const auto& row : P.shares[other].rows)
      rate_other[{row.date, row.dealer}] = row.rate;
    const std::size_t n = panel.rows.size();
    std::vector<double> iv(n);
    std::vector<std::int32_t> dates(n);
    std::map<std::int32_t, std::pair<double, int>> date_mean;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = panel.rows[i];
      dates[i] = row.date;
      auto it = rate_other.find({row.date, row.dealer});
      iv[i] = it == rate_other.end()
                  ? std::numeric_limits<double>::quiet_NaN()
                  : it->second;
      if (std::isfinite(iv[i])) {
        date_mean[row.date].first += iv[i];
        date_mean[row.date].second += 1;
      }
    }
    // Dealers absent from the other segment on a date (none in simulated
    // data) are imputed at the date mean, which standardizes to zero.
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(iv[i])) {
        auto it = date_mean.find(dates[i]);
        iv[i] = it != date_mean.end() && it->second.second > 0
                    ? it->second.first / it->second.second
                    : 0.0;
      }
    auto div = demand::difference_iv(dates, iv);
    std::vector<double> div_sq(n);
    for (std::size_t i = 0; i < n; ++i) div_sq[i] = div[i] * div[i];

    demand::EstimateConfig ec;
    ec.method = demand::Method::control_function;
    ec.endogenous = {"rate"};
    ec.instruments = {"cross_rate_div", "cross_rate_div_sq"};
    ec.excluded_top_share = config.demand.top_share;
    auto est = demand::estimate_demand(
        panel, P.calendar, ec,
        {{"cross_rate_div", div}, {"cross_rate_div_sq", div_sq}});
    P.estimates[static_cast<std::size_t>(s)] = est;
    P.power[static_cast<std::size_t>(s)] = demand::build_market_power(
        P.shares[static_cast<std::size_t>(s)], est.alpha);
    P.bond_power[static_cast<std::size_t>(s)] = demand::bond_weighted_power(
        P.power[static_cast<std::size_t>(s)], P.records, seg);

    ojson je;
    je["segment"] = segment_name(seg);
    je["side"] = est.side == demand::Side::demand ? "demand" : "supply";
    je["alpha"] = est.alpha;
    je["rate_coef"] = est.rate_coef;
    je["gamma"] = est.gamma;
    je["beta_maturity"] = est.beta_maturity;
    je["beta_collateral"] = est.beta_collateral;
    je["method"] = "control_function";
    je["instruments"] = ec.instruments;
    je["n_obs"] = est.n_obs;
    je["terms"] = est.terms;
    ojson coefs = ojson::array(), ses = ojson::array();
    for (std::size_t i = 0; i < est.terms.size(); ++i) {
      coefs.push_back(est.coef(static_cast<Eigen::Index>(i)));
      ses.push_back(std::sqrt(
          est.vcov(static_cast<Eigen::Index>(i),
                   static_cast<Eigen::Index>(i))));
    }
    je["coef"] = std::move(coefs);
    je["se"] = std::move(ses);
    je["first_stage_F"] = est.first_stage_F;
    je["warnings"] = est.warnings;
    jest[segment_name(seg)] = std::move(je);
  }
  {
    auto os = open_out(dir / "demand_estimates.json");
    os << jest.dump(2) << '\n';
  }
  {
    auto os = open_out(dir / "market_power.csv");
    csv::Writer w(os);
    w.row({"date", "segment", "dealer", "share", "rate", "elasticity",
           "lerner"});
    for (int s = 0; s < 2; ++s)
      for (const auto& p : P.power[static_cast<std::size_t>(s)]) {
        w.field(P.calendar.date_string(p.date));
        w.field(segment_name(p.segment));
        w.field(P.dealers.name(p.dealer));
        w.field(p.share);
        w.field(p.rate);
        w.field(p.elasticity);
        w.field(p.lerner);
        w.endrow();
      }
  }
  {
    auto os = open_out(dir / "bond_power.csv");
    csv::Writer w(os);
    w.row({"date", "segment", "isin", "mean", "dispersion", "volume"});
    for (int s = 0; s < 2; ++s)
      for (const auto& b : P.bond_power[static_cast<std::size_t>(s)]) {
        w.field(P.calendar.date_string(b.date));
        w.field(segment_name(b.segment));
        w.field(P.isins.name(b.isin));
        w.field(b.mean);
        w.field(b.dispersion);
        w.field(b.volume);
        w.endrow();
      }
  }
}

// --- granular instruments ---------------------------------------------------

inline constexpr std::array<const char*, 8> kGivColumns = {
    "z_depth_dealer",    "z_depth_dealer_sq",
    "z_depth_nondealer", "z_depth_nondealer_sq",
    "z_intensity",       "z_intensity_sq",
    "z_power",           "z_power_sq"};

inline void stage_giv(const PipelineConfig&, Products& P,
                      const std::filesystem::path& dir) {
  giv::Config gc;
  P.givs = giv::build_series(P.dyads, P.relationship, P.power[0], P.power[1],
                             P.calendar, gc);
  auto os = open_out(dir / "giv.csv");
  csv::Writer w(os);
  std::vector<std::string> header = {"date"};
  for (const char* c : kGivColumns) header.emplace_back(c);
  w.row(header);
  const auto& g = P.givs;
  for (std::size_t i = 0; i < g.dates.size(); ++i) {
    w.field(P.calendar.date_string(g.dates[i]));
    w.field(g.z_depthD[i]);
    w.field(g.z_depthD2[i]);
    w.field(g.z_depthND[i]);
    w.field(g.z_depthND2[i]);
    w.field(g.z_int[i]);
    w.field(g.z_int2[i]);
    w.field(g.z_li[i]);
    w.field(g.z_li2[i]);
    w.endrow();
  }
}

// --- time-varying VAR ---------------------------------------------------------

// Observables per segment: one log-volume series per dealer plus one per
// client sector present in the data. House families keep every dealer-day
// strictly positive; the unit floor only guards degenerate inputs.
inline Eigen::MatrixXd volume_panel(const Products& P, Segment seg,
                                    const std::vector<int>& sector_slot,
                                    int n_sectors_present) {
  const auto T = P.calendar.size();
  const auto nd = P.dealers.size();
  Eigen::MatrixXd vol =
      Eigen::MatrixXd::Zero(T, nd + n_sectors_present);
  for (const auto& row : P.dyads.rows) {
    if (row.segment != seg) continue;
    vol(row.date, row.dealer) += row.volume;
    const int slot = sector_slot[static_cast<std::size_t>(row.sector)];
    vol(row.date, nd + slot) += row.volume;
  }
  return vol.unaryExpr(
      [](double v) { return std::log(std::max(v, 1.0)); });
}

inline void stage_tvpvar(const PipelineConfig& config, Products& P,
                         const std::filesystem::path& dir) {
  // Sector columns: only sectors that actually appear get a series.
  std::vector<int> sector_slot(static_cast<std::size_t>(kNumSectors), -1);
  {
    std::set<int> present;
    for (const auto& s : P.family_sector) present.insert(static_cast<int>(s));
    int slot = 0;
    for (int s : present) sector_slot[static_cast<std::size_t>(s)] = slot++;
  }
  int n_present = 0;
  for (int s : sector_slot) n_present += s >= 0 ? 1 : 0;

  const int p = config.tvpvar.lags;
  auto os_b = open_out(dir / "tvpvar_coefficients.csv");
  csv::Writer wb(os_b);
  wb.row({"segment", "date", "row", "col", "value"});
  auto os_s = open_out(dir / "tvpvar_sigma.csv");
  csv::Writer ws(os_s);
  ws.row({"segment", "date", "row", "col", "value"});

  for (int s = 0; s < 2; ++s) {
    const auto seg = static_cast<Segment>(s);
    auto& tv = P.tvp[static_cast<std::size_t>(s)];
    const Eigen::MatrixXd series = volume_panel(P, seg, sector_slot, n_present);
    const auto N = series.cols();
    const auto d = tvpvar::build_design(series, p);
    const auto T_eff = d.x.rows();
    const Eigen::VectorXd sig2 = tvpvar::ar_residual_variances(series, p);
    const tvpvar::Prior prior = tvpvar::minnesota_prior(
        N, p, sig2, config.tvpvar.minnesota_phi, config.tvpvar.intercept_kappa);
    const double bw = config.tvpvar.bandwidth > 0.0
                          ? config.tvpvar.bandwidth
                          : std::sqrt(static_cast<double>(T_eff));

    std::vector<Eigen::Index> ks;
    for (Eigen::Index k = 0; k < T_eff; k += config.tvpvar.stride)
      ks.push_back(k);
    if (ks.back() != T_eff - 1) ks.push_back(T_eff - 1);

    tv.lags = p;
    tv.n_dealer_vars = P.dealers.size();
    tv.var_names.clear();
    for (std::int32_t dlr = 0; dlr < P.dealers.size(); ++dlr)
      tv.var_names.push_back(P.dealers.name(dlr));
    for (int sec = 0; sec < kNumSectors; ++sec)
      if (sector_slot[static_cast<std::size_t>(sec)] >= 0)
        tv.var_names.push_back(
            "sector_" + std::string(sector_name(static_cast<Sector>(sec))));
    tv.eval_days.resize(ks.size());
    tv.states.resize(ks.size());
    tv.draws.assign(config.tvpvar.n_draws > 0 ? ks.size() : 0, {});

    parallel_for(ks.size(), config.threads, [&](std::size_t i) {
      const auto k = ks[i];
      const Eigen::VectorXd rho = tvpvar::kernel_weights(T_eff, bw, k, true);
      const auto post = tvpvar::qbll_posterior(d.x, d.y, prior, rho, p);
      tv.eval_days[i] = static_cast<std::int32_t>(k) + p;
      tv.states[i] = {post.b_mean, tvpvar::posterior_mean_sigma(post)};
      if (config.tvpvar.n_draws > 0) {
        auto stream = rng::Stream(config.seed)
                          .child("tvpvar")
                          .child(static_cast<std::uint64_t>(s))
                          .child(static_cast<std::uint64_t>(k));
        auto& out = tv.draws[i];
        out.reserve(static_cast<std::size_t>(config.tvpvar.n_draws));
        for (int dnum = 0; dnum < config.tvpvar.n_draws; ++dnum)
          out.push_back(tvpvar::sample_posterior(post, stream));
      }
    });

    for (std::size_t i = 0; i < ks.size(); ++i) {
      const auto& st = tv.states[i];
      const auto date = P.calendar.date_string(tv.eval_days[i]);
      for (Eigen::Index r = 0; r < st.b.rows(); ++r)
        for (Eigen::Index cidx = 0; cidx < st.b.cols(); ++cidx) {
          wb.field(segment_name(seg));
          wb.field(date);
          wb.field(static_cast<long long>(r));
          wb.field(static_cast<long long>(cidx));
          wb.field(st.b(r, cidx));
          wb.endrow();
        }
      for (Eigen::Index r = 0; r < st.sigma.rows(); ++r)
        for (Eigen::Index cidx = 0; cidx < st.sigma.cols(); ++cidx) {
          ws.field(segment_name(seg));
          ws.field(date);
          ws.field(static_cast<long long>(r));
          ws.field(static_cast<long long>(cidx));
          ws.field(st.sigma(r, cidx));
          ws.endrow();
        }
    }
  }
}

// --- connectedness ------------------------------------------------------------

inline void stage_connect(const PipelineConfig& config, Products& P,
                          const std::filesystem::path& dir) {
  const int grid = config.connect.grid;
  const auto bands = connect::make_band_indices(grid, config.connect.period_cut);
  const std::vector<std::vector<int>> band_sets = {bands.transitory,
                                                   bands.persistent};
  static constexpr std::array<const char*, 2> kBandNames = {"transitory",
                                                            "persistent"};

  for (int s = 0; s < 2; ++s) {
    const auto seg = static_cast<Segment>(s);
    const auto& tv = P.tvp[static_cast<std::size_t>(s)];
    if (tv.states.empty())
      throw DataError("connectedness: no estimated coefficient paths");
    const auto N = tv.states.front().b.cols();
    const int p = tv.lags;

    // Dealer selection by cumulative traded volume in this segment.
    std::vector<double> volumes(static_cast<std::size_t>(tv.n_dealer_vars),
                                0.0);
    for (const auto& row : P.dyads.rows)
      if (row.segment == seg)
        volumes[static_cast<std::size_t>(row.dealer)] += row.volume;
    const auto selected =
        connect::select_dealers(volumes, config.connect.coverage);
    P.selected_dealers[static_cast<std::size_t>(s)] = selected;
    std::vector<int> dealer_rows(static_cast<std::size_t>(tv.n_dealer_vars));
    for (int d = 0; d < tv.n_dealer_vars; ++d)
      dealer_rows[static_cast<std::size_t>(d)] = d;

    const auto n_eval = tv.states.size();
    std::vector<double> gf_tran(n_eval), gf_pers(n_eval);
    auto& adjacency = P.adjacency[static_cast<std::size_t>(s)];
    adjacency.resize(n_eval);

    auto decompose = [&](const tvpvar::Draw& st)
        -> std::pair<std::array<Eigen::MatrixXd, 2>, std::array<double, 2>> {
      const auto vma = tvpvar::var_to_vma(st.b, N, p, grid - 1);
      const auto tf = connect::transfer_function(vma, grid);
      auto thetas = connect::band_fevd(tf, st.sigma, band_sets);
      connect::row_normalize(thetas);
      const double gt =
          connect::global_dealer_factor(thetas, 0, dealer_rows, selected);
      const double gp =
          connect::global_dealer_factor(thetas, 1, dealer_rows, selected);
      return {{std::move(thetas[0]), std::move(thetas[1])}, {gt, gp}};
    };

    parallel_for(n_eval, config.threads, [&](std::size_t i) {
      const auto day = P.calendar.date_string(tv.eval_days[i]);
      if (!tv.draws.empty()) {
        // Report the decomposition at the draw whose total cross-dealer
        // share is the median among stable draws.
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t dnum = 0; dnum < tv.draws[i].size(); ++dnum) {
          const auto& dr = tv.draws[i][dnum];
          if (tvpvar::companion_spectral_radius(dr.b, N, p) >= 0.999)
            continue;
          const auto [thetas, gf] = decompose(dr);
          (void)thetas;
          ranked.emplace_back(gf[0] + gf[1], dnum);
        }
        if (ranked.empty())
          throw NumericalError(
              "connectedness: no stable posterior draw at " + day);
        std::sort(ranked.begin(), ranked.end());
        const auto& chosen = tv.draws[i][ranked[ranked.size() / 2].second];
        auto [thetas, gf] = decompose(chosen);
        adjacency[i] = std::move(thetas);
        gf_tran[i] = gf[0];
        gf_pers[i] = gf[1];
      } else {
        const auto& st = tv.states[i];
        if (tvpvar::companion_spectral_radius(st.b, N, p) >= 0.999)
          throw NumericalError(
              "connectedness: estimated transition matrix unstable at " + day);
        auto [thetas, gf] = decompose(st);
        adjacency[i] = std::move(thetas);
        gf_tran[i] = gf[0];
        gf_pers[i] = gf[1];
      }
    });

    // Linear interpolation from the evaluation points to every trading day.
    auto& fs = P.factors[static_cast<std::size_t>(s)];
    const auto T = static_cast<std::size_t>(P.calendar.size());
    fs.transitory.assign(T, 0.0);
    fs.persistent.assign(T, 0.0);
    auto interpolate = [&](const std::vector<double>& at_evals,
                           std::vector<double>& daily) {
      std::size_t j = 0;
      for (std::size_t t = 0; t < T; ++t) {
        const auto day = static_cast<std::int32_t>(t);
        while (j + 1 < tv.eval_days.size() &&
               tv.eval_days[j + 1] <= day)
          ++j;
        if (day <= tv.eval_days.front()) {
          daily[t] = at_evals.front();
        } else if (day >= tv.eval_days.back()) {
          daily[t] = at_evals.back();
        } else {
          const double t0 = tv.eval_days[j], t1 = tv.eval_days[j + 1];
          const double w = (static_cast<double>(day) - t0) / (t1 - t0);
          daily[t] = (1.0 - w) * at_evals[j] + w * at_evals[j + 1];
        }
      }
    };
    interpolate(gf_tran, fs.transitory);
    interpolate(gf_pers, fs.persistent);
  }

  {
    auto os = open_out(dir / "global_factors.csv");
    csv::Writer w(os);
    w.row({"date", "band", "segment", "value"});
    for (std::int32_t t = 0; t < P.calendar.size(); ++t)
      for (int b = 0; b < 2; ++b)
        for (int s = 0; s < 2; ++s) {
          const auto& fs = P.factors[static_cast<std::size_t>(s)];
          w.field(P.calendar.date_string(t));
          w.field(kBandNames[static_cast<std::size_t>(b)]);
          w.field(segment_name(static_cast<Segment>(s)));
          w.field(b == 0 ? fs.transitory[static_cast<std::size_t>(t)]
                         : fs.persistent[static_cast<std::size_t>(t)]);
          w.endrow();
        }
  }
  if (config.connect.write_adjacency) {
    auto os = open_out(dir / "adjacency.csv");
    csv::Writer w(os);
    w.row({"segment", "date", "band", "source", "responder", "value"});
    for (int s = 0; s < 2; ++s) {
      const auto& tv = P.tvp[static_cast<std::size_t>(s)];
      const auto& adjacency = P.adjacency[static_cast<std::size_t>(s)];
      for (std::size_t i = 0; i < adjacency.size(); ++i) {
        const auto date = P.calendar.date_string(tv.eval_days[i]);
        for (int b = 0; b < 2; ++b) {
          const auto& th = adjacency[i][static_cast<std::size_t>(b)];
          for (Eigen::Index r = 0; r < th.rows(); ++r)
            for (Eigen::Index cidx = 0; cidx < th.cols(); ++cidx) {
              w.field(segment_name(static_cast<Segment>(s)));
              w.field(date);
              w.field(kBandNames[static_cast<std::size_t>(b)]);
              w.field(tv.var_names[static_cast<std::size_t>(cidx)]);
              w.field(tv.var_names[static_cast<std::size_t>(r)]);
              w.field(th(r, cidx));
              w.endrow();
            }
        }
      }
    }
  }
}

// --- yield curves -------------------------------------------------------------

inline void stage_curve(const PipelineConfig& config, Products& P,
                        const std::filesystem::path& dir) {
  curve::FitConfig fc;
  fc.min_maturity = config.curve.min_maturity;
  fc.min_quotes = config.curve.min_quotes;
  fc.min_buckets = config.curve.min_buckets;
  if (config.curve.lambda > 0.0) fc.lambda = config.curve.lambda;
  fc.leave_one_out = config.curve.leave_one_out;
  P.curve_days = curve::run_daily_curves(P.bonds, fc);

  {
    auto os = open_out(dir / "curve_days.csv");
    csv::Writer w(os);
    w.row({"date", "fitted", "lambda", "edf", "n_quotes", "noise", "refusal"});
    for (const auto& day : P.curve_days) {
      w.field(P.bonds.calendar.date_string(day.date));
      w.field(static_cast<long long>(day.fitted ? 1 : 0));
      w.field(day.lambda);
      w.field(day.edf);
      w.field(day.n_quotes);
      w.field(day.noise);
      w.field(csv_safe(day.refusal));
      w.endrow();
    }
  }
  {
    auto os = open_out(dir / "mispricing.csv");
    csv::Writer w(os);
    w.row({"date", "isin", "maturity_years", "yield", "mispricing", "bucket"});
    for (const auto& day : P.curve_days) {
      if (!day.fitted) continue;
      for (const auto& row : day.rows) {
        w.field(P.bonds.calendar.date_string(day.date));
        w.field(P.bonds.isins.name(row.isin));
        w.field(row.maturity);
        w.field(row.yield);
        w.field(row.mispricing);
        w.field(curve::bucket_name(row.bucket));
        w.endrow();
      }
    }
  }
}

// --- regressions ----------------------------------------------------------------

// Shared daily series keyed by civil day, so tables on different trading
// calendars join correctly.
struct DailyContext {
  std::array<std::string, 4> df_names;
  std::array<std::map<std::int64_t, double>, 4> df;  // factor series
  std::map<std::int64_t, double> log_reserves, stress;
};

inline DailyContext make_daily_context(const Products& P) {
  namespace pc = panelreg::cols;
  DailyContext ctx;
  ctx.df_names = {pc::df_tran_repo, pc::df_per_repo, pc::df_tran_rev,
                  pc::df_per_rev};
  for (std::int32_t t = 0; t < P.calendar.size(); ++t) {
    const auto civil = P.calendar.day(t);
    const auto i = static_cast<std::size_t>(t);
    ctx.df[0][civil] = P.factors[0].transitory[i];
    ctx.df[1][civil] = P.factors[0].persistent[i];
    ctx.df[2][civil] = P.factors[1].transitory[i];
    ctx.df[3][civil] = P.factors[1].persistent[i];
    if (!P.log_reserves.empty()) {
      ctx.log_reserves[civil] = P.log_reserves[i];
      ctx.stress[civil] = P.stress_a[i] + P.stress_b[i];
    }
  }
  return ctx;
}

inline panelreg::Frame build_impact_frame(const Products& P,
                                          const DailyContext& ctx,
                                          Segment seg) {
  namespace pc = panelreg::cols;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::map<std::pair<std::int32_t, std::int32_t>, const features::RelationshipRow*>
      rel;
  for (const auto& row : P.relationship.rows)
    if (row.segment == seg) rel[{row.date, row.dealer * 100000 + row.family}] = &row;
  std::map<std::pair<std::int32_t, std::int32_t>, double> lerner;
  for (const auto& p : P.power[static_cast<std::size_t>(seg)])
    lerner[{p.date, p.dealer}] = p.lerner;

  std::vector<double> log_volume, abs_spread, power, depth, freq;
  std::array<std::vector<double>, 4> dfcols;
  std::array<std::vector<double>, 8> zcols;
  std::vector<std::int64_t> dealer, family, civil;
  for (const auto& row : P.dyads.rows) {
    if (row.segment != seg) continue;
    const auto day = P.calendar.day(row.date);
    log_volume.push_back(row.log_volume);
    abs_spread.push_back(row.abs_spread);
    auto itp = lerner.find({row.date, row.dealer});
    power.push_back(itp == lerner.end() ? nan : itp->second);
    auto itr = rel.find({row.date, row.dealer * 100000 + row.family});
    depth.push_back(itr == rel.end() ? nan : itr->second->depth);
    freq.push_back(itr == rel.end() ? nan
                                    : static_cast<double>(itr->second->intensity));
    for (int b = 0; b < 4; ++b) {
      auto it = ctx.df[static_cast<std::size_t>(b)].find(day);
      dfcols[static_cast<std::size_t>(b)].push_back(
          it == ctx.df[static_cast<std::size_t>(b)].end() ? nan : it->second);
    }
    const auto t = static_cast<std::size_t>(row.date);
    const auto& g = P.givs;
    const std::array<const std::vector<double>*, 8> zsrc = {
        &g.z_depthD, &g.z_depthD2, &g.z_depthND, &g.z_depthND2,
        &g.z_int,    &g.z_int2,    &g.z_li,      &g.z_li2};
    for (int zc = 0; zc < 8; ++zc)
      zcols[static_cast<std::size_t>(zc)].push_back(
          t < zsrc[static_cast<std::size_t>(zc)]->size()
              ? (*zsrc[static_cast<std::size_t>(zc)])[t]
              : nan);
    dealer.push_back(row.dealer);
    family.push_back(row.family);
    civil.push_back(day);
  }

  panelreg::Frame frame;
  frame.add_num(pc::log_volume, std::move(log_volume));
  frame.add_num(pc::abs_spread, std::move(abs_spread));
  frame.add_num(pc::market_power, std::move(power));
  frame.add_num(pc::depth, std::move(depth));
  frame.add_num(pc::frequency, std::move(freq));
  for (int b = 0; b < 4; ++b)
    frame.add_num(ctx.df_names[static_cast<std::size_t>(b)],
                  std::move(dfcols[static_cast<std::size_t>(b)]));
  for (int zc = 0; zc < 8; ++zc)
    frame.add_num(kGivColumns[static_cast<std::size_t>(zc)],
                  std::move(zcols[static_cast<std::size_t>(zc)]));
  frame.add_cat(pc::dealer, std::move(dealer));
  frame.add_cat(pc::nondealer, std::move(family));
  panelreg::add_calendar_keys(frame, civil);
  return frame;
}

inline panelreg::Frame build_mispricing_frame(const Products& P,
                                              const DailyContext& ctx) {
  namespace pc = panelreg::cols;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // Bond-day joins are keyed by (civil day, isin name) so bond and
  // transaction tables may come from files with different id orders.
  std::map<std::pair<std::int64_t, std::string>, const BondQuote*> quote;
  for (const auto& q : P.bonds.records)
    quote[{P.bonds.calendar.day(q.date), P.bonds.isins.name(q.isin)}] = &q;
  std::array<std::map<std::pair<std::int64_t, std::string>,
                      std::pair<double, double>>,
             2>
      bpower;
  for (int s = 0; s < 2; ++s)
    for (const auto& b : P.bond_power[static_cast<std::size_t>(s)])
      bpower[static_cast<std::size_t>(s)][{P.calendar.day(b.date),
                                           P.isins.name(b.isin)}] = {
          b.mean, b.dispersion};

  std::vector<double> dev, markup, markdown, markup_disp, markdown_disp;
  std::vector<double> maturity, bid_ask, hi_lo, duration, reserves, stress;
  std::array<std::vector<double>, 4> dfcols;
  std::vector<std::int64_t> bond, civil;
  std::map<std::string, std::int64_t> bond_code;
  for (const auto& day : P.curve_days) {
    if (!day.fitted) continue;
    const auto cday = P.bonds.calendar.day(day.date);
    for (const auto& row : day.rows) {
      const auto name = P.bonds.isins.name(row.isin);
      dev.push_back(std::abs(row.mispricing));
      for (int s = 0; s < 2; ++s) {
        auto it = bpower[static_cast<std::size_t>(s)].find({cday, name});
        const bool found = it != bpower[static_cast<std::size_t>(s)].end();
        (s == 0 ? markup : markdown)
            .push_back(found ? it->second.first : nan);
        (s == 0 ? markup_disp : markdown_disp)
            .push_back(found ? it->second.second : nan);
      }
      maturity.push_back(row.maturity);
      auto itq = quote.find({cday, name});
      bid_ask.push_back(itq == quote.end() ? nan
                                           : itq->second->ask - itq->second->bid);
      hi_lo.push_back(itq == quote.end() ? nan
                                         : itq->second->high - itq->second->low);
      duration.push_back(itq == quote.end() ? nan : itq->second->duration);
      auto itr = ctx.log_reserves.find(cday);
      reserves.push_back(itr == ctx.log_reserves.end() ? nan : itr->second);
      auto its = ctx.stress.find(cday);
      stress.push_back(its == ctx.stress.end() ? nan : its->second);
      for (int b = 0; b < 4; ++b) {
        auto it = ctx.df[static_cast<std::size_t>(b)].find(cday);
        dfcols[static_cast<std::size_t>(b)].push_back(
            it == ctx.df[static_cast<std::size_t>(b)].end() ? nan
                                                            : it->second);
      }
      auto [itb, inserted] = bond_code.try_emplace(
          name, static_cast<std::int64_t>(bond_code.size()));
      bond.push_back(itb->second);
      civil.push_back(cday);
    }
  }

  panelreg::Frame frame;
  frame.add_num(pc::abs_deviation, std::move(dev));
  frame.add_num(pc::markup, std::move(markup));
  frame.add_num(pc::markdown, std::move(markdown));
  frame.add_num(pc::markup_disp, std::move(markup_disp));
  frame.add_num(pc::markdown_disp, std::move(markdown_disp));
  frame.add_num(pc::residual_maturity, std::move(maturity));
  frame.add_num("bid_ask", std::move(bid_ask));
  frame.add_num("hi_lo", std::move(hi_lo));
  frame.add_num("duration", std::move(duration));
  frame.add_num("log_reserves", std::move(reserves));
  frame.add_num("stress", std::move(stress));
  for (int b = 0; b < 4; ++b)
    frame.add_num(ctx.df_names[static_cast<std::size_t>(b)],
                  std::move(dfcols[static_cast<std::size_t>(b)]));
  frame.add_cat(pc::bond, std::move(bond));
  panelreg::add_calendar_keys(frame, civil);
  return frame;
}

inline void stage_regress(const PipelineConfig& config, Products& P,
                          const std::filesystem::path& dir) {
  namespace pr = panelreg;
  const DailyContext ctx = make_daily_context(P);

  pr::GivColumns giv_cols;
  for (const char* c : kGivColumns) giv_cols.names.emplace_back(c);

  for (int s = 0; s < 2; ++s) {
    const auto seg = static_cast<Segment>(s);
    pr::RepoImpactPreset preset;
    preset.segment = seg;
    preset.counterparty_period = config.regress.counterparty_period;
    const auto frame = build_impact_frame(P, ctx, seg);
    P.impact[static_cast<std::size_t>(s)] =
        pr::run_repo_impact(preset, frame, giv_cols);
  }
  {
    pr::MispricingPreset preset;
    preset.dk_lag = config.regress.dk_lag;
    preset.controls = {"bid_ask", "hi_lo", "duration", "log_reserves",
                       "stress", pr::cols::residual_maturity};
    const auto frame = build_mispricing_frame(P, ctx);
    P.mispricing = pr::run_mispricing(preset, frame);
  }
  {
    pr::DailySeries noise;
    for (const auto& day : P.curve_days)
      if (day.fitted && std::isfinite(day.noise))
        noise[P.bonds.calendar.day(day.date)] = day.noise;

    // Daily share-weighted moments of the dealer wedges.
    pr::NamedSeries power_series;
    static constexpr std::array<std::array<const char*, 2>, 2> kPowerNames = {
        {{"markup", "markup_disp"}, {"markdown", "markdown_disp"}}};
    for (int s = 0; s < 2; ++s) {
      std::map<std::int64_t, std::array<double, 3>> acc;  // w, wx, wxx
      for (const auto& p : P.power[static_cast<std::size_t>(s)]) {
        auto& a = acc[P.calendar.day(p.date)];
        a[0] += p.share;
        a[1] += p.share * p.lerner;
        a[2] += p.share * p.lerner * p.lerner;
      }
      pr::DailySeries mean, disp;
      for (const auto& [day, a] : acc) {
        if (!(a[0] > 0.0)) continue;
        const double m = a[1] / a[0];
        mean[day] = m;
        disp[day] = std::sqrt(std::max(0.0, a[2] / a[0] - m * m));
      }
      power_series.emplace_back(kPowerNames[static_cast<std::size_t>(s)][0],
                                std::move(mean));
      power_series.emplace_back(kPowerNames[static_cast<std::size_t>(s)][1],
                                std::move(disp));
    }
    pr::NamedSeries factor_series;
    for (int b = 0; b < 4; ++b)
      factor_series.emplace_back(ctx.df_names[static_cast<std::size_t>(b)],
                                 ctx.df[static_cast<std::size_t>(b)]);
    pr::LiquidityPreset preset;
    P.noise_regression =
        pr::run_liquidity(preset, noise, power_series, factor_series);
  }

  // Long-format coefficient table plus a metadata sidecar.
  const std::vector<std::pair<std::string, const pr::RegressionResult*>> all =
      {{"impact_repo_volume", &P.impact[0].volume},
       {"impact_repo_spread", &P.impact[0].spread},
       {"impact_reverse_volume", &P.impact[1].volume},
       {"impact_reverse_spread", &P.impact[1].spread},
       {"mispricing_pooled", &P.mispricing.pooled},
       {"mispricing_short", &P.mispricing.short_term},
       {"mispricing_medium", &P.mispricing.medium_term},
       {"mispricing_long", &P.mispricing.long_term},
       {"noise_daily", &P.noise_regression}};
  {
    auto os = open_out(dir / "regressions.csv");
    csv::Writer w(os);
    w.row({"regression", "term", "estimate", "std_error", "t_stat",
           "p_value"});
    for (const auto& [name, res] : all)
      for (std::size_t i = 0; i < res->terms.size(); ++i) {
        w.field(name);
        w.field(res->terms[i]);
        w.field(res->coef(static_cast<Eigen::Index>(i)));
        w.field(res->se(i));
        w.field(res->tstat(i));
        w.field(res->pvalue(i));
        w.endrow();
      }
  }
  {
    ojson j;
    for (const auto& [name, res] : all) {
      ojson r;
      r["n_obs"] = res->n_obs;
      r["n_dropped_missing"] = res->n_dropped_missing;
      r["n_dropped_singleton"] = res->n_dropped_singleton;
      r["df_absorbed"] = res->df_absorbed;
      r["n_clusters"] = res->n_clusters;
      r["r2_within"] = res->r2;
      r["first_stage_F"] = res->first_stage_F;
      r["dropped_columns"] = res->dropped_columns;
      r["warnings"] = res->warnings;
      j[name] = std::move(r);
    }
    auto os = open_out(dir / "regressions.json");
    os << j.dump(2) << '\n';
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Driver.

struct RunResult {
  Manifest manifest;
  Products products;
};

// Runs every enabled stage in dependency order, writing artifacts and the
// manifest under config.out_dir. On a stage failure the manifest is still
// written -- with the failing stage's diagnostic recorded and any files it
// had already produced listed as incomplete -- and the error is rethrown
// with the stage name prefixed.
inline RunResult run_pipeline(const PipelineConfig& config) {
  validate(config);
  const std::filesystem::path dir(config.out_dir);
  std::filesystem::create_directories(dir);

  RunResult rr;
  Manifest& man = rr.manifest;
  Products& P = rr.products;
  man.version = kVersion;
  man.seed = config.seed;
  man.config_hash = config_fingerprint(config);

  if (!config.stages.sim) detail::load_inputs(config, P, man);

  struct StageDef {
    const char* name;
    bool enabled;
    std::vector<std::string> outputs;
    std::function<void()> fn;
  };
  const auto& st = config.stages;
  std::vector<std::string> connect_outputs = {"global_factors.csv"};
  if (config.connect.write_adjacency)
    connect_outputs.push_back("adjacency.csv");
  const std::vector<StageDef> defs = {
      {"sim",
       st.sim,
       {"transactions.csv", "bonds.csv", "market_size.csv", "macro.csv",
        "ground_truth.json"},
       [&] { detail::stage_sim(config, P, dir); }},
      {"features",
       st.features,
       {"relationships.csv"},
       [&] { detail::stage_features(config, P, dir); }},
      {"demand",
       st.demand,
       {"demand_estimates.json", "market_power.csv", "bond_power.csv"},
       [&] { detail::stage_demand(config, P, dir); }},
      {"giv", st.giv, {"giv.csv"}, [&] { detail::stage_giv(config, P, dir); }},
      {"tvpvar",
       st.tvpvar,
       {"tvpvar_coefficients.csv", "tvpvar_sigma.csv"},
       [&] { detail::stage_tvpvar(config, P, dir); }},
      {"connect", st.connect, connect_outputs,
       [&] { detail::stage_connect(config, P, dir); }},
      {"curve",
       st.curve,
       {"curve_days.csv", "mispricing.csv"},
       [&] { detail::stage_curve(config, P, dir); }},
      {"regress",
       st.regress,
       {"regressions.csv", "regressions.json"},
       [&] { detail::stage_regress(config, P, dir); }},
  };

  for (std::size_t i = 0; i < defs.size(); ++i) {
    const auto& def = defs[i];
    StageRecord rec;
    rec.name = def.name;
    if (!def.enabled) {
      rec.status = "skipped";
      man.stages.push_back(std::move(rec));
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      def.fn();
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.error = e.what();
      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      for (const auto& out : def.outputs)
        if (std::filesystem::exists(dir / out))
          man.incomplete_outputs.push_back(out);
      man.stages.push_back(std::move(rec));
      for (std::size_t k = i + 1; k < defs.size(); ++k) {
        StageRecord later;
        later.name = defs[k].name;
        later.status = defs[k].enabled ? "not_run" : "skipped";
        man.stages.push_back(std::move(later));
      }
      write_manifest(man, dir / "manifest.json");
      const std::string msg =
          std::string("stage '") + def.name + "': " + e.what();
      if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(msg);
      if (dynamic_cast<const DataError*>(&e)) throw DataError(msg);
      if (dynamic_cast<const NumericalError*>(&e)) throw NumericalError(msg);
      throw std::runtime_error(msg);
    }
    rec.status = "ok";
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    rec.outputs = def.outputs;
    for (const auto& out : def.outputs)
      man.output_hashes[out] = hash_file((dir / out).string());
    man.stages.push_back(std::move(rec));
  }

  write_manifest(man, dir / "manifest.json");
  return rr;
}

}  // namespace repometrics::pipeline
