#pragma once

// Ingestion of transaction and bond-quote CSVs with per-row validation, plus
// dyad-day aggregation. Loaders are lossless up to rejected rows: every input
// row is either a record or a reject with a line number and reason.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "csv.hpp"
#include "types.hpp"

namespace repometrics::datamodel {

struct Reject {
  std::size_t line = 0;
  std::string reason;
};

struct TransactionData {
  std::vector<Transaction> records;
  Registry dealers;
  Registry nondealers;
  Registry families;
  Registry isins;
  std::vector<Sector> family_sector;  // by family id
  Calendar calendar;
  std::vector<Reject> rejects;
};

struct BondData {
  std::vector<BondQuote> records;
  Registry isins;
  Calendar calendar;
  std::vector<Reject> rejects;
};

inline const std::vector<std::string>& transactions_schema() {
  static const std::vector<std::string> cols = {
      "date",        "dealer_id",   "nondealer_id",   "family_id",
      "sector",      "segment",     "volume_gbp",     "rate_spread_pp",
      "maturity_days", "isin",      "collateral_mv"};
  return cols;
}

inline const std::vector<std::string>& bonds_schema() {
  static const std::vector<std::string> cols = {
      "date", "isin", "yield_pp",   "bid",           "ask",
      "high", "low",  "duration_y", "residual_maturity_y"};
  return cols;
}

// Columns are located by name, so files may carry any column order as long as
// the header names match the schema.
inline TransactionData load_transactions(const std::string& path,
                                         const Calendar* calendar = nullptr) {
  auto reader = csv::Reader::from_file(path);
  std::vector<std::size_t> col;
  col.reserve(transactions_schema().size());
  for (const auto& name : transactions_schema())
    col.push_back(reader.column(name));

  struct RawRow {
    std::size_t line;
    std::int64_t civil;
    std::string dealer, nondealer, family, isin;
    Sector sector;
    Segment segment;
    double volume, rate_spread, collateral;
    std::int32_t maturity_days;
  };

  TransactionData out;
  std::vector<RawRow> raws;
  std::vector<std::string> fields;
  std::int64_t min_day = 0, max_day = 0;
  bool any = false;
  while (reader.next(fields)) {
    const std::size_t line = reader.line_number();
    if (fields.size() != reader.header().size()) {
      out.rejects.push_back({line, "wrong field count"});
      continue;
    }
    try {
      RawRow r;
      r.line = line;
      r.civil = parse_date(fields[col[0]]);
      r.dealer = fields[col[1]];
      r.nondealer = fields[col[2]];
      r.family = fields[col[3]];
      r.sector = sector_from(fields[col[4]]);
      r.segment = segment_from(fields[col[5]]);
      r.volume = parse_double(fields[col[6]]);
      r.rate_spread = parse_double(fields[col[7]]);
      r.maturity_days = static_cast<std::int32_t>(parse_int(fields[col[8]]));
      r.isin = fields[col[9]];
      r.collateral = parse_double(fields[col[10]]);
      if (!(r.volume > 0.0)) throw DataError("nonpositive volume");
      if (r.maturity_days < 1) throw DataError("maturity_days < 1");
      if (!(r.collateral >= 0.0)) throw DataError("negative collateral_mv");
      if (!std::isfinite(r.volume) || !std::isfinite(r.rate_spread) ||
          !std::isfinite(r.collateral))
        throw DataError("non-finite numeric field");
      if (r.dealer.empty() || r.family.empty())
        throw DataError("empty id field");
      if (!any || r.civil < min_day) min_day = r.civil;
      if (!any || r.civil > max_day) max_day = r.civil;
      any = true;
      raws.push_back(std::move(r));
    } catch (const DataError& e) {
      out.rejects.push_back({line, e.what()});
    }
  }
  if (raws.empty())
    throw DataError("empty input: no valid data rows in " + path);

  out.calendar =
      calendar != nullptr ? *calendar : Calendar::weekdays(min_day, max_day);

  for (auto& r : raws) {
    const std::int32_t idx = out.calendar.index_of(r.civil);
    if (idx < 0) {
      out.rejects.push_back({r.line, "date not in calendar"});
      continue;
    }
    Transaction t;
    t.date = idx;
    t.dealer = out.dealers.intern(r.dealer);
    t.nondealer = out.nondealers.intern(r.nondealer);
    t.family = out.families.intern(r.family);
    t.sector = r.sector;
    t.segment = r.segment;
    t.volume = r.volume;
    t.rate_spread = r.rate_spread;
    t.maturity_days = r.maturity_days;
    t.isin = out.isins.intern(r.isin);
    t.collateral_mv = r.collateral;
    if (t.family >= static_cast<std::int32_t>(out.family_sector.size()))
      out.family_sector.resize(static_cast<std::size_t>(t.family) + 1,
                               Sector::other);
    out.family_sector[static_cast<std::size_t>(t.family)] = r.sector;
    out.records.push_back(t);
  }
  if (out.records.empty())
    throw DataError("empty input: all rows rejected in " + path);
  return out;
}

inline BondData load_bonds(const std::string& path,
                           const Calendar* calendar = nullptr) {
  auto reader = csv::Reader::from_file(path);
  std::vector<std::size_t> col;
  for (const auto& name : bonds_schema()) col.push_back(reader.column(name));

  struct RawRow {
    std::size_t line;
    std::int64_t civil;
    std::string isin;
    double yield, bid, ask, high, low, duration, residual;
  };

  BondData out;
  std::vector<RawRow> raws;
  std::vector<std::string> fields;
  std::int64_t min_day = 0, max_day = 0;
  bool any = false;
  while (reader.next(fields)) {
    const std::size_t line = reader.line_number();
    if (fields.size() != reader.header().size()) {
      out.rejects.push_back({line, "wrong field count"});
      continue;
    }
    try {
      RawRow r;
      r.line = line;
      r.civil = parse_date(fields[col[0]]);
      r.isin = fields[col[1]];
      r.yield = parse_double(fields[col[2]]);
      r.bid = parse_double(fields[col[3]]);
      r.ask = parse_double(fields[col[4]]);
      r.high = parse_double(fields[col[5]]);
      r.low = parse_double(fields[col[6]]);
      r.duration = parse_double(fields[col[7]]);
      r.residual = parse_double(fields[col[8]]);
      if (r.ask < r.bid) throw DataError("ask < bid");
      if (r.high < r.low) throw DataError("high < low");
      if (!(r.residual > 0.0)) throw DataError("nonpositive residual maturity");
      if (!std::isfinite(r.yield)) throw DataError("non-finite yield");
      if (r.isin.empty()) throw DataError("empty isin");
      if (!any || r.civil < min_day) min_day = r.civil;
      if (!any || r.civil > max_day) max_day = r.civil;
      any = true;
      raws.push_back(std::move(r));
    } catch (const DataError& e) {
      out.rejects.push_back({line, e.what()});
    }
  }
  if (raws.empty())
    throw DataError("empty input: no valid data rows in " + path);

  out.calendar =
      calendar != nullptr ? *calendar : Calendar::weekdays(min_day, max_day);

  for (auto& r : raws) {
    const std::int32_t idx = out.calendar.index_of(r.civil);
    if (idx < 0) {
      out.rejects.push_back({r.line, "date not in calendar"});
      continue;
    }
    BondQuote q;
    q.date = idx;
    q.isin = out.isins.intern(r.isin);
    q.yield = r.yield;
    q.bid = r.bid;
    q.ask = r.ask;
    q.high = r.high;
    q.low = r.low;
    q.duration = r.duration;
    q.residual_maturity = r.residual;
    out.records.push_back(q);
  }
  if (out.records.empty())
    throw DataError("empty input: all rows rejected in " + path);
  return out;
}

// ---------------------------------------------------------------------------
// Dyad-day aggregation. One row per (date, segment, dealer, family):
// total volume, ln(total volume), volume-weighted |spread| and signed spread,
// volume-weighted maturity, summed collateral, trade count.

struct DyadRow {
  std::int32_t date = 0;
  Segment segment = Segment::repo;
  std::int32_t dealer = 0;
  std::int32_t family = 0;
  Sector sector = Sector::other;
  double volume = 0.0;
  double log_volume = 0.0;
  double abs_spread = 0.0;
  double rate_spread = 0.0;
  double maturity_days = 0.0;
  double collateral_mv = 0.0;
  std::int32_t n_trades = 0;
};

struct DyadPanel {
  std::vector<DyadRow> rows;  // sorted by (date, segment, dealer, family)
};

// Records are first brought into a canonical order (full-tuple sort), so the
// floating-point accumulation order, and hence the output bytes, are invariant
// to input row permutations.
inline DyadPanel aggregate_dyads(const std::vector<Transaction>& records) {
  std::vector<const Transaction*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& t : records) ptrs.push_back(&t);
  std::sort(ptrs.begin(), ptrs.end(),
            [](const Transaction* a, const Transaction* b) {
              return std::tie(a->date, a->segment, a->dealer, a->family,
                              a->volume, a->rate_spread, a->maturity_days,
                              a->isin, a->collateral_mv, a->nondealer) <
                     std::tie(b->date, b->segment, b->dealer, b->family,
                              b->volume, b->rate_spread, b->maturity_days,
                              b->isin, b->collateral_mv, b->nondealer);
            });

  DyadPanel out;
  for (std::size_t i = 0; i < ptrs.size();) {
    const Transaction& head = *ptrs[i];
    DyadRow row;
    row.date = head.date;
    row.segment = head.segment;
    row.dealer = head.dealer;
    row.family = head.family;
    row.sector = head.sector;
    double w_abs = 0.0, w_signed = 0.0, w_mat = 0.0;
    std::size_t j = i;
    for (; j < ptrs.size(); ++j) {
      const Transaction& t = *ptrs[j];
      if (t.date != head.date || t.segment != head.segment ||
          t.dealer != head.dealer || t.family != head.family)
        break;
      row.volume += t.volume;
      row.collateral_mv += t.collateral_mv;
      w_abs += t.volume * std::abs(t.rate_spread);
      w_signed += t.volume * t.rate_spread;
      w_mat += t.volume * static_cast<double>(t.maturity_days);
      ++row.n_trades;
    }
    row.log_volume = std::log(row.volume);
    row.abs_spread = w_abs / row.volume;
    row.rate_spread = w_signed / row.volume;
    row.maturity_days = w_mat / row.volume;
    out.rows.push_back(row);
    i = j;
  }
  return out;
}

}  // namespace repometrics::datamodel
