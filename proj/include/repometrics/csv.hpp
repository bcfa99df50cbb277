#pragma once

// Minimal CSV support: header row required, comma delimiter, '.' decimal
// separator, UTF-8 passed through. Reading is zero-copy over a single file
// buffer; writing uses '\n' endings and shortest round-trip numbers so output
// bytes are reproducible.

#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "common.hpp"

namespace repometrics::csv {

namespace detail {
inline std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}
}  // namespace detail

// Splits one line into fields. Handles double-quoted fields with "" escapes;
// unquoted fields are returned as views into the line.
inline void split_fields(std::string_view line, std::vector<std::string>& out) {
  out.clear();
  std::size_t i = 0;
  const std::size_t n = line.size();
  while (true) {
    std::string field;
    if (i < n && line[i] == '"') {
      ++i;
      while (i < n) {
        if (line[i] == '"') {
          if (i + 1 < n && line[i + 1] == '"') {
            field.push_back('"');
            i += 2;
          } else {
            ++i;
            break;
          }
        } else {
          field.push_back(line[i]);
          ++i;
        }
      }
    } else {
      const std::size_t start = i;
      while (i < n && line[i] != ',') ++i;
      field.assign(line.substr(start, i - start));
    }
    out.push_back(std::move(field));
    if (i < n && line[i] == ',') {
      ++i;
      if (i == n) {
        out.emplace_back();
        break;
      }
    } else {
      break;
    }
  }
}

class Reader {
 public:
  explicit Reader(std::string text) : text_(std::move(text)) {
    if (next_line(line_)) {
      split_fields(line_, header_);
    } else {
      throw DataError("empty file: missing header row");
    }
  }

  static Reader from_file(const std::string& path) {
    return Reader(read_file(path));
  }

  const std::vector<std::string>& header() const { return header_; }

  // Column index by name; throws when absent.
  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
      if (header_[i] == name) return i;
    throw DataError("missing column '" + std::string(name) + "' in header");
  }

  bool has_column(std::string_view name) const {
    for (const auto& h : header_)
      if (h == name) return true;
    return false;
  }

  // Advances to the next data row; skips blank lines. Returns false at EOF.
  bool next(std::vector<std::string>& fields) {
    while (next_line(line_)) {
      if (line_.empty()) continue;
      split_fields(line_, fields);
      return true;
    }
    return false;
  }

  // 1-based line number of the row most recently returned by next().
  std::size_t line_number() const { return line_no_; }

 private:
  bool next_line(std::string_view& out) {
    if (pos_ >= text_.size()) return false;
    const std::size_t nl = text_.find('\n', pos_);
    std::string_view raw;
    if (nl == std::string::npos) {
      raw = std::string_view(text_).substr(pos_);
      pos_ = text_.size();
    } else {
      raw = std::string_view(text_).substr(pos_, nl - pos_);
      pos_ = nl + 1;
    }
    ++line_no_;
    out = detail::strip_cr(raw);
    return true;
  }

  std::string text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
  std::vector<std::string> header_;
  std::string_view line_;
};

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  Writer& field(std::string_view s) {
    if (!first_) os_ << ',';
    first_ = false;
    os_ << s;
    return *this;
  }
  Writer& field(double v) { return field(format_double(v)); }
  Writer& field(long long v) { return field(std::to_string(v)); }
  Writer& field(int v) { return field(static_cast<long long>(v)); }

  void endrow() {
    os_ << '\n';
    first_ = true;
  }

  void row(const std::vector<std::string>& fields) {
    for (const auto& f : fields) field(f);
    endrow();
  }

 private:
  std::ostream& os_;
  bool first_ = true;
};

}  // namespace repometrics::csv
