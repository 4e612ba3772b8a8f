#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "adjsurv/dataset.hpp"
#include "adjsurv/errors.hpp"
#include "adjsurv/prognostic.hpp"

namespace adjsurv::io {

/// One problem found while reading tabular input. Rows count data lines
/// from 1; row 0 refers to the header.
struct CsvDiagnostic {
  std::size_t row = 0;
  std::string column;
  std::string reason;

  std::string str() const {
    std::string s = "row " + std::to_string(row);
    if (!column.empty()) s += ", column '" + column + "'";
    return s + ": " + reason;
  }
};

/// Error carrying every located diagnostic of a rejected file.
class DataError : public Error {
 public:
  DataError(ErrorCode code, std::string what, std::vector<CsvDiagnostic> diagnostics)
      : Error(code, std::move(what)), diagnostics_(std::move(diagnostics)) {}
  const std::vector<CsvDiagnostic>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<CsvDiagnostic> diagnostics_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return k;
    return std::nullopt;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
  return std::string(s.substr(b, e - b));
}

/// Splits one record; false on an unterminated quote.
inline bool split_record(std::string_view line, std::vector<std::string>& out) {
  out.clear();
  std::string field;
  bool quoted = false, was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && trim(field).empty()) {
      quoted = was_quoted = true;
      field.clear();
    } else if (c == ',') {
      out.push_back(was_quoted ? field : trim(field));
      field.clear();
      was_quoted = false;
    } else {
      field += c;
    }
  }
  if (quoted) return false;
  out.push_back(was_quoted ? field : trim(field));
  return true;
}

inline bool is_missing(std::string_view s) { return s.empty() || s == "NA"; }

inline std::optional<double> parse_real(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_integer(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string summarize(const std::string& what, const std::vector<CsvDiagnostic>& diags) {
  std::string msg = what + " (" + std::to_string(diags.size()) + " problem(s))";
  const std::size_t shown = std::min<std::size_t>(diags.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) msg += "\n  " + diags[i].str();
  if (diags.size() > shown) msg += "\n  ...";
  return msg;
}

}  // namespace detail

/// Header-first comma-separated reader. Ragged rows and bad quoting are
/// collected and reported together.
inline CsvTable read_csv(std::istream& in, const std::string& source = "input") {
  CsvTable t;
  std::vector<CsvDiagnostic> diags;
  std::string line;
  std::vector<std::string> fields;
  bool have_header = false;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      if (detail::trim(line).empty()) continue;
      if (!detail::split_record(line, fields)) throw Error(ErrorCode::ParseError, source + ": malformed header");
      std::set<std::string> seen;
      for (const auto& f : fields) {
        if (f.empty()) diags.push_back({0, "", "empty column name"});
        else if (!seen.insert(f).second) diags.push_back({0, f, "duplicate column name"});
      }
      t.header = fields;
      have_header = true;
      continue;
    }
    if (detail::trim(line).empty()) continue;
    ++row;
    if (!detail::split_record(line, fields)) {
      diags.push_back({row, "", "unterminated quoted field"});
      continue;
    }
    if (fields.size() != t.header.size()) {
      diags.push_back({row, "", "expected " + std::to_string(t.header.size()) + " fields, found " +
                                     std::to_string(fields.size())});
      continue;
    }
    t.rows.push_back(fields);
  }
  if (!have_header) throw Error(ErrorCode::SchemaError, source + ": missing header row");
  if (!diags.empty())
    throw DataError(diags.front().row == 0 ? ErrorCode::SchemaError : ErrorCode::ParseError,
                    detail::summarize(source + ": malformed CSV", diags), diags);
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return read_csv(f, path);
}

inline const std::vector<std::string>& reserved_columns() {
  static const std::vector<std::string> r{"time", "event", "arm", "stratum"};
  return r;
}

struct ParsedRows {
  std::vector<Subject> subjects;
  std::vector<std::string> covariate_names;
  bool has_stratum = false;
};

namespace detail {

/// Shared row parser. Trial data require arm and complete covariates;
/// external data ignore arm and keep missing covariates as NaN.
inline ParsedRows parse_subjects(const CsvTable& t, const std::string& source, bool trial) {
  std::vector<std::string> required{"time", "event"};
  if (trial) required.push_back("arm");
  std::vector<std::string> missing;
  for (const auto& r : required)
    if (!t.column(r)) missing.push_back(r);
  if (!missing.empty()) {
    std::string msg = source + ": missing required column(s):";
    std::vector<CsvDiagnostic> diags;
    for (const auto& m : missing) {
      msg += " " + m;
      diags.push_back({0, m, "required column is missing"});
    }
    throw DataError(ErrorCode::SchemaError, msg, diags);
  }
  const std::size_t c_time = *t.column("time"), c_event = *t.column("event");
  const auto c_arm = t.column("arm");
  const auto c_stratum = trial ? t.column("stratum") : std::nullopt;
  std::vector<std::size_t> cov_cols;
  ParsedRows out;
  const auto& reserved = reserved_columns();
  for (std::size_t k = 0; k < t.header.size(); ++k)
    if (std::find(reserved.begin(), reserved.end(), t.header[k]) == reserved.end()) {
      cov_cols.push_back(k);
      out.covariate_names.push_back(t.header[k]);
    }
  out.has_stratum = c_stratum.has_value();

  std::vector<CsvDiagnostic> diags;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& f = t.rows[r];
    const std::size_t row = r + 1;
    Subject s;
    if (is_missing(f[c_time])) diags.push_back({row, "time", "missing value"});
    else if (auto v = parse_real(f[c_time]); !v) diags.push_back({row, "time", "not a number: '" + f[c_time] + "'"});
    else if (*v < 0.0) diags.push_back({row, "time", "negative time"});
    else s.time = *v;

    auto flag = [&](std::size_t col, const char* name) -> std::optional<bool> {
      if (is_missing(f[col])) {
        diags.push_back({row, name, "missing value"});
        return std::nullopt;
      }
      const auto v = parse_integer(f[col]);
      if (!v || (*v != 0 && *v != 1)) {
        diags.push_back({row, name, "must be 0 or 1, found '" + f[col] + "'"});
        return std::nullopt;
      }
      return *v == 1;
    };
    if (auto e = flag(c_event, "event")) s.event = *e;
    if (c_arm && trial) {
      if (auto a = flag(*c_arm, "arm")) s.arm = *a ? Arm::Treatment : Arm::Control;
    }
    if (c_stratum) {
      const std::string& v = f[*c_stratum];
      if (is_missing(v)) diags.push_back({row, "stratum", "missing value"});
      else if (auto z = parse_integer(v); !z || *z < std::numeric_limits<int>::min() ||
                                          *z > std::numeric_limits<int>::max())
        diags.push_back({row, "stratum", "not an integer: '" + v + "'"});
      else s.stratum = static_cast<int>(*z);
    }
    s.covariates.resize(cov_cols.size());
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      const std::string& v = f[cov_cols[k]];
      const std::string& name = out.covariate_names[k];
      if (is_missing(v)) {
        if (trial) diags.push_back({row, name, "missing covariate value"});
        s.covariates[k] = std::numeric_limits<double>::quiet_NaN();
      } else if (auto x = parse_real(v)) {
        s.covariates[k] = *x;
      } else {
        diags.push_back({row, name, "not a number: '" + v + "'"});
      }
    }
    out.subjects.push_back(std::move(s));
  }
  if (!diags.empty()) throw DataError(ErrorCode::ParseError, summarize(source + ": invalid data", diags), diags);
  if (out.subjects.empty())
    throw DataError(ErrorCode::ParseError, source + ": no data rows", {{0, "", "no data rows"}});
  return out;
}

}  // namespace detail

inline TrialDataset parse_trial(const CsvTable& t, std::optional<double> tau = std::nullopt,
                                std::optional<double> pi = std::nullopt, const std::string& source = "input") {
  ParsedRows p = detail::parse_subjects(t, source, true);
  return TrialDataset::make(std::move(p.subjects), std::move(p.covariate_names), tau, pi);
}

/// Reads a trial CSV: time, event, arm, optional stratum, and any other
/// columns as covariates.
inline TrialDataset load_trial(const std::string& path, std::optional<double> tau = std::nullopt,
                               std::optional<double> pi = std::nullopt) {
  return parse_trial(read_csv_file(path), tau, pi, path);
}

/// External controls keep only the requested features when given; missing
/// values are mean-imputed downstream.
inline ExternalControls parse_external(const CsvTable& t, const std::vector<std::string>& features = {},
                                       std::optional<double> tau = std::nullopt,
                                       const std::string& source = "input") {
  ParsedRows p = detail::parse_subjects(t, source, false);
  if (features.empty()) return ExternalControls::make(std::move(p.subjects), std::move(p.covariate_names), tau);
  std::vector<std::size_t> idx;
  std::string absent;
  for (const auto& f : features) {
    auto it = std::find(p.covariate_names.begin(), p.covariate_names.end(), f);
    if (it == p.covariate_names.end()) absent += " " + f;
    else idx.push_back(static_cast<std::size_t>(it - p.covariate_names.begin()));
  }
  if (!absent.empty()) throw Error(ErrorCode::FeatureMismatch, source + ": missing feature column(s):" + absent);
  for (auto& s : p.subjects) {
    std::vector<double> keep;
    for (std::size_t k : idx) keep.push_back(s.covariates[k]);
    s.covariates = std::move(keep);
  }
  return ExternalControls::make(std::move(p.subjects), features, tau);
}

inline ExternalControls load_external(const std::string& path, const std::vector<std::string>& features = {},
                                      std::optional<double> tau = std::nullopt) {
  return parse_external(read_csv_file(path), features, tau, path);
}

/// One numeric column, row-aligned with a trial file.
inline std::vector<double> load_column(const std::string& path, const std::string& column, std::size_t expected_rows) {
  const CsvTable t = read_csv_file(path);
  std::optional<std::size_t> c = t.column(column);
  if (!c && t.header.size() == 1) c = 0;
  if (!c) throw DataError(ErrorCode::SchemaError, path + ": missing column '" + column + "'", {{0, column, "missing"}});
  std::vector<CsvDiagnostic> diags;
  std::vector<double> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto v = detail::parse_real(t.rows[r][*c]);
    if (!v) diags.push_back({r + 1, t.header[*c], "not a number: '" + t.rows[r][*c] + "'"});
    else out.push_back(*v);
  }
  if (!diags.empty()) throw DataError(ErrorCode::ParseError, detail::summarize(path + ": invalid scores", diags), diags);
  if (out.size() != expected_rows)
    throw Error(ErrorCode::InvalidInput, path + ": " + std::to_string(out.size()) + " score rows for " +
                                             std::to_string(expected_rows) + " trial rows");
  return out;
}

}  // namespace adjsurv::io
