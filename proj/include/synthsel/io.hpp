#pragma once

#include "synthsel/errors.hpp"
#include "synthsel/linalg.hpp"
#include "synthsel/panel.hpp"

#include <boost/tokenizer.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace synthsel {

/// Wide table as read from disk: one row per period, one column per unit.
struct RawPanel {
  std::vector<std::string> units;
  std::vector<std::string> times;
  MatrixXd values;  ///< periods x units
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, Index row) {
  using Sep = boost::escaped_list_separator<char>;
  try {
    boost::tokenizer<Sep> tok(line, Sep('\\', ',', '"'));
    std::vector<std::string> out(tok.begin(), tok.end());
    for (std::string& s : out) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }
    return out;
  } catch (const boost::escaped_list_error& e) {
    throw ParseError(std::string("malformed quoting: ") + e.what(), row, 0);
  }
}

inline double parse_number(const std::string& s, Index row, Index col) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (b != e && *b == '+') ++b;
  const auto res = std::from_chars(b, e, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != e || !std::isfinite(v))
    throw ParseError("non-numeric cell '" + s + "'", row, col);
  return v;
}

inline bool getline_any(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

inline Index find_label(const std::vector<std::string>& v, const std::string& label) {
  const auto it = std::find(v.begin(), v.end(), label);
  return it == v.end() ? -1 : static_cast<Index>(it - v.begin());
}

}  // namespace detail

/// Parse a CSV whose first column holds time labels and whose remaining
/// columns are units. Rows and columns in errors are 1-based.
inline RawPanel read_panel_csv(std::istream& in) {
  RawPanel raw;
  std::string line;
  Index row = 0;
  if (!detail::getline_any(in, line)) throw ParseError("empty input", 1, 0);
  ++row;
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = detail::split_csv_line(line, row);
  if (header.size() < 2) throw ParseError("header needs a time column and at least one unit", row, 0);
  raw.units.assign(header.begin() + 1, header.end());
  for (std::size_t j = 0; j < raw.units.size(); ++j) {
    if (raw.units[j].empty()) throw ParseError("empty unit name", row, static_cast<Index>(j + 2));
    if (std::find(raw.units.begin(), raw.units.begin() + static_cast<std::ptrdiff_t>(j), raw.units[j]) !=
        raw.units.begin() + static_cast<std::ptrdiff_t>(j))
      throw ParseError("duplicate unit name '" + raw.units[j] + "'", row, static_cast<Index>(j + 2));
  }
  std::vector<std::vector<double>> rows;
  while (detail::getline_any(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells = detail::split_csv_line(line, row);
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()),
                       row, static_cast<Index>(std::min(cells.size(), header.size()) + 1));
    raw.times.push_back(cells[0]);
    std::vector<double> vals(raw.units.size());
    for (std::size_t j = 1; j < cells.size(); ++j) vals[j - 1] = detail::parse_number(cells[j], row, static_cast<Index>(j + 1));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw ParseError("no data rows", row, 0);
  raw.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(raw.units.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < raw.units.size(); ++j) raw.values(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return raw;
}

inline RawPanel read_panel_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return read_panel_csv(in);
}

struct LoadOptions {
  std::string treated;
  std::optional<std::string> treatment_period;  ///< first treated period; all periods are pre when absent
  std::optional<std::string> covariates_path;
};

/// Split a wide table into treated outcome and donors. Periods strictly
/// before `treatment_period` form the pre-treatment sample.
inline PanelDataset split_panel(const RawPanel& raw, const std::string& treated,
                                const std::optional<std::string>& treatment_period) {
  const Index tcol = detail::find_label(raw.units, treated);
  if (tcol < 0) throw ParseError("treated unit '" + treated + "' not found in header", 1, 0);
  Index cut = raw.values.rows();
  if (treatment_period) {
    cut = detail::find_label(raw.times, *treatment_period);
    if (cut < 0) throw ConfigError("treatment period '" + *treatment_period + "' not found in the time column");
  }
  PanelDataset p;
  p.treated_name = treated;
  IndexSet donors;
  for (Index j = 0; j < static_cast<Index>(raw.units.size()); ++j)
    if (j != tcol) {
      donors.push_back(j);
      p.donor_names.push_back(raw.units[static_cast<std::size_t>(j)]);
    }
  const Index post = raw.values.rows() - cut;
  p.Y = raw.values.col(tcol).head(cut);
  p.post_Y = raw.values.col(tcol).tail(post);
  const MatrixXd d = select_cols(raw.values, donors);
  p.X = d.topRows(cut);
  p.post_X = d.bottomRows(post);
  p.pre_times.assign(raw.times.begin(), raw.times.begin() + cut);
  p.post_times.assign(raw.times.begin() + cut, raw.times.end());
  return p;
}

/// Covariates use the panel layout with covariate names in the first
/// column; the treated unit supplies Z and the donors supply D.
inline void attach_covariates(PanelDataset& p, const RawPanel& cov) {
  const Index tcol = detail::find_label(cov.units, p.treated_name);
  if (tcol < 0) throw ParseError("treated unit '" + p.treated_name + "' missing from covariates", 1, 0);
  p.covariate_names = cov.times;
  p.Z = cov.values.col(tcol);
  p.D.resize(cov.values.rows(), p.p());
  for (Index j = 0; j < p.p(); ++j) {
    const Index c = detail::find_label(cov.units, p.donor_names[static_cast<std::size_t>(j)]);
    if (c < 0) throw ParseError("donor '" + p.donor_names[static_cast<std::size_t>(j)] + "' missing from covariates", 1, 0);
    p.D.col(j) = cov.values.col(c);
  }
}

inline PanelDataset load_panel(const std::string& path, const LoadOptions& o) {
  PanelDataset p = split_panel(read_panel_csv(path), o.treated, o.treatment_period);
  if (o.covariates_path) attach_covariates(p, read_panel_csv(*o.covariates_path));
  validate(p);
  return p;
}

/// Trailing moving average of width `window` over the joined pre and post
/// series (the first window - 1 periods are dropped), then removal of the
/// pre-treatment mean of every series.
inline PanelDataset preprocess(const PanelDataset& in, Index window, bool demean) {
  if (window < 1) throw ConfigError("moving-average window must be at least 1");
  if (window > in.n())
    throw ConfigError("moving-average window " + std::to_string(window) + " exceeds the " + std::to_string(in.n()) +
                      " pre-treatment periods");
  const Index n = in.n();
  const Index h = in.post_Y.size();
  const Index cols = in.p() + 1;
  MatrixXd all(n + h, cols);
  all.topRows(n) << in.Y, in.X;
  if (h > 0) all.bottomRows(h) << in.post_Y, in.post_X;
  const Index drop = window - 1;
  MatrixXd ma(n + h - drop, cols);
  for (Index t = 0; t < ma.rows(); ++t) ma.row(t) = all.middleRows(t, window).colwise().mean();
  const Index n_new = n - drop;
  if (demean) {
    const Eigen::RowVectorXd mu = ma.topRows(n_new).colwise().mean();
    ma.rowwise() -= mu;
  }
  PanelDataset out = in;
  out.Y = ma.col(0).head(n_new);
  out.X = ma.rightCols(cols - 1).topRows(n_new);
  out.post_Y = ma.col(0).tail(h);
  out.post_X = ma.rightCols(cols - 1).bottomRows(h);
  out.pre_times.erase(out.pre_times.begin(), out.pre_times.begin() + drop);
  return out;
}

/// Write the panel back in the input layout (time, treated, donors).
inline void write_panel_csv(const PanelDataset& p, std::ostream& out) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\\ ") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"' || c == '\\') q += '\\';
      q += c;
    }
    return q + "\"";
  };
  out << "time," << quote(p.treated_name);
  for (const std::string& d : p.donor_names) out << ',' << quote(d);
  out << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  auto write_rows = [&](const std::vector<std::string>& times, const VectorXd& y, const MatrixXd& x) {
    for (Index t = 0; t < y.size(); ++t) {
      out << quote(times[static_cast<std::size_t>(t)]) << ',' << y(t);
      for (Index j = 0; j < x.cols(); ++j) out << ',' << x(t, j);
      out << '\n';
    }
  };
  write_rows(p.pre_times, p.Y, p.X);
  write_rows(p.post_times, p.post_Y, p.post_X);
}

/// Grid spec: "a:b:n" (n evenly spaced points), "log:a:b:n" (log spaced),
/// or a comma-separated list of values.
inline std::vector<double> parse_grid(const std::string& spec) {
  auto num = [&](const std::string& s) {
    try {
      return detail::parse_number(s, 0, 0);
    } catch (const ParseError&) {
      throw ConfigError("bad number '" + s + "' in grid '" + spec + "'");
    }
  };
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string item;
  const char sep = spec.find(':') != std::string::npos ? ':' : ',';
  while (std::getline(ss, item, sep)) parts.push_back(item);
  if (parts.empty()) throw ConfigError("empty grid");
  if (sep == ',') {
    std::vector<double> out;
    for (const std::string& s : parts) out.push_back(num(s));
    return out;
  }
  const bool log = parts[0] == "log";
  if (log) parts.erase(parts.begin());
  if (parts.size() != 3) throw ConfigError("grid '" + spec + "' must look like a:b:n or log:a:b:n");
  const double a = num(parts[0]), b = num(parts[1]);
  const double nn = num(parts[2]);
  if (nn < 1 || nn != std::floor(nn)) throw ConfigError("grid point count must be a positive integer");
  const int count = static_cast<int>(nn);
  std::vector<double> out(static_cast<std::size_t>(count));
  if (log && !(a > 0 && b > 0)) throw ConfigError("log grid bounds must be positive");
  for (int i = 0; i < count; ++i) {
    const double f = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    out[static_cast<std::size_t>(i)] = log ? std::exp(std::log(a) + f * (std::log(b) - std::log(a))) : a + f * (b - a);
  }
  return out;
}

}  // namespace synthsel
