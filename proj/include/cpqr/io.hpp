#ifndef CPQR_IO_HPP
#define CPQR_IO_HPP

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cpqr/changepoint.hpp"
#include "cpqr/kkt.hpp"
#include "cpqr/simulation.hpp"
#include "cpqr/types.hpp"

namespace cpqr::io {

using nlohmann::json;

inline constexpr const char* kFormatVersion = "1";

enum class Format { Csv, Markdown, Json };

inline Format parse_format(const std::string& s) {
  if (s == "csv") return Format::Csv;
  if (s == "markdown") return Format::Markdown;
  if (s == "json") return Format::Json;
  throw InvalidArgument("unknown output format '" + s + "' (expected csv, markdown or json)");
}

inline std::string format_extension(Format f) {
  switch (f) {
    case Format::Csv: return "csv";
    case Format::Markdown: return "md";
    case Format::Json: return "json";
  }
  return "txt";
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

}  // namespace detail

/// Reads a header row naming a `y` column, then numeric rows. Covariates are
/// the remaining columns in header order. Rows and columns in errors are 1-based
/// (the header is row 1).
inline Dataset ingest_csv(std::istream& in) {
  std::string line;
  std::size_t row = 0;
  // header: skip leading blank lines
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++row;
    if (row == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    for (auto f : detail::split(line)) header.push_back(detail::unquote(f));
    break;
  }
  if (header.empty()) throw EmptyFile("input has no header row");
  std::size_t ycol = header.size();
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c].empty()) throw ParseError(row, c + 1, "empty column name");
    if (header[c] == "y") {
      if (ycol != header.size()) throw ParseError(row, c + 1, "duplicate 'y' column");
      ycol = c;
    }
  }
  if (ycol == header.size()) throw ParseError(row, 1, "no column named 'y'");
  const std::size_t p = header.size() - 1;
  if (p == 0) throw EmptyFile("input has no covariate columns");

  std::vector<double> ys, xs;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line);
    if (fields.size() != header.size())
      throw ParseError(row, std::min(fields.size(), header.size()) + 1,
                       "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const std::string_view f = fields[c];
      if (f.empty()) throw ParseError(row, c + 1, "missing value");
      double v = 0.0;
      const char* first = f.data();
      if (*first == '+') ++first;
      const auto [ptr, ec] = std::from_chars(first, f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw ParseError(row, c + 1, "not a number: '" + std::string(f) + "'");
      if (!std::isfinite(v)) throw ParseError(row, c + 1, "non-finite value");
      (c == ycol ? ys : xs).push_back(v);
    }
  }
  if (ys.empty()) throw EmptyFile("input has no data rows");
  const auto n = static_cast<Index>(ys.size());
  Vector y = Eigen::Map<Vector>(ys.data(), n);
  Matrix x = Eigen::Map<Matrix>(xs.data(), n, static_cast<Index>(p));
  return Dataset(std::move(y), std::move(x));
}

inline Dataset ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  return ingest_csv(in);
}

inline std::vector<std::string> csv_covariate_names(std::istream& in) {
  std::string line;
  while (std::getline(in, line))
    if (!detail::trim(line).empty()) break;
  std::vector<std::string> names;
  for (auto f : detail::split(line)) {
    std::string s = detail::unquote(f);
    if (s != "y") names.push_back(s);
  }
  return names;
}

// ---------------------------------------------------------------------------
// Fit reports

struct MethodSettings {
  std::string name = "lasso-type";  ///< scad | lasso-type | quantile
  double tau = 0.5;
  double scad_a = kDefaultScadA;
  double lambda_scale = 1.0;
  double lambda_exponent = -0.4;
  double weight_exponent = 0.4;
  double loss_scale = 2.0;

  SegmentMethod to_method() const {
    if (name == "scad") return ScadMethod{tau, scad_a, lambda_scale, lambda_exponent};
    if (name == "lasso-type") return LassoTypeMethod{tau, weight_exponent, loss_scale};
    if (name == "quantile") return PlainQuantile{tau};
    throw InvalidArgument("unknown method '" + name + "' (expected scad, lasso-type or quantile)");
  }
};

/// Everything needed to re-certify a fit: settings, data and per-segment results.
struct FitReport {
  MethodSettings method;
  Index k = 0;
  Index min_segment = 0;
  std::string input;
  std::vector<std::string> covariates;
  Dataset data{Vector::Zero(1), Matrix::Zero(1, 1)};
  ChangePointFit fit;
};

inline json segment_to_json(const SegmentFit& f) {
  return json{{"start", f.j1},
              {"end", f.j2},
              {"coefficients", std::vector<double>(f.coefficients.begin(), f.coefficients.end())},
              {"active_set", f.active_set},
              {"objective", f.objective},
              {"kkt_residual", f.kkt_residual},
              {"weights", std::vector<double>(f.weights.begin(), f.weights.end())},
              {"nonunique", f.nonunique},
              {"lp_iterations", f.lp_iterations},
              {"lla_iterations", f.lla_iterations}};
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline SegmentFit segment_from_json(const json& j) {
  SegmentFit f;
  f.j1 = j.at("start").get<Index>();
  f.j2 = j.at("end").get<Index>();
  f.coefficients = to_vector(j.at("coefficients").get<std::vector<double>>());
  f.active_set = j.at("active_set").get<std::vector<Index>>();
  f.objective = j.at("objective").get<double>();
  f.kkt_residual = j.at("kkt_residual").get<double>();
  f.weights = to_vector(j.at("weights").get<std::vector<double>>());
  f.nonunique = j.value("nonunique", false);
  f.lp_iterations = j.value("lp_iterations", 0);
  f.lla_iterations = j.value("lla_iterations", 0);
  return f;
}

inline json fit_to_json(const FitReport& r) {
  json data;
  data["y"] = std::vector<double>(r.data.y().begin(), r.data.y().end());
  json rows = json::array();
  for (Index i = 0; i < r.data.n(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(r.data.p()));
    for (Index j = 0; j < r.data.p(); ++j) row[static_cast<std::size_t>(j)] = r.data.x()(i, j);
    rows.push_back(std::move(row));
  }
  data["x"] = std::move(rows);
  json segs = json::array();
  for (const auto& f : r.fit.segment_fits) segs.push_back(segment_to_json(f));
  return json{{"format_version", kFormatVersion},
              {"method",
               {{"name", r.method.name},
                {"tau", r.method.tau},
                {"scad_a", r.method.scad_a},
                {"lambda_scale", r.method.lambda_scale},
                {"lambda_exponent", r.method.lambda_exponent},
                {"weight_exponent", r.method.weight_exponent},
                {"loss_scale", r.method.loss_scale}}},
              {"k", r.k},
              {"min_segment", r.min_segment},
              {"input", r.input},
              {"covariates", r.covariates},
              {"n", r.data.n()},
              {"p", r.data.p()},
              {"breaks", r.fit.segmentation.breaks},
              {"total_objective", r.fit.total_objective},
              {"segments", std::move(segs)},
              {"data", std::move(data)}};
}

inline FitReport fit_from_json(const json& j) {
  FitReport r;
  const json& m = j.at("method");
  r.method.name = m.at("name").get<std::string>();
  r.method.tau = m.at("tau").get<double>();
  r.method.scad_a = m.value("scad_a", kDefaultScadA);
  r.method.lambda_scale = m.value("lambda_scale", 1.0);
  r.method.lambda_exponent = m.value("lambda_exponent", -0.4);
  r.method.weight_exponent = m.value("weight_exponent", 0.4);
  r.method.loss_scale = m.value("loss_scale", 2.0);
  r.k = j.at("k").get<Index>();
  r.min_segment = j.value("min_segment", Index{0});
  r.input = j.value("input", std::string());
  r.covariates = j.value("covariates", std::vector<std::string>());
  const auto ys = j.at("data").at("y").get<std::vector<double>>();
  const auto xs = j.at("data").at("x").get<std::vector<std::vector<double>>>();
  if (xs.size() != ys.size() || xs.empty()) throw DimensionMismatch("saved data has inconsistent sizes");
  Matrix x(static_cast<Index>(xs.size()), static_cast<Index>(xs.front().size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != xs.front().size()) throw DimensionMismatch("saved data rows differ in length");
    for (std::size_t c = 0; c < xs[i].size(); ++c) x(static_cast<Index>(i), static_cast<Index>(c)) = xs[i][c];
  }
  r.data = Dataset(to_vector(ys), std::move(x));
  r.fit.segmentation.breaks = j.at("breaks").get<std::vector<Index>>();
  r.fit.total_objective = j.value("total_objective", 0.0);
  for (const auto& s : j.at("segments")) r.fit.segment_fits.push_back(segment_from_json(s));
  return r;
}

inline void save_fit(const FitReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << fit_to_json(r).dump(2) << '\n';
}

inline FitReport load_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
    return fit_from_json(j);
  } catch (const json::exception& e) {
    throw ParseError(0, 0, std::string("malformed fit file: ") + e.what());
  }
}

struct Recertification {
  std::vector<double> residuals;  ///< recomputed per segment
  std::vector<double> limits;     ///< 1e-4 * segment length
  bool breaks_consistent = true;
  bool ok() const {
    if (!breaks_consistent) return false;
    for (std::size_t r = 0; r < residuals.size(); ++r)
      if (!(residuals[r] <= limits[r])) return false;
    return true;
  }
};

/// Recomputes each segment's KKT residual from the saved coefficients and data.
inline Recertification recertify(const FitReport& r) {
  Recertification out;
  const SegmentMethod method = r.method.to_method();
  const auto b = r.fit.segmentation.bounds(r.data.n());
  if (b.size() != r.fit.segment_fits.size() + 1) {
    out.breaks_consistent = false;
    return out;
  }
  for (std::size_t s = 0; s < r.fit.segment_fits.size(); ++s) {
    const SegmentFit& f = r.fit.segment_fits[s];
    if (f.j1 != b[s] || f.j2 != b[s + 1] || f.coefficients.size() != r.data.p()) {
      out.breaks_consistent = false;
      return out;
    }
    const DataView view = r.data.segment(f.j1, f.j2);
    const Index m = f.length();
    double res = 0.0;
    if (const auto* sc = std::get_if<ScadMethod>(&method)) {
      res = kkt_check_scad(f, view, sc->tau, sc->lambda(m), sc->a);
    } else if (std::holds_alternative<LassoTypeMethod>(method)) {
      if (f.weights.size() != r.data.p()) {
        out.breaks_consistent = false;
        return out;
      }
      res = kkt_check_weighted_l1(f, view, r.method.tau, f.weights);
    } else {
      res = kkt_residual_weighted(view, r.method.tau, f.coefficients, Vector::Zero(r.data.p()));
    }
    out.residuals.push_back(res);
    out.limits.push_back(kkt_limit(m));
  }
  return out;
}

namespace detail {

inline std::string num(double v, int precision = 17) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

inline std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::string join(const std::vector<Index>& v, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + std::to_string(v[i]);
  return s;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::string render_table(const std::vector<std::vector<std::string>>& rows, Format f) {
  std::string out;
  if (f == Format::Csv) {
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + csv_quote(row[c]);
      out += '\n';
    }
  } else {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out += "|";
      for (const auto& cell : rows[r]) out += " " + cell + " |";
      out += '\n';
      if (r == 0) {
        out += "|";
        for (std::size_t c = 0; c < rows[r].size(); ++c) out += "---|";
        out += '\n';
      }
    }
  }
  return out;
}

}  // namespace detail

/// Human or machine rendering of a fit: one row per segment.
inline std::string render_fit(const FitReport& r, Format f) {
  if (f == Format::Json) return fit_to_json(r).dump(2) + "\n";
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"segment", "start", "end", "length", "objective", "kkt_residual", "active_set"};
  for (Index j = 0; j < r.data.p(); ++j)
    head.push_back(static_cast<std::size_t>(j) < r.covariates.size() ? r.covariates[static_cast<std::size_t>(j)]
                                                                       : "x" + std::to_string(j + 1));
  rows.push_back(head);
  for (std::size_t s = 0; s < r.fit.segment_fits.size(); ++s) {
    const SegmentFit& fit = r.fit.segment_fits[s];
    std::vector<Index> active;
    for (Index a : fit.active_set) active.push_back(a + 1);
    std::vector<std::string> row{std::to_string(s + 1),
                                 std::to_string(fit.j1 + 1),
                                 std::to_string(fit.j2),
                                 std::to_string(fit.length()),
                                 detail::num(fit.objective, 10),
                                 detail::num(fit.kkt_residual, 3),
                                 detail::join(active, " ")};
    for (Index j = 0; j < fit.coefficients.size(); ++j) row.push_back(detail::num(fit.coefficients[j], 10));
    rows.push_back(std::move(row));
  }
  std::string meta = "method=" + r.method.name + " tau=" + detail::num(r.method.tau, 6) + " k=" + std::to_string(r.k) +
                     " breaks=" + (r.fit.segmentation.breaks.empty() ? "none" : detail::join(r.fit.segmentation.breaks, ";")) +
                     " objective=" + detail::num(r.fit.total_objective, 10);
  if (f == Format::Csv) return "# " + meta + "\n" + detail::render_table(rows, f);
  return meta + "\n\n" + detail::render_table(rows, f);
}

// ---------------------------------------------------------------------------
// Simulation tables

inline json metrics_to_json(const MetricsReport& rep) {
  json methods = json::array();
  for (const auto& m : rep.methods)
    methods.push_back({{"method", m.method},
                       {"tau", m.tau},
                       {"median_breaks", m.median_breaks},
                       {"true_zero_pct", m.true_zero_pct},
                       {"false_zero_pct", m.false_zero_pct},
                       {"l1_error", m.l1_error},
                       {"replications", m.replications},
                       {"failures", m.failures},
                       {"invalid", m.invalid}});
  return json{{"law", law_name(rep.law)},   {"n", rep.n},         {"reps", rep.reps},
              {"seed", rep.seed},           {"tau_star", rep.tau_star}, {"true_breaks", rep.true_breaks},
              {"invalid", rep.invalid()},   {"methods", std::move(methods)}};
}

inline std::string metrics_metadata(const MetricsReport& rep) {
  return "law=" + law_name(rep.law) + " n=" + std::to_string(rep.n) + " reps=" + std::to_string(rep.reps) +
         " seed=" + std::to_string(rep.seed) + " tau_star=" + detail::fixed(rep.tau_star, 5) +
         " true_breaks=" + detail::join(rep.true_breaks, ";") + (rep.invalid() ? " INVALID" : "");
}

/// Median breaks, true-0 % and false-0 % with methods as columns.
inline std::string render_metrics(const MetricsReport& rep, Format f) {
  if (f == Format::Json) return metrics_to_json(rep).dump(2) + "\n";
  std::vector<std::vector<std::string>> rows{{"Method"}, {"median of (l1,l2)"}, {"% of true 0"}, {"% of false 0"},
                                             {"replications"}, {"failures"}};
  for (const auto& m : rep.methods) {
    std::string med = "(";
    for (std::size_t r = 0; r < m.median_breaks.size(); ++r) med += (r ? "," : "") + detail::num(m.median_breaks[r], 6);
    rows[0].push_back(m.method);
    rows[1].push_back(med + ")");
    rows[2].push_back(detail::fixed(m.true_zero_pct, 1));
    rows[3].push_back(detail::fixed(m.false_zero_pct, 1));
    rows[4].push_back(std::to_string(m.replications));
    rows[5].push_back(std::to_string(m.failures));
  }
  const std::string meta = metrics_metadata(rep);
  if (f == Format::Csv) return "# " + meta + "\n" + detail::render_table(rows, f);
  return meta + "\n\n" + detail::render_table(rows, f);
}

/// Mean absolute error per true nonzero coefficient, one row per segment.
inline std::string render_l1_errors(const MetricsReport& rep, Format f) {
  if (f == Format::Json) {
    json j{{"law", law_name(rep.law)}, {"n", rep.n}, {"reps", rep.reps}, {"seed", rep.seed}, {"tau_star", rep.tau_star}};
    for (const auto& m : rep.methods) j["l1_error"][m.method] = m.l1_error;
    return j.dump(2) + "\n";
  }
  std::vector<std::vector<std::string>> rows{{"segment"}};
  for (const auto& m : rep.methods) rows[0].push_back(m.method);
  const std::size_t segs = rep.methods.empty() ? 0 : rep.methods.front().l1_error.size();
  for (std::size_t s = 0; s < segs; ++s) {
    std::vector<std::string> row{std::to_string(s + 1)};
    for (const auto& m : rep.methods) row.push_back(detail::fixed(m.l1_error[s], 3));
    rows.push_back(std::move(row));
  }
  const std::string meta = metrics_metadata(rep);
  if (f == Format::Csv) return "# " + meta + "\n" + detail::render_table(rows, f);
  return meta + "\n\n" + detail::render_table(rows, f);
}

}  // namespace cpqr::io

#endif  // CPQR_IO_HPP
