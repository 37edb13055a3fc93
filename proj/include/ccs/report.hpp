#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ccs/control.hpp"
#include "ccs/errors.hpp"
#include "ccs/protocols.hpp"

namespace ccs {

inline constexpr std::string_view kArtifactVersion = "ccs-lab 1.0.0";

// ---------------------------------------------------------------------------
// Scalars

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError("not a number: '" + std::string(s) + "'");
  return v;
}

template <class Int>
Int parse_integer(std::string_view s) {
  Int v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError("not an integer: '" + std::string(s) + "'");
  return v;
}

inline bool parse_bool(std::string_view s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw InputError("not a boolean: '" + std::string(s) + "'");
}

inline std::string format_bool(bool b) { return b ? "true" : "false"; }

// ---------------------------------------------------------------------------
// Generic CSV document: a '#'-prefixed header block of "key: value" lines,
// one column-name line, then data rows.

struct ReportMeta {
  std::string kind;
  std::string version{kArtifactVersion};
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::pair<std::string, std::string>> fields;  // extra header entries, in order

  std::optional<std::string> field(std::string_view key) const {
    for (const auto& [k, v] : fields)
      if (k == key) return v;
    return std::nullopt;
  }
  std::string require(std::string_view key) const {
    auto v = field(key);
    if (!v) throw InputError("report header is missing '" + std::string(key) + "'");
    return *v;
  }
  void set(std::string key, std::string value) { fields.emplace_back(std::move(key), std::move(value)); }

  bool operator==(const ReportMeta&) const = default;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  bool operator==(const CsvTable&) const = default;
};

struct CsvDocument {
  ReportMeta meta;
  CsvTable table;
};

namespace detail {

inline std::string csv_quote(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::vector<std::string> csv_split(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw InputError("unterminated quoted CSV field");
  cells.push_back(std::move(cur));
  return cells;
}

inline void write_header_line(std::ostream& os, std::string_view key, const std::string& value) {
  if (value.find('\n') != std::string::npos) throw InputError("header values must be single-line");
  os << "# " << key << ": " << value << '\n';
}

}  // namespace detail

inline std::string emit_csv(const CsvDocument& doc) {
  std::ostringstream os;
  detail::write_header_line(os, "kind", doc.meta.kind);
  detail::write_header_line(os, "version", doc.meta.version);
  detail::write_header_line(os, "seed", std::to_string(doc.meta.seed));
  detail::write_header_line(os, "config", doc.meta.config.dump());
  for (const auto& [k, v] : doc.meta.fields) detail::write_header_line(os, k, v);
  for (std::size_t i = 0; i < doc.table.columns.size(); ++i)
    os << (i ? "," : "") << detail::csv_quote(doc.table.columns[i]);
  os << '\n';
  for (const auto& row : doc.table.rows) {
    if (row.size() != doc.table.columns.size()) throw InputError("CSV row width does not match the header");
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << detail::csv_quote(row[i]);
    os << '\n';
  }
  return os.str();
}

inline CsvDocument parse_csv(std::string_view text) {
  CsvDocument doc;
  bool have_columns = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (have_columns) throw InputError("header line after the column row");
      line.remove_prefix(1);
      if (!line.empty() && line.front() == ' ') line.remove_prefix(1);
      const std::size_t colon = line.find(": ");
      if (colon == std::string_view::npos) throw InputError("malformed header line");
      const std::string key(line.substr(0, colon));
      std::string value(line.substr(colon + 2));
      if (key == "kind") doc.meta.kind = std::move(value);
      else if (key == "version") doc.meta.version = std::move(value);
      else if (key == "seed") doc.meta.seed = parse_integer<std::uint64_t>(value);
      else if (key == "config") {
        try {
          doc.meta.config = nlohmann::json::parse(value);
        } catch (const nlohmann::json::exception& e) {
          throw InputError(std::string("embedded config is not valid JSON: ") + e.what());
        }
      } else doc.meta.fields.emplace_back(key, std::move(value));
      continue;
    }
    auto cells = detail::csv_split(line);
    if (!have_columns) {
      doc.table.columns = std::move(cells);
      have_columns = true;
    } else {
      if (cells.size() != doc.table.columns.size()) throw InputError("CSV row width does not match the header");
      doc.table.rows.push_back(std::move(cells));
    }
  }
  if (!have_columns) throw InputError("CSV has no column row");
  return doc;
}

inline nlohmann::json document_to_json(const CsvDocument& doc) {
  nlohmann::json j;
  j["kind"] = doc.meta.kind;
  j["version"] = doc.meta.version;
  j["seed"] = doc.meta.seed;
  j["config"] = doc.meta.config;
  nlohmann::json fields = nlohmann::json::object();
  for (const auto& [k, v] : doc.meta.fields) fields[k] = v;
  j["fields"] = fields;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : doc.table.rows) {
    nlohmann::json obj = nlohmann::json::object();
    for (std::size_t i = 0; i < r.size(); ++i) obj[doc.table.columns[i]] = r[i];
    rows.push_back(std::move(obj));
  }
  j["columns"] = doc.table.columns;
  j["rows"] = rows;
  return j;
}

namespace detail {

inline void expect_kind(const CsvDocument& doc, std::string_view kind, const std::vector<std::string>& columns) {
  if (doc.meta.kind != kind)
    throw InputError("expected a '" + std::string(kind) + "' report, found '" + doc.meta.kind + "'");
  if (doc.table.columns != columns) throw InputError("unexpected column layout for '" + std::string(kind) + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linearity

inline const std::vector<std::string> kLinearityColumns{
    "target_id", "c0", "sin_c0", "mean_residual_norm", "normalized_residual", "n", "seed"};

struct LinearityReport {
  ReportMeta meta;
  std::vector<LinearityPoint> points;
  std::vector<LinearFit> fits;
  double pooled_r2 = 0.0;
  double input_axis_r2 = 0.0;

  bool operator==(const LinearityReport& o) const {
    if (!(meta == o.meta && points.size() == o.points.size() && fits.size() == o.fits.size() &&
          pooled_r2 == o.pooled_r2 && input_axis_r2 == o.input_axis_r2))
      return false;
    for (std::size_t i = 0; i < fits.size(); ++i)
      if (fits[i].slope != o.fits[i].slope || fits[i].intercept != o.fits[i].intercept) return false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& a = points[i];
      const auto& b = o.points[i];
      if (a.target_id != b.target_id || a.c0 != b.c0 || a.sin_c0 != b.sin_c0 ||
          a.mean_residual_norm != b.mean_residual_norm || a.normalized_residual != b.normalized_residual ||
          a.n != b.n || a.seed != b.seed)
        return false;
    }
    return true;
  }
};

inline LinearityReport make_linearity_report(ReportMeta meta, const LinearityResult& r) {
  meta.kind = "linearity";
  return {std::move(meta), r.points, r.fits, r.pooled_r2, r.input_axis_r2};
}

inline CsvDocument to_document(const LinearityReport& r) {
  CsvDocument doc{r.meta, {kLinearityColumns, {}}};
  doc.meta.kind = "linearity";
  doc.meta.set("pooled_r2", format_double(r.pooled_r2));
  doc.meta.set("input_axis_r2", format_double(r.input_axis_r2));
  for (std::size_t i = 0; i < r.fits.size(); ++i)
    doc.meta.set("fit_" + std::to_string(i), format_double(r.fits[i].slope) + " " + format_double(r.fits[i].intercept));
  for (const auto& p : r.points)
    doc.table.rows.push_back({std::to_string(p.target_id), format_double(p.c0), format_double(p.sin_c0),
                              format_double(p.mean_residual_norm), format_double(p.normalized_residual),
                              std::to_string(p.n), std::to_string(p.seed)});
  return doc;
}

inline LinearityReport linearity_from_document(CsvDocument doc) {
  detail::expect_kind(doc, "linearity", kLinearityColumns);
  LinearityReport r;
  r.pooled_r2 = parse_double(doc.meta.require("pooled_r2"));
  r.input_axis_r2 = parse_double(doc.meta.require("input_axis_r2"));
  std::vector<std::pair<std::string, std::string>> rest;
  for (auto& [k, v] : doc.meta.fields) {
    if (k == "pooled_r2" || k == "input_axis_r2") continue;
    if (k.rfind("fit_", 0) == 0) {
      const auto space = v.find(' ');
      if (space == std::string::npos) throw InputError("malformed fit line");
      r.fits.push_back({parse_double(std::string_view(v).substr(0, space)),
                        parse_double(std::string_view(v).substr(space + 1))});
      continue;
    }
    rest.emplace_back(std::move(k), std::move(v));
  }
  doc.meta.fields = std::move(rest);
  r.meta = std::move(doc.meta);
  for (const auto& row : doc.table.rows) {
    LinearityPoint p;
    p.target_id = parse_integer<int>(row[0]);
    p.c0 = parse_double(row[1]);
    p.sin_c0 = parse_double(row[2]);
    p.mean_residual_norm = parse_double(row[3]);
    p.normalized_residual = parse_double(row[4]);
    p.n = parse_integer<int>(row[5]);
    p.seed = parse_integer<std::uint64_t>(row[6]);
    r.points.push_back(p);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Baseline comparison

inline const std::vector<std::string> kCompareColumns{"target_id",    "mechanism", "final_scale", "achieved_rmse",
                                                      "psnr_mean_db", "sample_sd", "iterations",  "converged"};

struct CompareReport {
  ReportMeta meta;
  std::vector<CompareRow> rows;
  std::vector<CompareFailure> failures;

  bool operator==(const CompareReport&) const = default;
};

inline CompareReport make_compare_report(ReportMeta meta, const CompareResult& r) {
  meta.kind = "compare";
  return {std::move(meta), r.rows, r.failures};
}

inline CsvDocument to_document(const CompareReport& r) {
  CsvDocument doc{r.meta, {kCompareColumns, {}}};
  doc.meta.kind = "compare";
  for (const auto& f : r.failures)
    doc.meta.set("failure", std::to_string(f.target_id) + " " + std::string(to_string(f.mechanism)) + " " +
                                nlohmann::json(f.message).dump());
  for (const auto& row : r.rows)
    doc.table.rows.push_back({std::to_string(row.target_id), std::string(to_string(row.mechanism)),
                              format_double(row.final_scale), format_double(row.achieved_rmse),
                              format_double(row.psnr_mean_db), format_double(row.sample_sd),
                              std::to_string(row.iterations), format_bool(row.converged)});
  return doc;
}

inline CompareReport compare_from_document(CsvDocument doc) {
  detail::expect_kind(doc, "compare", kCompareColumns);
  CompareReport r;
  std::vector<std::pair<std::string, std::string>> rest;
  for (auto& [k, v] : doc.meta.fields) {
    if (k != "failure") {
      rest.emplace_back(std::move(k), std::move(v));
      continue;
    }
    const auto s1 = v.find(' ');
    const auto s2 = v.find(' ', s1 + 1);
    if (s1 == std::string::npos || s2 == std::string::npos) throw InputError("malformed failure line");
    CompareFailure f;
    f.target_id = parse_integer<int>(std::string_view(v).substr(0, s1));
    f.mechanism = parse_mechanism(std::string_view(v).substr(s1 + 1, s2 - s1 - 1));
    f.message = nlohmann::json::parse(v.substr(s2 + 1)).get<std::string>();
    r.failures.push_back(std::move(f));
  }
  doc.meta.fields = std::move(rest);
  r.meta = std::move(doc.meta);
  for (const auto& row : doc.table.rows) {
    CompareRow c;
    c.target_id = parse_integer<int>(row[0]);
    c.mechanism = parse_mechanism(row[1]);
    c.final_scale = parse_double(row[2]);
    c.achieved_rmse = parse_double(row[3]);
    c.psnr_mean_db = parse_double(row[4]);
    c.sample_sd = parse_double(row[5]);
    c.iterations = parse_integer<int>(row[6]);
    c.converged = parse_bool(row[7]);
    r.rows.push_back(c);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Sample batch: one row per draw

inline const std::vector<std::string> kBatchColumns{"draw_index", "scale", "residual_norm", "per_coord_rmse", "seed"};

struct BatchRow {
  int draw_index = 0;
  double scale = 0.0;
  double residual_norm = 0.0;
  double per_coord_rmse = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const BatchRow&) const = default;
};

struct BatchReport {
  ReportMeta meta;
  Mechanism mechanism = Mechanism::ccs_full;
  int target_id = 0;
  int start_step = 0;
  std::vector<BatchRow> rows;

  bool operator==(const BatchReport&) const = default;
};

inline BatchReport make_batch_report(ReportMeta meta, const SampleBatch& b, int target_id) {
  meta.kind = "samples";
  BatchReport r{std::move(meta), b.mechanism, target_id, b.start_step, {}};
  for (std::size_t i = 0; i < b.size(); ++i)
    r.rows.push_back({static_cast<int>(i), b.scale, b.residual_norm(i), b.per_coord_rmse(i), b.draw_seeds[i]});
  return r;
}

inline CsvDocument to_document(const BatchReport& r) {
  CsvDocument doc{r.meta, {kBatchColumns, {}}};
  doc.meta.kind = "samples";
  doc.meta.set("mechanism", std::string(to_string(r.mechanism)));
  doc.meta.set("target_id", std::to_string(r.target_id));
  doc.meta.set("start_step", std::to_string(r.start_step));
  for (const auto& row : r.rows)
    doc.table.rows.push_back({std::to_string(row.draw_index), format_double(row.scale),
                              format_double(row.residual_norm), format_double(row.per_coord_rmse),
                              std::to_string(row.seed)});
  return doc;
}

inline BatchReport batch_from_document(CsvDocument doc) {
  detail::expect_kind(doc, "samples", kBatchColumns);
  BatchReport r;
  r.mechanism = parse_mechanism(doc.meta.require("mechanism"));
  r.target_id = parse_integer<int>(doc.meta.require("target_id"));
  r.start_step = parse_integer<int>(doc.meta.require("start_step"));
  std::erase_if(doc.meta.fields, [](const auto& kv) {
    return kv.first == "mechanism" || kv.first == "target_id" || kv.first == "start_step";
  });
  r.meta = std::move(doc.meta);
  for (const auto& row : doc.table.rows)
    r.rows.push_back({parse_integer<int>(row[0]), parse_double(row[1]), parse_double(row[2]), parse_double(row[3]),
                      parse_integer<std::uint64_t>(row[4])});
  return r;
}

// ---------------------------------------------------------------------------
// Controller trace

inline const std::vector<std::string> kTraceColumns{"iteration", "c_low", "c_high", "scale", "measured"};

struct TraceReport {
  ReportMeta meta;
  Mechanism mechanism = Mechanism::ccs_full;
  int target_id = 0;
  ControllerTrace trace;

  bool operator==(const TraceReport& o) const {
    const auto same = [](const ControllerStep& a, const ControllerStep& b) {
      return a.low == b.low && a.high == b.high && a.scale == b.scale && a.measured == b.measured;
    };
    if (!(meta == o.meta && mechanism == o.mechanism && target_id == o.target_id &&
          trace.converged == o.trace.converged && trace.final_scale == o.trace.final_scale &&
          trace.iterations.size() == o.trace.iterations.size() &&
          trace.boundary.has_value() == o.trace.boundary.has_value()))
      return false;
    if (trace.boundary && !same(*trace.boundary, *o.trace.boundary)) return false;
    for (std::size_t i = 0; i < trace.iterations.size(); ++i)
      if (!same(trace.iterations[i], o.trace.iterations[i])) return false;
    return true;
  }
};

inline CsvDocument to_document(const TraceReport& r) {
  CsvDocument doc{r.meta, {kTraceColumns, {}}};
  doc.meta.kind = "trace";
  doc.meta.set("mechanism", std::string(to_string(r.mechanism)));
  doc.meta.set("target_id", std::to_string(r.target_id));
  doc.meta.set("converged", format_bool(r.trace.converged));
  doc.meta.set("final_scale", format_double(r.trace.final_scale));
  if (r.trace.boundary)
    doc.meta.set("boundary", format_double(r.trace.boundary->scale) + " " + format_double(r.trace.boundary->measured));
  for (std::size_t i = 0; i < r.trace.iterations.size(); ++i) {
    const auto& s = r.trace.iterations[i];
    doc.table.rows.push_back({std::to_string(i), format_double(s.low), format_double(s.high), format_double(s.scale),
                              format_double(s.measured)});
  }
  return doc;
}

inline TraceReport trace_from_document(CsvDocument doc) {
  detail::expect_kind(doc, "trace", kTraceColumns);
  TraceReport r;
  r.mechanism = parse_mechanism(doc.meta.require("mechanism"));
  r.target_id = parse_integer<int>(doc.meta.require("target_id"));
  r.trace.converged = parse_bool(doc.meta.require("converged"));
  r.trace.final_scale = parse_double(doc.meta.require("final_scale"));
  if (auto b = doc.meta.field("boundary")) {
    const auto space = b->find(' ');
    if (space == std::string::npos) throw InputError("malformed boundary line");
    ControllerStep s;
    s.scale = parse_double(std::string_view(*b).substr(0, space));
    s.measured = parse_double(std::string_view(*b).substr(space + 1));
    r.trace.boundary = s;
  }
  std::erase_if(doc.meta.fields, [](const auto& kv) {
    return kv.first == "mechanism" || kv.first == "target_id" || kv.first == "converged" ||
           kv.first == "final_scale" || kv.first == "boundary";
  });
  r.meta = std::move(doc.meta);
  for (const auto& row : doc.table.rows)
    r.trace.iterations.push_back({parse_double(row[1]), parse_double(row[2]), parse_double(row[3]), parse_double(row[4])});
  if (r.trace.boundary) {
    const double lo = r.trace.iterations.empty() ? 0.0 : r.trace.iterations.front().low;
    const double hi = r.trace.iterations.empty() ? r.trace.boundary->scale : r.trace.iterations.front().high;
    r.trace.boundary->low = lo;
    r.trace.boundary->high = hi;
  }
  return r;
}

inline TraceReport make_trace_report(ReportMeta meta, Mechanism m, int target_id, ControllerTrace trace) {
  meta.kind = "trace";
  // The boundary evaluation always spans the full bracket.
  if (trace.boundary && !trace.iterations.empty()) {
    trace.boundary->low = trace.iterations.front().low;
    trace.boundary->high = trace.iterations.front().high;
  }
  return {std::move(meta), m, target_id, std::move(trace)};
}

// ---------------------------------------------------------------------------
// Generic typed table used by the simpler subcommands (invert, concentration, verify)

struct TableReport {
  ReportMeta meta;
  CsvTable table;

  bool operator==(const TableReport&) const = default;
};

inline CsvDocument to_document(const TableReport& r) { return {r.meta, r.table}; }

inline TableReport table_from_document(CsvDocument doc, std::string_view kind,
                                       const std::vector<std::string>& columns) {
  detail::expect_kind(doc, kind, columns);
  return {std::move(doc.meta), std::move(doc.table)};
}

}  // namespace ccs
