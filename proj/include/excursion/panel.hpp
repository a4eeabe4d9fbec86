/**
 * Clustered micro-randomized trial panels.
 *
 * One ObservationRow per person and decision point, grouped by cluster and
 * individual. Ingestion is long-format CSV only; identifiers are opaque
 * strings ordered with a digit-aware comparison so "2" sorts before "10".
 */
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "excursion/error.hpp"

namespace excursion {

struct ObservationRow {
  std::string cluster_id;
  std::string individual_id;
  int t = 0;
  int available = 1;
  int treatment = 0;
  double rand_prob = 0.5;  // p_t(1 | H_t)
  std::vector<double> moderators;
  std::vector<double> controls;
  double outcome = 0.0;  // Y_{t, delta}

  bool operator==(const ObservationRow&) const = default;
};

struct Individual {
  std::string id;
  std::vector<ObservationRow> rows;  // sorted by t

  bool operator==(const Individual&) const = default;
};

struct Cluster {
  std::string id;
  std::vector<Individual> members;

  bool operator==(const Cluster&) const = default;
};

/// Natural order for identifiers: all-digit strings compare numerically.
inline bool id_less(std::string_view a, std::string_view b) {
  auto digits = [](std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (digits(a) && digits(b)) {
    auto strip = [](std::string_view s) {
      const auto nz = s.find_first_not_of('0');
      return nz == std::string_view::npos ? std::string_view{"0"} : s.substr(nz);
    };
    const auto sa = strip(a), sb = strip(b);
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    if (sa != sb) return sa < sb;
  }
  return a < b;
}

struct MRTDataset {
  std::vector<std::string> moderator_names;
  std::vector<std::string> control_names;
  int delta = 1;
  std::vector<Cluster> clusters;

  bool operator==(const MRTDataset&) const = default;

  std::size_t M() const { return clusters.size(); }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    out.reserve(clusters.size());
    for (const auto& c : clusters) out.push_back(c.members.size());
    return out;
  }

  /// Largest decision point present.
  int T() const {
    int best = 0;
    for (const auto& c : clusters)
      for (const auto& m : c.members)
        if (!m.rows.empty()) best = std::max(best, m.rows.back().t);
    return best;
  }

  std::size_t n_individuals() const {
    std::size_t n = 0;
    for (const auto& c : clusters) n += c.members.size();
    return n;
  }

  std::size_t n_rows() const {
    std::size_t n = 0;
    for (const auto& c : clusters)
      for (const auto& m : c.members) n += m.rows.size();
    return n;
  }

  std::optional<std::size_t> moderator_index(std::string_view name) const {
    for (std::size_t i = 0; i < moderator_names.size(); ++i)
      if (moderator_names[i] == name) return i;
    return std::nullopt;
  }

  std::optional<std::size_t> control_index(std::string_view name) const {
    for (std::size_t i = 0; i < control_names.size(); ++i)
      if (control_names[i] == name) return i;
    return std::nullopt;
  }

  /// Groups rows by cluster then individual and sorts everything, so the
  /// result does not depend on input row order. No validation happens here.
  static MRTDataset from_rows(std::vector<ObservationRow> rows, std::vector<std::string> moderator_names,
                              std::vector<std::string> control_names, int delta) {
    MRTDataset ds;
    ds.moderator_names = std::move(moderator_names);
    ds.control_names = std::move(control_names);
    ds.delta = delta;

    std::stable_sort(rows.begin(), rows.end(), [](const ObservationRow& a, const ObservationRow& b) {
      if (a.cluster_id != b.cluster_id) return id_less(a.cluster_id, b.cluster_id);
      if (a.individual_id != b.individual_id) return id_less(a.individual_id, b.individual_id);
      return a.t < b.t;
    });
    for (auto& row : rows) {
      if (ds.clusters.empty() || ds.clusters.back().id != row.cluster_id) {
        ds.clusters.push_back(Cluster{row.cluster_id, {}});
      }
      auto& members = ds.clusters.back().members;
      if (members.empty() || members.back().id != row.individual_id) {
        members.push_back(Individual{row.individual_id, {}});
      }
      members.back().rows.push_back(std::move(row));
    }
    return ds;
  }
};

// ---- validation ------------------------------------------------------------

struct Violation {
  std::string cluster_id;
  std::string individual_id;
  int t = 0;  // 0 when the violation is not tied to a row
  std::string message;

  std::string describe() const {
    std::ostringstream os;
    os << message;
    if (!cluster_id.empty()) os << " [cluster " << cluster_id;
    if (!individual_id.empty()) os << ", individual " << individual_id;
    if (t != 0) os << ", t=" << t;
    if (!cluster_id.empty()) os << "]";
    return os.str();
  }
};

/// Every invariant violation, in dataset order.
inline std::vector<Violation> validate(const MRTDataset& ds) {
  std::vector<Violation> out;
  if (ds.delta < 1) out.push_back({"", "", 0, "lag delta must be >= 1"});
  if (ds.clusters.empty()) out.push_back({"", "", 0, "dataset has no clusters"});

  std::set<std::string> cluster_ids;
  for (const auto& cluster : ds.clusters) {
    if (!cluster_ids.insert(cluster.id).second) out.push_back({cluster.id, "", 0, "duplicate cluster id"});
    if (cluster.members.empty()) {
      out.push_back({cluster.id, "", 0, "empty cluster"});
      continue;
    }
    std::set<std::string> member_ids;
    std::optional<std::vector<int>> grid;
    for (const auto& ind : cluster.members) {
      if (!member_ids.insert(ind.id).second) out.push_back({cluster.id, ind.id, 0, "duplicate individual id"});
      if (ind.rows.empty()) {
        out.push_back({cluster.id, ind.id, 0, "individual has no rows"});
        continue;
      }
      std::vector<int> ts;
      int prev_t = 0;
      bool first = true;
      for (const auto& r : ind.rows) {
        auto flag = [&](std::string msg) { out.push_back({cluster.id, ind.id, r.t, std::move(msg)}); };
        if (r.cluster_id != cluster.id || r.individual_id != ind.id) flag("row filed under the wrong cluster or individual");
        if (r.t < 1) flag("decision point must be >= 1");
        if (!first && r.t == prev_t) flag("duplicate (cluster, individual, t)");
        else if (!first && r.t < prev_t) flag("decision points not increasing");
        if (r.treatment != 0 && r.treatment != 1) flag("treatment must be 0 or 1");
        if (r.available != 0 && r.available != 1) flag("available must be 0 or 1");
        if (!(r.rand_prob > 0.0 && r.rand_prob < 1.0)) flag("positivity violated: rand_prob must lie in (0,1)");
        if (!std::isfinite(r.outcome)) flag("outcome is not finite");
        if (r.moderators.size() != ds.moderator_names.size()) flag("moderator count does not match header");
        if (r.controls.size() != ds.control_names.size()) flag("control count does not match header");
        if (!std::all_of(r.moderators.begin(), r.moderators.end(), [](double v) { return std::isfinite(v); }) ||
            !std::all_of(r.controls.begin(), r.controls.end(), [](double v) { return std::isfinite(v); }))
          flag("covariate is not finite");
        ts.push_back(r.t);
        prev_t = r.t;
        first = false;
      }
      if (!grid) {
        grid = ts;
      } else if (*grid != ts) {
        out.push_back({cluster.id, ind.id, 0, "decision grid differs from the cluster's first member"});
      }
    }
  }
  return out;
}

// ---- CSV -------------------------------------------------------------------

/// Column bindings for load_csv. An empty `available` binding means every
/// row is available.
struct Schema {
  std::string cluster_id = "cluster_id";
  std::string individual_id = "individual_id";
  std::string t = "t";
  std::string available = "available";
  std::string treatment = "treatment";
  std::string rand_prob = "rand_prob";
  std::string outcome = "outcome";
  std::vector<std::string> moderators;
  std::vector<std::string> controls;
  int delta = 1;

  /// The bindings write_csv uses for `ds`.
  static Schema for_dataset(const MRTDataset& ds) {
    Schema s;
    s.moderators = ds.moderator_names;
    s.controls = ds.control_names;
    s.delta = ds.delta;
    return s;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& cell, std::size_t line, const std::string& column) {
  const std::string s = trim(cell);
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (s.empty() || ec != std::errc{} || ptr != last) {
    throw ParseError("row " + std::to_string(line) + ": column '" + column + "' is not numeric: '" + cell + "'");
  }
  return v;
}

inline int parse_int(const std::string& cell, std::size_t line, const std::string& column) {
  const double v = parse_double(cell, line, column);
  if (v != std::floor(v) || std::abs(v) > 1e9) {
    throw ParseError("row " + std::to_string(line) + ": column '" + column + "' is not an integer: '" + cell + "'");
  }
  return static_cast<int>(v);
}

}  // namespace detail

inline std::string describe_violations(const std::vector<Violation>& violations) {
  std::string msg = "validation failed (" + std::to_string(violations.size()) + " violation" +
                    (violations.size() == 1 ? "" : "s") + "):";
  for (const auto& v : violations) msg += "\n  " + v.describe();
  return msg;
}

/// Parses long-format CSV text. Throws SchemaError, ParseError, or
/// ValidationError (the latter listing every violation).
inline MRTDataset read_csv(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("input is empty: header row missing");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!index.emplace(header[i], i).second) throw SchemaError("duplicate header column '" + header[i] + "'");
  }
  auto resolve = [&](const std::string& name, const char* field) {
    auto it = index.find(name);
    if (it == index.end()) {
      throw SchemaError(std::string("missing column '") + name + "' (bound to " + field + ")");
    }
    return it->second;
  };

  // Core fields must be bound to distinct columns.
  std::vector<std::pair<std::string, const char*>> core = {
      {schema.cluster_id, "cluster_id"}, {schema.individual_id, "individual_id"}, {schema.t, "t"},
      {schema.treatment, "treatment"},   {schema.rand_prob, "rand_prob"},         {schema.outcome, "outcome"}};
  if (!schema.available.empty()) core.emplace_back(schema.available, "available");
  std::set<std::string> core_columns;
  for (const auto& [col, field] : core) {
    if (!core_columns.insert(col).second) throw SchemaError("column '" + col + "' bound to more than one field");
  }
  for (const auto* list : {&schema.moderators, &schema.controls}) {
    std::set<std::string> seen;
    for (const auto& col : *list) {
      if (core_columns.count(col)) throw SchemaError("covariate column '" + col + "' is already bound to a core field");
      if (!seen.insert(col).second) throw SchemaError("covariate column '" + col + "' listed twice");
    }
  }
  if (schema.delta < 1) throw SchemaError("lag delta must be >= 1");

  const auto c_cluster = resolve(schema.cluster_id, "cluster_id");
  const auto c_ind = resolve(schema.individual_id, "individual_id");
  const auto c_t = resolve(schema.t, "t");
  const auto c_treat = resolve(schema.treatment, "treatment");
  const auto c_prob = resolve(schema.rand_prob, "rand_prob");
  const auto c_out = resolve(schema.outcome, "outcome");
  std::optional<std::size_t> c_avail;
  if (!schema.available.empty()) c_avail = resolve(schema.available, "available");
  std::vector<std::size_t> c_mod, c_ctl;
  for (const auto& m : schema.moderators) c_mod.push_back(resolve(m, "moderators"));
  for (const auto& c : schema.controls) c_ctl.push_back(resolve(c, "controls"));

  std::vector<ObservationRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(cells.size()));
    }
    ObservationRow r;
    r.cluster_id = detail::trim(cells[c_cluster]);
    r.individual_id = detail::trim(cells[c_ind]);
    r.t = detail::parse_int(cells[c_t], line_no, header[c_t]);
    r.available = c_avail ? detail::parse_int(cells[*c_avail], line_no, header[*c_avail]) : 1;
    r.treatment = detail::parse_int(cells[c_treat], line_no, header[c_treat]);
    r.rand_prob = detail::parse_double(cells[c_prob], line_no, header[c_prob]);
    r.outcome = detail::parse_double(cells[c_out], line_no, header[c_out]);
    for (auto c : c_mod) r.moderators.push_back(detail::parse_double(cells[c], line_no, header[c]));
    for (auto c : c_ctl) r.controls.push_back(detail::parse_double(cells[c], line_no, header[c]));
    rows.push_back(std::move(r));
  }

  auto ds = MRTDataset::from_rows(std::move(rows), schema.moderators, schema.controls, schema.delta);
  const auto violations = validate(ds);
  if (!violations.empty()) throw ValidationError(describe_violations(violations));
  return ds;
}

inline MRTDataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return read_csv(in, schema);
}

/// Writes the canonical layout: core columns, then each distinct moderator
/// or control column once, then the outcome. Numbers use 17 significant
/// digits so reading the file back is bit-exact.
inline void write_csv(std::ostream& out, const MRTDataset& ds) {
  std::vector<std::string> covariates;
  std::vector<std::pair<bool, std::size_t>> source;  // (is_moderator, index)
  for (std::size_t i = 0; i < ds.moderator_names.size(); ++i) {
    covariates.push_back(ds.moderator_names[i]);
    source.emplace_back(true, i);
  }
  for (std::size_t i = 0; i < ds.control_names.size(); ++i) {
    if (std::find(covariates.begin(), covariates.end(), ds.control_names[i]) != covariates.end()) continue;
    covariates.push_back(ds.control_names[i]);
    source.emplace_back(false, i);
  }

  out << "cluster_id,individual_id,t,available,treatment,rand_prob";
  for (const auto& c : covariates) out << ',' << detail::quote_csv(c);
  out << ",outcome\n";
  for (const auto& cluster : ds.clusters) {
    for (const auto& ind : cluster.members) {
      for (const auto& r : ind.rows) {
        out << detail::quote_csv(r.cluster_id) << ',' << detail::quote_csv(r.individual_id) << ',' << r.t << ','
            << r.available << ',' << r.treatment << ',' << detail::format_double(r.rand_prob);
        for (const auto& [is_mod, i] : source) {
          out << ',' << detail::format_double(is_mod ? r.moderators[i] : r.controls[i]);
        }
        out << ',' << detail::format_double(r.outcome) << '\n';
      }
    }
  }
}

inline void write_csv(const std::string& path, const MRTDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  write_csv(out, ds);
}

}  // namespace excursion
