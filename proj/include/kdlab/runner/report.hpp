// Copyright 2026 The kdlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>

#include "kdlab/runner/sweep.hpp"

namespace kdlab::runner {

struct SummaryRow {
  /// Values of the group-by axes, in group-by order.
  std::vector<std::string> keys;
  double mean = 0;
  double std = 0;
  std::size_t n = 0;

  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

struct Summary {
  std::vector<std::string> group_by;
  std::vector<SummaryRow> rows;

  friend bool operator==(const Summary&, const Summary&) = default;
};

inline constexpr std::string_view kGroupAxes[] = {"alpha", "method", "student", "teacher", "temperature"};

namespace detail {

/// Lexicographic, except that runs of digits compare by value
/// (resnet8 < resnet20 < resnet26).
inline bool natural_less(std::string_view a, std::string_view b) {
  auto digit = [](char c) { return c >= '0' && c <= '9'; };
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (digit(a[i]) && digit(b[j])) {
      std::size_t ie = i, je = j;
      while (ie < a.size() && digit(a[ie])) ++ie;
      while (je < b.size() && digit(b[je])) ++je;
      std::string_view x = a.substr(i, ie - i), y = b.substr(j, je - j);
      while (x.size() > 1 && x[0] == '0') x.remove_prefix(1);
      while (y.size() > 1 && y[0] == '0') y.remove_prefix(1);
      if (x.size() != y.size()) return x.size() < y.size();
      if (x != y) return x < y;
      i = ie;
      j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  if ((a.size() - i) != (b.size() - j)) return a.size() - i < b.size() - j;
  return a < b;
}

/// Numeric values compare as numbers, anything else in natural order.
inline bool key_less(const std::string& a, const std::string& b) {
  double x, y;
  const auto ra = std::from_chars(a.data(), a.data() + a.size(), x);
  const auto rb = std::from_chars(b.data(), b.data() + b.size(), y);
  const bool na = ra.ec == std::errc() && ra.ptr == a.data() + a.size();
  const bool nb = rb.ec == std::errc() && rb.ptr == b.data() + b.size();
  if (na && nb) return x < y;
  if (na != nb) return na;
  return natural_less(a, b);
}

inline bool keys_less(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (key_less(a[i], b[i])) return true;
    if (key_less(b[i], a[i])) return false;
  }
  return false;
}

}  // namespace detail

/// Mean, population standard deviation and count of best_val_accuracy per
/// group of successful records. Rows are sorted by key (numbers numerically).
inline Summary aggregate(const std::vector<ExperimentRecord>& records, const std::vector<std::string>& group_by) {
  for (const auto& g : group_by)
    if (std::find(std::begin(kGroupAxes), std::end(kGroupAxes), g) == std::end(kGroupAxes))
      throw ConfigError("group_by: unknown axis '" + g + "'");
  std::vector<std::pair<std::vector<std::string>, std::vector<double>>> groups;
  for (const auto& r : records) {
    if (!r.ok()) continue;
    std::vector<std::string> key;
    for (const auto& g : group_by) {
      auto it = r.keys.find(g);
      key.push_back(it == r.keys.end() ? "-" : it->second);
    }
    auto pos = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
    if (pos == groups.end()) pos = groups.insert(groups.end(), {key, {}});
    pos->second.push_back(r.best_val_accuracy);
  }
  Summary s{group_by, {}};
  for (auto& [key, values] : groups) {
    double sum = 0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double sq = 0;
    for (double v : values) sq += (v - mean) * (v - mean);
    s.rows.push_back({key, mean, std::sqrt(sq / static_cast<double>(values.size())), values.size()});
  }
  std::sort(s.rows.begin(), s.rows.end(), [](const auto& a, const auto& b) { return detail::keys_less(a.keys, b.keys); });
  return s;
}

enum class Layout { alpha_by_temp, teacher_compare, method_compare };
enum class Format { csv, markdown };

inline Layout parse_layout(std::string_view s) {
  if (s == "alpha_by_temp") return Layout::alpha_by_temp;
  if (s == "teacher_compare") return Layout::teacher_compare;
  if (s == "method_compare") return Layout::method_compare;
  throw ConfigError("layout: unknown value '" + std::string(s) + "'");
}

inline Format parse_format(std::string_view s) {
  if (s == "csv") return Format::csv;
  if (s == "markdown") return Format::markdown;
  throw ConfigError("format: unknown value '" + std::string(s) + "'");
}

/// Axes each layout groups by.
inline std::vector<std::string> layout_axes(Layout l) {
  switch (l) {
    case Layout::alpha_by_temp: return {"alpha", "temperature"};
    case Layout::teacher_compare: return {"teacher"};
    case Layout::method_compare: return {"method"};
  }
  return {};
}

struct TableContext {
  /// Best validation accuracy of each teacher architecture, by name.
  std::map<std::string, double> teacher_accuracy;
};

namespace detail {

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

inline std::string markdown_row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const auto& c : cells) out += " " + c + " |";
  return out + "\n";
}

inline std::string markdown_rule(std::size_t n) {
  std::string out = "|";
  for (std::size_t i = 0; i < n; ++i) out += " --- |";
  return out + "\n";
}

inline std::size_t axis_index(const Summary& s, std::string_view axis) {
  auto it = std::find(s.group_by.begin(), s.group_by.end(), axis);
  if (it == s.group_by.end()) throw ConfigError("table layout needs the summary grouped by " + std::string(axis));
  return static_cast<std::size_t>(it - s.group_by.begin());
}

inline std::string summary_csv(const Summary& s, const std::vector<SummaryRow>& rows) {
  std::string out;
  for (const auto& g : s.group_by) out += g + ",";
  out += "mean_acc,std_acc,n\n";
  for (const auto& r : rows) {
    for (const auto& k : r.keys) out += k + ",";
    out += config::format_number(r.mean) + "," + config::format_number(r.std) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

}  // namespace detail

/// alpha_by_temp: alpha rows x temperature columns of mean accuracy.
/// teacher_compare: teacher, parameters, layers, teacher and student accuracy.
/// method_compare: methods by descending mean accuracy.
/// Markdown shows percentages with two decimals; CSV keeps full precision.
inline std::string emit_table(const Summary& s, Layout layout, Format format, const TableContext& ctx = {}) {
  if (s.rows.empty()) throw ConfigError("no records found");
  switch (layout) {
    case Layout::alpha_by_temp: {
      const std::size_t ia = detail::axis_index(s, "alpha"), it = detail::axis_index(s, "temperature");
      std::vector<std::string> alphas, temps;
      for (const auto& r : s.rows) {
        if (std::find(alphas.begin(), alphas.end(), r.keys[ia]) == alphas.end()) alphas.push_back(r.keys[ia]);
        if (std::find(temps.begin(), temps.end(), r.keys[it]) == temps.end()) temps.push_back(r.keys[it]);
      }
      std::sort(alphas.begin(), alphas.end(), detail::key_less);
      std::sort(temps.begin(), temps.end(), detail::key_less);
      auto cell = [&](const std::string& a, const std::string& t) -> const SummaryRow* {
        for (const auto& r : s.rows)
          if (r.keys[ia] == a && r.keys[it] == t) return &r;
        return nullptr;
      };
      std::string out;
      if (format == Format::csv) {
        out = "alpha";
        for (const auto& t : temps) out += "," + t;
        out += "\n";
        for (const auto& a : alphas) {
          out += a;
          for (const auto& t : temps) {
            const SummaryRow* r = cell(a, t);
            out += "," + (r ? config::format_number(r->mean) : std::string());
          }
          out += "\n";
        }
        return out;
      }
      std::vector<std::string> head{"alpha \\ T"};
      head.insert(head.end(), temps.begin(), temps.end());
      out = detail::markdown_row(head) + detail::markdown_rule(head.size());
      for (const auto& a : alphas) {
        std::vector<std::string> row{a};
        for (const auto& t : temps) {
          const SummaryRow* r = cell(a, t);
          row.push_back(r ? detail::percent(r->mean) : "-");
        }
        out += detail::markdown_row(row);
      }
      return out;
    }
    case Layout::teacher_compare: {
      const std::size_t iteach = detail::axis_index(s, "teacher");
      std::vector<std::vector<std::string>> rows;
      for (const auto& r : s.rows) {
        const std::string& name = r.keys[iteach];
        std::string params = "-", layers = "-";
        if (name != "-") {
          Model<float> m(parse_model_name(name));
          params = std::to_string(count_parameters(m).total);
          layers = std::to_string(count_layers(m));
        }
        auto ta = ctx.teacher_accuracy.find(name);
        const bool csv = format == Format::csv;
        const std::string tacc = ta == ctx.teacher_accuracy.end() ? (csv ? "" : "-")
                                 : csv ? config::format_number(ta->second) : detail::percent(ta->second);
        if (csv)
          rows.push_back({name, params, layers, tacc, config::format_number(r.mean), config::format_number(r.std),
                          std::to_string(r.n)});
        else
          rows.push_back({name, params, layers, tacc, detail::percent(r.mean)});
      }
      if (format == Format::csv) {
        std::string out = "teacher,params,layers,teacher_acc,mean_acc,std_acc,n\n";
        for (const auto& row : rows) {
          for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
          out += "\n";
        }
        return out;
      }
      std::string out = detail::markdown_row({"Teacher", "Num Params", "Layers", "Teacher Acc", "Student Acc"}) +
                        detail::markdown_rule(5);
      for (const auto& row : rows) out += detail::markdown_row(row);
      return out;
    }
    case Layout::method_compare: {
      const std::size_t im = detail::axis_index(s, "method");
      std::vector<SummaryRow> rows = s.rows;
      std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.mean > b.mean; });
      if (format == Format::csv) return detail::summary_csv(s, rows);
      std::string out = detail::markdown_row({"Method", "Accuracy", "Std", "Runs"}) + detail::markdown_rule(4);
      for (const auto& r : rows) out += detail::markdown_row({r.keys[im], detail::percent(r.mean), detail::percent(r.std), std::to_string(r.n)});
      return out;
    }
  }
  return {};
}

/// Summary CSV in the fixed schema (group keys..., mean_acc, std_acc, n).
inline std::string summary_csv(const Summary& s) { return detail::summary_csv(s, s.rows); }

inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    out.push_back(std::move(cells));
  }
  return out;
}

/// Inverse of summary_csv (and of method_compare CSV, up to row order).
inline Summary parse_summary_csv(std::string_view text) {
  const auto rows = parse_csv(text);
  if (rows.empty() || rows[0].size() < 3) throw ConfigError("summary csv: missing header");
  Summary s;
  s.group_by.assign(rows[0].begin(), rows[0].end() - 3);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != rows[0].size()) throw ConfigError("summary csv: ragged row " + std::to_string(i));
    SummaryRow row;
    row.keys.assign(r.begin(), r.end() - 3);
    row.mean = config::parse_double("mean_acc", r[r.size() - 3]);
    row.std = config::parse_double("std_acc", r[r.size() - 2]);
    row.n = config::parse_uint("n", r[r.size() - 1]);
    s.rows.push_back(std::move(row));
  }
  return s;
}

/// One `<record id>.csv` per record with columns epoch,train_loss,val_acc,lr.
/// Numbers use the shortest round-trip form, so they parse back to the
/// exact values of the run's metrics log. Returns the files written.
inline std::vector<fs::path> emit_curves(const std::vector<ExperimentRecord>& records, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (const auto& r : records) {
    std::string text = "epoch,train_loss,val_acc,lr\n";
    for (const auto& e : r.history)
      text += std::to_string(e.epoch) + "," + config::format_number(e.train_loss) + "," +
              config::format_number(e.val_acc) + "," + config::format_number(e.lr) + "\n";
    const fs::path f = out_dir / (r.id() + ".csv");
    train::detail::write_file_atomic(f, text);
    files.push_back(f);
  }
  return files;
}

}  // namespace kdlab::runner
