#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "vcrobust/errors.hpp"
#include "vcrobust/harness.hpp"
#include "vcrobust/metrics.hpp"

namespace vcrobust {

// ---------------------------------------------------------------------------
// Attention sidecar

struct AttentionRecord {
  std::string sample_id;
  std::string condition;  ///< condition key
  AttentionMap map;
};

/// JSON lines {"sample_id", "condition", "scores": [[...], ...]}.
inline std::vector<AttentionRecord> load_attention_maps(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open attention maps " + path.string());
  std::vector<AttentionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      AttentionRecord rec;
      rec.sample_id = j.at("sample_id").get<std::string>();
      rec.condition = j.at("condition").get<std::string>();
      const auto& rows = j.at("scores");
      rec.map.rows = static_cast<int>(rows.size());
      for (const auto& row : rows) {
        if (row.is_array()) {
          if (rec.map.cols == 0) rec.map.cols = static_cast<int>(row.size());
          if (static_cast<int>(row.size()) != rec.map.cols) throw ParseError(lineno, "ragged attention grid");
          for (const auto& v : row) rec.map.scores.push_back(v.get<double>());
        } else {
          rec.map.cols = 1;
          rec.map.scores.push_back(row.get<double>());
        }
      }
      out.push_back(std::move(rec));
    } catch (const Json::exception& e) {
      throw ParseError(lineno, std::string("bad attention record: ") + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class PdrStatus { kOk, kIsClean, kNoClean, kUndefined };

struct AggregateRow {
  std::string dataset;
  std::string paradigm;
  std::string perturb_location;
  std::string perturbation;  ///< "none" for clean
  std::optional<int> severity;
  std::size_t n_records = 0;
  std::size_t n_judged = 0;
  std::size_t n_correct = 0;
  std::optional<double> accuracy;
  std::optional<double> pdr;
  PdrStatus pdr_status = PdrStatus::kNoClean;
  std::optional<double> mean_iou;
  std::size_t n_iou = 0;
  std::optional<double> mean_entropy;
  std::size_t n_entropy = 0;

  bool is_clean() const { return perturbation == "none"; }
};

struct Aggregate {
  std::vector<AggregateRow> rows;
  std::vector<std::string> warnings;

  const AggregateRow* find(const std::string& dataset, const std::string& paradigm,
                           const std::string& location, const std::string& perturbation,
                           std::optional<int> severity) const {
    for (const auto& r : rows) {
      if (r.dataset == dataset && r.paradigm == paradigm && r.perturbation == perturbation &&
          r.severity == severity && (r.is_clean() || r.perturb_location == location)) {
        return &r;
      }
    }
    return nullptr;
  }
};

namespace detail {

inline int paradigm_rank(const std::string& p) {
  if (auto v = parse_paradigm(p)) return static_cast<int>(*v);
  return 99;
}

inline int location_rank(const std::string& l) {
  if (auto v = parse_location(l)) return static_cast<int>(*v);
  return 99;
}

using GroupKey = std::tuple<std::string, int, std::string, int, std::string, int, std::string, int>;

inline GroupKey group_key(const std::string& dataset, const std::string& paradigm,
                          const std::string& location, const std::string& perturbation,
                          std::optional<int> severity) {
  return {dataset, paradigm_rank(paradigm), paradigm, location_rank(location), location,
          perturbation_rank(perturbation), perturbation, severity.value_or(0)};
}

}  // namespace detail

/// Groups records by (dataset, paradigm, location, perturbation, severity):
/// accuracy over judged records, PDR against the clean group of the same
/// dataset and paradigm, mean IoU, and mean attention entropy (nats) when
/// maps keyed by (sample_id, condition key) are supplied.
inline Aggregate aggregate(const std::vector<EvalRecord>& records,
                           const std::map<std::pair<std::string, std::string>, double>& entropies = {}) {
  std::map<detail::GroupKey, AggregateRow> groups;
  std::map<detail::GroupKey, std::pair<double, double>> sums;  // iou sum, entropy sum
  for (const auto& r : records) {
    const std::string loc = r.perturbation == "none" ? "global_only" : r.perturb_location;
    const auto key = detail::group_key(r.dataset, r.paradigm, loc, r.perturbation, r.severity);
    auto [it, inserted] = groups.try_emplace(key);
    AggregateRow& row = it->second;
    if (inserted) {
      row.dataset = r.dataset;
      row.paradigm = r.paradigm;
      row.perturb_location = loc;
      row.perturbation = r.perturbation;
      row.severity = r.severity;
    }
    ++row.n_records;
    if (r.judged_correct) {
      ++row.n_judged;
      row.n_correct += *r.judged_correct ? 1 : 0;
    }
    auto& s = sums[key];
    if (r.iou) {
      ++row.n_iou;
      s.first += *r.iou;
    }
    if (auto e = entropies.find({r.sample_id, r.condition_key}); e != entropies.end()) {
      ++row.n_entropy;
      s.second += e->second;
    }
  }

  Aggregate agg;
  for (auto& [key, row] : groups) {
    const auto& s = sums[key];
    if (row.n_judged > 0) row.accuracy = static_cast<double>(row.n_correct) / static_cast<double>(row.n_judged);
    if (row.n_iou > 0) row.mean_iou = s.first / static_cast<double>(row.n_iou);
    if (row.n_entropy > 0) row.mean_entropy = s.second / static_cast<double>(row.n_entropy);
  }
  for (auto& [key, row] : groups) {
    if (row.is_clean()) {
      row.pdr_status = PdrStatus::kIsClean;
      agg.rows.push_back(row);
      continue;
    }
    const auto clean_it =
        groups.find(detail::group_key(row.dataset, row.paradigm, "global_only", "none", std::nullopt));
    if (clean_it == groups.end() || !clean_it->second.accuracy) {
      row.pdr_status = PdrStatus::kNoClean;
      agg.warnings.push_back(fmt::format("no clean condition for {}/{}; PDR omitted for {} severity {}",
                                         row.dataset, row.paradigm, row.perturbation,
                                         row.severity.value_or(0)));
    } else if (!(*clean_it->second.accuracy > 0.0)) {
      row.pdr_status = PdrStatus::kUndefined;
    } else if (row.accuracy) {
      row.pdr = pdr(*clean_it->second.accuracy, *row.accuracy);
      row.pdr_status = PdrStatus::kOk;
    }
    agg.rows.push_back(row);
  }
  return agg;
}

inline Aggregate aggregate(const std::filesystem::path& records_path,
                           const std::optional<std::filesystem::path>& attention_path = std::nullopt) {
  std::map<std::pair<std::string, std::string>, double> entropies;
  Aggregate agg;
  std::vector<std::string> warnings;
  if (attention_path) {
    for (const auto& a : load_attention_maps(*attention_path)) {
      try {
        entropies[{a.sample_id, a.condition}] = attention_entropy(a.map);
      } catch (const Error& e) {
        warnings.push_back(fmt::format("attention map {}/{} skipped: {}", a.sample_id, a.condition, e.what()));
      }
    }
  }
  agg = aggregate(read_records(records_path), entropies);
  agg.warnings.insert(agg.warnings.begin(), warnings.begin(), warnings.end());
  return agg;
}

// ---------------------------------------------------------------------------
// CSV report

namespace detail {

/// Shortest round-trip representation; never locale-dependent.
inline std::string num(double v) { return fmt::format("{}", v); }
inline std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }
inline std::string pct1(const std::optional<double>& v) {
  return v ? fmt::format("{:.1f}", *v * 100.0) : std::string();
}

class CsvFile {
 public:
  explicit CsvFile(const std::filesystem::path& path) : path_(path), out_(path, std::ios::trunc | std::ios::binary) {
    if (!out_) throw IoError("cannot open for writing: " + path.string());
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
    if (!out_) throw IoError("error writing " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace detail

struct ReportOptions {
  int table_severity = 5;  ///< severity shown in the PDR / accuracy tables
};

/// Writes pdr_table(.csv, _raw.csv), accuracy_table(.csv, _raw.csv),
/// severity_curves.csv, entropy_summary.csv and iou_vs_pdr.csv under
/// `out_dir`. Returns the written paths.
inline std::vector<std::filesystem::path> write_report(const Aggregate& agg,
                                                       const std::filesystem::path& out_dir,
                                                       const ReportOptions& opts = {}) {
  if (agg.rows.empty()) throw ValidationError("no records to report");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;

  // Table rows: (dataset, paradigm, location) in aggregate order.
  std::vector<std::tuple<std::string, std::string, std::string>> table_rows;
  std::set<std::tuple<std::string, std::string, std::string>> seen_rows;
  std::vector<std::string> present;  // perturbations present, reporting order
  for (const auto& r : agg.rows) {
    if (!r.is_clean()) {
      const auto key = std::make_tuple(r.dataset, r.paradigm, r.perturb_location);
      if (seen_rows.insert(key).second) table_rows.push_back(key);
      if (std::find(present.begin(), present.end(), r.perturbation) == present.end()) {
        present.push_back(r.perturbation);
      }
    }
  }
  // Clean-only datasets still get a table row.
  for (const auto& r : agg.rows) {
    const auto key = std::make_tuple(r.dataset, r.paradigm, std::string("global_only"));
    if (r.is_clean() && !seen_rows.count(key)) {
      bool any = false;
      for (const auto& [d, p, l] : table_rows) any = any || (d == r.dataset && p == r.paradigm);
      if (!any) {
        seen_rows.insert(key);
        table_rows.push_back(key);
      }
    }
  }
  std::sort(table_rows.begin(), table_rows.end(), [](const auto& a, const auto& b) {
    return detail::group_key(std::get<0>(a), std::get<1>(a), std::get<2>(a), "none", std::nullopt) <
           detail::group_key(std::get<0>(b), std::get<1>(b), std::get<2>(b), "none", std::nullopt);
  });
  std::sort(present.begin(), present.end(),
            [](const std::string& a, const std::string& b) { return perturbation_rank(a) < perturbation_rank(b); });

  const auto columns = all_perturbation_names();
  std::vector<std::string> header{"dataset", "paradigm", "perturb_location"};

  {
    auto h = header;
    h.insert(h.end(), columns.begin(), columns.end());
    detail::CsvFile fmt_file(out_dir / "pdr_table.csv");
    detail::CsvFile raw_file(out_dir / "pdr_table_raw.csv");
    fmt_file.row(h);
    raw_file.row(h);
    for (const auto& [d, p, l] : table_rows) {
      std::vector<std::string> a{d, p, l};
      std::vector<std::string> b{d, p, l};
      for (const auto& col : columns) {
        const auto* row = agg.find(d, p, l, col, opts.table_severity);
        a.push_back(row ? detail::pct1(row->pdr) : "");
        b.push_back(row ? detail::opt_num(row->pdr) : "");
      }
      fmt_file.row(a);
      raw_file.row(b);
    }
    written.push_back(out_dir / "pdr_table.csv");
    written.push_back(out_dir / "pdr_table_raw.csv");
  }

  {
    auto h = header;
    h.push_back("clean");
    h.insert(h.end(), columns.begin(), columns.end());
    detail::CsvFile fmt_file(out_dir / "accuracy_table.csv");
    detail::CsvFile raw_file(out_dir / "accuracy_table_raw.csv");
    fmt_file.row(h);
    raw_file.row(h);
    for (const auto& [d, p, l] : table_rows) {
      std::vector<std::string> a{d, p, l};
      std::vector<std::string> b{d, p, l};
      const auto* clean = agg.find(d, p, "global_only", "none", std::nullopt);
      a.push_back(clean ? detail::pct1(clean->accuracy) : "");
      b.push_back(clean ? detail::opt_num(clean->accuracy) : "");
      for (const auto& col : columns) {
        const auto* row = agg.find(d, p, l, col, opts.table_severity);
        a.push_back(row ? detail::pct1(row->accuracy) : "");
        b.push_back(row ? detail::opt_num(row->accuracy) : "");
      }
      fmt_file.row(a);
      raw_file.row(b);
    }
    written.push_back(out_dir / "accuracy_table.csv");
    written.push_back(out_dir / "accuracy_table_raw.csv");
  }

  {
    detail::CsvFile f(out_dir / "severity_curves.csv");
    f.row({"dataset", "paradigm", "perturb_location", "perturbation", "severity", "accuracy"});
    for (const auto& [d, p, l] : table_rows) {
      for (const auto& pert : present) {
        for (int s = 1; s <= 5; ++s) {
          const auto* row = agg.find(d, p, l, pert, s);
          f.row({d, p, l, pert, std::to_string(s), row ? detail::opt_num(row->accuracy) : ""});
        }
      }
    }
    written.push_back(out_dir / "severity_curves.csv");
  }

  {
    detail::CsvFile f(out_dir / "entropy_summary.csv");
    f.row({"dataset", "paradigm", "perturb_location", "perturbation", "severity", "mean_entropy", "n", "unit"});
    for (const auto& r : agg.rows) {
      if (!r.mean_entropy) continue;
      f.row({r.dataset, r.paradigm, r.perturb_location, r.perturbation,
             r.severity ? std::to_string(*r.severity) : "", detail::num(*r.mean_entropy),
             std::to_string(r.n_entropy), "nats"});
    }
    written.push_back(out_dir / "entropy_summary.csv");
  }

  {
    detail::CsvFile f(out_dir / "iou_vs_pdr.csv");
    f.row({"dataset", "paradigm", "perturb_location", "perturbation", "severity", "mean_iou",
           "clean_mean_iou", "iou_degradation", "pdr"});
    for (const auto& r : agg.rows) {
      if (r.is_clean() || !r.mean_iou) continue;
      const auto* clean = agg.find(r.dataset, r.paradigm, "global_only", "none", std::nullopt);
      if (!clean || !clean->mean_iou) continue;
      f.row({r.dataset, r.paradigm, r.perturb_location, r.perturbation,
             r.severity ? std::to_string(*r.severity) : "", detail::num(*r.mean_iou),
             detail::num(*clean->mean_iou), detail::num(*clean->mean_iou - *r.mean_iou),
             detail::opt_num(r.pdr)});
    }
    written.push_back(out_dir / "iou_vs_pdr.csv");
  }
  return written;
}

}  // namespace vcrobust
