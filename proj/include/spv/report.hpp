#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spv/error.hpp"
#include "spv/experiment.hpp"
#include "spv/matrixio.hpp"
#include "spv/metrics.hpp"

namespace spv {

enum class ReportFormat { json, csv };

inline ReportFormat report_format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? ReportFormat::csv : ReportFormat::json;
}

// Every method needs exactly n_runs per-run entries and non-empty curves.
inline void validate_report(const ExperimentReport& r) {
  if (r.methods.empty()) throw data_error("report has no methods");
  if (r.n_runs < 1) throw data_error("report has no runs");
  for (const auto& m : r.methods) {
    if (m.runs.empty()) throw data_error("method '" + m.method + "' has an empty per-run list");
    if (static_cast<int>(m.runs.size()) != r.n_runs)
      throw data_error("method '" + m.method + "' has " + std::to_string(m.runs.size()) + " runs, expected " +
                       std::to_string(r.n_runs));
    if (m.roc.size() < 2 || m.pr.size() < 2) throw data_error("method '" + m.method + "' has no curves");
  }
}

inline nlohmann::json report_to_json(const ExperimentReport& r) {
  using nlohmann::json;
  json methods = json::array();
  for (const auto& m : r.methods) {
    json roc = json::array(), pr = json::array(), runs = json::array(), bins = json::array();
    for (const auto& p : m.roc) roc.push_back({p.fpr, p.tpr});
    for (const auto& p : m.pr) pr.push_back({p.recall, p.precision});
    for (const auto& run : m.runs)
      runs.push_back({{"run", run.run},
                      {"seed", run.seed},
                      {"watchlist", run.watchlist},
                      {"pauc20", run.pauc20},
                      {"aupr", run.aupr},
                      {"rank1", run.rank1}});
    for (const auto& b : m.pose_bins)
      bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"accuracy", b.accuracy}});
    json jm{{"method", m.method},
            {"pauc20", {{"mean", m.pauc20.mean}, {"std", m.pauc20.std}}},
            {"aupr", {{"mean", m.aupr.mean}, {"std", m.aupr.std}}},
            {"rank1", {{"mean", m.rank1.mean}, {"std", m.rank1.std}}},
            {"nonconverged", m.nonconverged},
            {"runs", std::move(runs)},
            {"pose_bins", std::move(bins)},
            {"roc", std::move(roc)},
            {"pr", std::move(pr)}};
    if (m.ms_per_probe) jm["ms_per_probe"] = *m.ms_per_probe;
    methods.push_back(std::move(jm));
  }
  return json{{"spec", r.spec},   {"config", r.config}, {"n_runs", r.n_runs}, {"sci_gated", r.sci_gated},
              {"q", r.q},         {"eta", r.eta},       {"methods", std::move(methods)}};
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  try {
    r.spec = j.at("spec").get<BenchmarkSpec>();
    r.config = j.at("config").get<ModelConfig>();
    r.n_runs = j.at("n_runs").get<int>();
    r.sci_gated = j.at("sci_gated").get<bool>();
    r.q = j.at("q").get<int>();
    r.eta = j.at("eta").get<double>();
    for (const auto& jm : j.at("methods")) {
      MethodReport m;
      m.method = jm.at("method").get<std::string>();
      auto stat = [&](const char* key) {
        return MeanStd{jm.at(key).at("mean").get<double>(), jm.at(key).at("std").get<double>()};
      };
      m.pauc20 = stat("pauc20");
      m.aupr = stat("aupr");
      m.rank1 = stat("rank1");
      m.nonconverged = jm.at("nonconverged").get<std::size_t>();
      for (const auto& jr : jm.at("runs")) {
        RunResult run;
        run.run = jr.at("run").get<int>();
        run.seed = jr.at("seed").get<std::uint64_t>();
        run.watchlist = jr.at("watchlist").get<std::vector<int>>();
        run.pauc20 = jr.at("pauc20").get<double>();
        run.aupr = jr.at("aupr").get<double>();
        run.rank1 = jr.at("rank1").get<double>();
        m.runs.push_back(std::move(run));
      }
      for (const auto& jb : jm.at("pose_bins"))
        m.pose_bins.push_back({jb.at("lo").get<double>(), jb.at("hi").get<double>(),
                               jb.at("count").get<std::size_t>(), jb.at("accuracy").get<double>()});
      for (const auto& p : jm.at("roc")) m.roc.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      for (const auto& p : jm.at("pr")) m.pr.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      if (jm.contains("ms_per_probe")) m.ms_per_probe = jm.at("ms_per_probe").get<double>();
      r.methods.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed report: ") + e.what());
  }
  validate_report(r);
  return r;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

// Plot-ready CSV: one row per ROC point, one per PR point, then six summary
// rows (pauc20/aupr/rank1 mean and std) per method.
inline std::string report_to_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << "section,method,key,x,y\n";
  for (const auto& m : r.methods) {
    for (const auto& p : m.roc) os << "roc," << m.method << ",," << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
    for (const auto& p : m.pr)
      os << "pr," << m.method << ",," << format_double(p.recall) << ',' << format_double(p.precision) << '\n';
  }
  for (const auto& m : r.methods) {
    const std::pair<const char*, const MeanStd*> stats[] = {{"pauc20", &m.pauc20}, {"aupr", &m.aupr}, {"rank1", &m.rank1}};
    for (const auto& [name, s] : stats) {
      os << "summary," << m.method << ',' << name << "_mean," << format_double(s->mean) << ",\n";
      os << "summary," << m.method << ',' << name << "_std," << format_double(s->std) << ",\n";
    }
  }
  return os.str();
}

inline constexpr std::size_t summary_rows_per_method = 6;

inline void write_text_file(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path.string());
  out << text;
  if (!out) throw io_error("write failed: " + path.string());
}

inline void emit_report(const ExperimentReport& r, const std::filesystem::path& path, ReportFormat format) {
  validate_report(r);
  if (format == ReportFormat::json)
    write_text_file(report_to_json(r).dump(2) + "\n", path);
  else
    write_text_file(report_to_csv(r), path);
}

inline ExperimentReport load_report(const std::filesystem::path& path) { return report_from_json(read_json_file(path)); }

// Per-probe scores of every method, in run then probe order.
inline std::string scores_to_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << "method,run,probe_id,truth,genuine,predicted,score,sci,accepted\n";
  for (const auto& m : r.methods) {
    std::size_t run = 0, in_run = 0;
    const std::size_t per_run = m.outcomes.size() / static_cast<std::size_t>(std::max(r.n_runs, 1));
    for (const auto& o : m.outcomes) {
      os << m.method << ',' << run << ',' << o.probe << ',' << o.truth << ',' << (o.genuine ? 1 : 0) << ','
         << o.predicted << ',' << format_double(o.score) << ',' << format_double(o.sci) << ',' << (o.accepted ? 1 : 0)
         << '\n';
      if (++in_run == per_run) {
        in_run = 0;
        ++run;
      }
    }
  }
  return os.str();
}

struct ScoreRow {
  std::string method;
  int run = 0;
  double score = 0.0;
  bool genuine = false;
};

// Reads a scores CSV with a header naming at least `score` and `genuine`;
// optional `method` and `run` columns group the rows.
inline std::vector<ScoreRow> load_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.emplace_back(detail::trim(c));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw data_error("empty scores file " + path.string());
  const auto header = split(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  if (!col.count("score") || !col.count("genuine")) throw data_error("scores CSV needs 'score' and 'genuine' columns");

  std::vector<ScoreRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (detail::trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw data_error("scores CSV row " + std::to_string(n) + " has wrong width");
    ScoreRow r;
    r.method = col.count("method") ? cells[col["method"]] : "scores";
    try {
      r.run = col.count("run") ? std::stoi(cells[col["run"]]) : 0;
    } catch (const std::exception&) {
      throw data_error("bad run id on scores CSV row " + std::to_string(n));
    }
    const auto& sc = cells[col["score"]];
    if (sc == "-inf" || sc == "inf" || sc == "+inf")
      r.score = (sc == "-inf" ? -1.0 : 1.0) * std::numeric_limits<double>::infinity();
    else
      r.score = detail::parse_cell(sc, n, col["score"]);
    const auto& g = cells[col["genuine"]];
    if (g == "1" || g == "true") r.genuine = true;
    else if (g == "0" || g == "false") r.genuine = false;
    else throw data_error("bad genuine flag '" + g + "' on scores CSV row " + std::to_string(n));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw data_error("scores CSV has no rows");
  return rows;
}

struct ScoreMetrics {
  std::string method;
  std::vector<double> pauc20; // per run, ascending run id
  std::vector<double> aupr;
  MeanStd pauc20_stats;
  MeanStd aupr_stats;
};

// pAUC20 and AUPR per (method, run), aggregated per method.
inline std::vector<ScoreMetrics> metrics_from_scores(const std::vector<ScoreRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::map<int, std::pair<std::vector<double>, std::vector<bool>>>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.method)) order.push_back(r.method);
    auto& g = groups[r.method][r.run];
    g.first.push_back(r.score);
    g.second.push_back(r.genuine);
  }
  std::vector<ScoreMetrics> out;
  for (const auto& name : order) {
    ScoreMetrics m;
    m.method = name;
    for (const auto& [run, g] : groups[name]) {
      m.pauc20.push_back(pauc20(roc_curve(g.first, g.second)));
      m.aupr.push_back(aupr(pr_curve(g.first, g.second)));
    }
    m.pauc20_stats = mean_std(m.pauc20);
    m.aupr_stats = mean_std(m.aupr);
    out.push_back(std::move(m));
  }
  return out;
}

inline nlohmann::json metrics_to_json(const std::vector<ScoreMetrics>& ms) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& m : ms)
    out.push_back({{"method", m.method},
                   {"pauc20", {{"mean", m.pauc20_stats.mean}, {"std", m.pauc20_stats.std}, {"runs", m.pauc20}}},
                   {"aupr", {{"mean", m.aupr_stats.mean}, {"std", m.aupr_stats.std}, {"runs", m.aupr}}}});
  return out;
}

} // namespace spv
