#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "spv/benchmark.hpp"
#include "spv/experiment.hpp"
#include "spv/report.hpp"
#include "test_util.hpp"

using namespace spv;

namespace {

BenchmarkSpec small_spec() {
  BenchmarkSpec s;
  s.n_classes = 8;
  s.n_watchlist = 3;
  s.n_generic_ids = 4;
  s.samples_per_generic_id = 4;
  s.q_true = 2;
  s.feature_dim = 16;
  s.n_probe_per_id = 4;
  s.seed = 3;
  return s;
}

ExperimentOptions small_options() {
  ExperimentOptions o;
  o.n_runs = 2;
  o.q_override = 2;
  return o;
}

const ExperimentReport& small_report() {
  static const ExperimentReport r = run_experiment(generate_benchmark(small_spec()), ModelConfig{}, small_options());
  return r;
}

} // namespace

TEST(Benchmark, CountsAndLabels) {
  const auto s = small_spec();
  const auto b = generate_benchmark(s);
  EXPECT_EQ(b.stills.count(), 8);
  EXPECT_EQ(b.stills.dim(), 16);
  EXPECT_EQ(b.generic.count(), 16);
  EXPECT_EQ(b.probes.count(), 32);
  EXPECT_EQ(b.modes.size(), 2u);
  for (int l : b.generic_meta.labels) EXPECT_GE(l, BenchmarkBundle::generic_label_base);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(b.probes_meta.labels[j], static_cast<int>(j / 4));
  EXPECT_EQ(s.genuine_per_run(), 12u);
  EXPECT_EQ(s.impostors_per_run(), 6u);
}

TEST(Benchmark, DegenerateGeneratorReproducesStills) {
  auto s = small_spec();
  s.noise_sigma = 0.0;
  s.warp_strength = 0.0;
  s.offset_strength = 0.0;
  s.illumination_strength = 0.0;
  const auto b = generate_benchmark(s);
  for (Index j = 0; j < b.probes.count(); ++j) {
    const int c = b.probes_meta.labels[static_cast<std::size_t>(j)];
    EXPECT_LE((b.probes.column(j) - b.stills.column(c)).norm(), 1e-12);
  }
}

TEST(Benchmark, DeterministicAndSeedSensitive) {
  const auto a = generate_benchmark(small_spec());
  const auto b = generate_benchmark(small_spec());
  EXPECT_TRUE(a.probes.data() == b.probes.data());
  EXPECT_TRUE(a.generic.data() == b.generic.data());
  auto s = small_spec();
  s.seed = 4;
  EXPECT_FALSE(generate_benchmark(s).probes.data() == a.probes.data());
}

TEST(Benchmark, SpecValidationAndJson) {
  auto s = small_spec();
  s.n_watchlist = 9;
  EXPECT_THROW(s.validate(), config_error);
  s = small_spec();
  s.impostor_ratio = 10.0;
  EXPECT_THROW(s.validate(), config_error);
  s = small_spec();
  s.max_yaw = 120.0;
  EXPECT_THROW(s.validate(), config_error);

  const nlohmann::json j = small_spec();
  const auto back = j.get<BenchmarkSpec>();
  EXPECT_EQ(nlohmann::json(back), j);
  const auto partial = nlohmann::json{{"n_classes", 12}}.get<BenchmarkSpec>();
  EXPECT_EQ(partial.n_classes, 12);
  EXPECT_EQ(partial.n_watchlist, BenchmarkSpec{}.n_watchlist);
  EXPECT_THROW((nlohmann::json{{"n_classes", "x"}}.get<BenchmarkSpec>()), config_error);
}

TEST(Split, WatchlistAndImpostorCounts) {
  const auto b = generate_benchmark(small_spec());
  for (int run = 0; run < 5; ++run) {
    const auto sp = make_split(b, run_seed(9, run));
    EXPECT_EQ(sp.watchlist.size(), 3u);
    EXPECT_TRUE(std::is_sorted(sp.watchlist.begin(), sp.watchlist.end()));
    EXPECT_EQ(sp.probes.size(), 18u);
    EXPECT_EQ(std::count(sp.genuine.begin(), sp.genuine.end(), true), 12);
    EXPECT_TRUE(std::is_sorted(sp.probes.begin(), sp.probes.end()));
    for (std::size_t i = 0; i < sp.probes.size(); ++i) {
      const int c = b.probes_meta.labels[static_cast<std::size_t>(sp.probes[i])];
      const bool in = std::find(sp.watchlist.begin(), sp.watchlist.end(), c) != sp.watchlist.end();
      EXPECT_EQ(in, sp.genuine[i]);
    }
  }
  EXPECT_NE(run_seed(9, 0), run_seed(9, 1));
  EXPECT_EQ(run_seed(9, 1), mix_seed(11));
}

TEST(PoseBins, TertilesOfGenuineProbes) {
  std::vector<ProbeOutcome> o;
  for (int i = 0; i < 9; ++i) {
    ProbeOutcome p;
    p.genuine = true;
    p.pose_distance = i;
    p.truth = 1;
    p.predicted = i < 3 ? 1 : (i < 6 ? (i == 3 ? 1 : 2) : 2);
    o.push_back(p);
  }
  ProbeOutcome imp;
  imp.pose_distance = 100;
  o.push_back(imp);
  const auto bins = pose_bins(o);
  ASSERT_EQ(bins.size(), 3u);
  for (const auto& b : bins) EXPECT_EQ(b.count, 3u);
  EXPECT_DOUBLE_EQ(bins[0].accuracy, 1.0);
  EXPECT_DOUBLE_EQ(bins[1].accuracy, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(bins[2].accuracy, 0.0);
  EXPECT_EQ(bins[0].lo, 0.0);
  EXPECT_EQ(bins[2].hi, 8.0);
}

TEST(Experiment, ReportStructure) {
  const auto& r = small_report();
  EXPECT_EQ(r.n_runs, 2);
  EXPECT_EQ(r.q, 2);
  ASSERT_EQ(r.methods.size(), 4u);
  const std::vector<std::string> names{"src", "esrc", "spv", "nn"};
  for (std::size_t m = 0; m < 4; ++m) {
    const auto& mr = r.methods[m];
    EXPECT_EQ(mr.method, names[m]);
    ASSERT_EQ(mr.runs.size(), 2u);
    EXPECT_EQ(mr.outcomes.size(), 36u);
    EXPECT_EQ(mr.runs[0].seed, run_seed(ModelConfig{}.seed, 0));
    EXPECT_EQ(mr.runs[1].watchlist, r.methods[0].runs[1].watchlist);
    for (const auto& run : mr.runs) {
      EXPECT_GE(run.pauc20, 0.0);
      EXPECT_LE(run.pauc20, 1.0);
      EXPECT_GE(run.rank1, 0.0);
      EXPECT_LE(run.rank1, 1.0);
    }
    const std::vector<double> p{mr.runs[0].pauc20, mr.runs[1].pauc20};
    EXPECT_DOUBLE_EQ(mr.pauc20.mean, mean_std(p).mean);
    EXPECT_EQ(mr.pose_bins.size(), 3u);
    EXPECT_FALSE(mr.ms_per_probe);
  }
  EXPECT_NO_THROW(r.method("spv"));
  EXPECT_THROW(r.method("xyz"), std::exception);
}

TEST(Experiment, ThreadsDoNotChangeTheReport) {
  auto o = small_options();
  o.threads = 3;
  const auto r = run_experiment(generate_benchmark(small_spec()), ModelConfig{}, o);
  EXPECT_EQ(report_to_json(r).dump(), report_to_json(small_report()).dump());
}

TEST(Experiment, SciGatingSendsRejectionsToMinusInfinity) {
  auto o = small_options();
  o.methods = {Method::src};
  o.sci_gated = true;
  const auto r = run_experiment(generate_benchmark(small_spec()), ModelConfig{}, o);
  for (const auto& p : r.methods[0].outcomes) {
    if (p.accepted) EXPECT_EQ(p.score, -p.min_residual);
    else EXPECT_EQ(p.score, -std::numeric_limits<double>::infinity());
  }
}

TEST(Experiment, RejectsBadOptions) {
  const auto b = generate_benchmark(small_spec());
  auto o = small_options();
  o.n_runs = 0;
  EXPECT_THROW(run_experiment(b, ModelConfig{}, o), config_error);
  o = small_options();
  o.methods.clear();
  EXPECT_THROW(run_experiment(b, ModelConfig{}, o), config_error);
  o = small_options();
  o.q_override = -1;
  EXPECT_THROW(run_experiment(b, ModelConfig{}, o), config_error);
  EXPECT_EQ(method_from_string("spv"), Method::spv);
  EXPECT_THROW(method_from_string("knn"), std::exception);
}

TEST(Report, JsonRoundTrip) {
  const auto& r = small_report();
  test_util::TempDir dir;
  emit_report(r, dir / "r.json", ReportFormat::json);
  const auto back = load_report(dir / "r.json");
  EXPECT_EQ(report_to_json(back).dump(), report_to_json(r).dump());
  const auto j = read_json_file(dir / "r.json");
  for (const char* key : {"spec", "config", "n_runs", "sci_gated", "q", "eta", "methods"}) EXPECT_TRUE(j.contains(key));
  EXPECT_EQ(report_format_from_path("x.csv"), ReportFormat::csv);
  EXPECT_EQ(report_format_from_path("x.json"), ReportFormat::json);
}

TEST(Report, CsvRowCount) {
  const auto& r = small_report();
  const auto csv = report_to_csv(r);
  std::size_t expect = 1;
  for (const auto& m : r.methods) expect += m.roc.size() + m.pr.size() + summary_rows_per_method;
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), expect);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "section,method,key,x,y");
}

TEST(Report, ValidationRejectsIncompleteReports) {
  auto r = small_report();
  r.methods[1].runs.clear();
  test_util::TempDir dir;
  EXPECT_THROW(emit_report(r, dir / "r.json", ReportFormat::json), data_error);
  EXPECT_FALSE(std::filesystem::exists(dir / "r.json"));
  r = small_report();
  r.methods[0].runs.pop_back();
  EXPECT_THROW(validate_report(r), data_error);
  test_util::write_file(dir / "bad.json", "{\"n_runs\": 1}");
  EXPECT_THROW(load_report(dir / "bad.json"), data_error);
}

TEST(Report, ScoresCsvReproducesRunMetrics) {
  const auto& r = small_report();
  test_util::TempDir dir;
  write_text_file(scores_to_csv(r), dir / "s.csv");
  const auto ms = metrics_from_scores(load_scores_csv(dir / "s.csv"));
  ASSERT_EQ(ms.size(), r.methods.size());
  for (std::size_t m = 0; m < ms.size(); ++m) {
    EXPECT_EQ(ms[m].method, r.methods[m].method);
    ASSERT_EQ(ms[m].pauc20.size(), 2u);
    for (std::size_t run = 0; run < 2; ++run) {
      EXPECT_NEAR(ms[m].pauc20[run], r.methods[m].runs[run].pauc20, 1e-12);
      EXPECT_NEAR(ms[m].aupr[run], r.methods[m].runs[run].aupr, 1e-12);
    }
  }
}

TEST(Report, ScoresCsvParsing) {
  test_util::TempDir dir;
  test_util::write_file(dir / "a.csv", "score,genuine\n0.9,1\n-inf,false\n0.5,true\n0.1,0\n");
  const auto rows = load_scores_csv(dir / "a.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1].score, -std::numeric_limits<double>::infinity());
  const auto ms = metrics_from_scores(rows);
  EXPECT_EQ(ms[0].method, "scores");
  EXPECT_DOUBLE_EQ(ms[0].pauc20[0], 1.0);

  test_util::write_file(dir / "b.csv", "score\n0.9\n");
  EXPECT_THROW(load_scores_csv(dir / "b.csv"), data_error);
  test_util::write_file(dir / "c.csv", "score,genuine\n0.9,maybe\n");
  EXPECT_THROW(load_scores_csv(dir / "c.csv"), data_error);
  test_util::write_file(dir / "d.csv", "score,genuine\nx,1\n");
  EXPECT_THROW(load_scores_csv(dir / "d.csv"), data_error);
  test_util::write_file(dir / "e.csv", "score,genuine\n");
  EXPECT_THROW(load_scores_csv(dir / "e.csv"), data_error);
  EXPECT_THROW(load_scores_csv(dir / "missing.csv"), io_error);
}
