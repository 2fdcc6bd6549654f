#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "spv/benchmark.hpp"
#include "spv/report.hpp"
#include "test_util.hpp"

using namespace spv;

namespace {

int run_cli(const std::string& args, const std::filesystem::path& stdout_file = "/dev/null") {
  const std::string cmd = std::string(SPV_CLI_PATH) + " " + args + " > " + stdout_file.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

BenchmarkSpec tiny_spec() {
  BenchmarkSpec s;
  s.n_classes = 8;
  s.n_watchlist = 3;
  s.n_generic_ids = 4;
  s.samples_per_generic_id = 5;
  s.q_true = 3;
  s.feature_dim = 16;
  s.n_probe_per_id = 3;
  s.seed = 5;
  return s;
}

// Benchmark data laid out as the CLI expects: matrices plus `.meta.json`.
struct Workspace {
  test_util::TempDir dir;
  BenchmarkBundle b = generate_benchmark(tiny_spec());

  Workspace() {
    save_matrix(b.stills, dir / "stills.csv");
    save_meta(b.stills_meta, dir / "stills.meta.json");
    save_matrix(b.generic, dir / "generic.bin");
    save_meta(b.generic_meta, dir / "generic.meta.json");
    save_matrix(b.probes, dir / "probes.csv");
    write_json_file(nlohmann::json(tiny_spec()), dir / "spec.json");
  }

  std::filesystem::path operator/(const std::string& n) const { return dir / n; }
};

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(test_util::read_file(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

} // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("bench --runs 0"), 1);
  EXPECT_EQ(run_cli("bench --methods src,knn --runs 1"), 1);
  EXPECT_EQ(run_cli("classify --probes x.csv"), 1);
  EXPECT_EQ(run_cli("bench --lambda -1 --runs 1"), 1);
  EXPECT_EQ(run_cli("bench --config /nonexistent.json"), 1);
}

TEST(Cli, DataErrors) {
  test_util::TempDir dir;
  EXPECT_EQ(run_cli("exemplars --meta " + q(dir / "missing.json")), 2);
  test_util::write_file(dir / "bad.csv", "1,2\n3\n");
  test_util::write_file(dir / "bad.meta.json", R"({"labels":[0,1],"poses":[[0,0,0],[0,0,0]]})");
  test_util::write_file(dir / "c.json", R"({"exemplar_indices":[0],"exemplar_poses":[[0,0,0]],"assignment":[0,0]})");
  EXPECT_EQ(run_cli("build --stills " + q(dir / "bad.csv") + " --generic " + q(dir / "bad.csv") + " --clustering " +
                    q(dir / "c.json") + " --out-gallery " + q(dir / "g.csv") + " --out-variational " +
                    q(dir / "v.csv")),
            2);
  test_util::write_file(dir / "s.csv", "score,genuine\n1,1\n");
  EXPECT_EQ(run_cli("metrics --scores " + q(dir / "s.csv")), 2);
}

TEST(Cli, ExemplarsBuildClassifyPipeline) {
  Workspace w;
  ASSERT_EQ(run_cli("exemplars --meta " + q(w / "generic.meta.json") + " --eta 0.05 --relative --out " +
                    q(w / "ex.json")),
            0);
  const auto ex = read_json_file(w / "ex.json");
  const auto qn = ex.at("q").get<std::size_t>();
  EXPECT_GE(qn, 1u);
  EXPECT_EQ(ex.at("assignment").size(), 20u);
  EXPECT_EQ(ex.at("exemplar_poses").size(), qn);

  ASSERT_EQ(run_cli("build --stills " + q(w / "stills.csv") + " --generic " + q(w / "generic.bin") +
                    " --clustering " + q(w / "ex.json") + " --toy-seed 1 --out-gallery " + q(w / "gallery.bin") +
                    " --out-variational " + q(w / "var.csv")),
            0);
  const auto g = load_matrix(w / "gallery.bin");
  EXPECT_EQ(g.count(), static_cast<Index>(8 * (qn + 1)));
  const auto gm = load_meta(w / "gallery.meta.json", static_cast<std::size_t>(g.count()));
  ASSERT_TRUE(gm.blocks);
  EXPECT_EQ((*gm.blocks)[0], 0);
  const auto vm = read_json_file(w / "var.meta.json");
  EXPECT_TRUE(vm.contains("frontal_block"));
  EXPECT_EQ(load_matrix(w / "var.csv").count(), 16);

  for (const std::string m : {"spv", "esrc", "src", "nn"}) {
    const auto out = w / ("cls_" + m + ".csv");
    ASSERT_EQ(run_cli("classify --gallery " + q(w / "gallery.bin") + " --variational " + q(w / "var.csv") +
                      " --probes " + q(w / "probes.csv") + " --method " + m + " --out " + q(out)),
              0)
        << m;
    const auto rows = read_csv(out);
    ASSERT_EQ(rows.size(), 25u);
    EXPECT_EQ(rows[0][0], "probe_id");
    EXPECT_EQ(rows[0].size(), 4u + 8u);
    EXPECT_EQ(rows[0].back(), "r_8");
    std::size_t correct = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      EXPECT_EQ(rows[i].size(), 12u);
      correct += std::stoi(rows[i][1]) == static_cast<int>((i - 1) / 3);
    }
    if (m == "spv" || m == "esrc") {
      EXPECT_GE(correct, 18u) << m;
    }
  }
  EXPECT_EQ(run_cli("classify --gallery " + q(w / "gallery.bin") + " --probes " + q(w / "probes.csv") +
                    " --method spv"),
            1);
  EXPECT_EQ(run_cli("classify --gallery " + q(w / "gallery.bin") + " --variational " + q(w / "var.csv") +
                    " --probes " + q(w / "probes.csv") + " --method src --max-iter 1 --tol 1e-14"),
            3);
}

TEST(Cli, BenchAndMetricsAgree) {
  Workspace w;
  ASSERT_EQ(run_cli("bench --spec " + q(w / "spec.json") + " --runs 2 --methods src,spv,nn --q 2 --out " +
                    q(w / "r.json") + " --scores " + q(w / "s.csv")),
            0);
  const auto r = load_report(w / "r.json");
  ASSERT_EQ(r.methods.size(), 3u);
  EXPECT_EQ(r.n_runs, 2);
  EXPECT_EQ(r.spec.n_classes, 8);

  ASSERT_EQ(run_cli("metrics --scores " + q(w / "s.csv") + " --out " + q(w / "m.json")), 0);
  const auto m = read_json_file(w / "m.json");
  ASSERT_EQ(m.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(m[i].at("method"), r.methods[i].method);
    EXPECT_NEAR(m[i].at("pauc20").at("mean").get<double>(), r.methods[i].pauc20.mean, 1e-12);
    EXPECT_NEAR(m[i].at("aupr").at("std").get<double>(), r.methods[i].aupr.std, 1e-12);
  }

  ASSERT_EQ(run_cli("bench --spec " + q(w / "spec.json") + " --runs 2 --methods src,spv,nn --q 2 --out " +
                    q(w / "r.csv")),
            0);
  const auto csv = test_util::read_file(w / "r.csv");
  std::size_t expect = 1;
  for (const auto& mr : r.methods) expect += mr.roc.size() + mr.pr.size() + summary_rows_per_method;
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), expect);
}

TEST(Cli, BenchIsByteDeterministic) {
  Workspace w;
  const std::string base = "bench --spec " + q(w / "spec.json") + " --runs 2 --methods esrc,spv --q 2";
  ASSERT_EQ(run_cli(base + " --out " + q(w / "a.json")), 0);
  ASSERT_EQ(run_cli(base + " --threads 3 --out " + q(w / "b.json")), 0);
  ASSERT_EQ(run_cli(base, w / "c.json"), 0);
  const auto a = test_util::read_file(w / "a.json");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, test_util::read_file(w / "b.json"));
  EXPECT_EQ(a, test_util::read_file(w / "c.json"));
}

TEST(Cli, ConfigFileThenFlags) {
  Workspace w;
  write_json_file({{"lambda", 0.01}, {"sci_threshold", 0.3}}, w / "cfg.json");
  const std::string base = "bench --spec " + q(w / "spec.json") + " --runs 1 --methods nn --config " + q(w / "cfg.json");
  ASSERT_EQ(run_cli(base + " --out " + q(w / "a.json")), 0);
  ASSERT_EQ(run_cli(base + " --lambda 0.02 --out " + q(w / "b.json")), 0);
  const auto a = load_report(w / "a.json");
  const auto b = load_report(w / "b.json");
  EXPECT_EQ(a.config.lambda, 0.01);
  EXPECT_EQ(a.config.sci_threshold, 0.3);
  EXPECT_EQ(b.config.lambda, 0.02);
  EXPECT_EQ(b.config.sci_threshold, 0.3);
  EXPECT_EQ(a.config.mu, ModelConfig{}.mu);

  write_json_file({{"tau", 2.0}}, w / "bad.json");
  EXPECT_EQ(run_cli("bench --runs 1 --methods nn --config " + q(w / "bad.json")), 1);
}
