// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on failure.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "spv/spv.hpp"

using namespace spv;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Gate {
  int failures = 0;

  void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
    failures += pass ? 0 : 1;
  }

  void run(int id, const std::string& name, const std::function<bool(std::ostringstream&)>& body) {
    std::ostringstream detail;
    bool pass = false;
    try {
      pass = body(detail);
    } catch (const std::exception& e) {
      detail << "exception: " << e.what();
    }
    report(id, name, pass, detail.str());
  }
};

// 1. Coding solvers against exhaustive oracles.
bool solver_oracle_agreement(std::ostringstream& out) {
  std::mt19937_64 rng(2024);
  const auto t0 = clock_type::now();
  double solver_secs = 0.0;
  double worst = -std::numeric_limits<double>::infinity();
  int nonconverged = 0;
  std::uniform_real_distribution<double> weight(0.01, 0.5), mix(0.0, 1.0);
  for (int it = 0; it < 200; ++it) {
    const Index dim = std::uniform_int_distribution<Index>(3, 8)(rng);
    const Vector y = oracle::random_vector(dim, rng);
    double gap = 0.0;
    if (it % 3 == 0) {
      const Index na = std::uniform_int_distribution<Index>(1, 10)(rng);
      const Matrix a = oracle::random_unit_columns(dim, na, rng);
      const double lambda = weight(rng);
      const auto ts = clock_type::now();
      const auto r = lasso_solve(a, y, lambda);
      solver_secs += seconds_since(ts);
      nonconverged += !r.converged;
      gap = r.objective - oracle::lasso_minimum(a, y, lambda).objective;
    } else if (it % 3 == 1) {
      const Index na = std::uniform_int_distribution<Index>(1, 6)(rng);
      const Index nv = std::uniform_int_distribution<Index>(0, 4)(rng);
      const Matrix d = oracle::random_unit_columns(dim, na, rng), v = oracle::random_unit_columns(dim, nv, rng);
      const double lambda = weight(rng), mu = weight(rng), tau = mix(rng);
      const auto ts = clock_type::now();
      const auto r = extended_solve(d, v, y, lambda, mu, tau);
      solver_secs += seconds_since(ts);
      nonconverged += !r.converged;
      gap = r.objective - oracle::extended_minimum(d, v, y, lambda, mu, tau).objective;
    } else {
      const int k = std::uniform_int_distribution<int>(2, 3)(rng);
      const int q = k == 2 ? std::uniform_int_distribution<int>(1, 2)(rng) : 1;
      oracle::PairedInstance in;
      PairedLayout layout;
      for (int c = 0; c < k; ++c)
        for (int s = 0; s <= q; ++s) {
          in.tags.push_back({c, s});
          layout.gallery.push_back({c, s});
        }
      const int budget = 10 - k * (q + 1);
      for (int b = 1; b <= q; ++b) {
        const int m = std::uniform_int_distribution<int>(1, budget / q)(rng);
        for (int j = 0; j < m; ++j) {
          in.blocks.push_back(b);
          layout.block_of_atom.push_back(b);
        }
      }
      in.d = oracle::random_unit_columns(dim, k * (q + 1), rng);
      in.v = oracle::random_unit_columns(dim, static_cast<Index>(in.blocks.size()), rng);
      in.frontal_block = layout.frontal_block = std::uniform_int_distribution<int>(1, q)(rng);
      PairedOptions opt;
      opt.lambda = weight(rng);
      opt.mu = weight(rng);
      opt.tau = mix(rng);
      opt.xi = std::uniform_int_distribution<int>(1, 2)(rng);
      const auto ts = clock_type::now();
      const auto r = paired_solve(PairedDictionary(in.d, in.v, layout), y, opt);
      solver_secs += seconds_since(ts);
      nonconverged += !r.code.converged;
      gap = r.code.objective - oracle::paired_minimum(in, y, opt.lambda, opt.mu, opt.tau, opt.xi).objective;
    }
    worst = std::max(worst, gap);
  }
  out << "worst objective - oracle = " << worst << ", non-converged " << nonconverged << ", solvers " << solver_secs
      << " s (with oracles " << seconds_since(t0) << " s)";
  return worst <= 1e-6 && solver_secs < 10.0;
}

// 2. Exemplar selection at the ends of the eta path and along it.
bool exemplar_path(std::ostringstream& out) {
  const RowNorm norm = ModelConfig{}.row_norm;
  std::mt19937_64 rng(77);
  int medoid_ok = 0, identity_ok = 0, monotone_ok = 0;
  std::normal_distribution<double> jitter(0.0, 4.0);
  for (int t = 0; t < 50; ++t) {
    const int n = std::uniform_int_distribution<int>(2, 40)(rng);
    const int modes = std::uniform_int_distribution<int>(1, 5)(rng);
    std::vector<Pose> centers;
    for (int m = 0; m < modes; ++m)
      centers.push_back({std::uniform_real_distribution<double>(-20, 20)(rng),
                         std::uniform_real_distribution<double>(-70, 70)(rng), 0.0});
    std::vector<Pose> poses;
    for (int i = 0; i < n; ++i) {
      const auto& c = centers[static_cast<std::size_t>(i % modes)];
      poses.push_back({c.pitch + jitter(rng), c.yaw + jitter(rng), c.roll + jitter(rng)});
    }
    const auto D = pose_dissimilarities(poses);
    const double em = eta_max(D, norm);

    const auto top = cluster_poses(poses, em, false, norm);
    if (top.clustering.q() == 1 && top.clustering.exemplar_indices[0] == oracle::medoid(D.data())) ++medoid_ok;
    const auto bottom = cluster_poses(poses, 1e-9, false, norm);
    if (bottom.clustering.q() == static_cast<std::size_t>(n)) ++identity_ok;

    std::size_t prev = std::numeric_limits<std::size_t>::max();
    bool mono = true;
    for (int k = 0; k < 10; ++k) {
      const double eta = em * std::pow(10.0, -3.0 + 3.0 * k / 9.0);
      const auto c = cluster_poses(poses, eta, false, norm).clustering.q();
      mono = mono && c <= prev;
      prev = c;
    }
    monotone_ok += mono;
  }
  out << "row norm " << to_string(norm) << ": medoid " << medoid_ok << "/50, identity " << identity_ok << "/50, monotone q " << monotone_ok << "/50";
  return medoid_ok == 50 && identity_ok == 50 && monotone_ok == 50;
}

// 3. SCI properties.
bool sci_properties(std::ostringstream& out) {
  std::mt19937_64 rng(31);
  double worst = 0.0;
  bool range = true;
  for (int t = 0; t < 1000; ++t) {
    const int k = std::uniform_int_distribution<int>(2, 6)(rng);
    const Index per = std::uniform_int_distribution<Index>(1, 4)(rng);
    std::vector<int> classes;
    for (int c = 0; c < k; ++c)
      for (Index i = 0; i < per; ++i) classes.push_back(c);
    const Index n = static_cast<Index>(classes.size());
    Vector a = oracle::random_vector(n, rng);
    for (Index i = 0; i < n; ++i)
      if (rng() % 4 == 0) a(i) = 0.0;
    if (a.isZero(0.0)) a(0) = 1.0;
    const double s = sci(a, classes, static_cast<std::size_t>(k));
    range = range && s >= 0.0 && s <= 1.0;
    const double scale = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng)) * (t % 2 ? -1.0 : 1.0);
    worst = std::max(worst, std::abs(sci(scale * a, classes, static_cast<std::size_t>(k)) - s));
    worst = std::max(worst, std::abs(s - oracle::sci(a, classes, k)));

    // all mass on one class
    const int c1 = std::uniform_int_distribution<int>(0, k - 1)(rng);
    Vector one = Vector::Zero(n);
    for (Index i = 0; i < n; ++i)
      if (classes[static_cast<std::size_t>(i)] == c1) one(i) = a(i) != 0.0 ? a(i) : 0.5;
    worst = std::max(worst, std::abs(sci(one, classes, static_cast<std::size_t>(k)) - 1.0));

    // equal l1 mass per class
    Vector uni(n);
    for (Index i = 0; i < n; ++i) uni(i) = (i % 2 ? -1.0 : 1.0) / static_cast<double>(per);
    worst = std::max(worst, std::abs(sci(uni, classes, static_cast<std::size_t>(k))));
  }
  out << "max deviation " << worst << (range ? ", all in [0,1]" : ", out of range");
  return range && worst <= 1e-12;
}

// 4. ROC, pAUC20 and AUPR against brute force.
bool metric_oracles(std::ostringstream& out) {
  std::mt19937_64 rng(41);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int n = std::uniform_int_distribution<int>(4, 80)(rng);
    std::vector<double> s;
    std::vector<bool> g;
    for (int i = 0; i < n; ++i) {
      const bool gen = i == 0 || (i != 1 && rng() % 2 == 0);
      g.push_back(gen);
      s.push_back(std::uniform_int_distribution<int>(0, 15)(rng) * 0.1 + (gen ? 0.5 : 0.0));
    }
    const auto roc = roc_curve(s, g);
    const auto o = oracle::roc(s, g);
    if (roc.size() != o.size()) {
      out << "ROC point count differs on set " << t;
      return false;
    }
    for (std::size_t i = 0; i < o.size(); ++i)
      worst = std::max({worst, std::abs(roc[i].fpr - o[i].x), std::abs(roc[i].tpr - o[i].y)});
    worst = std::max(worst, std::abs(pauc20(roc) - oracle::pauc(s, g, 0.2)));
    worst = std::max(worst, std::abs(aupr(pr_curve(s, g)) - oracle::aupr(s, g)));
  }
  const std::vector<double> flat(20, 1.0);
  std::vector<bool> labels(20, false);
  for (std::size_t i = 0; i < 20; i += 2) labels[i] = true;
  const double diag = pauc20(roc_curve(flat, labels));
  out << "max deviation " << worst << ", diagonal pAUC20 " << format_double(diag);
  return worst <= 1e-9 && diag == 0.1;
}

std::string method_summary(const ExperimentReport& r) {
  std::ostringstream os;
  for (const auto& m : r.methods) os << m.method << " " << m.pauc20.mean << " ";
  return os.str();
}

} // namespace

int main() {
  Gate gate;
  gate.run(1, "solver-oracle agreement", solver_oracle_agreement);
  gate.run(2, "exemplar path", exemplar_path);
  gate.run(3, "SCI properties", sci_properties);
  gate.run(4, "metric oracles", metric_oracles);

  // Default toy benchmark, five runs: criteria 5, 6 and 8 share this report.
  const auto bundle = generate_benchmark(BenchmarkSpec{});
  const ModelConfig config;
  ExperimentOptions options;
  options.n_runs = 5;
  std::optional<ExperimentReport> base;
  double base_secs = 0.0;
  try {
    const auto t0 = clock_type::now();
    base = run_experiment(bundle, config, options);
    base_secs = seconds_since(t0);
  } catch (const std::exception& e) {
    gate.report(5, "benchmark ordering", false, std::string("exception: ") + e.what());
  }
  if (base) {
    gate.run(5, "benchmark ordering", [&](std::ostringstream& out) {
      const double spv = base->method("spv").pauc20.mean, esrc = base->method("esrc").pauc20.mean,
                   src = base->method("src").pauc20.mean;
      out << "pAUC20 spv " << spv << ", esrc " << esrc << ", src " << src << " (spv-esrc " << spv - esrc
          << ", esrc-src " << esrc - src << "), " << base_secs << " s";
      return spv - esrc >= 0.03 && esrc - src >= 0.10 && base_secs < 300.0;
    });
    gate.run(6, "pose robustness", [&](std::ostringstream& out) {
      auto drop = [&](const char* name) {
        const auto& b = base->method(name).pose_bins;
        if (b.size() != 3) throw data_error("expected three pose bins");
        return b.front().accuracy - b.back().accuracy;
      };
      const double d_spv = drop("spv"), d_src = drop("src");
      out << "accuracy drop near->far: spv " << d_spv << ", src " << d_src;
      return d_spv < d_src;
    });
  } else {
    gate.report(6, "pose robustness", false, "benchmark did not run");
  }

  gate.run(7, "q sweep", [&](std::ostringstream& out) {
    ExperimentOptions o;
    o.n_runs = 5;
    o.methods = {Method::spv};
    std::vector<double> p;
    out << "spv pAUC20";
    for (int qv : {0, 1, 2, 4}) {
      o.q_override = qv;
      p.push_back(run_experiment(bundle, config, o).methods[0].pauc20.mean);
      out << " q=" << qv << ":" << p.back();
    }
    bool ok = true;
    for (std::size_t i = 1; i < p.size(); ++i) ok = ok && p[i] >= p[i - 1] - 0.01;
    return ok;
  });

  gate.run(8, "determinism", [&](std::ostringstream& out) {
    if (!base) throw data_error("benchmark did not run");
    const auto dir = std::filesystem::temp_directory_path() / "spv_acceptance";
    std::filesystem::create_directories(dir);
    ExperimentOptions threaded = options;
    threaded.threads = 4;
    emit_report(*base, dir / "a.json", ReportFormat::json);
    emit_report(run_experiment(bundle, config, options), dir / "b.json", ReportFormat::json);
    emit_report(run_experiment(bundle, config, threaded), dir / "c.json", ReportFormat::json);
    auto read = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    const auto a = read(dir / "a.json"), b = read(dir / "b.json"), c = read(dir / "c.json");
    std::filesystem::remove_all(dir);
    out << a.size() << " bytes; repeat " << (a == b ? "identical" : "differs") << ", 4 threads "
        << (a == c ? "identical" : "differs") << "; " << method_summary(*base);
    return !a.empty() && a == b && a == c;
  });

  std::cout << (gate.failures == 0 ? "ALL PASS" : std::to_string(gate.failures) + " FAILED") << std::endl;
  return gate.failures == 0 ? 0 : 1;
}
