#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "spv/benchmark.hpp"
#include "spv/classifier.hpp"
#include "spv/dictionaries.hpp"
#include "spv/exemplars.hpp"
#include "spv/metrics.hpp"

namespace spv {

enum class Method { src, esrc, spv, nn };

inline std::string to_string(Method m) {
  switch (m) {
  case Method::src: return "src";
  case Method::esrc: return "esrc";
  case Method::spv: return "spv";
  case Method::nn: return "nn";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "src") return Method::src;
  if (s == "esrc") return Method::esrc;
  if (s == "spv") return Method::spv;
  if (s == "nn" || s == "nn_template") return Method::nn;
  throw config_error("unknown method '" + s + "'");
}

// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
// concurrency). The first exception is rethrown after all workers stop.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i; !failed && (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  pool.clear();
  if (error) std::rethrow_exception(error);
}

struct ExperimentOptions {
  std::vector<Method> methods{Method::src, Method::esrc, Method::spv, Method::nn};
  int n_runs = 5;
  unsigned threads = 1;
  // Score = -min residual, or -inf for rejected probes when gated by SCI.
  bool sci_gated = false;
  // Fixed pose-cluster count; 0 keeps the gallery without synthetic views.
  // Unset selects exemplars with config.eta.
  std::optional<int> q_override;
  NaturalSelector natural = NaturalSelector::frontal;
  VariationSource variation = VariationSource::natural;
  // Renderer for synthetic gallery views; defaults to the benchmark's own.
  std::shared_ptr<const ViewSynthesizer> synth;
  bool include_timing = false;
};

struct ProbeOutcome {
  Index probe = 0;
  int truth = unknown_label;
  bool genuine = false;
  int predicted = unknown_label;
  double score = 0.0;
  double min_residual = 0.0;
  double margin = 0.0;
  double sci = 0.0;
  bool accepted = false;
  bool converged = true;
  double pose_distance = 0.0; // to the frontal gallery still
  double seconds = 0.0;
};

struct RunResult {
  int run = 0;
  std::uint64_t seed = 0;
  std::vector<int> watchlist;
  double pauc20 = 0.0;
  double aupr = 0.0;
  double rank1 = 0.0; // identification accuracy over genuine probes
};

struct PoseBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;
};

struct MethodReport {
  std::string method;
  std::vector<RocPoint> roc; // pooled over runs
  std::vector<PrPoint> pr;   // pooled over runs
  std::vector<RunResult> runs;
  MeanStd pauc20;
  MeanStd aupr;
  MeanStd rank1;
  std::vector<PoseBin> pose_bins;
  std::size_t nonconverged = 0;
  std::optional<double> ms_per_probe;
  std::vector<ProbeOutcome> outcomes; // in run order, then probe order
};

struct ExperimentReport {
  BenchmarkSpec spec;
  ModelConfig config;
  int n_runs = 0;
  bool sci_gated = false;
  int q = 0;
  double eta = 0.0;
  std::vector<MethodReport> methods;

  const MethodReport& method(const std::string& name) const {
    for (const auto& m : methods)
      if (m.method == name) return m;
    throw data_error("report has no method '" + name + "'");
  }
};

// Accuracy by pose distance tertiles of the genuine probes.
inline std::vector<PoseBin> pose_bins(const std::vector<ProbeOutcome>& outcomes, std::size_t n_bins = 3) {
  std::vector<double> dist;
  for (const auto& o : outcomes)
    if (o.genuine) dist.push_back(o.pose_distance);
  if (dist.empty()) return {};
  std::sort(dist.begin(), dist.end());
  std::vector<double> edges{-std::numeric_limits<double>::infinity()};
  for (std::size_t b = 1; b < n_bins; ++b) edges.push_back(dist[b * dist.size() / n_bins]);
  edges.push_back(std::numeric_limits<double>::infinity());

  std::vector<PoseBin> bins(n_bins);
  std::vector<std::size_t> hits(n_bins, 0);
  for (const auto& o : outcomes) {
    if (!o.genuine) continue;
    std::size_t b = 0;
    while (b + 1 < n_bins && o.pose_distance >= edges[b + 1]) ++b;
    ++bins[b].count;
    if (o.predicted == o.truth) ++hits[b];
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lo = b == 0 ? dist.front() : edges[b];
    bins[b].hi = b + 1 == n_bins ? dist.back() : edges[b + 1];
    bins[b].accuracy = bins[b].count ? static_cast<double>(hits[b]) / static_cast<double>(bins[b].count) : 0.0;
  }
  return bins;
}

namespace detail {

struct Scores {
  std::vector<double> score;
  std::vector<bool> genuine;
};

inline Scores scores_of(const std::vector<ProbeOutcome>& outcomes, std::size_t begin, std::size_t end) {
  Scores s;
  for (std::size_t i = begin; i < end; ++i) {
    s.score.push_back(outcomes[i].score);
    s.genuine.push_back(outcomes[i].genuine);
  }
  return s;
}

} // namespace detail

// Repeated watch-list protocol: per run a random watch-list is enrolled (one
// still per identity), the generic set supplies pose exemplars and
// variational atoms, and every selected probe is classified by each method.
inline ExperimentReport run_experiment(const BenchmarkBundle& bundle, const ModelConfig& config,
                                       const ExperimentOptions& options) {
  config.validate();
  if (options.n_runs < 1) throw config_error("n_runs must be >= 1");
  if (options.methods.empty()) throw config_error("no methods requested");
  if (options.q_override && *options.q_override < 0) throw config_error("q must be >= 0");

  ExperimentReport report;
  report.spec = bundle.spec;
  report.config = config;
  report.n_runs = options.n_runs;
  report.sci_gated = options.sci_gated;

  const auto has = [&](Method m) {
    return std::find(options.methods.begin(), options.methods.end(), m) != options.methods.end();
  };
  const bool need_v = has(Method::esrc) || has(Method::spv);

  // Pose exemplars and the variational dictionary depend only on the generic set.
  std::optional<ClusteringResult> clustering;
  std::optional<VariationalDictionary> variational;
  if (need_v) {
    const std::span<const Pose> poses(bundle.generic_meta.poses);
    if (options.q_override)
      clustering = cluster_poses_with_count(poses, static_cast<std::size_t>(std::max(*options.q_override, 1)),
                                            config.row_norm);
    else
      clustering = cluster_poses(poses, config.eta, config.eta_relative, config.row_norm);
    variational = build_variational_dictionary(bundle.generic, bundle.generic_meta, clustering->clustering,
                                               options.natural, options.variation, config.normalize_variational);
    report.q = options.q_override ? *options.q_override : static_cast<int>(clustering->clustering.q());
    report.eta = clustering->eta;
  }
  const ViewSynthesizer& synth = options.synth ? *options.synth : static_cast<const ViewSynthesizer&>(*bundle.synth);
  const std::set<int> generic_ids(bundle.generic_meta.labels.begin(), bundle.generic_meta.labels.end());

  for (Method m : options.methods) {
    MethodReport mr;
    mr.method = to_string(m);
    report.methods.push_back(std::move(mr));
  }
  const std::size_t nm = options.methods.size();

  std::vector<std::size_t> run_end;
  for (int run = 0; run < options.n_runs; ++run) {
    RunResult rr;
    rr.run = run;
    rr.seed = run_seed(config.seed, run);
    const Split split = make_split(bundle, rr.seed);
    rr.watchlist = split.watchlist;
    for (int c : split.watchlist)
      if (generic_ids.count(c)) throw data_error("generic set overlaps the watch-list");

    Matrix still_cols(bundle.stills.dim(), static_cast<Index>(split.watchlist.size()));
    SampleMeta still_meta;
    for (std::size_t i = 0; i < split.watchlist.size(); ++i) {
      const int c = split.watchlist[i];
      still_cols.col(static_cast<Index>(i)) = bundle.stills.column(c);
      still_meta.labels.push_back(c);
      still_meta.poses.push_back(bundle.stills_meta.poses[static_cast<std::size_t>(c)]);
    }
    const SampleMatrix stills = normalize_columns(SampleMatrix(still_cols));

    std::optional<SrcModel> src;
    std::optional<EsrcModel> esrc;
    std::optional<SpvModel> spv;
    std::optional<NnModel> nn;
    if (has(Method::src)) src.emplace(stills.data(), still_meta.labels, config);
    if (has(Method::esrc)) esrc.emplace(stills.data(), still_meta.labels, variational->atoms, config);
    if (has(Method::nn)) nn.emplace(stills.data(), still_meta.labels);
    if (has(Method::spv)) {
      AugmentedGallery g;
      if (options.q_override && *options.q_override == 0)
        g = build_augmented_gallery(stills, still_meta, std::span<const Pose>{}, synth);
      else
        g = build_augmented_gallery(stills, still_meta, clustering->clustering, synth);
      spv.emplace(g, *variational, config);
    }

    const std::size_t np = split.probes.size();
    std::vector<ProbeOutcome> outcomes(np * nm);
    parallel_for(np, options.threads, [&](std::size_t i) {
      const Index j = split.probes[i];
      Vector y = bundle.probes.column(j);
      const double n = y.norm();
      if (n > 0.0) y /= n;
      for (std::size_t m = 0; m < nm; ++m) {
        const auto t0 = std::chrono::steady_clock::now();
        ProbeDecision d;
        switch (options.methods[m]) {
        case Method::src: d = src->classify(y); break;
        case Method::esrc: d = esrc->classify(y); break;
        case Method::spv: d = spv->classify(y); break;
        case Method::nn: d = nn->classify(y); break;
        }
        const auto t1 = std::chrono::steady_clock::now();
        ProbeOutcome& o = outcomes[m * np + i];
        o.probe = j;
        o.truth = bundle.probes_meta.labels[static_cast<std::size_t>(j)];
        o.genuine = split.genuine[i];
        o.predicted = d.predicted;
        o.min_residual = d.min_residual();
        o.margin = d.margin();
        o.sci = d.sci;
        o.accepted = d.accepted;
        o.converged = d.converged;
        o.score = options.sci_gated && !d.accepted ? -std::numeric_limits<double>::infinity() : -o.min_residual;
        o.pose_distance = pose_norm(bundle.probes_meta.poses[static_cast<std::size_t>(j)]);
        o.seconds = std::chrono::duration<double>(t1 - t0).count();
      }
    });

    for (std::size_t m = 0; m < nm; ++m) {
      auto& mr = report.methods[m];
      const std::size_t begin = mr.outcomes.size();
      mr.outcomes.insert(mr.outcomes.end(), outcomes.begin() + static_cast<std::ptrdiff_t>(m * np),
                         outcomes.begin() + static_cast<std::ptrdiff_t>((m + 1) * np));
      const auto s = detail::scores_of(mr.outcomes, begin, mr.outcomes.size());
      RunResult r = rr;
      r.pauc20 = pauc20(roc_curve(s.score, s.genuine));
      r.aupr = aupr(pr_curve(s.score, s.genuine));
      std::size_t correct = 0, genuine = 0;
      for (std::size_t i = begin; i < mr.outcomes.size(); ++i) {
        const auto& o = mr.outcomes[i];
        if (!o.genuine) continue;
        ++genuine;
        if (o.predicted == o.truth) ++correct;
      }
      r.rank1 = genuine ? static_cast<double>(correct) / static_cast<double>(genuine) : 0.0;
      mr.runs.push_back(r);
    }
  }

  for (auto& mr : report.methods) {
    const auto s = detail::scores_of(mr.outcomes, 0, mr.outcomes.size());
    mr.roc = roc_curve(s.score, s.genuine);
    mr.pr = pr_curve(s.score, s.genuine);
    std::vector<double> p, a, r;
    for (const auto& run : mr.runs) {
      p.push_back(run.pauc20);
      a.push_back(run.aupr);
      r.push_back(run.rank1);
    }
    mr.pauc20 = mean_std(p);
    mr.aupr = mean_std(a);
    mr.rank1 = mean_std(r);
    mr.pose_bins = pose_bins(mr.outcomes);
    double seconds = 0.0;
    for (const auto& o : mr.outcomes) {
      if (!o.converged) ++mr.nonconverged;
      seconds += o.seconds;
    }
    if (options.include_timing) mr.ms_per_probe = 1e3 * seconds / static_cast<double>(mr.outcomes.size());
  }
  return report;
}

} // namespace spv
