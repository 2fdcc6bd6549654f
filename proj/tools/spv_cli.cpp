#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spv/spv.hpp"

namespace fs = std::filesystem;

namespace {

enum exit_code { ok = 0, usage = 1, data = 2, nonconvergence = 3 };

// `<dir>/<stem>.meta.json` next to a matrix file.
fs::path meta_path_for(const fs::path& matrix) {
  return matrix.parent_path() / (matrix.stem().string() + ".meta.json");
}

fs::path meta_or_default(const std::string& given, const fs::path& matrix) {
  return given.empty() ? meta_path_for(matrix) : fs::path(given);
}

// Model options shared by subcommands: --config file, then explicit flags.
struct ModelFlags {
  std::string config_path;
  std::optional<double> lambda, mu, tau, eta, sci_threshold, tol;
  std::optional<int> xi, max_iter;
  std::optional<std::uint64_t> seed;

  void add(CLI::App& app) {
    app.add_option("--config", config_path, "JSON model configuration")->check(CLI::ExistingFile);
    app.add_option("--lambda", lambda, "l1 weight on the gallery code");
    app.add_option("--mu", mu, "weight on the variational group norms");
    app.add_option("--tau", tau, "l1/l2 mix inside each variational group");
    app.add_option("--xi", xi, "maximum number of active sets");
    app.add_option("--sci-threshold", sci_threshold, "SCI rejection threshold");
    app.add_option("--tol", tol, "solver tolerance");
    app.add_option("--max-iter", max_iter, "solver iteration cap");
    app.add_option("--seed", seed, "master seed");
  }

  void add_eta(CLI::App& app) { app.add_option("--eta", eta, "row-sparsity weight"); }

  spv::ModelConfig resolve() const {
    spv::ModelConfig c;
    if (!config_path.empty()) spv::from_json(spv::read_json_file(config_path), c);
    if (lambda) c.lambda = *lambda;
    if (mu) c.mu = *mu;
    if (tau) c.tau = *tau;
    if (eta) c.eta = *eta;
    if (sci_threshold) c.sci_threshold = *sci_threshold;
    if (tol) c.tol = *tol;
    if (xi) c.xi = *xi;
    if (max_iter) c.max_iter = *max_iter;
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

nlohmann::json clustering_to_json(const spv::ClusteringResult& r) {
  const auto& c = r.clustering;
  nlohmann::json poses = nlohmann::json::array();
  for (const auto& p : c.exemplar_poses) poses.push_back({p.pitch, p.yaw, p.roll});
  return {{"exemplar_indices", c.exemplar_indices},
          {"exemplar_poses", std::move(poses)},
          {"assignment", c.assignment},
          {"q", c.q()},
          {"eta", r.eta},
          {"converged", r.converged}};
}

spv::PoseClustering clustering_from_json(const nlohmann::json& j) {
  spv::PoseClustering c;
  try {
    c.exemplar_indices = j.at("exemplar_indices").get<std::vector<spv::Index>>();
    c.assignment = j.at("assignment").get<std::vector<spv::Index>>();
    for (const auto& p : j.at("exemplar_poses")) c.exemplar_poses.push_back({p.at(0), p.at(1), p.at(2)});
  } catch (const nlohmann::json::exception& e) {
    throw spv::data_error(std::string("malformed clustering: ") + e.what());
  }
  if (c.exemplar_indices.empty()) throw spv::data_error("clustering has no exemplars");
  if (c.exemplar_poses.size() != c.exemplar_indices.size())
    throw spv::data_error("clustering has mismatched exemplar poses");
  for (auto a : c.assignment)
    if (std::find(c.exemplar_indices.begin(), c.exemplar_indices.end(), a) == c.exemplar_indices.end())
      throw spv::data_error("clustering assigns a sample to a non-exemplar");
  return c;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---------------------------------------------------------------------------

struct ExemplarsCmd {
  std::string meta, out, q_norm;
  bool relative = false;
  ModelFlags model;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("exemplars", "select pose exemplars from sample metadata");
    sub->add_option("--meta", meta, "metadata JSON with poses")->required();
    sub->add_option("--q-norm", q_norm, "row norm: 2 or inf")->check(CLI::IsMember({"2", "inf"}));
    sub->add_flag("--relative", relative, "interpret --eta as a fraction of eta_max");
    sub->add_option("--out", out, "output JSON (stdout when omitted)");
    model.add_eta(*sub);
    model.add(*sub);
    sub->callback([this] { run_ = true; });
  }

  int run() const {
    auto config = model.resolve();
    if (!q_norm.empty()) config.row_norm = spv::row_norm_from_string(q_norm);
    // An explicit --eta is absolute unless --relative is given.
    const bool rel = model.eta ? relative : config.eta_relative || relative;
    const auto m = spv::meta_from_json(spv::read_json_file(meta));
    m.validate(m.labels.size());
    if (!m.has_poses()) throw spv::data_error("metadata has no poses");
    const auto r = spv::cluster_poses(m.poses, config.eta, rel, config.row_norm);
    const auto j = clustering_to_json(r);
    if (out.empty())
      std::cout << j.dump(2) << '\n';
    else
      spv::write_json_file(j, out);
    if (!r.converged) {
      std::cerr << "warning: exemplar selection did not converge\n";
      return nonconvergence;
    }
    return ok;
  }

  bool run_ = false;
};

struct BuildCmd {
  std::string stills, stills_meta, generic, generic_meta, clustering;
  std::string synth = "toy", natural = "frontal", variation = "natural";
  std::string out_gallery, out_variational;
  std::uint64_t toy_seed = 0;
  double warp = spv::BenchmarkSpec{}.warp_strength;
  double offset = spv::BenchmarkSpec{}.offset_strength;
  bool no_normalize = false;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("build", "build the augmented gallery and the variational dictionary");
    sub->add_option("--stills", stills, "matrix of gallery stills")->required();
    sub->add_option("--stills-meta", stills_meta, "stills metadata (default <stills>.meta.json)");
    sub->add_option("--generic", generic, "matrix of generic-set samples")->required();
    sub->add_option("--generic-meta", generic_meta, "generic metadata (default <generic>.meta.json)");
    sub->add_option("--clustering", clustering, "exemplar JSON from 'spv exemplars'")->required();
    sub->add_option("--synth", synth, "toy, identity or import:<dir>");
    sub->add_option("--natural", natural, "natural-sample rule")->check(CLI::IsMember({"frontal", "labeled"}));
    sub->add_option("--variation", variation, "difference reference")->check(CLI::IsMember({"natural", "centroid"}));
    sub->add_option("--toy-seed", toy_seed, "toy synthesizer seed");
    sub->add_option("--warp", warp, "toy synthesizer warp strength");
    sub->add_option("--offset", offset, "toy synthesizer offset strength");
    sub->add_flag("--no-normalize", no_normalize, "keep variational atoms unnormalized");
    sub->add_option("--out-gallery", out_gallery, "augmented gallery matrix")->required();
    sub->add_option("--out-variational", out_variational, "variational dictionary matrix")->required();
    sub->callback([this] { run_ = true; });
  }

  std::shared_ptr<const spv::ViewSynthesizer> make_synth(spv::Index dim) const {
    if (synth == "toy") return spv::toy_synthesizer(dim, toy_seed, warp, offset);
    if (synth == "identity") return std::make_shared<spv::IdentitySynthesizer>();
    if (synth.rfind("import:", 0) == 0) return std::make_shared<spv::ImportSynthesizer>(synth.substr(7));
    throw spv::config_error("unknown synthesizer '" + synth + "'");
  }

  int run() const {
    const auto s = spv::load_matrix(stills);
    const auto sm = spv::load_meta(meta_or_default(stills_meta, stills), static_cast<std::size_t>(s.count()));
    const auto g = spv::load_matrix(generic);
    const auto gm = spv::load_meta(meta_or_default(generic_meta, generic), static_cast<std::size_t>(g.count()));
    if (s.dim() != g.dim()) throw spv::data_error("stills and generic samples differ in dimension");
    const auto c = clustering_from_json(spv::read_json_file(clustering));
    if (c.assignment.size() != gm.size()) throw spv::data_error("clustering does not cover the generic set");
    const auto sy = make_synth(s.dim());

    const auto gallery = spv::build_augmented_gallery(spv::normalize_columns(s), sm, c, *sy);
    const auto v = spv::build_variational_dictionary(
        g, gm, c, natural == "labeled" ? spv::NaturalSelector::labeled : spv::NaturalSelector::frontal,
        variation == "centroid" ? spv::VariationSource::centroid : spv::VariationSource::natural, !no_normalize);
    for (const auto& w : v.warnings) std::cerr << "warning: " << w << '\n';

    spv::save_matrix(spv::SampleMatrix(gallery.atoms), out_gallery);
    spv::save_meta(gallery.meta(), meta_path_for(out_gallery));
    spv::save_matrix(spv::SampleMatrix(v.atoms), out_variational);
    auto vj = spv::meta_to_json(v.meta());
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& p : v.exemplar_poses) poses.push_back({p.pitch, p.yaw, p.roll});
    vj["exemplar_poses"] = std::move(poses);
    vj["frontal_block"] = v.frontal_block;
    vj["source_sample"] = v.source_sample;
    spv::write_json_file(vj, meta_path_for(out_variational));
    return ok;
  }

  bool run_ = false;
};

spv::AugmentedGallery load_gallery(const fs::path& matrix, const fs::path& meta_path) {
  const auto m = spv::load_matrix(matrix);
  const auto meta = spv::load_meta(meta_path, static_cast<std::size_t>(m.count()));
  if (!meta.blocks || !meta.has_poses()) throw spv::data_error("gallery metadata needs poses and pose slots");
  spv::AugmentedGallery g;
  g.atoms = m.data();
  for (std::size_t i = 0; i < meta.size(); ++i) {
    g.atom_meta.push_back({meta.labels[i], (*meta.blocks)[i], meta.poses[i]});
    g.q = std::max(g.q, (*meta.blocks)[i]);
  }
  g.class_ids = spv::distinct_classes(meta.labels);
  return g;
}

spv::VariationalDictionary load_variational(const fs::path& matrix, const fs::path& meta_path) {
  const auto m = spv::load_matrix(matrix);
  const auto j = spv::read_json_file(meta_path);
  const auto meta = spv::meta_from_json(j);
  meta.validate(static_cast<std::size_t>(m.count()));
  if (!meta.blocks) throw spv::data_error("variational metadata needs block ids");
  spv::VariationalDictionary v;
  v.atoms = m.data();
  v.block_of_atom = *meta.blocks;
  try {
    for (const auto& p : j.at("exemplar_poses")) v.exemplar_poses.push_back({p.at(0), p.at(1), p.at(2)});
    v.frontal_block = j.at("frontal_block").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw spv::data_error(std::string("malformed variational metadata: ") + e.what());
  }
  v.q = static_cast<int>(v.exemplar_poses.size());
  return v;
}

struct ClassifyCmd {
  std::string gallery, gallery_meta, variational, variational_meta, probes, out;
  std::string method = "spv";
  unsigned threads = 1;
  ModelFlags model;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("classify", "classify probe columns against a gallery");
    sub->add_option("--gallery", gallery, "gallery matrix from 'spv build'")->required();
    sub->add_option("--gallery-meta", gallery_meta, "gallery metadata (default <gallery>.meta.json)");
    sub->add_option("--variational", variational, "variational dictionary from 'spv build'");
    sub->add_option("--variational-meta", variational_meta, "variational metadata (default <variational>.meta.json)");
    sub->add_option("--probes", probes, "probe matrix")->required();
    sub->add_option("--method", method, "classifier")->check(CLI::IsMember({"spv", "esrc", "src", "nn"}));
    sub->add_option("--threads", threads, "probe-level workers (0 = all cores)");
    sub->add_option("--out", out, "output CSV (stdout when omitted)");
    model.add(*sub);
    sub->callback([this] { run_ = true; });
  }

  int run() const {
    const auto config = model.resolve();
    const auto g = load_gallery(gallery, meta_or_default(gallery_meta, gallery));
    std::optional<spv::VariationalDictionary> v;
    if (!variational.empty()) v = load_variational(variational, meta_or_default(variational_meta, variational));
    if ((method == "spv" || method == "esrc") && !v)
      throw spv::config_error("method '" + method + "' needs --variational");
    const auto p = spv::normalize_columns(spv::load_matrix(probes));
    if (p.dim() != g.atoms.rows()) throw spv::data_error("probe dimension does not match the gallery");

    // Stills only for the single-dictionary baselines.
    spv::Matrix stills(g.atoms.rows(), g.k());
    std::vector<int> still_classes;
    for (std::size_t i = 0, c = 0; i < g.atom_meta.size(); ++i)
      if (g.atom_meta[i].pose_slot == 0) {
        stills.col(static_cast<spv::Index>(c++)) = g.atoms.col(static_cast<spv::Index>(i));
        still_classes.push_back(g.atom_meta[i].class_id);
      }
    if (static_cast<spv::Index>(still_classes.size()) != g.k()) throw spv::data_error("gallery needs one still per class");

    std::optional<spv::SrcModel> src;
    std::optional<spv::EsrcModel> esrc;
    std::optional<spv::SpvModel> spvm;
    std::optional<spv::NnModel> nn;
    if (method == "src") src.emplace(stills, still_classes, config);
    if (method == "esrc") esrc.emplace(stills, still_classes, v->atoms, config);
    if (method == "spv") spvm.emplace(g, *v, config);
    if (method == "nn") nn.emplace(stills, still_classes);

    const auto n = static_cast<std::size_t>(p.count());
    std::vector<spv::ProbeDecision> d(n);
    spv::parallel_for(n, threads, [&](std::size_t i) {
      const spv::Vector y = p.column(static_cast<spv::Index>(i));
      if (src) d[i] = src->classify(y);
      if (esrc) d[i] = esrc->classify(y);
      if (spvm) d[i] = spvm->classify(y);
      if (nn) d[i] = nn->classify(y);
    });

    std::ostringstream os;
    os << "probe_id,predicted,sci,accepted";
    for (std::size_t k = 1; k <= g.class_ids.size(); ++k) os << ",r_" << k;
    os << '\n';
    bool converged = true;
    for (std::size_t i = 0; i < n; ++i) {
      os << i << ',' << d[i].predicted << ',' << spv::format_double(d[i].sci) << ',' << (d[i].accepted ? 1 : 0);
      for (double r : d[i].residuals) os << ',' << spv::format_double(r);
      os << '\n';
      converged = converged && d[i].converged;
    }
    if (out.empty())
      std::cout << os.str();
    else
      spv::write_text_file(os.str(), out);
    if (!converged) {
      std::cerr << "warning: the solver did not converge on some probes\n";
      return nonconvergence;
    }
    return ok;
  }

  bool run_ = false;
};

struct BenchCmd {
  std::string spec, out, scores, methods = "src,esrc,spv,nn", natural = "frontal", variation = "natural";
  std::optional<int> runs, q;
  unsigned threads = 1;
  bool sci_gated = false, timing = false;
  ModelFlags model;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("bench", "run the repeated watch-list benchmark");
    sub->add_option("--spec", spec, "benchmark spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
    sub->add_option("--runs", runs, "number of random watch-lists")->check(CLI::PositiveNumber);
    sub->add_option("--methods", methods, "comma-separated subset of src,esrc,spv,nn");
    sub->add_option("--q", q, "fixed pose-cluster count (0 = no synthetic views)")->check(CLI::NonNegativeNumber);
    sub->add_option("--natural", natural, "natural-sample rule")->check(CLI::IsMember({"frontal", "labeled"}));
    sub->add_option("--variation", variation, "difference reference")->check(CLI::IsMember({"natural", "centroid"}));
    sub->add_option("--threads", threads, "probe-level workers (0 = all cores)");
    sub->add_flag("--sci-gated", sci_gated, "score rejected probes as -inf");
    sub->add_flag("--timing", timing, "record ms per probe in the report");
    sub->add_option("--scores", scores, "also write per-probe scores CSV");
    sub->add_option("--out", out, "report path, .json or .csv (stdout JSON when omitted)");
    model.add_eta(*sub);
    model.add(*sub);
    sub->callback([this] { run_ = true; });
  }

  int run() const {
    const auto config = model.resolve();
    spv::BenchmarkSpec s;
    if (!spec.empty()) spv::from_json(spv::read_json_file(spec), s);
    spv::ExperimentOptions o;
    o.methods.clear();
    for (const auto& m : split_list(methods)) o.methods.push_back(spv::method_from_string(m));
    if (runs) o.n_runs = *runs;
    o.q_override = q;
    o.threads = threads;
    o.sci_gated = sci_gated;
    o.include_timing = timing;
    o.natural = natural == "labeled" ? spv::NaturalSelector::labeled : spv::NaturalSelector::frontal;
    o.variation = variation == "centroid" ? spv::VariationSource::centroid : spv::VariationSource::natural;

    const auto bundle = spv::generate_benchmark(s);
    const auto report = spv::run_experiment(bundle, config, o);
    if (out.empty())
      std::cout << spv::report_to_json(report).dump(2) << '\n';
    else
      spv::emit_report(report, out, spv::report_format_from_path(out));
    if (!scores.empty()) spv::write_text_file(spv::scores_to_csv(report), scores);

    std::size_t nonconverged = 0;
    for (const auto& m : report.methods) {
      std::cerr << m.method << ": pAUC20 " << m.pauc20.mean << " +- " << m.pauc20.std << ", AUPR " << m.aupr.mean
                << " +- " << m.aupr.std << '\n';
      nonconverged += m.nonconverged;
    }
    if (nonconverged > 0) {
      std::cerr << "warning: " << nonconverged << " probe codes did not converge\n";
      return nonconvergence;
    }
    return ok;
  }

  bool run_ = false;
};

struct MetricsCmd {
  std::string scores, out;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("metrics", "recompute pAUC20 and AUPR from a scores CSV");
    sub->add_option("--scores", scores, "CSV with score and genuine columns")->required();
    sub->add_option("--out", out, "output JSON (stdout when omitted)");
    sub->callback([this] { run_ = true; });
  }

  int run() const {
    const auto j = spv::metrics_to_json(spv::metrics_from_scores(spv::load_scores_csv(scores)));
    if (out.empty())
      std::cout << j.dump(2) << '\n';
    else
      spv::write_json_file(j, out);
    return ok;
  }

  bool run_ = false;
};

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse pose-variational face recognition toolkit"};
  app.require_subcommand(1);
  ExemplarsCmd exemplars;
  BuildCmd build;
  ClassifyCmd classify;
  BenchCmd bench;
  MetricsCmd metrics;
  exemplars.add(app);
  build.add(app);
  classify.add(app);
  bench.add(app);
  metrics.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  try {
    if (exemplars.run_) return exemplars.run();
    if (build.run_) return build.run();
    if (classify.run_) return classify.run();
    if (bench.run_) return bench.run();
    if (metrics.run_) return metrics.run();
  } catch (const spv::config_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const spv::data_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  } catch (const spv::error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  }
  return usage;
}
