#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include <json.hpp>

#include "spv/dictionaries.hpp"
#include "spv/error.hpp"
#include "spv/matrixio.hpp"

namespace spv {

// Toy surveillance benchmark. Every sample of identity x at pose p is
//   synth(x, p) + sum_j c_j L_j + noise
// where synth is a ToySynthesizer (pose-dependent rotation plus offset), L_j
// are illumination directions shared by all identities and c_j ~ N(0, s^2).
struct BenchmarkSpec {
  int n_classes = 30;
  int n_watchlist = 5;
  int n_generic_ids = 10;
  int samples_per_generic_id = 6;
  int q_true = 4;
  int feature_dim = 64;
  double noise_sigma = 0.02;
  double warp_strength = 1.0;
  double offset_strength = 0.2;
  int n_illumination = 3;
  double illumination_strength = 3.0;
  double max_yaw = 60.0;   // pose modes spread evenly over [-max_yaw, max_yaw]
  double pose_jitter = 3.0; // per-angle Gaussian jitter around a mode (degrees)
  int n_probe_per_id = 20;
  double impostor_ratio = 0.5;
  std::uint64_t seed = 7;

  void validate() const {
    if (n_classes < 1 || n_watchlist < 1 || n_generic_ids < 1 || samples_per_generic_id < 1 || q_true < 1 ||
        feature_dim < 1 || n_probe_per_id < 1)
      throw config_error("benchmark counts must be >= 1");
    if (n_watchlist > n_classes) throw config_error("n_watchlist exceeds n_classes");
    if (n_illumination < 0) throw config_error("n_illumination must be >= 0");
    if (!(noise_sigma >= 0.0) || !(warp_strength >= 0.0) || !(offset_strength >= 0.0) ||
        !(illumination_strength >= 0.0) || !(pose_jitter >= 0.0))
      throw config_error("benchmark strengths must be >= 0");
    if (!(max_yaw >= 0.0 && max_yaw <= 90.0)) throw config_error("max_yaw must lie in [0, 90]");
    if (!(impostor_ratio >= 0.0)) throw config_error("impostor_ratio must be >= 0");
    const double impostors = std::round(impostor_ratio * n_watchlist * n_probe_per_id);
    if (impostors > static_cast<double>((n_classes - n_watchlist) * n_probe_per_id))
      throw config_error("not enough non-watch-list probes for the requested impostor_ratio");
  }

  std::size_t genuine_per_run() const { return static_cast<std::size_t>(n_watchlist * n_probe_per_id); }
  std::size_t impostors_per_run() const {
    return static_cast<std::size_t>(std::round(impostor_ratio * static_cast<double>(genuine_per_run())));
  }
};

inline void to_json(nlohmann::json& j, const BenchmarkSpec& s) {
  j = nlohmann::json{{"n_classes", s.n_classes},
                     {"n_watchlist", s.n_watchlist},
                     {"n_generic_ids", s.n_generic_ids},
                     {"samples_per_generic_id", s.samples_per_generic_id},
                     {"q_true", s.q_true},
                     {"feature_dim", s.feature_dim},
                     {"noise_sigma", s.noise_sigma},
                     {"warp_strength", s.warp_strength},
                     {"offset_strength", s.offset_strength},
                     {"n_illumination", s.n_illumination},
                     {"illumination_strength", s.illumination_strength},
                     {"max_yaw", s.max_yaw},
                     {"pose_jitter", s.pose_jitter},
                     {"n_probe_per_id", s.n_probe_per_id},
                     {"impostor_ratio", s.impostor_ratio},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, BenchmarkSpec& s) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  try {
    get("n_classes", s.n_classes);
    get("n_watchlist", s.n_watchlist);
    get("n_generic_ids", s.n_generic_ids);
    get("samples_per_generic_id", s.samples_per_generic_id);
    get("q_true", s.q_true);
    get("feature_dim", s.feature_dim);
    get("noise_sigma", s.noise_sigma);
    get("warp_strength", s.warp_strength);
    get("offset_strength", s.offset_strength);
    get("n_illumination", s.n_illumination);
    get("illumination_strength", s.illumination_strength);
    get("max_yaw", s.max_yaw);
    get("pose_jitter", s.pose_jitter);
    get("n_probe_per_id", s.n_probe_per_id);
    get("impostor_ratio", s.impostor_ratio);
    get("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("malformed benchmark spec: ") + e.what());
  }
}

struct BenchmarkBundle {
  BenchmarkSpec spec;
  SampleMatrix stills;      // one frontal still per class, column c = class c
  SampleMeta stills_meta;
  SampleMatrix generic;     // non-target identities, labels generic_label_base + g
  SampleMeta generic_meta;
  SampleMatrix probes;      // n_probe_per_id per class, grouped by class
  SampleMeta probes_meta;
  std::vector<Pose> modes;
  std::shared_ptr<const ToySynthesizer> synth;

  static constexpr int generic_label_base = 100000;
};

// Yaw-spread pose modes; a single mode is frontal.
inline std::vector<Pose> benchmark_modes(const BenchmarkSpec& s) {
  std::vector<Pose> modes;
  for (int p = 0; p < s.q_true; ++p) {
    const double yaw = s.q_true == 1 ? 0.0 : -s.max_yaw + 2.0 * s.max_yaw * p / (s.q_true - 1);
    modes.push_back({0.0, yaw, 0.0});
  }
  return modes;
}

inline BenchmarkBundle generate_benchmark(const BenchmarkSpec& spec) {
  spec.validate();
  BenchmarkBundle b;
  b.spec = spec;
  b.modes = benchmark_modes(spec);
  const Index d = spec.feature_dim;

  // Independent streams so that changing one count does not reshuffle the rest.
  std::seed_seq seq{spec.seed, std::uint64_t{0x5eed}};
  std::vector<std::uint64_t> seeds(6);
  seq.generate(seeds.begin(), seeds.end());
  b.synth = toy_synthesizer(d, seeds[0], spec.warp_strength, spec.offset_strength);
  std::mt19937_64 id_rng(seeds[1]), illum_rng(seeds[2]), pose_rng(seeds[3]), noise_rng(seeds[4]);
  auto normal = [](std::mt19937_64& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); };

  auto unit = [&](std::mt19937_64& rng) {
    Vector v(d);
    for (Index i = 0; i < d; ++i) v(i) = normal(rng);
    return Vector(v.normalized());
  };
  std::vector<Vector> illum;
  for (int j = 0; j < spec.n_illumination; ++j) illum.push_back(unit(illum_rng));

  auto clamp_angle = [](double a) { return std::clamp(a, -180.0, 180.0); };
  auto draw_pose = [&](const Pose& mode) {
    return Pose{clamp_angle(mode.pitch + spec.pose_jitter * normal(pose_rng)),
                clamp_angle(mode.yaw + spec.pose_jitter * normal(pose_rng)),
                clamp_angle(mode.roll + spec.pose_jitter * normal(pose_rng))};
  };
  std::uniform_int_distribution<int> pick_mode(0, spec.q_true - 1);

  auto observe = [&](const Vector& identity, const Pose& pose) {
    Vector x = b.synth->apply(identity, pose);
    for (const auto& l : illum) x += spec.illumination_strength * normal(illum_rng) * l;
    for (Index i = 0; i < d; ++i) x(i) += spec.noise_sigma * normal(noise_rng);
    return x;
  };

  std::vector<Vector> classes;
  for (int c = 0; c < spec.n_classes; ++c) classes.push_back(unit(id_rng));
  std::vector<Vector> generic_ids;
  for (int g = 0; g < spec.n_generic_ids; ++g) generic_ids.push_back(unit(id_rng));

  Matrix stills(d, spec.n_classes);
  for (int c = 0; c < spec.n_classes; ++c) {
    stills.col(c) = classes[static_cast<std::size_t>(c)];
    b.stills_meta.labels.push_back(c);
    b.stills_meta.poses.push_back(Pose{});
  }
  b.stills = SampleMatrix(stills);

  const int ng = spec.n_generic_ids * spec.samples_per_generic_id;
  Matrix generic(d, ng);
  for (int g = 0, col = 0; g < spec.n_generic_ids; ++g) {
    for (int s = 0; s < spec.samples_per_generic_id; ++s, ++col) {
      const Pose pose = draw_pose(b.modes[static_cast<std::size_t>(pick_mode(pose_rng))]);
      generic.col(col) = observe(generic_ids[static_cast<std::size_t>(g)], pose);
      b.generic_meta.labels.push_back(BenchmarkBundle::generic_label_base + g);
      b.generic_meta.poses.push_back(pose);
    }
  }
  b.generic = SampleMatrix(generic);

  const int np = spec.n_classes * spec.n_probe_per_id;
  Matrix probes(d, np);
  for (int c = 0, col = 0; c < spec.n_classes; ++c) {
    for (int s = 0; s < spec.n_probe_per_id; ++s, ++col) {
      const Pose pose = draw_pose(b.modes[static_cast<std::size_t>(pick_mode(pose_rng))]);
      probes.col(col) = observe(classes[static_cast<std::size_t>(c)], pose);
      b.probes_meta.labels.push_back(c);
      b.probes_meta.poses.push_back(pose);
    }
  }
  b.probes = SampleMatrix(probes);
  return b;
}

// splitmix64 finalizer; per-run seeds are mix(master + run + 1).
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t run_seed(std::uint64_t master, int run) {
  return mix_seed(master + static_cast<std::uint64_t>(run) + 1);
}

struct Split {
  std::vector<int> watchlist;      // sorted class ids
  std::vector<Index> probes;       // sorted probe columns
  std::vector<bool> genuine;       // per entry of `probes`
};

// Random watch-list plus all of its probes (genuine) and
// round(impostor_ratio * genuine) probes of the remaining classes.
inline Split make_split(const BenchmarkBundle& b, std::uint64_t seed) {
  const auto& s = b.spec;
  std::mt19937_64 rng(seed);
  std::vector<int> classes(static_cast<std::size_t>(s.n_classes));
  std::iota(classes.begin(), classes.end(), 0);
  std::shuffle(classes.begin(), classes.end(), rng);
  Split split;
  split.watchlist.assign(classes.begin(), classes.begin() + s.n_watchlist);
  std::sort(split.watchlist.begin(), split.watchlist.end());

  std::vector<Index> genuine, impostor;
  for (Index j = 0; j < b.probes.count(); ++j) {
    const int c = b.probes_meta.labels[static_cast<std::size_t>(j)];
    (std::binary_search(split.watchlist.begin(), split.watchlist.end(), c) ? genuine : impostor).push_back(j);
  }
  const std::size_t n_imp = s.impostors_per_run();
  if (n_imp > impostor.size()) throw data_error("insufficient impostor probes");
  std::shuffle(impostor.begin(), impostor.end(), rng);
  impostor.resize(n_imp);

  for (Index j : genuine) split.probes.push_back(j);
  for (Index j : impostor) split.probes.push_back(j);
  std::sort(split.probes.begin(), split.probes.end());
  for (Index j : split.probes)
    split.genuine.push_back(std::binary_search(split.watchlist.begin(), split.watchlist.end(),
                                               b.probes_meta.labels[static_cast<std::size_t>(j)]));
  return split;
}

} // namespace spv
