#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "spv/error.hpp"
#include "spv/exemplars.hpp"
#include "spv/matrixio.hpp"
#include "spv/solvers.hpp"

namespace spv {

struct ViewRequest {
  int class_id = 0;
  int pose_index = 0; // 1..q, matches the gallery pose-slot
  Pose pose;
};

// Renders a still under a new pose. Implementations are stateless after
// construction and safe for concurrent calls.
class ViewSynthesizer {
public:
  virtual ~ViewSynthesizer() = default;
  virtual std::string id() const = 0;
  virtual Vector synthesize(const Vector& still, const ViewRequest& request) const = 0;
};

class IdentitySynthesizer final : public ViewSynthesizer {
public:
  std::string id() const override { return "identity"; }
  Vector synthesize(const Vector& still, const ViewRequest&) const override { return still; }
};

// synthesize(x, theta) = R(theta) x + w(theta), with
//   R(theta) = exp(warp * sum_a theta_a S_a)   (S_a random skew-symmetric)
//   w(theta) = offset * sum_a sin(theta_a) u_a (u_a random unit vectors)
// and theta in radians. R(0) = I and w(0) = 0. Fully determined by
// (dim, seed, warp, offset).
class ToySynthesizer final : public ViewSynthesizer {
public:
  ToySynthesizer(Index dim, std::uint64_t seed, double warp_strength, double offset_strength)
      : dim_(dim), seed_(seed), warp_(warp_strength), offset_(offset_strength) {
    if (dim < 1) throw config_error("synthesizer dimension must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    // Spectral radius of (M - M')/sqrt(2) is about 2 sqrt(dim) for Gaussian M.
    const double scale = 1.0 / (2.0 * std::sqrt(2.0 * static_cast<double>(dim)));
    for (auto& s : generators_) {
      Matrix m(dim, dim);
      for (Index j = 0; j < dim; ++j)
        for (Index i = 0; i < dim; ++i) m(i, j) = normal(rng);
      s = (m - m.transpose()) * scale;
    }
    for (auto& u : offsets_) {
      u.resize(dim);
      for (Index i = 0; i < dim; ++i) u(i) = normal(rng);
      u.normalize();
    }
  }

  std::string id() const override { return "toy"; }
  Index dim() const noexcept { return dim_; }
  std::uint64_t seed() const noexcept { return seed_; }
  double warp_strength() const noexcept { return warp_; }
  double offset_strength() const noexcept { return offset_; }

  Matrix rotation(const Pose& pose) const {
    const auto a = radians(pose);
    if (warp_ == 0.0 || (a[0] == 0.0 && a[1] == 0.0 && a[2] == 0.0)) return Matrix::Identity(dim_, dim_);
    Matrix gen = warp_ * (a[0] * generators_[0] + a[1] * generators_[1] + a[2] * generators_[2]);
    return gen.exp();
  }

  Vector offset(const Pose& pose) const {
    const auto a = radians(pose);
    Vector w = Vector::Zero(dim_);
    for (std::size_t k = 0; k < 3; ++k) w += offset_ * std::sin(a[k]) * offsets_[k];
    return w;
  }

  Vector apply(const Vector& x, const Pose& pose) const {
    if (x.size() != dim_)
      throw data_error("synthesizer expects dimension " + std::to_string(dim_) + ", got " + std::to_string(x.size()));
    if (pose == Pose{}) return x;
    return rotation(pose) * x + offset(pose);
  }

  Vector synthesize(const Vector& still, const ViewRequest& request) const override {
    return apply(still, request.pose);
  }

private:
  static std::array<double, 3> radians(const Pose& p) {
    constexpr double k = std::numbers::pi / 180.0;
    return {p.pitch * k, p.yaw * k, p.roll * k};
  }

  Index dim_;
  std::uint64_t seed_;
  double warp_;
  double offset_;
  std::array<Matrix, 3> generators_;
  std::array<Vector, 3> offsets_;
};

inline std::shared_ptr<const ToySynthesizer> toy_synthesizer(Index dim, std::uint64_t seed, double warp_strength,
                                                             double offset_strength) {
  return std::make_shared<const ToySynthesizer>(dim, seed, warp_strength, offset_strength);
}

// Precomputed views loaded from a directory holding `<class>_<poseindex>.csv`
// (one d x 1 column each) and a manifest.json:
//   {"dim": d, "views": [{"class": c, "pose_index": p, "pose": [pitch, yaw, roll]}, ...]}
class ImportSynthesizer final : public ViewSynthesizer {
public:
  struct Entry {
    int class_id = 0;
    int pose_index = 0;
    Pose pose;
  };

  explicit ImportSynthesizer(const std::filesystem::path& dir) : dir_(dir) {
    const auto manifest = read_json_file(dir / "manifest.json");
    try {
      dim_ = manifest.at("dim").get<Index>();
      for (const auto& v : manifest.at("views")) {
        Entry e;
        e.class_id = v.at("class").get<int>();
        e.pose_index = v.at("pose_index").get<int>();
        if (v.contains("pose")) {
          const auto& p = v["pose"];
          e.pose = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
        }
        entries_.push_back(e);
      }
    } catch (const nlohmann::json::exception& ex) {
      throw data_error(std::string("malformed synthesizer manifest: ") + ex.what());
    }
    for (const auto& e : entries_) {
      const auto path = dir / file_name(e.class_id, e.pose_index);
      if (!std::filesystem::exists(path)) throw io_error("missing synthetic view file " + path.string());
      const auto m = load_matrix(path, MatrixFormat::csv);
      if (m.count() != 1 || m.dim() != dim_) throw data_error("synthetic view " + path.string() + " must be a " +
                                                              std::to_string(dim_) + " x 1 column");
      views_[{e.class_id, e.pose_index}] = m.data().col(0);
    }
  }

  static std::string file_name(int class_id, int pose_index) {
    return std::to_string(class_id) + "_" + std::to_string(pose_index) + ".csv";
  }

  std::string id() const override { return "import:" + dir_.string(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  Vector lookup(int class_id, int pose_index) const {
    const auto it = views_.find({class_id, pose_index});
    if (it == views_.end())
      throw data_error("no synthetic view for class " + std::to_string(class_id) + " pose " + std::to_string(pose_index));
    return it->second;
  }

  Vector synthesize(const Vector& still, const ViewRequest& request) const override {
    if (still.size() != dim_) throw data_error("imported views have dimension " + std::to_string(dim_));
    return lookup(request.class_id, request.pose_index);
  }

private:
  std::filesystem::path dir_;
  Index dim_ = 0;
  std::vector<Entry> entries_;
  std::map<std::pair<int, int>, Vector> views_;
};

// ---------------------------------------------------------------------------

struct GalleryAtomInfo {
  int class_id = 0;
  int pose_slot = 0;
  Pose pose; // pose the atom depicts (frontal for the still)
};

// k classes x (q + 1) atoms, per-class contiguous: the still then q views.
struct AugmentedGallery {
  Matrix atoms;
  std::vector<GalleryAtomInfo> atom_meta;
  std::vector<int> class_ids; // in gallery order
  int q = 0;

  Index k() const noexcept { return static_cast<Index>(class_ids.size()); }

  std::vector<int> atom_classes() const {
    std::vector<int> c;
    for (const auto& m : atom_meta) c.push_back(m.class_id);
    return c;
  }

  SampleMeta meta() const {
    SampleMeta m;
    std::vector<int> slots;
    for (const auto& a : atom_meta) {
      m.labels.push_back(a.class_id);
      m.poses.push_back(a.pose);
      slots.push_back(a.pose_slot);
    }
    m.blocks = std::move(slots);
    return m;
  }
};

inline AugmentedGallery build_augmented_gallery(const SampleMatrix& stills, const SampleMeta& meta,
                                                std::span<const Pose> view_poses, const ViewSynthesizer& synth) {
  meta.validate(static_cast<std::size_t>(stills.count()));
  std::set<int> seen;
  for (int c : meta.labels) {
    if (c < 0) throw data_error("gallery stills need class ids >= 0");
    if (!seen.insert(c).second) throw data_error("duplicate class id " + std::to_string(c) + " in stills");
  }
  const Index k = stills.count();
  const auto q = static_cast<Index>(view_poses.size());

  AugmentedGallery g;
  g.q = static_cast<int>(q);
  g.class_ids = meta.labels;
  g.atoms.resize(stills.dim(), k * (q + 1));
  for (Index c = 0; c < k; ++c) {
    const int cls = meta.labels[static_cast<std::size_t>(c)];
    const Vector still = stills.column(c);
    const Index base = c * (q + 1);
    g.atoms.col(base) = still;
    g.atom_meta.push_back({cls, 0, Pose{}});
    for (Index p = 0; p < q; ++p) {
      const ViewRequest req{cls, static_cast<int>(p + 1), view_poses[static_cast<std::size_t>(p)]};
      Vector view = synth.synthesize(still, req);
      if (view.size() != stills.dim()) throw data_error("synthesizer returned a view of the wrong dimension");
      g.atoms.col(base + p + 1) = view;
      g.atom_meta.push_back({cls, static_cast<int>(p + 1), req.pose});
    }
  }
  g.atoms = normalize_columns(g.atoms);
  return g;
}

inline AugmentedGallery build_augmented_gallery(const SampleMatrix& stills, const SampleMeta& meta,
                                                const PoseClustering& clustering, const ViewSynthesizer& synth) {
  if (clustering.q() < 1) throw data_error("clustering must have at least one exemplar");
  return build_augmented_gallery(stills, meta, std::span<const Pose>(clustering.exemplar_poses), synth);
}

enum class NaturalSelector { frontal, labeled };
enum class VariationSource { natural, centroid };

struct VariationalDictionary {
  Matrix atoms;
  std::vector<int> block_of_atom; // 1..q, non-decreasing
  std::vector<Index> source_sample;
  std::vector<Pose> exemplar_poses;
  int q = 0;
  int frontal_block = 1;
  std::vector<std::string> warnings;

  Index size() const noexcept { return atoms.cols(); }

  std::vector<Index> block_sizes() const {
    std::vector<Index> s(static_cast<std::size_t>(q), 0);
    for (int b : block_of_atom) ++s[static_cast<std::size_t>(b - 1)];
    return s;
  }

  SampleMeta meta() const {
    SampleMeta m;
    m.labels.assign(block_of_atom.size(), unknown_label);
    m.blocks = block_of_atom;
    return m;
  }
};

// Index of the natural sample of one identity: nearest pose to (0,0,0), or
// the explicitly marked sample. Lowest index wins ties.
inline std::size_t natural_sample(const std::vector<std::size_t>& members, const SampleMeta& meta,
                                  NaturalSelector selector) {
  if (selector == NaturalSelector::labeled) {
    if (!meta.natural) throw data_error("labeled natural selection needs a 'natural' metadata field");
    for (std::size_t i : members)
      if ((*meta.natural)[i]) return i;
    throw data_error("identity " + std::to_string(meta.labels[members.front()]) + " has no labeled natural sample");
  }
  std::size_t best = members.front();
  for (std::size_t i : members)
    if (pose_norm(meta.poses[i]) < pose_norm(meta.poses[best])) best = i;
  return best;
}

// Difference atoms from a generic set: per identity, every other sample minus
// the natural sample (or every sample minus the identity centroid). Atoms are
// grouped into contiguous blocks by the pose cluster of their source sample.
inline VariationalDictionary build_variational_dictionary(const SampleMatrix& generic, const SampleMeta& meta,
                                                          const PoseClustering& clustering,
                                                          NaturalSelector selector = NaturalSelector::frontal,
                                                          VariationSource source = VariationSource::natural,
                                                          bool normalize = true) {
  const auto n = static_cast<std::size_t>(generic.count());
  meta.validate(n);
  if (!meta.has_poses()) throw data_error("generic set needs pose metadata");
  if (clustering.assignment.size() != n) throw data_error("clustering does not cover the generic set");
  if (clustering.q() < 1) throw data_error("clustering must have at least one exemplar");

  VariationalDictionary v;
  v.q = static_cast<int>(clustering.q());
  v.exemplar_poses = clustering.exemplar_poses;
  v.frontal_block = clustering.frontal_block();

  std::map<int, std::vector<std::size_t>> identities;
  for (std::size_t i = 0; i < n; ++i) {
    if (meta.labels[i] == unknown_label) {
      v.warnings.push_back("sample " + std::to_string(i) + " has no identity and was skipped");
      continue;
    }
    identities[meta.labels[i]].push_back(i);
  }

  struct Raw {
    int block;
    std::size_t source;
    Vector atom;
  };
  std::vector<Raw> raw;
  for (const auto& [id, members] : identities) {
    if (members.size() < 2) {
      v.warnings.push_back("identity " + std::to_string(id) + " has a single sample and contributes no variation");
      continue;
    }
    if (source == VariationSource::natural) {
      const std::size_t nat = natural_sample(members, meta, selector);
      for (std::size_t i : members) {
        if (i == nat) continue;
        raw.push_back({clustering.block_of(i), i, generic.column(static_cast<Index>(i)) - generic.column(static_cast<Index>(nat))});
      }
    } else {
      Vector centroid = Vector::Zero(generic.dim());
      for (std::size_t i : members) centroid += generic.column(static_cast<Index>(i));
      centroid /= static_cast<double>(members.size());
      for (std::size_t i : members) raw.push_back({clustering.block_of(i), i, generic.column(static_cast<Index>(i)) - centroid});
    }
  }
  std::erase_if(raw, [&](const Raw& r) {
    if (r.atom.norm() > 0.0) return false;
    v.warnings.push_back("sample " + std::to_string(r.source) + " equals its reference and was skipped");
    return true;
  });
  if (raw.empty()) throw data_error("generic set yields no variational atoms");

  std::stable_sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) { return a.block < b.block; });
  v.atoms.resize(generic.dim(), static_cast<Index>(raw.size()));
  for (std::size_t j = 0; j < raw.size(); ++j) {
    v.atoms.col(static_cast<Index>(j)) = raw[j].atom;
    v.block_of_atom.push_back(raw[j].block);
    v.source_sample.push_back(static_cast<Index>(raw[j].source));
  }
  if (normalize) v.atoms = normalize_columns(v.atoms);
  return v;
}

// Pairing layout for the joint solver. A gallery without synthetic views
// (q = 0) may pair with any variational dictionary through pose-slot 0.
inline PairedLayout make_paired_layout(const AugmentedGallery& g, const VariationalDictionary& v) {
  if (g.q > 0 && g.q != v.q) throw data_error("gallery and variational dictionary come from different clusterings");
  if (g.q > 0) {
    for (std::size_t p = 0; p < v.exemplar_poses.size(); ++p)
      if (!(g.atom_meta[p + 1].pose == v.exemplar_poses[p]))
        throw data_error("gallery views and variational blocks use different exemplar poses");
  }
  PairedLayout layout;
  for (const auto& a : g.atom_meta) layout.gallery.push_back({a.class_id, a.pose_slot});
  layout.block_of_atom = v.block_of_atom;
  layout.frontal_block = v.frontal_block;
  return layout;
}

} // namespace spv
