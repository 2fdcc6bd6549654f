#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spv/dictionaries.hpp"
#include "spv/error.hpp"
#include "spv/matrixio.hpp"
#include "spv/solvers.hpp"

namespace spv {

struct ProbeDecision {
  std::vector<int> class_ids;   // class order of `residuals`
  std::vector<double> residuals; // r_k(y) >= 0
  int predicted = unknown_label;
  double sci = 0.0;
  bool accepted = false;
  bool converged = true;
  SparseCode code;
  std::vector<ActiveSet> active_sets; // spv only

  double min_residual() const { return *std::min_element(residuals.begin(), residuals.end()); }

  // Second smallest minus smallest residual.
  double margin() const {
    if (residuals.size() < 2) return 0.0;
    auto r = residuals;
    std::partial_sort(r.begin(), r.begin() + 2, r.end());
    return r[1] - r[0];
  }
};

// Distinct class ids in order of first appearance.
inline std::vector<int> distinct_classes(std::span<const int> atom_classes) {
  std::vector<int> out;
  for (int c : atom_classes)
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  return out;
}

// Copy of `code` keeping only the entries of class k.
inline Vector class_selector(const Vector& code, std::span<const int> atom_classes, int k) {
  if (static_cast<std::size_t>(code.size()) != atom_classes.size())
    throw data_error("code length does not match atom metadata");
  if (std::find(atom_classes.begin(), atom_classes.end(), k) == atom_classes.end())
    throw data_error("unknown class id " + std::to_string(k));
  Vector out = Vector::Zero(code.size());
  for (Index i = 0; i < code.size(); ++i)
    if (atom_classes[static_cast<std::size_t>(i)] == k) out(i) = code(i);
  return out;
}

// Sparsity concentration index (k max_i ||delta_i(a)||_1 / ||a||_1 - 1) / (k - 1);
// 0 for the zero vector.
inline double sci(const Vector& alpha, std::span<const int> atom_classes, std::size_t k_classes) {
  if (k_classes < 2) throw config_error("SCI needs at least two classes");
  if (static_cast<std::size_t>(alpha.size()) != atom_classes.size())
    throw data_error("code length does not match atom metadata");
  const double total = alpha.lpNorm<1>();
  if (!(total > 0.0)) return 0.0;
  std::map<int, double> mass;
  for (Index i = 0; i < alpha.size(); ++i) mass[atom_classes[static_cast<std::size_t>(i)]] += std::abs(alpha(i));
  double top = 0.0;
  for (const auto& [c, m] : mass) top = std::max(top, m);
  const double k = static_cast<double>(k_classes);
  const double s = (k * top / total - 1.0) / (k - 1.0);
  return std::clamp(s, 0.0, 1.0);
}

inline bool accept(const ProbeDecision& d, double threshold) { return d.sci >= threshold; }

namespace detail {

inline void finish_decision(ProbeDecision& d, std::span<const int> atom_classes, double threshold) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < d.residuals.size(); ++c)
    if (d.residuals[c] < d.residuals[best]) best = c;
  d.predicted = d.class_ids[best];
  d.sci = d.class_ids.size() >= 2 ? sci(d.code.alpha, atom_classes, d.class_ids.size()) : 1.0;
  d.accepted = accept(d, threshold);
}

inline SolverOptions solver_options(const ModelConfig& c) { return {c.tol, c.max_iter}; }

} // namespace detail

// Sparse representation classifier over one labeled dictionary.
class SrcModel {
public:
  SrcModel(Matrix d, std::vector<int> atom_classes, ModelConfig config)
      : d_(std::move(d)), classes_(std::move(atom_classes)), config_(std::move(config)) {
    config_.validate();
    if (d_.cols() == 0) throw data_error("empty gallery dictionary");
    if (static_cast<Index>(classes_.size()) != d_.cols()) throw data_error("atom labels do not match dictionary");
    class_ids_ = distinct_classes(classes_);
    gram_ = d_.transpose() * d_;
  }

  const std::vector<int>& class_ids() const noexcept { return class_ids_; }

  ProbeDecision classify(const Vector& y) const {
    check_dims(d_, y);
    GramProblem p{gram_, d_.transpose() * y, y.squaredNorm()};
    CodingPenalty pen;
    pen.lambda = config_.lambda;
    pen.n_l1 = d_.cols();
    const auto r = minimize_composite(p, pen, detail::solver_options(config_));

    ProbeDecision out;
    out.class_ids = class_ids_;
    out.code.alpha = r.x;
    out.code.objective = (y - d_ * r.x).squaredNorm() + pen.value(r.x);
    out.code.iterations = r.iterations;
    out.code.converged = r.converged;
    out.converged = r.converged;
    for (int k : class_ids_) out.residuals.push_back((y - d_ * class_selector(r.x, classes_, k)).norm());
    detail::finish_decision(out, classes_, config_.sci_threshold);
    return out;
  }

private:
  Matrix d_, gram_;
  std::vector<int> classes_;
  std::vector<int> class_ids_;
  ModelConfig config_;
};

// Extended SRC: gallery plus a shared variational dictionary whose code is
// kept for every class residual.
class EsrcModel {
public:
  EsrcModel(Matrix d, std::vector<int> atom_classes, Matrix v, ModelConfig config)
      : d_(std::move(d)), v_(std::move(v)), classes_(std::move(atom_classes)), config_(std::move(config)) {
    config_.validate();
    if (d_.cols() == 0) throw data_error("empty gallery dictionary");
    if (static_cast<Index>(classes_.size()) != d_.cols()) throw data_error("atom labels do not match dictionary");
    if (v_.cols() > 0 && v_.rows() != d_.rows()) throw data_error("gallery and variational dimensions differ");
    class_ids_ = distinct_classes(classes_);
    a_.resize(d_.rows(), d_.cols() + v_.cols());
    a_ << d_, v_;
    gram_ = a_.transpose() * a_;
  }

  const std::vector<int>& class_ids() const noexcept { return class_ids_; }

  ProbeDecision classify(const Vector& y) const {
    check_dims(a_, y);
    GramProblem p{gram_, a_.transpose() * y, y.squaredNorm()};
    CodingPenalty pen;
    pen.lambda = config_.lambda;
    pen.n_l1 = d_.cols();
    pen.mu = config_.mu;
    pen.tau = config_.tau;
    if (v_.cols() > 0) pen.groups.emplace_back(d_.cols(), a_.cols());
    const auto r = minimize_composite(p, pen, detail::solver_options(config_));

    ProbeDecision out;
    out.class_ids = class_ids_;
    out.code.alpha = r.x.head(d_.cols());
    out.code.beta = r.x.tail(v_.cols());
    out.code.objective = (y - a_ * r.x).squaredNorm() + pen.value(r.x);
    out.code.iterations = r.iterations;
    out.code.converged = r.converged;
    out.converged = r.converged;
    Vector shared = y;
    if (v_.cols() > 0) shared -= v_ * out.code.beta;
    for (int k : class_ids_)
      out.residuals.push_back((shared - d_ * class_selector(out.code.alpha, classes_, k)).norm());
    detail::finish_decision(out, classes_, config_.sci_threshold);
    return out;
  }

private:
  Matrix d_, v_, a_, gram_;
  std::vector<int> classes_;
  std::vector<int> class_ids_;
  ModelConfig config_;
};

// S+V classifier: paired joint-sparsity coding over the augmented gallery and
// the pose-blocked variational dictionary. The variational code is shared but
// masked to the blocks paired with the chosen active sets of each class.
class SpvModel {
public:
  SpvModel(const AugmentedGallery& g, const VariationalDictionary& v, ModelConfig config)
      : dict_(g.atoms, v.atoms, make_paired_layout(g, v)), classes_(g.atom_classes()), class_ids_(g.class_ids),
        config_(std::move(config)), options_(paired_options(config_)) {
    config_.validate();
  }

  const std::vector<int>& class_ids() const noexcept { return class_ids_; }
  const PairedDictionary& dictionary() const noexcept { return dict_; }

  ProbeDecision classify(const Vector& y) const {
    const auto pc = paired_solve(dict_, y, options_);

    ProbeDecision out;
    out.class_ids = class_ids_;
    out.code = pc.code;
    out.converged = pc.code.converged;
    out.active_sets = pc.active_sets;
    const auto& blocks = dict_.layout().block_of_atom;
    for (int k : class_ids_) {
      std::vector<int> active_blocks;
      if (config_.mask_variational_blocks) {
        for (const auto& s : pc.active_sets)
          if (s.class_id == k) active_blocks.push_back(s.block);
      } else {
        for (const auto& s : pc.active_sets) active_blocks.push_back(s.block);
      }
      Vector r = y - dict_.gallery() * class_selector(out.code.alpha, classes_, k);
      if (!active_blocks.empty()) {
        Vector beta_k = Vector::Zero(out.code.beta.size());
        for (Index j = 0; j < beta_k.size(); ++j)
          if (std::find(active_blocks.begin(), active_blocks.end(), blocks[static_cast<std::size_t>(j)]) !=
              active_blocks.end())
            beta_k(j) = out.code.beta(j);
        r -= dict_.variational() * beta_k;
      }
      out.residuals.push_back(r.norm());
    }
    detail::finish_decision(out, classes_, config_.sci_threshold);
    return out;
  }

private:
  PairedDictionary dict_;
  std::vector<int> classes_;
  std::vector<int> class_ids_;
  ModelConfig config_;
  PairedOptions options_;
};

// Nearest-neighbour template matching: r_k = min distance to an atom of class
// k. There is no code, so every decision is accepted with SCI 1.
class NnModel {
public:
  NnModel(Matrix d, std::vector<int> atom_classes) : d_(std::move(d)), classes_(std::move(atom_classes)) {
    if (d_.cols() == 0) throw data_error("empty gallery dictionary");
    if (static_cast<Index>(classes_.size()) != d_.cols()) throw data_error("atom labels do not match dictionary");
    class_ids_ = distinct_classes(classes_);
  }

  const std::vector<int>& class_ids() const noexcept { return class_ids_; }

  ProbeDecision classify(const Vector& y) const {
    check_dims(d_, y);
    ProbeDecision out;
    out.class_ids = class_ids_;
    out.residuals.assign(class_ids_.size(), std::numeric_limits<double>::infinity());
    for (Index j = 0; j < d_.cols(); ++j) {
      const auto c = static_cast<std::size_t>(
          std::find(class_ids_.begin(), class_ids_.end(), classes_[static_cast<std::size_t>(j)]) - class_ids_.begin());
      out.residuals[c] = std::min(out.residuals[c], (y - d_.col(j)).norm());
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < out.residuals.size(); ++c)
      if (out.residuals[c] < out.residuals[best]) best = c;
    out.predicted = class_ids_[best];
    out.sci = 1.0;
    out.accepted = true;
    return out;
  }

private:
  Matrix d_;
  std::vector<int> classes_;
  std::vector<int> class_ids_;
};

inline ProbeDecision src_classify(const Matrix& d, std::span<const int> atom_classes, const Vector& y,
                                  const ModelConfig& config) {
  return SrcModel(d, {atom_classes.begin(), atom_classes.end()}, config).classify(y);
}

inline ProbeDecision esrc_classify(const Matrix& d, std::span<const int> atom_classes, const Matrix& v,
                                   const Vector& y, const ModelConfig& config) {
  return EsrcModel(d, {atom_classes.begin(), atom_classes.end()}, v, config).classify(y);
}

inline ProbeDecision spv_classify(const AugmentedGallery& g, const VariationalDictionary& v, const Vector& y,
                                  const ModelConfig& config) {
  return SpvModel(g, v, config).classify(y);
}

} // namespace spv
