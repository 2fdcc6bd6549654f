#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "spv/error.hpp"
#include "spv/matrixio.hpp"
#include "spv/prox.hpp"

namespace spv {

// Square matrix of pairwise pose dissimilarities: zero diagonal, non-negative,
// symmetric.
class DissimilarityMatrix {
public:
  DissimilarityMatrix() = default;

  explicit DissimilarityMatrix(Matrix d) : d_(std::move(d)) {
    if (d_.rows() != d_.cols() || d_.rows() < 1) throw data_error("dissimilarity matrix must be square and non-empty");
    for (Index j = 0; j < d_.cols(); ++j) {
      if (d_(j, j) != 0.0) throw data_error("dissimilarity matrix must have a zero diagonal");
      for (Index i = 0; i < d_.rows(); ++i) {
        if (!std::isfinite(d_(i, j)) || d_(i, j) < 0.0) throw data_error("dissimilarities must be finite and >= 0");
        if (std::abs(d_(i, j) - d_(j, i)) > 1e-12 * (1.0 + std::abs(d_(i, j))))
          throw data_error("dissimilarity matrix must be symmetric");
      }
    }
  }

  const Matrix& data() const noexcept { return d_; }
  Index size() const noexcept { return d_.rows(); }
  double operator()(Index i, Index j) const { return d_(i, j); }

private:
  Matrix d_;
};

inline DissimilarityMatrix pose_dissimilarities(std::span<const Pose> poses) {
  if (poses.empty()) throw data_error("missing pose metadata");
  const auto n = static_cast<Index>(poses.size());
  Matrix d = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = pose_distance(poses[i], poses[j]);
  return DissimilarityMatrix(std::move(d));
}

inline DissimilarityMatrix pose_dissimilarities(const SampleMeta& meta) {
  if (!meta.has_poses()) throw data_error("missing pose metadata");
  return pose_dissimilarities(std::span<const Pose>(meta.poses));
}

// argmin_i sum_j d_ij, lowest index on ties.
inline Index medoid_index(const DissimilarityMatrix& D) {
  const Vector sums = D.data().rowwise().sum();
  Index best = 0;
  for (Index i = 1; i < sums.size(); ++i)
    if (sums(i) < sums(best)) best = i;
  return best;
}

inline double row_penalty(const Matrix& z, RowNorm norm) {
  double s = 0.0;
  for (Index i = 0; i < z.rows(); ++i)
    s += norm == RowNorm::l2 ? z.row(i).norm() : z.row(i).cwiseAbs().maxCoeff();
  return s;
}

// sum_ij d_ij z_ij + eta * sum_i ||z_i||_q
inline double selection_objective(const DissimilarityMatrix& D, const Matrix& z, double eta, RowNorm norm) {
  return D.data().cwiseProduct(z).sum() + eta * row_penalty(z, norm);
}

struct SelectionOptions {
  double eta = 1.0;
  RowNorm norm = RowNorm::linf;
  double tol = 1e-6;     // relative objective change between accepted steps
  int max_iter = 5000;   // outer proximal steps
  int inner_max_iter = 20000;
  double inner_tol = 1e-11;
};

struct ExemplarSolution {
  Matrix z; // z(i, j): probability that sample i represents sample j
  double objective = 0.0;
  std::vector<double> history; // objective after every accepted step
  int iterations = 0;
  bool converged = false;
};

// Smallest eta at which the single-medoid assignment (one nonzero row) is
// certified optimal by the first-order conditions of the selection problem.
//  q = 2:   max_i sqrt(N)/2 * ||d_i - d_m||^2 / 1'(d_i - d_m)
//  q = inf: N * max_i ||d_i - d_m||_inf
inline double eta_max(const DissimilarityMatrix& D, RowNorm norm) {
  const Index n = D.size();
  if (n == 1) return 1.0;
  const Index m = medoid_index(D);
  const Matrix& d = D.data();
  double bound = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (i == m) continue;
    const Vector diff = (d.row(i) - d.row(m)).transpose();
    if (norm == RowNorm::l2) {
      const double denom = diff.sum();
      if (denom <= 0.0) continue; // identical or tied row: never displaces the medoid
      bound = std::max(bound, std::sqrt(static_cast<double>(n)) / 2.0 * diff.squaredNorm() / denom);
    } else {
      bound = std::max(bound, static_cast<double>(n) * diff.cwiseAbs().maxCoeff());
    }
  }
  return bound > 0.0 ? bound : 1.0;
}

namespace detail {

inline void prox_rows(Matrix& x, double t, RowNorm norm) {
  for (Index i = 0; i < x.rows(); ++i) {
    if (norm == RowNorm::l2) {
      const double r = x.row(i).norm();
      if (r <= t) x.row(i).setZero();
      else x.row(i) *= 1.0 - t / r;
    } else {
      const Vector row = x.row(i).transpose();
      x.row(i) = prox::prox_linf(row, t).transpose();
    }
  }
}

inline void project_columns(Matrix& x, std::vector<double>& scratch) {
  for (Index j = 0; j < x.cols(); ++j) prox::project_simplex_inplace(x.col(j).data(), x.rows(), 1.0, scratch);
}

} // namespace detail

// Row-sparsity regularized trace minimization
//   min sum_ij d_ij z_ij + eta sum_i ||z_i||_q   s.t. z >= 0, columns sum to 1.
//
// Proximal-point iterations Z+ = prox_{t F}(Z) on the full objective; the
// linear term has zero curvature so every exact step is a descent step. The
// prox subproblem (row-norm shrinkage plus column-simplex constraints) is
// solved by ADMM, warm started across outer steps. A step is accepted only if
// the objective does not increase, so the accepted iterates are monotone and
// every accepted iterate is exactly feasible (columns are simplex
// projections). Starts from the single-medoid assignment.
inline ExemplarSolution select_exemplars(const DissimilarityMatrix& D, const SelectionOptions& opt) {
  if (!(opt.eta > 0.0) || !std::isfinite(opt.eta)) throw config_error("eta must be a positive finite value");
  const Index n = D.size();
  const Matrix& d = D.data();

  ExemplarSolution sol;
  sol.z = Matrix::Zero(n, n);
  sol.z.row(medoid_index(D)).setOnes();
  sol.objective = selection_objective(D, sol.z, opt.eta, opt.norm);
  sol.history.push_back(sol.objective);
  if (n == 1) {
    sol.converged = true;
    return sol;
  }

  const double dmax = d.maxCoeff();
  const double step = dmax > 0.0 ? 10.0 * static_cast<double>(n) / dmax : 1.0;
  const double rho = 30.0;
  const double shrink = step * opt.eta / (1.0 + rho);

  Matrix w = sol.z;
  Matrix u = Matrix::Zero(n, n);
  Matrix zi(n, n);
  Matrix w_next(n, n);
  std::vector<double> scratch;

  for (int it = 0; it < opt.max_iter; ++it) {
    const Matrix anchor = sol.z - step * d;
    for (int k = 0; k < opt.inner_max_iter; ++k) {
      zi = (anchor + rho * (w - u)) / (1.0 + rho);
      detail::prox_rows(zi, shrink, opt.norm);
      w_next = zi + u;
      detail::project_columns(w_next, scratch);
      u += zi - w_next;
      const double primal = (zi - w_next).cwiseAbs().maxCoeff();
      const double dual = (w_next - w).cwiseAbs().maxCoeff();
      w.swap(w_next);
      if (primal < opt.inner_tol && dual < opt.inner_tol) break;
    }
    const double f = selection_objective(D, w, opt.eta, opt.norm);
    ++sol.iterations;
    if (f > sol.objective) {
      // Inexact subproblem could not improve further: stationary within tolerance.
      sol.converged = true;
      break;
    }
    const double rel = (sol.objective - f) / std::max(1.0, std::abs(sol.objective));
    sol.z = w;
    sol.objective = f;
    sol.history.push_back(f);
    if (rel < opt.tol) {
      sol.converged = true;
      break;
    }
  }
  return sol;
}

struct PoseClustering {
  std::vector<Index> exemplar_indices;
  std::vector<Pose> exemplar_poses;
  std::vector<Index> assignment; // exemplar sample index for every sample

  std::size_t q() const noexcept { return exemplar_indices.size(); }

  // 1-based block / pose-slot id of the cluster sample j belongs to.
  int block_of(std::size_t j) const {
    const auto it = std::find(exemplar_indices.begin(), exemplar_indices.end(), assignment.at(j));
    return static_cast<int>(it - exemplar_indices.begin()) + 1;
  }

  // Block whose exemplar pose is nearest to frontal (0,0,0); lowest id on ties.
  int frontal_block() const {
    int best = 1;
    for (std::size_t p = 1; p < exemplar_poses.size(); ++p)
      if (pose_norm(exemplar_poses[p]) < pose_norm(exemplar_poses[static_cast<std::size_t>(best - 1)]))
        best = static_cast<int>(p) + 1;
    return best;
  }
};

inline double default_row_threshold(const Matrix& z) {
  return 1e-3 * z.cwiseAbs().rowwise().maxCoeff().maxCoeff();
}

// Exemplars are the rows of Z with ||z_i||_inf above the threshold; every
// sample joins the exemplar with the smallest dissimilarity (lowest index on
// ties) and every exemplar represents itself.
inline PoseClustering extract_clustering(const Matrix& z, const DissimilarityMatrix& D, std::span<const Pose> poses,
                                         std::optional<double> row_threshold = {}) {
  const Index n = D.size();
  if (z.rows() != n || z.cols() != n) throw data_error("assignment matrix size does not match dissimilarities");
  if (!poses.empty() && static_cast<Index>(poses.size()) != n) throw data_error("pose count does not match");
  const double thr = row_threshold.value_or(default_row_threshold(z));

  PoseClustering c;
  for (Index i = 0; i < n; ++i)
    if (z.row(i).cwiseAbs().maxCoeff() > thr) c.exemplar_indices.push_back(i);
  if (c.exemplar_indices.empty()) throw data_error("degenerate assignment matrix: no row above threshold");

  for (Index e : c.exemplar_indices) c.exemplar_poses.push_back(poses.empty() ? Pose{} : poses[static_cast<std::size_t>(e)]);

  c.assignment.resize(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    Index best = c.exemplar_indices.front();
    for (Index e : c.exemplar_indices) {
      if (e == j) {
        best = e;
        break;
      }
      if (D(e, j) < D(best, j)) best = e;
    }
    c.assignment[static_cast<std::size_t>(j)] = best;
  }
  return c;
}

inline PoseClustering extract_clustering(const Matrix& z, const DissimilarityMatrix& D, const SampleMeta& meta,
                                         std::optional<double> row_threshold = {}) {
  return extract_clustering(z, D, std::span<const Pose>(meta.poses), row_threshold);
}

struct ClusteringResult {
  PoseClustering clustering;
  double eta = 0.0;
  bool converged = true;
};

// Runs selection at eta (absolute, or relative to eta_max when `relative`).
inline ClusteringResult cluster_poses(std::span<const Pose> poses, double eta, bool relative, RowNorm norm,
                                      double tol = 1e-6, int max_iter = 5000) {
  const auto D = pose_dissimilarities(poses);
  SelectionOptions opt;
  opt.eta = relative ? eta * eta_max(D, norm) : eta;
  opt.norm = norm;
  opt.tol = tol;
  opt.max_iter = max_iter;
  const auto sol = select_exemplars(D, opt);
  return {extract_clustering(sol.z, D, poses), opt.eta, sol.converged};
}

// Clustering with exactly q exemplars: bisects eta along the selection path
// (the exemplar count is non-increasing in eta). When the path jumps over q,
// the solution with the smallest count above q keeps its q heaviest rows.
inline ClusteringResult cluster_poses_with_count(std::span<const Pose> poses, std::size_t q, RowNorm norm,
                                                 double tol = 1e-6, int max_iter = 5000) {
  if (q < 1) throw config_error("cluster count must be >= 1");
  const auto D = pose_dissimilarities(poses);
  const auto n = static_cast<std::size_t>(D.size());
  if (q > n) throw config_error("cluster count exceeds the number of samples");

  SelectionOptions opt;
  opt.norm = norm;
  opt.tol = tol;
  opt.max_iter = max_iter;
  auto run = [&](double eta) {
    opt.eta = eta;
    auto sol = select_exemplars(D, opt);
    auto c = extract_clustering(sol.z, D, poses);
    return std::pair{std::move(sol), std::move(c)};
  };

  double hi = eta_max(D, norm); // count 1
  if (q == 1) {
    auto [sol, c] = run(hi);
    return {std::move(c), hi, sol.converged};
  }
  double lo = hi * 1e-9;
  auto below = run(lo);
  if (below.second.q() == q) return {std::move(below.second), lo, below.first.converged};
  double below_eta = lo;
  for (int it = 0; it < 40 && below.second.q() > q; ++it) {
    const double mid = std::sqrt(lo * hi);
    auto r = run(mid);
    if (r.second.q() == q) return {std::move(r.second), mid, r.first.converged};
    if (r.second.q() > q) {
      lo = mid;
      below = std::move(r);
      below_eta = mid;
    } else {
      hi = mid;
    }
  }
  if (below.second.q() < q) throw data_error("requested cluster count is not reachable");

  // Keep the q rows with the largest l_inf norm.
  const Matrix& z = below.first.z;
  std::vector<Index> rows(below.second.exemplar_indices);
  std::stable_sort(rows.begin(), rows.end(), [&](Index a, Index b) {
    return z.row(a).cwiseAbs().maxCoeff() > z.row(b).cwiseAbs().maxCoeff();
  });
  rows.resize(q);
  std::sort(rows.begin(), rows.end());
  Matrix kept = Matrix::Zero(z.rows(), z.cols());
  for (Index r : rows) kept.row(r).setOnes();
  return {extract_clustering(kept, D, poses, 0.5), below_eta, below.first.converged};
}

} // namespace spv
