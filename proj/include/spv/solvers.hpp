#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spv/error.hpp"
#include "spv/matrixio.hpp"
#include "spv/prox.hpp"

namespace spv {

// tau*||x||_1 + (1 - tau)*||x||_2   (plain l2 norm, not squared)
inline double tau_norm(const Vector& x, double tau) {
  return tau * x.lpNorm<1>() + (1.0 - tau) * x.norm();
}

struct SolverOptions {
  double tol = 1e-6;   // first-order stationarity
  int max_iter = 1000;
};

// Penalty lambda*||x[0, n_l1)||_1 + mu * sum_g ||x[g]||_tau over the trailing
// groups. Groups are contiguous, disjoint and start at n_l1.
struct CodingPenalty {
  double lambda = 0.0;
  Index n_l1 = 0;
  double mu = 0.0;
  double tau = 1.0;
  std::vector<std::pair<Index, Index>> groups; // [begin, end)

  double value(const Vector& x) const {
    double v = lambda * x.head(n_l1).lpNorm<1>();
    for (auto [b, e] : groups) v += mu * tau_norm(x.segment(b, e - b), tau);
    return v;
  }

  // In place prox of step * penalty.
  void prox(Vector& x, double step) const {
    prox::soft_threshold_inplace(x.head(n_l1), step * lambda);
    for (auto [b, e] : groups)
      prox::sparse_group_prox_inplace(x.segment(b, e - b), step * mu * tau, step * mu * (1.0 - tau));
  }

  // Distance of -grad from the subdifferential at x: max over l1 coordinates
  // and over groups (l2 distance within a group).
  double stationarity(const Vector& x, const Vector& grad) const {
    double worst = 0.0;
    for (Index i = 0; i < n_l1; ++i) {
      const double g = grad(i);
      const double r = x(i) != 0.0 ? std::abs(g + lambda * (x(i) > 0 ? 1.0 : -1.0))
                                   : std::max(std::abs(g) - lambda, 0.0);
      worst = std::max(worst, r);
    }
    for (auto [b, e] : groups) {
      const auto xs = x.segment(b, e - b);
      const auto gs = grad.segment(b, e - b);
      const double l1w = mu * tau;
      const double l2w = mu * (1.0 - tau);
      const double nx = xs.norm();
      double dist2 = 0.0;
      if (nx > 0.0) {
        for (Index i = 0; i < xs.size(); ++i) {
          const double base = gs(i) + l2w * xs(i) / nx;
          const double r = xs(i) != 0.0 ? std::abs(base + l1w * (xs(i) > 0 ? 1.0 : -1.0))
                                        : std::max(std::abs(base) - l1w, 0.0);
          dist2 += r * r;
        }
        worst = std::max(worst, std::sqrt(dist2));
      } else {
        // -g must lie in box(l1w) + ball(l2w).
        for (Index i = 0; i < xs.size(); ++i) {
          const double r = std::max(std::abs(gs(i)) - l1w, 0.0);
          dist2 += r * r;
        }
        worst = std::max(worst, std::max(std::sqrt(dist2) - l2w, 0.0));
      }
    }
    return worst;
  }
};

struct CodeResult {
  Vector x;
  double objective = 0.0;
  double stationarity = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> history; // filled on request
};

// Quadratic data term ||y - A x||^2 given in Gram form: yy - 2 b'x + x'G x.
struct GramProblem {
  Matrix gram;   // A'A
  Vector aty;    // A'y
  double yy = 0; // y'y
};

inline GramProblem make_gram_problem(const Matrix& a, const Vector& y) {
  if (a.rows() != y.size()) throw data_error("dictionary rows do not match probe dimension");
  return {a.transpose() * a, a.transpose() * y, y.squaredNorm()};
}

namespace detail {

inline double power_iteration_max_eig(const Matrix& g) {
  if (g.rows() == 0) return 0.0;
  Vector v = Vector::Ones(g.rows()) / std::sqrt(static_cast<double>(g.rows()));
  double est = 0.0;
  for (int k = 0; k < 50; ++k) {
    Vector w = g * v;
    const double n = w.norm();
    if (n == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / n;
    if (std::abs(next - est) <= 1e-6 * std::abs(next)) {
      est = next;
      break;
    }
    est = next;
  }
  return est;
}

// Active-set refinement in the spirit of feature-sign search. Each outer
// step runs damped Newton on the current support (where the penalty is
// smooth once signs are fixed; coordinates reaching zero leave), then lets
// the zero coordinates and zero groups that violate optimality enter along
// their steepest descent direction with an exact line search. Objective
// values never increase.
class ActiveSetRefiner {
public:
  ActiveSetRefiner(const GramProblem& p, const CodingPenalty& pen)
      : p_(p), pen_(pen), l1w_(pen.mu * pen.tau), l2w_(pen.mu * (1.0 - pen.tau)),
        group_(static_cast<std::size_t>(p.gram.rows()), -1) {
    for (std::size_t g = 0; g < pen.groups.size(); ++g)
      for (Index i = pen.groups[g].first; i < pen.groups[g].second; ++i) group_[static_cast<std::size_t>(i)] = static_cast<int>(g);
  }

  void run(Vector& x, double tol, int max_outer) const {
    double f = objective(x);
    for (int outer = 0; outer < max_outer; ++outer) {
      if (!newton(x, f)) return;
      const Vector grad = 2.0 * (p_.gram * x - p_.aty);
      if (pen_.stationarity(x, grad) <= tol) return;
      if (!enter(x, f, grad)) return;
    }
  }

private:
  double weight(Index i) const { return group_[static_cast<std::size_t>(i)] < 0 ? pen_.lambda : l1w_; }

  double objective(const Vector& x) const {
    std::vector<Index> s;
    for (Index i = 0; i < x.size(); ++i)
      if (x(i) != 0.0) s.push_back(i);
    return on_support(s, x(s));
  }

  // Objective change from xs to xt, both supported on s.
  double change(const std::vector<Index>& s, const Vector& xs, const Vector& xt) const {
    const Vector d = xt - xs;
    return d.dot(p_.gram(s, s) * (xs + xt)) - 2.0 * p_.aty(s).dot(d) + penalty_on(s, xt) - penalty_on(s, xs);
  }

  double penalty_on(const std::vector<Index>& s, const Vector& xs) const {
    double f = 0.0;
    std::vector<double> gsq(pen_.groups.size(), 0.0);
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double v = xs(static_cast<Index>(k));
      const int g = group_[static_cast<std::size_t>(s[k])];
      f += weight(s[k]) * std::abs(v);
      if (g >= 0) gsq[static_cast<std::size_t>(g)] += v * v;
    }
    for (double q : gsq) f += l2w_ * std::sqrt(q);
    return f;
  }

  // Objective for x supported on s with values xs.
  double on_support(const std::vector<Index>& s, const Vector& xs) const {
    return p_.yy - 2.0 * p_.aty(s).dot(xs) + xs.dot(p_.gram(s, s) * xs) + penalty_on(s, xs);
  }

  bool newton(Vector& x, double& f) const {
    for (int it = 0; it < 200; ++it) {
      std::vector<Index> s;
      for (Index i = 0; i < x.size(); ++i)
        if (x(i) != 0.0) s.push_back(i);
      if (s.empty()) return true;
      const auto ns = static_cast<Index>(s.size());
      const Vector xs = x(s);
      const Matrix gss = p_.gram(s, s);

      std::vector<double> gnorm(pen_.groups.size(), 0.0);
      for (Index k = 0; k < ns; ++k) {
        const int g = group_[static_cast<std::size_t>(s[static_cast<std::size_t>(k)])];
        if (g >= 0) gnorm[static_cast<std::size_t>(g)] += xs(k) * xs(k);
      }
      for (double& g : gnorm) g = std::sqrt(g);

      Vector grad = 2.0 * (gss * xs - p_.aty(s));
      Matrix hess = 2.0 * gss;
      for (Index a = 0; a < ns; ++a) {
        const int g = group_[static_cast<std::size_t>(s[static_cast<std::size_t>(a)])];
        grad(a) += weight(s[static_cast<std::size_t>(a)]) * (xs(a) > 0 ? 1.0 : -1.0);
        if (g < 0 || l2w_ == 0.0) continue;
        const double n = gnorm[static_cast<std::size_t>(g)];
        grad(a) += l2w_ * xs(a) / n;
        for (Index b = 0; b < ns; ++b)
          if (group_[static_cast<std::size_t>(s[static_cast<std::size_t>(b)])] == g)
            hess(a, b) += l2w_ * ((a == b ? 1.0 : 0.0) / n - xs(a) * xs(b) / (n * n * n));
      }
      Vector step;
      Eigen::LLT<Matrix> llt(hess);
      if (llt.info() == Eigen::Success) step = llt.solve(grad);
      if (llt.info() != Eigen::Success || !step.allFinite()) {
        // Singular on the support: slide along a null direction, which is
        // linear in the objective, until a coordinate reaches zero.
        Eigen::SelfAdjointEigenSolver<Matrix> es(hess);
        if (es.info() != Eigen::Success) return false;
        const Vector ev = es.eigenvalues();
        if (ev(0) > 1e-9 * std::max(1.0, ev(ns - 1))) return false;
        step = es.eigenvectors().col(0);
        if (grad.dot(step) < 0.0) step = -step;
        double reach = 0.0;
        for (Index a = 0; a < ns; ++a)
          if (step(a) * xs(a) > 0.0) reach = std::max(reach, xs(a) / step(a));
        if (!(reach > 0.0)) {
          step = -step;
          for (Index a = 0; a < ns; ++a)
            if (step(a) * xs(a) > 0.0) reach = std::max(reach, xs(a) / step(a));
        }
        if (!(reach > 0.0)) return false;
        step *= reach;
      }

      // Largest step keeping every sign; the first coordinate to reach zero
      // is dropped when the boundary step is taken.
      double t_max = 1.0;
      Index hit = -1;
      for (Index a = 0; a < ns; ++a) {
        if (step(a) * xs(a) > 0.0 && std::abs(xs(a)) <= std::abs(step(a)) * t_max) {
          t_max = xs(a) / step(a);
          hit = a;
        }
      }
      bool moved = false;
      double t = t_max;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        Vector trial = xs - t * step;
        const bool boundary = t == t_max && hit >= 0;
        if (boundary) trial(hit) = 0.0;
        const double df = change(s, xs, trial);
        if (df < 0.0 || (boundary && df <= 1e-13 * (1.0 + std::abs(f)))) {
          moved = true;
          x(s) = trial;
          f += std::min(df, 0.0);
          break;
        }
      }
      if (!moved) break;
      if (hit < 0 && t == 1.0 && step.lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + xs.lpNorm<Eigen::Infinity>())) break;
    }
    return true;
  }

  // The zero coordinate (or zero group) violating optimality the most enters
  // along its steepest descent direction, followed by an exact line search.
  bool enter(Vector& x, double& f, const Vector& grad) const {
    double best = 0.0;
    Index bi = -1, bb = 0, be = 0;
    for (Index i = 0; i < x.size(); ++i) {
      if (x(i) != 0.0) continue;
      const int g = group_[static_cast<std::size_t>(i)];
      if (g >= 0) {
        const auto [b, e] = pen_.groups[static_cast<std::size_t>(g)];
        if (x.segment(b, e - b).isZero(0.0)) continue;
      }
      const double v = std::abs(grad(i)) - weight(i);
      if (v > best) {
        best = v;
        bi = i;
      }
    }
    for (auto [b, e] : pen_.groups) {
      if (!x.segment(b, e - b).isZero(0.0)) continue;
      double sq = 0.0;
      for (Index i = b; i < e; ++i) sq += std::pow(prox::soft_threshold(grad(i), l1w_), 2);
      const double v = std::sqrt(sq) - l2w_;
      if (v > best) {
        best = v;
        bi = -1;
        bb = b;
        be = e;
      }
    }
    if (!(best > 0.0)) return false;

    // Unit direction; the slope of the objective along it at 0 is -best.
    std::vector<Index> idx;
    Vector d;
    if (bi >= 0) {
      idx = {bi};
      d = Vector::Constant(1, grad(bi) > 0 ? -1.0 : 1.0);
    } else {
      d.resize(be - bb);
      for (Index i = bb; i < be; ++i) {
        idx.push_back(i);
        d(i - bb) = -prox::soft_threshold(grad(i), l1w_);
      }
      d.normalize();
    }
    const double curv = 2.0 * d.dot(p_.gram(idx, idx) * d);
    if (!(curv > 0.0)) return false;
    double t = best / curv;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      Vector trial = x;
      trial(idx) += t * d;
      const Vector dx = trial - x;
      const double df = dx.dot(p_.gram * (x + trial)) - 2.0 * p_.aty.dot(dx) + pen_.value(trial) - pen_.value(x);
      if (df < 0.0) {
        x = trial;
        f += df;
        return true;
      }
    }
    return false;
  }

  const GramProblem& p_;
  const CodingPenalty& pen_;
  double l1w_, l2w_;
  std::vector<int> group_;
};

} // namespace detail

// Monotone FISTA with backtracking on
//   min_x ||y - A x||^2 + penalty(x).
// The objective sequence of the returned iterates is non-increasing.
template <class Penalty>
CodeResult minimize_composite(const GramProblem& p, const Penalty& penalty, const SolverOptions& opt,
                              const Vector* x0 = nullptr, bool record_history = false) {
  const Index n = p.gram.rows();
  CodeResult r;
  r.x = x0 ? *x0 : Vector::Zero(n);
  auto smooth = [&](const Vector& x) { return p.yy - 2.0 * p.aty.dot(x) + x.dot(p.gram * x); };
  auto total = [&](const Vector& x) { return smooth(x) + penalty.value(x); };
  // f(b) - f(a) without the cancellation of evaluating both objectives.
  auto change = [&](const Vector& a, const Vector& b) {
    const Vector d = b - a;
    return d.dot(p.gram * (a + b)) - 2.0 * p.aty.dot(d) + penalty.value(b) - penalty.value(a);
  };

  if (n == 0) {
    r.objective = p.yy;
    r.converged = true;
    return r;
  }

  double lip = std::max(2.0 * detail::power_iteration_max_eig(p.gram) * 1.01, 1e-12);
  double fx = total(r.x);
  if (record_history) r.history.push_back(fx);

  Vector y = r.x, x_prev = r.x, z(n), grad(n), diff(n);
  double t = 1.0;
  for (int k = 0; k < opt.max_iter; ++k) {
    grad.noalias() = 2.0 * (p.gram * y - p.aty);
    while (true) {
      z = y - grad / lip;
      penalty.prox(z, 1.0 / lip);
      diff = z - y;
      // quadratic: f(z) - f(y) - grad'(z - y) = diff' G diff
      if (diff.dot(p.gram * diff) <= 0.5 * lip * diff.squaredNorm() * (1.0 + 1e-12)) break;
      lip *= 2.0;
    }
    const double dz = change(r.x, z);
    x_prev = r.x;
    if (dz <= 0.0) {
      r.x = z;
      fx += dz;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = r.x + (t / t_next) * (z - r.x) + ((t - 1.0) / t_next) * (r.x - x_prev);
    t = t_next;
    ++r.iterations;
    if (record_history) r.history.push_back(fx);

    grad.noalias() = 2.0 * (p.gram * r.x - p.aty);
    r.stationarity = penalty.stationarity(r.x, grad);
    if (r.stationarity <= opt.tol) {
      r.converged = true;
      break;
    }

    // Periodically finish on the current support with Newton steps; restart
    // the momentum from the polished point when it helps.
    if constexpr (std::is_same_v<Penalty, CodingPenalty>) {
      if (r.iterations % 20 == 0) {
        Vector xp = r.x;
        detail::ActiveSetRefiner(p, penalty).run(xp, opt.tol, static_cast<int>(2 * n + 10));
        const double dp = change(r.x, xp);
        if (dp <= 1e-13 * (1.0 + std::abs(fx))) {
          r.x = xp;
          fx += std::min(dp, 0.0);
          if (record_history) r.history.back() = fx;
          y = r.x;
          x_prev = r.x;
          t = 1.0;
          grad.noalias() = 2.0 * (p.gram * r.x - p.aty);
          r.stationarity = penalty.stationarity(r.x, grad);
          if (r.stationarity <= opt.tol) {
            r.converged = true;
            break;
          }
        }
      }
    }
  }
  if (r.iterations == 0) {
    grad.noalias() = 2.0 * (p.gram * r.x - p.aty);
    r.stationarity = penalty.stationarity(r.x, grad);
    r.converged = r.stationarity <= opt.tol;
  }
  r.objective = fx;
  return r;
}

inline void check_dims(const Matrix& a, const Vector& y) {
  if (a.cols() > 0 && a.rows() != y.size())
    throw data_error("dictionary has " + std::to_string(a.rows()) + " rows but probe has dimension " +
                     std::to_string(y.size()));
}

// min ||y - A x||^2 + lambda ||x||_1
inline CodeResult lasso_solve(const Matrix& a, const Vector& y, double lambda, double tol = 1e-6,
                              int max_iter = 1000, bool record_history = false) {
  check_dims(a, y);
  if (!(lambda > 0.0)) throw config_error("lambda must be > 0");
  CodingPenalty pen;
  pen.lambda = lambda;
  pen.n_l1 = a.cols();
  auto r = minimize_composite(make_gram_problem(a, y), pen, {tol, max_iter}, nullptr, record_history);
  r.objective = (y - a * r.x).squaredNorm() + pen.value(r.x);
  return r;
}

struct SparseCode {
  Vector alpha; // gallery coefficients
  Vector beta;  // variational coefficients
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

// ||y - D a - V b||^2 + lambda ||a||_1 + mu sum_blocks ||b_block||_tau
inline double coding_objective(const Matrix& dp, const Matrix& v, std::span<const int> block_of_atom,
                               const Vector& y, const SparseCode& c, double lambda, double mu, double tau) {
  Vector r = y;
  if (dp.cols()) r -= dp * c.alpha;
  if (v.cols()) r -= v * c.beta;
  double obj = r.squaredNorm() + lambda * c.alpha.lpNorm<1>();
  std::map<int, std::vector<Index>> blocks;
  for (Index i = 0; i < c.beta.size(); ++i) blocks[block_of_atom.empty() ? 0 : block_of_atom[static_cast<std::size_t>(i)]].push_back(i);
  for (const auto& [id, idx] : blocks) obj += mu * tau_norm(c.beta(idx), tau);
  return obj;
}

// min ||y - D'a - V b||^2 + lambda ||a||_1 + mu ||b||_tau
inline SparseCode extended_solve(const Matrix& dp, const Matrix& v, const Vector& y, double lambda, double mu,
                                 double tau, double tol = 1e-6, int max_iter = 1000) {
  check_dims(dp, y);
  check_dims(v, y);
  if (!(lambda > 0.0) || !(mu > 0.0)) throw config_error("lambda and mu must be > 0");
  if (!(tau >= 0.0 && tau <= 1.0)) throw config_error("tau must lie in [0, 1]");
  Matrix a(y.size(), dp.cols() + v.cols());
  a << dp, v;
  CodingPenalty pen;
  pen.lambda = lambda;
  pen.n_l1 = dp.cols();
  pen.mu = mu;
  pen.tau = tau;
  if (v.cols() > 0) pen.groups.emplace_back(dp.cols(), dp.cols() + v.cols());
  auto r = minimize_composite(make_gram_problem(a, y), pen, {tol, max_iter});

  SparseCode c;
  c.alpha = r.x.head(dp.cols());
  c.beta = r.x.tail(v.cols());
  c.objective = (y - a * r.x).squaredNorm() + pen.value(r.x);
  c.iterations = r.iterations;
  c.converged = r.converged;
  return c;
}

// Least squares restricted to `support`; off-support entries are zero.
// Rank-deficient supports fall back to a 1e-10 ridge.
inline Vector restricted_least_squares(const Matrix& a, std::span<const Index> support, const Vector& y) {
  if (support.empty()) throw data_error("restricted least squares needs a non-empty support");
  check_dims(a, y);
  Matrix as(a.rows(), static_cast<Index>(support.size()));
  for (std::size_t k = 0; k < support.size(); ++k) {
    if (support[k] < 0 || support[k] >= a.cols()) throw data_error("support index out of range");
    as.col(static_cast<Index>(k)) = a.col(support[k]);
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(as);
  Vector xs;
  if (qr.rank() == as.cols()) {
    xs = qr.solve(y);
  } else {
    Matrix g = as.transpose() * as;
    g.diagonal().array() += 1e-10;
    xs = g.ldlt().solve(as.transpose() * y);
  }
  Vector x = Vector::Zero(a.cols());
  for (std::size_t k = 0; k < support.size(); ++k) x(support[k]) = xs(static_cast<Index>(k));
  return x;
}

// ---------------------------------------------------------------------------
// Paired joint-sparsity coding over [D', V].

struct GalleryAtomTag {
  int class_id = 0;
  int pose_slot = 0; // 0 = original still, 1..q = synthetic view of exemplar p
};

struct PairedLayout {
  std::vector<GalleryAtomTag> gallery; // one tag per column of D'
  std::vector<int> block_of_atom;      // one block id (1..q) per column of V
  int frontal_block = 1;               // block paired with pose-slot 0
};

// One (class, pose-slot) gallery group with the variational block of the same
// pose id.
struct ActiveSet {
  int class_id = 0;
  int pose_slot = 0;
  int block = 0;
  std::vector<Index> gallery_columns;
  std::vector<Index> variational_columns;
};

inline std::vector<ActiveSet> admissible_sets(const PairedLayout& layout) {
  std::map<std::pair<int, int>, std::vector<Index>> groups;
  for (std::size_t i = 0; i < layout.gallery.size(); ++i)
    groups[{layout.gallery[i].class_id, layout.gallery[i].pose_slot}].push_back(static_cast<Index>(i));
  std::vector<ActiveSet> sets;
  for (auto& [key, cols] : groups) {
    ActiveSet s;
    s.class_id = key.first;
    s.pose_slot = key.second;
    s.block = key.second > 0 ? key.second : layout.frontal_block;
    s.gallery_columns = std::move(cols);
    for (std::size_t j = 0; j < layout.block_of_atom.size(); ++j)
      if (layout.block_of_atom[j] == s.block) s.variational_columns.push_back(static_cast<Index>(j));
    sets.push_back(std::move(s));
  }
  return sets;
}

struct PairedCode {
  SparseCode code;
  std::vector<ActiveSet> active_sets; // chosen sets carrying nonzero energy
  bool clamped = false;               // xi exceeded the number of admissible sets
  bool exhaustive = false;            // combinations were enumerated
};

struct PairedOptions {
  double lambda = 0.005;
  double mu = 0.005;
  double tau = 0.5;
  int xi = 3;
  double tol = 1e-6;
  int max_iter = 1000;
  int exhaustive_budget = 256;
};

inline PairedOptions paired_options(const ModelConfig& c) {
  return {c.lambda, c.mu, c.tau, c.xi, c.tol, c.max_iter, c.exhaustive_budget};
}

// Dictionary pair with precomputed Gram matrix, reused across probes.
class PairedDictionary {
public:
  PairedDictionary(Matrix dp, Matrix v, PairedLayout layout)
      : dp_(std::move(dp)), v_(std::move(v)), layout_(std::move(layout)) {
    if (dp_.cols() == 0) throw data_error("paired coding needs a non-empty gallery dictionary");
    if (static_cast<Index>(layout_.gallery.size()) != dp_.cols()) throw data_error("gallery tags do not match D'");
    if (static_cast<Index>(layout_.block_of_atom.size()) != v_.cols())
      throw data_error("block ids do not match V");
    if (v_.cols() > 0 && v_.rows() != dp_.rows()) throw data_error("D' and V have different row counts");
    for (std::size_t j = 1; j < layout_.block_of_atom.size(); ++j)
      if (layout_.block_of_atom[j] < layout_.block_of_atom[j - 1])
        throw data_error("variational blocks must be contiguous and ordered");
    a_.resize(dp_.rows(), dp_.cols() + v_.cols());
    a_ << dp_, v_;
    gram_ = a_.transpose() * a_;
    sets_ = admissible_sets(layout_);
  }

  const Matrix& gallery() const noexcept { return dp_; }
  const Matrix& variational() const noexcept { return v_; }
  const Matrix& combined() const noexcept { return a_; }
  const PairedLayout& layout() const noexcept { return layout_; }
  const std::vector<ActiveSet>& sets() const noexcept { return sets_; }
  const Matrix& gram() const noexcept { return gram_; }

private:
  Matrix dp_, v_, a_, gram_;
  PairedLayout layout_;
  std::vector<ActiveSet> sets_;
};

namespace detail {

struct SelectionFit {
  double objective = std::numeric_limits<double>::infinity();
  Vector x; // over the combined columns (full length)
  int iterations = 0;
  bool converged = false;
};

// Penalized fit restricted to the union of the selected sets.
inline SelectionFit fit_selection(const PairedDictionary& dict, const Vector& aty, double yy,
                                  std::span<const std::size_t> selection, const PairedOptions& opt) {
  const auto& sets = dict.sets();
  std::vector<Index> gcols;
  std::map<int, std::vector<Index>> vblocks;
  for (std::size_t s : selection) {
    const auto& set = sets[s];
    gcols.insert(gcols.end(), set.gallery_columns.begin(), set.gallery_columns.end());
    auto& blk = vblocks[set.block];
    if (blk.empty()) blk = set.variational_columns;
  }
  std::sort(gcols.begin(), gcols.end());
  gcols.erase(std::unique(gcols.begin(), gcols.end()), gcols.end());

  const Index offset = dict.gallery().cols();
  std::vector<Index> cols = gcols;
  CodingPenalty pen;
  pen.lambda = opt.lambda;
  pen.n_l1 = static_cast<Index>(gcols.size());
  pen.mu = opt.mu;
  pen.tau = opt.tau;
  for (const auto& [block, vcols] : vblocks) {
    if (vcols.empty()) continue;
    const auto begin = static_cast<Index>(cols.size());
    for (Index c : vcols) cols.push_back(offset + c);
    pen.groups.emplace_back(begin, static_cast<Index>(cols.size()));
  }

  GramProblem p;
  p.gram = dict.gram()(cols, cols);
  p.aty = aty(cols);
  p.yy = yy;
  auto r = minimize_composite(p, pen, {opt.tol, opt.max_iter});

  SelectionFit fit;
  fit.x = Vector::Zero(dict.combined().cols());
  fit.x(cols) = r.x;
  fit.objective = r.objective;
  fit.iterations = r.iterations;
  fit.converged = r.converged;
  return fit;
}

inline double binomial(std::size_t n, std::size_t k) {
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return c;
}

} // namespace detail

// Joint dynamic sparse coding: the support is a union of at most xi active
// sets. Each admissible set is a (class, pose-slot) gallery group paired with
// the variational block of the same pose (slot 0 pairs with the frontal
// block). Combinations are enumerated when their count is within the
// exhaustive budget; otherwise sets are added greedily by largest objective
// reduction and then refined by single swaps. Every candidate union is fitted
// with the penalized objective
//   ||y - D'a - V b||^2 + lambda ||a||_1 + mu sum_l ||b[l]||_tau.
inline PairedCode paired_solve(const PairedDictionary& dict, const Vector& y, const PairedOptions& opt) {
  if (y.size() != dict.combined().rows()) throw data_error("probe dimension does not match the dictionaries");
  if (opt.xi < 1) throw config_error("xi must be >= 1");
  if (!(opt.lambda > 0.0) || !(opt.mu > 0.0)) throw config_error("lambda and mu must be > 0");

  const auto& sets = dict.sets();
  const Index ng = dict.gallery().cols();
  const Index nv = dict.variational().cols();

  PairedCode out;
  out.code.alpha = Vector::Zero(ng);
  out.code.beta = Vector::Zero(nv);
  out.code.converged = true;
  std::size_t xi = static_cast<std::size_t>(opt.xi);
  if (xi > sets.size()) {
    xi = sets.size();
    out.clamped = true;
  }
  if (y.squaredNorm() == 0.0 || sets.empty()) return out;

  const Vector aty = dict.combined().transpose() * y;
  const double yy = y.squaredNorm();

  std::map<std::vector<std::size_t>, detail::SelectionFit> cache;
  auto evaluate = [&](std::vector<std::size_t> sel) -> const detail::SelectionFit& {
    std::sort(sel.begin(), sel.end());
    auto it = cache.find(sel);
    if (it == cache.end()) it = cache.emplace(sel, detail::fit_selection(dict, aty, yy, sel, opt)).first;
    return it->second;
  };

  std::vector<std::size_t> best;
  const std::size_t n = sets.size();
  if (detail::binomial(n, xi) <= static_cast<double>(opt.exhaustive_budget)) {
    out.exhaustive = true;
    std::vector<std::size_t> comb(xi);
    std::iota(comb.begin(), comb.end(), 0);
    double best_obj = std::numeric_limits<double>::infinity();
    while (true) {
      const auto& fit = evaluate(comb);
      if (fit.objective < best_obj) {
        best_obj = fit.objective;
        best = comb;
      }
      // next combination in lexicographic order
      std::size_t i = xi;
      while (i > 0 && comb[i - 1] == n - xi + i - 1) --i;
      if (i == 0) break;
      ++comb[i - 1];
      for (std::size_t j = i; j < xi; ++j) comb[j] = comb[j - 1] + 1;
    }
  } else {
    double best_obj = std::numeric_limits<double>::infinity();
    for (std::size_t round = 0; round < xi; ++round) {
      std::size_t pick = n;
      double pick_obj = best_obj;
      for (std::size_t s = 0; s < n; ++s) {
        if (std::find(best.begin(), best.end(), s) != best.end()) continue;
        auto trial = best;
        trial.push_back(s);
        const double obj = evaluate(trial).objective;
        if (obj < pick_obj) {
          pick_obj = obj;
          pick = s;
        }
      }
      if (pick == n) break; // no set reduces the objective
      best.push_back(pick);
      best_obj = pick_obj;
    }
    bool improved = !best.empty();
    for (int pass = 0; improved && pass < 3; ++pass) {
      improved = false;
      for (std::size_t pos = 0; pos < best.size(); ++pos) {
        for (std::size_t s = 0; s < n; ++s) {
          if (std::find(best.begin(), best.end(), s) != best.end()) continue;
          auto trial = best;
          trial[pos] = s;
          const double obj = evaluate(trial).objective;
          if (obj < best_obj - 1e-12) {
            best_obj = obj;
            best = trial;
            improved = true;
          }
        }
      }
    }
  }
  if (best.empty()) return out;

  const auto& fit = evaluate(best);
  out.code.alpha = fit.x.head(ng);
  out.code.beta = fit.x.tail(nv);
  out.code.objective = coding_objective(dict.gallery(), dict.variational(), dict.layout().block_of_atom, y,
                                        out.code, opt.lambda, opt.mu, opt.tau);
  out.code.iterations = fit.iterations;
  out.code.converged = fit.converged;
  std::sort(best.begin(), best.end());
  for (std::size_t s : best) {
    const auto& set = sets[s];
    double energy = 0.0;
    for (Index c : set.gallery_columns) energy += out.code.alpha(c) * out.code.alpha(c);
    for (Index c : set.variational_columns) energy += out.code.beta(c) * out.code.beta(c);
    if (energy > 0.0) out.active_sets.push_back(set);
  }
  return out;
}

inline PairedCode paired_solve(const Matrix& dp, const Matrix& v, const PairedLayout& layout, const Vector& y,
                               const ModelConfig& config) {
  return paired_solve(PairedDictionary(dp, v, layout), y, paired_options(config));
}

} // namespace spv
