#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace spv::prox {

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

template <class Derived>
void soft_threshold_inplace(Eigen::MatrixBase<Derived>&& x, double t) {
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = soft_threshold(x(i), t);
}

template <class Derived>
void soft_threshold_inplace(Eigen::MatrixBase<Derived>& x, double t) {
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = soft_threshold(x(i), t);
}

// prox of t*||.||_2: shrink the whole block towards zero.
template <class Derived>
void block_shrink_inplace(Eigen::MatrixBase<Derived>&& x, double t) {
  const double n = x.norm();
  if (n <= t) x.setZero();
  else x *= (1.0 - t / n);
}

template <class Derived>
void block_shrink_inplace(Eigen::MatrixBase<Derived>& x, double t) {
  const double n = x.norm();
  if (n <= t) x.setZero();
  else x *= (1.0 - t / n);
}

// prox of t1*||.||_1 + t2*||.||_2. The composition soft-threshold followed by
// block shrinkage is the exact prox of the sum; the reverse order is not.
template <class Derived>
void sparse_group_prox_inplace(Eigen::MatrixBase<Derived>&& x, double t1, double t2) {
  soft_threshold_inplace(x, t1);
  block_shrink_inplace(x, t2);
}

// Euclidean projection of v onto {x >= 0, sum x = radius} (sort-based).
inline void project_simplex_inplace(double* v, Eigen::Index n, double radius, std::vector<double>& scratch) {
  scratch.assign(v, v + n);
  std::sort(scratch.begin(), scratch.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    cumsum += scratch[static_cast<std::size_t>(k)];
    const double t = (cumsum - radius) / static_cast<double>(k + 1);
    if (scratch[static_cast<std::size_t>(k)] - t > 0.0) theta = t;
  }
  for (Eigen::Index k = 0; k < n; ++k) v[k] = std::max(v[k] - theta, 0.0);
}

inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v, double radius = 1.0) {
  Eigen::VectorXd out = v;
  std::vector<double> scratch;
  project_simplex_inplace(out.data(), out.size(), radius, scratch);
  return out;
}

// Projection onto the l1 ball of the given radius.
inline Eigen::VectorXd project_l1_ball(const Eigen::VectorXd& v, double radius) {
  if (v.lpNorm<1>() <= radius) return v;
  Eigen::VectorXd a = v.cwiseAbs();
  std::vector<double> scratch;
  project_simplex_inplace(a.data(), a.size(), radius, scratch);
  for (Eigen::Index i = 0; i < v.size(); ++i) a(i) = v(i) < 0.0 ? -a(i) : a(i);
  return a;
}

// prox of t*||.||_inf via Moreau decomposition.
inline Eigen::VectorXd prox_linf(const Eigen::VectorXd& v, double t) {
  if (t <= 0.0) return v;
  return v - project_l1_ball(v, t);
}

} // namespace spv::prox
