#pragma once

// Reference implementations used only by the test suite. Everything here
// trades speed for obviousness: dense loops, exhaustive enumeration, and
// a third-party eigensolver, so library results can be checked against
// independently produced numbers.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "hpk/evaluation.hpp"
#include "hpk/geometry.hpp"

namespace oracle {

// Plain triple-loop matrix product.
inline std::vector<double> matmul_naive(const std::vector<double>& a,
                                        const std::vector<double>& b, int m,
                                        int k, int n) {
  std::vector<double> c(std::size_t(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int t = 0; t < k; ++t) {
        s += a[std::size_t(i) * k + t] * b[std::size_t(t) * n + j];
      }
      c[std::size_t(i) * n + j] = s;
    }
  }
  return c;
}

// Neighborhood smoothing through an explicit dense m x m weight matrix.
inline std::vector<double> smooth_dense(const hpk::KnnGraph& g,
                                        const std::vector<double>& h, int f) {
  std::vector<double> A(std::size_t(g.m) * g.m, 0.0);
  for (int i = 0; i < g.m; ++i) {
    for (int j = 0; j < g.width(); ++j) {
      int nb = g.idx[std::size_t(i) * g.width() + j];
      A[std::size_t(i) * g.m + nb] += g.a_norm[std::size_t(i) * g.width() + j];
    }
  }
  return matmul_naive(A, h, g.m, g.m, f);
}

// All pairwise distances, fully sorted.
inline std::vector<int> knn_brute(const hpk::PointCloud& c, int i, int k) {
  std::vector<std::pair<double, int>> d;
  for (int j = 0; j < c.m; ++j) {
    if (j == i) continue;
    double dx = c.x(i) - c.x(j), dy = c.y(i) - c.y(j), dz = c.z(i) - c.z(j);
    d.push_back({dx * dx + dy * dy + dz * dz, j});
  }
  std::sort(d.begin(), d.end());
  std::vector<int> out;
  for (int j = 0; j < k; ++j) out.push_back(d[std::size_t(j)].second);
  return out;
}

// Smallest-eigenvalue direction of the neighborhood covariance, via Eigen.
inline std::array<double, 3> normal_eigen(const hpk::PointCloud& c,
                                          const std::vector<int>& nbhd) {
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  for (int j : nbhd) mu += Eigen::Vector3d(c.x(j), c.y(j), c.z(j));
  mu /= double(nbhd.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int j : nbhd) {
    Eigen::Vector3d d = Eigen::Vector3d(c.x(j), c.y(j), c.z(j)) - mu;
    cov += d * d.transpose();
  }
  cov /= double(nbhd.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  Eigen::Vector3d n = es.eigenvectors().col(0);  // ascending eigenvalues
  return {n.x(), n.y(), n.z()};
}

// Best assignment of predicted classes to true classes by exhaustive
// recursion; rows may stay unmatched (-1). Returns the maximum agreement
// and, among maximizers, the lexicographically smallest assignment
// vector with -1 ordered before any column.
struct BruteAssignment {
  long long agreement = -1;
  std::vector<int> to_true;
};

inline void brute_assign_rec(const hpk::ContingencyTable& tab, int row,
                             std::vector<bool>& used, std::vector<int>& cur,
                             long long acc, BruteAssignment& best) {
  if (row == tab.P) {
    if (acc > best.agreement ||
        (acc == best.agreement && cur < best.to_true)) {
      best.agreement = acc;
      best.to_true = cur;
    }
    return;
  }
  cur[std::size_t(row)] = -1;
  brute_assign_rec(tab, row + 1, used, cur, acc, best);
  for (int t = 0; t < tab.T; ++t) {
    if (used[std::size_t(t)]) continue;
    used[std::size_t(t)] = true;
    cur[std::size_t(row)] = t;
    brute_assign_rec(tab, row + 1, used, cur, acc + tab.at(row, t), best);
    used[std::size_t(t)] = false;
  }
  cur[std::size_t(row)] = -1;
}

inline BruteAssignment brute_assignment(const hpk::ContingencyTable& tab) {
  if (tab.P > 7 || tab.T > 7) {
    throw std::runtime_error("brute_assignment: table too large");
  }
  BruteAssignment best;
  std::vector<bool> used(std::size_t(tab.T), false);
  std::vector<int> cur(std::size_t(tab.P), -1);
  brute_assign_rec(tab, 0, used, cur, 0, best);
  return best;
}

// Upper critical values of the chi-square distribution at alpha = 0.001.
inline double chi2_crit_001(int df) {
  static const double table[] = {0,      10.828, 13.816, 16.266, 18.467,
                                 20.515, 22.458, 24.322, 26.125, 27.877};
  if (df < 1 || df > 9) throw std::runtime_error("chi2_crit_001: df out of range");
  return table[df];
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double sample_std(const std::vector<double>& v) {
  double mu = mean_of(v), ss = 0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / double(v.size() - 1));
}

inline double cosine(const std::vector<double>& a,
                     const std::vector<double>& b) {
  double num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 && nb == 0) return 1.0;
  if (na == 0 || nb == 0) return 0.0;
  return num / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace oracle
