#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "hpk/error.hpp"

namespace hpk {

// Geometry runs in double regardless of the training precision; its
// outputs (neighbor tables, edge weights) enter the network as constants.

struct PointCloud {
  int m = 0;
  std::vector<double> pts;  // m x 3 row-major

  double x(int i) const { return pts[std::size_t(i) * 3 + 0]; }
  double y(int i) const { return pts[std::size_t(i) * 3 + 1]; }
  double z(int i) const { return pts[std::size_t(i) * 3 + 2]; }

  void validate() const {
    if (m < 1 || pts.size() != std::size_t(m) * 3) {
      throw ContractError("point cloud: " + std::to_string(m) +
                          " points, " + std::to_string(pts.size()) +
                          " coordinates");
    }
    for (double v : pts) {
      if (!std::isfinite(v)) {
        throw NonFiniteError("point cloud: non-finite coordinate");
      }
    }
  }
};

struct NormalField {
  int m = 0;
  std::vector<double> n;  // m x 3, unit rows
};

// Neighbor rows are 1 + k wide: self first, then the k nearest others by
// (distance, index). Weight rows mirror that layout.
struct KnnGraph {
  int m = 0;
  int k = 0;
  std::vector<int> idx;        // m x (k+1)
  std::vector<double> a_raw;   // |cos| similarities, self entry 1
  std::vector<double> a_norm;  // rows sum to 1

  int width() const { return k + 1; }
};

// Centers at the centroid and scales so the farthest point sits on the
// unit sphere. Idempotent up to roundoff; labels are untouched because
// only coordinates move.
inline PointCloud center_unit_sphere(const PointCloud& c) {
  c.validate();
  PointCloud out = c;
  double cx = 0, cy = 0, cz = 0;
  for (int i = 0; i < c.m; ++i) {
    cx += c.x(i);
    cy += c.y(i);
    cz += c.z(i);
  }
  cx /= c.m;
  cy /= c.m;
  cz /= c.m;
  double r2max = 0;
  for (int i = 0; i < c.m; ++i) {
    double dx = c.x(i) - cx, dy = c.y(i) - cy, dz = c.z(i) - cz;
    r2max = std::max(r2max, dx * dx + dy * dy + dz * dz);
  }
  double s = r2max > 0 ? 1.0 / std::sqrt(r2max) : 1.0;
  for (int i = 0; i < c.m; ++i) {
    out.pts[std::size_t(i) * 3 + 0] = (c.x(i) - cx) * s;
    out.pts[std::size_t(i) * 3 + 1] = (c.y(i) - cy) * s;
    out.pts[std::size_t(i) * 3 + 2] = (c.z(i) - cz) * s;
  }
  return out;
}

// Exhaustive scan; fine at a few thousand points. Ties broken by lower
// index, so duplicates are selected in index order.
inline KnnGraph build_knn(const PointCloud& c, int k_nn) {
  c.validate();
  if (k_nn < 1 || k_nn >= c.m) {
    throw ParamError("build_knn: k_nn " + std::to_string(k_nn) +
                     " with m " + std::to_string(c.m));
  }
  KnnGraph g;
  g.m = c.m;
  g.k = k_nn;
  g.idx.assign(std::size_t(c.m) * (k_nn + 1), 0);
  std::vector<std::pair<double, int>> d(std::size_t(c.m) - 1);
  for (int i = 0; i < c.m; ++i) {
    std::size_t t = 0;
    for (int j = 0; j < c.m; ++j) {
      if (j == i) continue;
      double dx = c.x(i) - c.x(j), dy = c.y(i) - c.y(j), dz = c.z(i) - c.z(j);
      d[t++] = {dx * dx + dy * dy + dz * dz, j};
    }
    std::partial_sort(d.begin(), d.begin() + k_nn, d.end());
    g.idx[std::size_t(i) * g.width()] = i;
    for (int kk = 0; kk < k_nn; ++kk) {
      g.idx[std::size_t(i) * g.width() + 1 + kk] = d[std::size_t(kk)].second;
    }
  }
  return g;
}

namespace detail {

// Eigen-decomposition of a symmetric 3x3 by cyclic Jacobi rotations.
// evec columns correspond to eval entries; nothing is sorted here.
inline void jacobi3(std::array<double, 9> A, std::array<double, 3>& eval,
                    std::array<double, 9>& evec) {
  evec = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(A[1]) + std::abs(A[2]) + std::abs(A[5]);
    if (off < 1e-300) break;
    double scale = 0;
    for (int i = 0; i < 9; ++i) scale = std::max(scale, std::abs(A[i]));
    if (off <= 1e-15 * scale) break;
    static const int pq[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (const auto& r : pq) {
      int p = r[0], q = r[1];
      double apq = A[std::size_t(p) * 3 + q];
      if (apq == 0) continue;
      double app = A[std::size_t(p) * 3 + p], aqq = A[std::size_t(q) * 3 + q];
      double theta = (aqq - app) / (2 * apq);
      double t = (theta >= 0 ? 1.0 : -1.0) /
                 (std::abs(theta) + std::sqrt(theta * theta + 1));
      double cs = 1.0 / std::sqrt(t * t + 1);
      double sn = t * cs;
      for (int i = 0; i < 3; ++i) {
        double aip = A[std::size_t(i) * 3 + p], aiq = A[std::size_t(i) * 3 + q];
        A[std::size_t(i) * 3 + p] = cs * aip - sn * aiq;
        A[std::size_t(i) * 3 + q] = sn * aip + cs * aiq;
      }
      for (int i = 0; i < 3; ++i) {
        double api = A[std::size_t(p) * 3 + i], aqi = A[std::size_t(q) * 3 + i];
        A[std::size_t(p) * 3 + i] = cs * api - sn * aqi;
        A[std::size_t(q) * 3 + i] = sn * api + cs * aqi;
      }
      for (int i = 0; i < 3; ++i) {
        double vip = evec[std::size_t(i) * 3 + p],
               viq = evec[std::size_t(i) * 3 + q];
        evec[std::size_t(i) * 3 + p] = cs * vip - sn * viq;
        evec[std::size_t(i) * 3 + q] = sn * vip + cs * viq;
      }
    }
  }
  eval = {A[0], A[4], A[8]};
}

}  // namespace detail

// Least-squares plane normal per point: the eigenvector of the
// neighborhood covariance with the smallest eigenvalue. Sign is fixed so
// the largest-magnitude component is positive. Neighborhoods whose
// covariance has rank below 2 fall back to (0,0,1).
inline NormalField estimate_normals(const PointCloud& c, const KnnGraph& g) {
  c.validate();
  if (g.m != c.m) {
    throw ContractError("estimate_normals: graph over " + std::to_string(g.m) +
                        " points, cloud has " + std::to_string(c.m));
  }
  NormalField nf;
  nf.m = c.m;
  nf.n.assign(std::size_t(c.m) * 3, 0.0);
  const int w = g.width();
  for (int i = 0; i < c.m; ++i) {
    double mx = 0, my = 0, mz = 0;
    for (int kk = 0; kk < w; ++kk) {
      int j = g.idx[std::size_t(i) * w + kk];
      mx += c.x(j);
      my += c.y(j);
      mz += c.z(j);
    }
    mx /= w;
    my /= w;
    mz /= w;
    std::array<double, 9> cov{};
    for (int kk = 0; kk < w; ++kk) {
      int j = g.idx[std::size_t(i) * w + kk];
      double dx = c.x(j) - mx, dy = c.y(j) - my, dz = c.z(j) - mz;
      cov[0] += dx * dx;
      cov[1] += dx * dy;
      cov[2] += dx * dz;
      cov[4] += dy * dy;
      cov[5] += dy * dz;
      cov[8] += dz * dz;
    }
    cov[3] = cov[1];
    cov[6] = cov[2];
    cov[7] = cov[5];
    std::array<double, 3> eval;
    std::array<double, 9> evec;
    detail::jacobi3(cov, eval, evec);
    int lo = 0, hi = 0;
    for (int a = 1; a < 3; ++a) {
      if (eval[std::size_t(a)] < eval[std::size_t(lo)]) lo = a;
      if (eval[std::size_t(a)] > eval[std::size_t(hi)]) hi = a;
    }
    int mid = 3 - lo - hi;
    if (lo == hi) mid = lo;  // all eigenvalues equal
    double nx, ny, nz;
    if (eval[std::size_t(hi)] <= 0 ||
        eval[std::size_t(mid)] <= 1e-12 * eval[std::size_t(hi)]) {
      nx = 0;
      ny = 0;
      nz = 1;
    } else {
      nx = evec[0 * 3 + std::size_t(lo)];
      ny = evec[1 * 3 + std::size_t(lo)];
      nz = evec[2 * 3 + std::size_t(lo)];
      double len = std::sqrt(nx * nx + ny * ny + nz * nz);
      nx /= len;
      ny /= len;
      nz /= len;
      double ax = std::abs(nx), ay = std::abs(ny), az = std::abs(nz);
      double big = nx;
      if (ay > ax && ay >= az) {
        big = ny;
      } else if (az > ax && az > ay) {
        big = nz;
      }
      if (big < 0) {
        nx = -nx;
        ny = -ny;
        nz = -nz;
      }
    }
    nf.n[std::size_t(i) * 3 + 0] = nx;
    nf.n[std::size_t(i) * 3 + 1] = ny;
    nf.n[std::size_t(i) * 3 + 2] = nz;
  }
  return nf;
}

// Fills a_raw with |cos(n_i, n_j)| (self entry exactly 1) and a_norm with
// the row-normalized weights over self plus neighbors.
inline void edge_weights(const NormalField& nf, KnnGraph& g) {
  if (nf.m != g.m) {
    throw ContractError("edge_weights: normals for " + std::to_string(nf.m) +
                        " points, graph has " + std::to_string(g.m));
  }
  const int w = g.width();
  g.a_raw.assign(std::size_t(g.m) * w, 0.0);
  g.a_norm.assign(std::size_t(g.m) * w, 0.0);
  for (int i = 0; i < g.m; ++i) {
    double sum = 0;
    for (int kk = 0; kk < w; ++kk) {
      int j = g.idx[std::size_t(i) * w + kk];
      double a;
      if (j == i) {
        a = 1.0;
      } else {
        double dot = nf.n[std::size_t(i) * 3] * nf.n[std::size_t(j) * 3] +
                     nf.n[std::size_t(i) * 3 + 1] * nf.n[std::size_t(j) * 3 + 1] +
                     nf.n[std::size_t(i) * 3 + 2] * nf.n[std::size_t(j) * 3 + 2];
        a = std::min(1.0, std::abs(dot));
      }
      g.a_raw[std::size_t(i) * w + kk] = a;
      sum += a;
    }
    for (int kk = 0; kk < w; ++kk) {
      g.a_norm[std::size_t(i) * w + kk] = g.a_raw[std::size_t(i) * w + kk] / sum;
    }
  }
}

// One call covering the whole preprocessing chain used everywhere:
// normalize, build neighbors, estimate normals, fill weights.
inline KnnGraph prepare_graph(const PointCloud& cloud, int k_nn) {
  KnnGraph g = build_knn(cloud, k_nn);
  NormalField nf = estimate_normals(cloud, g);
  edge_weights(nf, g);
  return g;
}

}  // namespace hpk
