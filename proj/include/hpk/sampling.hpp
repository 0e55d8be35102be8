#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hpk/error.hpp"
#include "hpk/rng.hpp"

namespace hpk {

// Per-point categorical distributions over C latent classes; rows of
// probs sum to 1.
template <typename T>
struct LatentDistT {
  int m = 0, C = 0;
  std::vector<T> probs;  // m x C

  void validate() const {
    if (m < 1 || C < 1 || probs.size() != std::size_t(m) * C) {
      throw ContractError("latent distribution: " + std::to_string(m) + "x" +
                          std::to_string(C) + " with " +
                          std::to_string(probs.size()) + " entries");
    }
    for (int i = 0; i < m; ++i) {
      T s = T(0);
      for (int c = 0; c < C; ++c) {
        T p = probs[std::size_t(i) * C + c];
        if (p < T(0)) throw ContractError("latent distribution: negative mass");
        s += p;
      }
      if (std::abs(double(s) - 1.0) > 1e-9) {
        throw ContractError("latent distribution: row " + std::to_string(i) +
                            " sums to " + std::to_string(double(s)));
      }
    }
  }
};

// One draw over all points. Hard samples carry both the one-hot matrix
// and the per-row class index; relaxed samples live on the simplex and
// have no index.
template <typename T>
struct LatentSampleT {
  int m = 0, C = 0;
  bool hard = true;
  std::vector<T> values;  // m x C
  std::vector<int> index;  // per-row class, hard only
};

namespace detail {

template <typename T>
int argmax_row(const T* row, int C) {
  int best = 0;
  for (int c = 1; c < C; ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

}  // namespace detail

template <typename T>
LatentSampleT<T> onehot_sample(int m, int C, std::vector<int> index) {
  LatentSampleT<T> s;
  s.m = m;
  s.C = C;
  s.hard = true;
  s.values.assign(std::size_t(m) * C, T(0));
  for (int i = 0; i < m; ++i) {
    if (index[std::size_t(i)] < 0 || index[std::size_t(i)] >= C) {
      throw ContractError("one-hot: class " +
                          std::to_string(index[std::size_t(i)]) +
                          " outside C=" + std::to_string(C));
    }
    s.values[std::size_t(i) * C + index[std::size_t(i)]] = T(1);
  }
  s.index = std::move(index);
  return s;
}

// Deterministic mode of the distribution; ties go to the lowest index.
template <typename T>
LatentSampleT<T> argmax_onehot(const LatentDistT<T>& d) {
  d.validate();
  std::vector<int> idx(std::size_t(d.m));
  for (int i = 0; i < d.m; ++i) {
    idx[std::size_t(i)] =
        detail::argmax_row(d.probs.data() + std::size_t(i) * d.C, d.C);
  }
  return onehot_sample<T>(d.m, d.C, std::move(idx));
}

// Inverse-CDF draw per row; the final class absorbs any roundoff tail.
template <typename T>
std::vector<int> categorical_indices(const LatentDistT<T>& d, Rng& rng) {
  std::vector<int> idx(std::size_t(d.m));
  for (int i = 0; i < d.m; ++i) {
    double u = u01(rng);
    double acc = 0;
    int pick = d.C - 1;
    for (int c = 0; c < d.C; ++c) {
      acc += double(d.probs[std::size_t(i) * d.C + c]);
      if (u < acc) {
        pick = c;
        break;
      }
    }
    idx[std::size_t(i)] = pick;
  }
  return idx;
}

template <typename T>
std::vector<LatentSampleT<T>> sample_categorical(const LatentDistT<T>& d,
                                                 int L, Rng& rng) {
  d.validate();
  if (L < 1) throw ParamError("sample_categorical: L must be positive");
  std::vector<LatentSampleT<T>> out;
  out.reserve(std::size_t(L));
  for (int l = 0; l < L; ++l) {
    out.push_back(onehot_sample<T>(d.m, d.C, categorical_indices(d, rng)));
  }
  return out;
}

// m x C standard Gumbel noise, row-major, one draw per entry.
template <typename T>
std::vector<T> gumbel_noise(int m, int C, Rng& rng) {
  std::vector<T> eps(std::size_t(m) * C);
  for (auto& e : eps) e = T(gumbel(rng));
  return eps;
}

// argmax(log pi + eps) per row. With eps = 0 this reduces to plain
// argmax; with standard Gumbel noise the outcome is distributed as pi.
template <typename T>
LatentSampleT<T> gumbel_max_from_noise(const LatentDistT<T>& d,
                                       const std::vector<T>& eps) {
  d.validate();
  if (eps.size() != d.probs.size()) {
    throw ContractError("gumbel_max: noise size " + std::to_string(eps.size()) +
                        " for " + std::to_string(d.probs.size()) + " entries");
  }
  std::vector<int> idx(std::size_t(d.m));
  std::vector<T> score(std::size_t(d.C));
  for (int i = 0; i < d.m; ++i) {
    for (int c = 0; c < d.C; ++c) {
      T p = std::max(d.probs[std::size_t(i) * d.C + c], T(1e-12));
      score[std::size_t(c)] = std::log(p) + eps[std::size_t(i) * d.C + c];
    }
    idx[std::size_t(i)] = detail::argmax_row(score.data(), d.C);
  }
  return onehot_sample<T>(d.m, d.C, std::move(idx));
}

template <typename T>
LatentSampleT<T> gumbel_max_sample(const LatentDistT<T>& d, Rng& rng) {
  return gumbel_max_from_noise(d, gumbel_noise<T>(d.m, d.C, rng));
}

// softmax((log pi + eps) / tau) per row.
template <typename T>
LatentSampleT<T> gumbel_softmax_from_noise(const LatentDistT<T>& d, double tau,
                                           const std::vector<T>& eps) {
  d.validate();
  if (tau <= 0) throw ParamError("gumbel_softmax: tau must be positive");
  if (eps.size() != d.probs.size()) {
    throw ContractError("gumbel_softmax: noise size " +
                        std::to_string(eps.size()) + " for " +
                        std::to_string(d.probs.size()) + " entries");
  }
  LatentSampleT<T> s;
  s.m = d.m;
  s.C = d.C;
  s.hard = false;
  s.values.assign(std::size_t(d.m) * d.C, T(0));
  std::vector<T> score(std::size_t(d.C));
  for (int i = 0; i < d.m; ++i) {
    for (int c = 0; c < d.C; ++c) {
      T p = std::max(d.probs[std::size_t(i) * d.C + c], T(1e-12));
      score[std::size_t(c)] =
          (std::log(p) + eps[std::size_t(i) * d.C + c]) / T(tau);
    }
    T mx = *std::max_element(score.begin(), score.end());
    T sum = T(0);
    for (int c = 0; c < d.C; ++c) {
      score[std::size_t(c)] = std::exp(score[std::size_t(c)] - mx);
      sum += score[std::size_t(c)];
    }
    for (int c = 0; c < d.C; ++c) {
      s.values[std::size_t(i) * d.C + c] = score[std::size_t(c)] / sum;
    }
  }
  return s;
}

template <typename T>
LatentSampleT<T> gumbel_softmax_sample(const LatentDistT<T>& d, double tau,
                                       Rng& rng) {
  return gumbel_softmax_from_noise(d, tau, gumbel_noise<T>(d.m, d.C, rng));
}

using LatentDist = LatentDistT<double>;
using LatentSample = LatentSampleT<double>;

}  // namespace hpk
