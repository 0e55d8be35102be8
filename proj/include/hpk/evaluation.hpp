#pragma once

#include <climits>
#include <string>
#include <utility>
#include <vector>

#include "hpk/error.hpp"

namespace hpk {

// Counts of (predicted class, true class) pairs; labels are 1-based on
// the outside, rows/columns 0-based in here.
struct ContingencyTable {
  int P = 0, T = 0;
  std::vector<long long> n;  // P x T

  long long at(int p, int t) const { return n[std::size_t(p) * T + t]; }

  static ContingencyTable from_labels(const std::vector<int>& pred,
                                      const std::vector<int>& truth) {
    if (pred.size() != truth.size() || pred.empty()) {
      throw ContractError("contingency: " + std::to_string(pred.size()) +
                          " predictions vs " + std::to_string(truth.size()) +
                          " ground-truth labels");
    }
    ContingencyTable tab;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] < 1 || truth[i] < 1) {
        throw ContractError("contingency: labels must be 1-based positive");
      }
      tab.P = std::max(tab.P, pred[i]);
      tab.T = std::max(tab.T, truth[i]);
    }
    tab.n.assign(std::size_t(tab.P) * tab.T, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tab.n[std::size_t(pred[i] - 1) * tab.T + (truth[i] - 1)]++;
    }
    return tab;
  }
};

// Predicted class -> true class (0-based); -1 marks unmatched.
struct Assignment {
  std::vector<int> to_true;
  long long agreement = 0;
};

namespace detail {

// Square min-cost assignment via shortest augmenting paths with
// potentials. cost is n x n row-major; returns (total, row -> col).
inline std::pair<long long, std::vector<int>> assign_min(
    const std::vector<long long>& cost, int n) {
  const long long kInf = LLONG_MAX / 4;
  std::vector<long long> u(std::size_t(n) + 1, 0), v(std::size_t(n) + 1, 0);
  std::vector<int> p(std::size_t(n) + 1, 0), way(std::size_t(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<long long> minv(std::size_t(n) + 1, kInf);
    std::vector<char> used(std::size_t(n) + 1, 0);
    do {
      used[std::size_t(j0)] = 1;
      int i0 = p[std::size_t(j0)], j1 = -1;
      long long delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[std::size_t(j)]) continue;
        long long cur =
            cost[std::size_t(i0 - 1) * n + (j - 1)] - u[std::size_t(i0)] -
            v[std::size_t(j)];
        if (cur < minv[std::size_t(j)]) {
          minv[std::size_t(j)] = cur;
          way[std::size_t(j)] = j0;
        }
        if (minv[std::size_t(j)] < delta) {
          delta = minv[std::size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[std::size_t(j)]) {
          u[std::size_t(p[std::size_t(j)])] += delta;
          v[std::size_t(j)] -= delta;
        } else {
          minv[std::size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[std::size_t(j0)] != 0);
    do {
      int j1 = way[std::size_t(j0)];
      p[std::size_t(j0)] = p[std::size_t(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(std::size_t(n), -1);
  long long total = 0;
  for (int j = 1; j <= n; ++j) {
    if (p[std::size_t(j)] != 0) {
      row_to_col[std::size_t(p[std::size_t(j)] - 1)] = j - 1;
      total += cost[std::size_t(p[std::size_t(j)] - 1) * n + (j - 1)];
    }
  }
  return {total, row_to_col};
}

// Maximum achievable agreement for a sub-table given by row/col index
// lists (dummy rows and columns padded in as zeros).
inline long long best_agreement(const ContingencyTable& tab,
                                const std::vector<int>& rows,
                                const std::vector<int>& cols) {
  int n = std::max(rows.size(), cols.size());
  if (n == 0) return 0;
  std::vector<long long> cost(std::size_t(n) * n, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      cost[r * n + c] = -tab.at(rows[r], cols[c]);
    }
  }
  return -assign_min(cost, n).first;
}

}  // namespace detail

// Optimal one-to-one grounding of predicted classes to true classes,
// maximizing the agreed point count. Among optimal assignments the
// lexicographically smallest to_true vector wins (with -1 ordered before
// every class index), fixed greedily row by row.
inline Assignment hungarian_match(const ContingencyTable& tab) {
  if (tab.P < 1 || tab.T < 1 ||
      tab.n.size() != std::size_t(tab.P) * tab.T) {
    throw ContractError("hungarian: empty or malformed table");
  }
  std::vector<int> all_rows(std::size_t(tab.P)), free_cols(std::size_t(tab.T));
  for (int p = 0; p < tab.P; ++p) all_rows[std::size_t(p)] = p;
  for (int t = 0; t < tab.T; ++t) free_cols[std::size_t(t)] = t;
  const long long best = detail::best_agreement(tab, all_rows, free_cols);

  Assignment out;
  out.to_true.assign(std::size_t(tab.P), -1);
  long long fixed_gain = 0;
  for (int p = 0; p < tab.P; ++p) {
    std::vector<int> rest_rows;
    for (int r = p + 1; r < tab.P; ++r) rest_rows.push_back(r);
    bool placed = false;
    // Candidate -1 first: unmatched sorts lowest.
    if (fixed_gain + detail::best_agreement(tab, rest_rows, free_cols) ==
        best) {
      placed = true;
    } else {
      for (std::size_t ci = 0; ci < free_cols.size(); ++ci) {
        int cand = free_cols[ci];
        std::vector<int> rest_cols;
        for (std::size_t cj = 0; cj < free_cols.size(); ++cj) {
          if (cj != ci) rest_cols.push_back(free_cols[cj]);
        }
        if (fixed_gain + tab.at(p, cand) +
                detail::best_agreement(tab, rest_rows, rest_cols) == best) {
          out.to_true[std::size_t(p)] = cand;
          fixed_gain += tab.at(p, cand);
          free_cols = std::move(rest_cols);
          placed = true;
          break;
        }
      }
    }
    if (!placed) {
      throw ContractError("hungarian: no consistent completion (bug)");
    }
  }
  out.agreement = fixed_gain;
  return out;
}

// Matched points for one instance after optimal grounding.
inline long long matched_correct(const std::vector<int>& pred_mid,
                                 const std::vector<int>& true_mid) {
  ContingencyTable tab = ContingencyTable::from_labels(pred_mid, true_mid);
  return hungarian_match(tab).agreement;
}

inline double matched_accuracy(const std::vector<int>& pred_mid,
                               const std::vector<int>& true_mid) {
  return double(matched_correct(pred_mid, true_mid)) /
         double(pred_mid.size());
}

inline long long direct_correct(const std::vector<int>& pred,
                                const std::vector<int>& truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw ContractError("accuracy: " + std::to_string(pred.size()) +
                        " predictions vs " + std::to_string(truth.size()) +
                        " labels");
  }
  long long c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == truth[i];
  return c;
}

struct LevelMetrics {
  double oa = 0.0;
  std::vector<double> per_instance;
  long long correct = 0, total = 0;
};

// Pools points across instances; not a mean of instance means.
inline LevelMetrics overall_accuracy(
    const std::vector<std::pair<long long, long long>>& correct_total) {
  if (correct_total.empty()) {
    throw ContractError("overall_accuracy: no instances");
  }
  LevelMetrics m;
  for (const auto& [c, t] : correct_total) {
    if (t < 1) throw ContractError("overall_accuracy: empty instance");
    m.correct += c;
    m.total += t;
    m.per_instance.push_back(double(c) / double(t));
  }
  m.oa = double(m.correct) / double(m.total);
  return m;
}

}  // namespace hpk
