#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hpk/error.hpp"

namespace hpk {

template <typename T>
class TapeT;

namespace detail {

inline std::string shape_str(int r, int c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename T>
void check_finite(const char* op, const std::vector<T>& v) {
  for (T x : v) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NonFiniteError(std::string(op) + ": non-finite value");
    }
  }
}

}  // namespace detail

// Plain loop kernels; everything hot funnels through these three so the
// compiler only has to vectorize one inner-loop shape (contiguous j).
namespace kern {

// C = A (m x k) times B (k x n), overwriting C.
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    T* ci = c + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = T(0);
    const T* ai = a + std::size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C += A (m x n) times B-transposed, B stored k x n. C is m x k.
template <typename T>
void mm_abt_acc(const T* a, const T* b, T* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + std::size_t(i) * n;
    T* ci = c + std::size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      const T* bp = b + std::size_t(p) * n;
      T s = T(0);
      for (int j = 0; j < n; ++j) s += ai[j] * bp[j];
      ci[p] += s;
    }
  }
}

// C += A-transposed times B, A stored m x k, B m x n. C is k x n.
template <typename T>
void mm_atb_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + std::size_t(i) * k;
    const T* bi = b + std::size_t(i) * n;
    for (int p = 0; p < k; ++p) {
      T av = ai[p];
      if (av == T(0)) continue;
      T* cp = c + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace kern

// A 2-D value, optionally recorded on a tape. Storage is shared and
// treated as immutable once any tape node references it; the optimizer
// mutates parameter storage only between forward passes.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  static TensorT constant(int rows, int cols, std::vector<T> v) {
    if (rows < 0 || cols < 0 ||
        v.size() != std::size_t(rows) * std::size_t(cols)) {
      throw ContractError("tensor: data length does not match shape " +
                          detail::shape_str(rows, cols));
    }
    TensorT t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.data_ = std::make_shared<std::vector<T>>(std::move(v));
    return t;
  }

  static TensorT zeros(int rows, int cols) {
    return constant(rows, cols,
                    std::vector<T>(std::size_t(rows) * cols, T(0)));
  }

  static TensorT full(int rows, int cols, T v) {
    return constant(rows, cols, std::vector<T>(std::size_t(rows) * cols, v));
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return std::size_t(rows_) * cols_; }

  const std::vector<T>& data() const {
    if (!data_) throw ContractError("tensor: empty");
    return *data_;
  }

  // For the optimizer and checkpoint loader only; callers must ensure no
  // live tape references this storage.
  std::vector<T>& mutable_data() {
    if (!data_) throw ContractError("tensor: empty");
    return *data_;
  }

  T at(int i, int j) const {
    if (i < 0 || i >= rows_ || j < 0 || j >= cols_) {
      throw ContractError("tensor: index (" + std::to_string(i) + "," +
                          std::to_string(j) + ") outside " +
                          detail::shape_str(rows_, cols_));
    }
    return (*data_)[std::size_t(i) * cols_ + j];
  }

  T item() const {
    if (size() != 1) {
      throw ContractError("tensor: item() on non-scalar " +
                          detail::shape_str(rows_, cols_));
    }
    return (*data_)[0];
  }

  TapeT<T>* tape() const { return tape_; }
  int id() const { return id_; }
  bool tracked() const { return tape_ != nullptr; }

 private:
  int rows_ = 0, cols_ = 0;
  std::shared_ptr<std::vector<T>> data_;
  TapeT<T>* tape_ = nullptr;
  int id_ = -1;

  friend class TapeT<T>;
};

// Define-by-run record of one forward pass. Nodes hold backward closures;
// gradient buffers are allocated lazily so untouched subgraphs stay free.
// Rebuilt per pass; confined to one thread.
template <typename T>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  TensorT<T> alloc(int rows, int cols, std::vector<T> v) {
    TensorT<T> t = TensorT<T>::constant(rows, cols, std::move(v));
    t.tape_ = this;
    t.id_ = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    grads_.emplace_back();
    return t;
  }

  void set_back(const TensorT<T>& t, std::function<void()> back) {
    nodes_[std::size_t(t.id_)] = std::move(back);
  }

  // Registers a gradient-requiring input. The returned tensor shares the
  // value's storage.
  TensorT<T> leaf(const TensorT<T>& value) {
    if (value.tracked()) throw TapeError("leaf: value already on a tape");
    TensorT<T> t = value;
    t.tape_ = this;
    t.id_ = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    grads_.emplace_back();
    return t;
  }

  const std::vector<T>* maybe_grad(int id) const {
    const auto& g = grads_[std::size_t(id)];
    return g.empty() ? nullptr : &g;
  }

  std::vector<T>& grad_buf(int id, std::size_t n) {
    auto& g = grads_[std::size_t(id)];
    if (g.empty()) g.assign(n, T(0));
    return g;
  }

  std::vector<T> grad_of(const TensorT<T>& t) const {
    if (t.tape_ != this) throw TapeError("grad_of: tensor not on this tape");
    const auto* g = maybe_grad(t.id_);
    if (!g) return std::vector<T>(t.size(), T(0));
    return *g;
  }

  void backward(const TensorT<T>& out) {
    if (out.size() != 1) {
      throw TapeError("backward: output must be scalar; got " +
                      detail::shape_str(out.rows(), out.cols()));
    }
    backward(out, std::vector<T>{T(1)});
  }

  // Seeded form; accumulates into existing gradients, so call clear_grads
  // between independent passes over the same recording.
  void backward(const TensorT<T>& out, const std::vector<T>& seed) {
    if (out.tape_ != this) throw TapeError("backward: tensor not on this tape");
    if (seed.size() != out.size()) {
      throw TapeError("backward: seed length " + std::to_string(seed.size()) +
                      " does not match output size " +
                      std::to_string(out.size()));
    }
    auto& g = grad_buf(out.id_, out.size());
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    for (int id = out.id_; id >= 0; --id) {
      if (nodes_[std::size_t(id)] && !grads_[std::size_t(id)].empty()) {
        nodes_[std::size_t(id)]();
      }
    }
  }

  void clear_grads() {
    for (auto& g : grads_) g.clear();
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<std::vector<T>> grads_;
};

namespace detail {

template <typename T>
TapeT<T>* merge_tape(TapeT<T>* acc, const TensorT<T>& t) {
  if (t.tape() == nullptr) return acc;
  if (acc != nullptr && acc != t.tape()) {
    throw TapeError("operands recorded on different tapes");
  }
  return t.tape();
}

template <typename T>
TensorT<T> emit(TapeT<T>* tp, int rows, int cols, std::vector<T> v) {
  if (!tp) return TensorT<T>::constant(rows, cols, std::move(v));
  return tp->alloc(rows, cols, std::move(v));
}

}  // namespace detail

// ---- primitives ----------------------------------------------------------
// Every op validates shapes, checks inputs and outputs for non-finite
// values, and registers an exact backward rule when an operand is tracked.

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: " + detail::shape_str(a.rows(), a.cols()) +
                        " times " + detail::shape_str(b.rows(), b.cols()));
  }
  detail::check_finite("matmul", a.data());
  detail::check_finite("matmul", b.data());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> v(std::size_t(m) * n);
  kern::mm_nn(a.data().data(), b.data().data(), v.data(), m, k, n);
  detail::check_finite("matmul", v);
  TapeT<T>* tp = detail::merge_tape(detail::merge_tape<T>(nullptr, a), b);
  TensorT<T> o = detail::emit(tp, m, n, std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      if (a.tracked()) {
        auto& ga = tp->grad_buf(a.id(), a.size());
        kern::mm_abt_acc(g->data(), b.data().data(), ga.data(), m, n, k);
      }
      if (b.tracked()) {
        auto& gb = tp->grad_buf(b.id(), b.size());
        kern::mm_atb_acc(a.data().data(), g->data(), gb.data(), m, k, n);
      }
    });
  }
  return o;
}

namespace detail {

template <typename T>
void require_same_shape(const char* op, const TensorT<T>& a,
                        const TensorT<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": " +
                        shape_str(a.rows(), a.cols()) + " vs " +
                        shape_str(b.rows(), b.cols()));
  }
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape("add", a, b);
  detail::check_finite("add", a.data());
  detail::check_finite("add", b.data());
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  detail::check_finite("add", v);
  TapeT<T>* tp = detail::merge_tape(detail::merge_tape<T>(nullptr, a), b);
  TensorT<T> o = detail::emit(tp, a.rows(), a.cols(), std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      if (a.tracked()) {
        auto& ga = tp->grad_buf(a.id(), a.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i];
      }
      if (b.tracked()) {
        auto& gb = tp->grad_buf(b.id(), b.size());
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += (*g)[i];
      }
    });
  }
  return o;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape("sub", a, b);
  detail::check_finite("sub", a.data());
  detail::check_finite("sub", b.data());
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  detail::check_finite("sub", v);
  TapeT<T>* tp = detail::merge_tape(detail::merge_tape<T>(nullptr, a), b);
  TensorT<T> o = detail::emit(tp, a.rows(), a.cols(), std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      if (a.tracked()) {
        auto& ga = tp->grad_buf(a.id(), a.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i];
      }
      if (b.tracked()) {
        auto& gb = tp->grad_buf(b.id(), b.size());
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= (*g)[i];
      }
    });
  }
  return o;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape("mul", a, b);
  detail::check_finite("mul", a.data());
  detail::check_finite("mul", b.data());
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  detail::check_finite("mul", v);
  TapeT<T>* tp = detail::merge_tape(detail::merge_tape<T>(nullptr, a), b);
  TensorT<T> o = detail::emit(tp, a.rows(), a.cols(), std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      if (a.tracked()) {
        auto& ga = tp->grad_buf(a.id(), a.size());
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] += (*g)[i] * b.data()[i];
        }
      }
      if (b.tracked()) {
        auto& gb = tp->grad_buf(b.id(), b.size());
        for (std::size_t i = 0; i < gb.size(); ++i) {
          gb[i] += (*g)[i] * a.data()[i];
        }
      }
    });
  }
  return o;
}

// A (m x n) plus row vector b (1 x n), broadcast over rows.
template <typename T>
TensorT<T> add_rowvec(const TensorT<T>& a, const TensorT<T>& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) {
    throw ContractError("add_rowvec: " + detail::shape_str(a.rows(), a.cols()) +
                        " plus " + detail::shape_str(b.rows(), b.cols()));
  }
  detail::check_finite("add_rowvec", a.data());
  detail::check_finite("add_rowvec", b.data());
  const int m = a.rows(), n = a.cols();
  std::vector<T> v(a.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      v[std::size_t(i) * n + j] = a.data()[std::size_t(i) * n + j] +
                                  b.data()[std::size_t(j)];
    }
  }
  detail::check_finite("add_rowvec", v);
  TapeT<T>* tp = detail::merge_tape(detail::merge_tape<T>(nullptr, a), b);
  TensorT<T> o = detail::emit(tp, m, n, std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      if (a.tracked()) {
        auto& ga = tp->grad_buf(a.id(), a.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i];
      }
      if (b.tracked()) {
        auto& gb = tp->grad_buf(b.id(), b.size());
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) gb[j] += (*g)[std::size_t(i) * n + j];
        }
      }
    });
  }
  return o;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  detail::check_finite("scale", a.data());
  if (!std::isfinite(static_cast<double>(c))) {
    throw NonFiniteError("scale: non-finite factor");
  }
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
  TapeT<T>* tp = a.tape();
  TensorT<T> o = detail::emit(tp, a.rows(), a.cols(), std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      auto& ga = tp->grad_buf(a.id(), a.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * c;
    });
  }
  return o;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
  detail::check_finite("relu", a.data());
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  }
  TapeT<T>* tp = a.tape();
  TensorT<T> o = detail::emit(tp, a.rows(), a.cols(), std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      auto& ga = tp->grad_buf(a.id(), a.size());
      for (std::size_t i = 0; i < ga.size(); ++i) {
        if (a.data()[i] > T(0)) ga[i] += (*g)[i];
      }
    });
  }
  return o;
}

inline constexpr double kLogClamp = 1e-12;

// log(max(x, 1e-12)); below the clamp the derivative is taken as zero.
template <typename T>
TensorT<T> log_clamped(const TensorT<T>& a) {
  detail::check_finite("log", a.data());
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::log(std::max(a.data()[i], T(kLogClamp)));
  }
  detail::check_finite("log", v);
  TapeT<T>* tp = a.tape();
  TensorT<T> o = detail::emit(tp, a.rows(), a.cols(), std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      auto& ga = tp->grad_buf(a.id(), a.size());
      for (std::size_t i = 0; i < ga.size(); ++i) {
        if (a.data()[i] >= T(kLogClamp)) ga[i] += (*g)[i] / a.data()[i];
      }
    });
  }
  return o;
}

template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& a) {
  detail::check_finite("softmax", a.data());
  const int m = a.rows(), n = a.cols();
  if (n < 1) throw ContractError("softmax: empty rows");
  std::vector<T> v(a.size());
  for (int i = 0; i < m; ++i) {
    const T* x = a.data().data() + std::size_t(i) * n;
    T* y = v.data() + std::size_t(i) * n;
    T mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    T s = T(0);
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    for (int j = 0; j < n; ++j) y[j] /= s;
  }
  detail::check_finite("softmax", v);
  TapeT<T>* tp = a.tape();
  TensorT<T> o = detail::emit(tp, m, n, std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      auto& ga = tp->grad_buf(a.id(), a.size());
      for (int i = 0; i < m; ++i) {
        const T* s = o.data().data() + std::size_t(i) * n;
        const T* gi = g->data() + std::size_t(i) * n;
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += gi[j] * s[j];
        T* gai = ga.data() + std::size_t(i) * n;
        for (int j = 0; j < n; ++j) gai[j] += s[j] * (gi[j] - dot);
      }
    });
  }
  return o;
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& a) {
  detail::check_finite("sum", a.data());
  T s = T(0);
  for (T x : a.data()) s += x;
  TapeT<T>* tp = a.tape();
  TensorT<T> o = detail::emit(tp, 1, 1, std::vector<T>{s});
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      auto& ga = tp->grad_buf(a.id(), a.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[0];
    });
  }
  return o;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& a) {
  if (a.size() == 0) throw ContractError("mean: empty tensor");
  return scale(sum_all(a), T(1) / T(a.size()));
}

// Row sums: (m x n) -> (m x 1).
template <typename T>
TensorT<T> sum_rows(const TensorT<T>& a) {
  detail::check_finite("sum_rows", a.data());
  const int m = a.rows(), n = a.cols();
  std::vector<T> v(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    T s = T(0);
    for (int j = 0; j < n; ++j) s += a.data()[std::size_t(i) * n + j];
    v[std::size_t(i)] = s;
  }
  TapeT<T>* tp = a.tape();
  TensorT<T> o = detail::emit(tp, m, 1, std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      auto& ga = tp->grad_buf(a.id(), a.size());
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          ga[std::size_t(i) * n + j] += (*g)[std::size_t(i)];
        }
      }
    });
  }
  return o;
}

// Column-wise concatenation; inputs share the row count.
template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const int m = parts[0].rows();
  int n = 0;
  TapeT<T>* tp = nullptr;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw ContractError("concat: row mismatch " +
                          detail::shape_str(p.rows(), p.cols()) + " vs " +
                          std::to_string(m) + " rows");
    }
    detail::check_finite("concat", p.data());
    n += p.cols();
    tp = detail::merge_tape(tp, p);
  }
  std::vector<T> v(std::size_t(m) * n);
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < p.cols(); ++j) {
        v[std::size_t(i) * n + off + j] =
            p.data()[std::size_t(i) * p.cols() + j];
      }
    }
    off += p.cols();
  }
  TensorT<T> o = detail::emit(tp, m, n, std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      int o2 = 0;
      for (const auto& p : parts) {
        if (p.tracked()) {
          auto& gp = tp->grad_buf(p.id(), p.size());
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < p.cols(); ++j) {
              gp[std::size_t(i) * p.cols() + j] +=
                  (*g)[std::size_t(i) * n + o2 + j];
            }
          }
        }
        o2 += p.cols();
      }
    });
  }
  return o;
}

// Per-row element pick: out[i] = a[i, idx[i]].
template <typename T>
TensorT<T> rows_pick(const TensorT<T>& a, const std::vector<int>& idx) {
  const int m = a.rows(), n = a.cols();
  if (static_cast<int>(idx.size()) != m) {
    throw ContractError("rows_pick: " + std::to_string(idx.size()) +
                        " indices for " + std::to_string(m) + " rows");
  }
  detail::check_finite("rows_pick", a.data());
  std::vector<T> v(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    if (idx[std::size_t(i)] < 0 || idx[std::size_t(i)] >= n) {
      throw ContractError("rows_pick: index " +
                          std::to_string(idx[std::size_t(i)]) +
                          " outside row of width " + std::to_string(n));
    }
    v[std::size_t(i)] = a.data()[std::size_t(i) * n + idx[std::size_t(i)]];
  }
  TapeT<T>* tp = a.tape();
  TensorT<T> o = detail::emit(tp, m, 1, std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      auto& ga = tp->grad_buf(a.id(), a.size());
      for (int i = 0; i < m; ++i) {
        ga[std::size_t(i) * n + idx[std::size_t(i)]] += (*g)[std::size_t(i)];
      }
    });
  }
  return o;
}

// Latent-conditioned column mixing. p holds per-point stacked class maps
// (m x C*f, class c occupying columns [c*f, (c+1)*f)); z holds per-point
// mixing rows (m x C). out[i] = sum_c z[i,c] * p[i, c-block].
// With one-hot z this is exact column selection: zero z entries route
// exactly zero gradient into their blocks.
template <typename T>
TensorT<T> latent_mix(const TensorT<T>& p, const TensorT<T>& z, int f) {
  const int m = p.rows(), c = z.cols();
  if (z.rows() != m || f < 1 || p.cols() != c * f) {
    throw ContractError("latent_mix: maps " +
                        detail::shape_str(p.rows(), p.cols()) + ", mix " +
                        detail::shape_str(z.rows(), z.cols()) + ", width " +
                        std::to_string(f));
  }
  detail::check_finite("latent_mix", p.data());
  detail::check_finite("latent_mix", z.data());
  std::vector<T> v(std::size_t(m) * f, T(0));
  for (int i = 0; i < m; ++i) {
    const T* pi = p.data().data() + std::size_t(i) * p.cols();
    const T* zi = z.data().data() + std::size_t(i) * c;
    T* vi = v.data() + std::size_t(i) * f;
    for (int cc = 0; cc < c; ++cc) {
      T w = zi[cc];
      if (w == T(0)) continue;
      const T* blk = pi + std::size_t(cc) * f;
      for (int j = 0; j < f; ++j) vi[j] += w * blk[j];
    }
  }
  detail::check_finite("latent_mix", v);
  TapeT<T>* tp = detail::merge_tape(detail::merge_tape<T>(nullptr, p), z);
  TensorT<T> o = detail::emit(tp, m, f, std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      if (p.tracked()) {
        auto& gp = tp->grad_buf(p.id(), p.size());
        for (int i = 0; i < m; ++i) {
          const T* zi = z.data().data() + std::size_t(i) * c;
          const T* gi = g->data() + std::size_t(i) * f;
          T* gpi = gp.data() + std::size_t(i) * p.cols();
          for (int cc = 0; cc < c; ++cc) {
            T w = zi[cc];
            if (w == T(0)) continue;
            T* blk = gpi + std::size_t(cc) * f;
            for (int j = 0; j < f; ++j) blk[j] += w * gi[j];
          }
        }
      }
      if (z.tracked()) {
        auto& gz = tp->grad_buf(z.id(), z.size());
        for (int i = 0; i < m; ++i) {
          const T* pi = p.data().data() + std::size_t(i) * p.cols();
          const T* gi = g->data() + std::size_t(i) * f;
          T* gzi = gz.data() + std::size_t(i) * c;
          for (int cc = 0; cc < c; ++cc) {
            const T* blk = pi + std::size_t(cc) * f;
            T s = T(0);
            for (int j = 0; j < f; ++j) s += blk[j] * gi[j];
            gzi[cc] += s;
          }
        }
      }
    });
  }
  return o;
}

// Weighted neighborhood sum: out[i] = sum_k w[i,k] * h[idx[i,k]].
// idx/w are m x k row-major; weights are not differentiated (they come
// from geometry, not parameters).
template <typename T>
TensorT<T> neighbor_mix(const TensorT<T>& h, const std::vector<int>& idx,
                        const std::vector<T>& w, int k) {
  const int m = h.rows(), f = h.cols();
  if (k < 1 || idx.size() != std::size_t(m) * k || w.size() != idx.size()) {
    throw ContractError("neighbor_mix: bad index/weight table for " +
                        detail::shape_str(m, f));
  }
  for (int x : idx) {
    if (x < 0 || x >= m) {
      throw ContractError("neighbor_mix: index " + std::to_string(x) +
                          " outside " + std::to_string(m) + " rows");
    }
  }
  detail::check_finite("neighbor_mix", h.data());
  detail::check_finite("neighbor_mix", w);
  std::vector<T> v(std::size_t(m) * f, T(0));
  for (int i = 0; i < m; ++i) {
    T* vi = v.data() + std::size_t(i) * f;
    for (int kk = 0; kk < k; ++kk) {
      T ww = w[std::size_t(i) * k + kk];
      const T* hj =
          h.data().data() + std::size_t(idx[std::size_t(i) * k + kk]) * f;
      for (int j = 0; j < f; ++j) vi[j] += ww * hj[j];
    }
  }
  detail::check_finite("neighbor_mix", v);
  TapeT<T>* tp = h.tape();
  TensorT<T> o = detail::emit(tp, m, f, std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      auto& gh = tp->grad_buf(h.id(), h.size());
      for (int i = 0; i < m; ++i) {
        const T* gi = g->data() + std::size_t(i) * f;
        for (int kk = 0; kk < k; ++kk) {
          T ww = w[std::size_t(i) * k + kk];
          T* gj = gh.data() + std::size_t(idx[std::size_t(i) * k + kk]) * f;
          for (int j = 0; j < f; ++j) gj[j] += ww * gi[j];
        }
      }
    });
  }
  return o;
}

// Cuts the gradient flow; the value passes through unchanged.
template <typename T>
TensorT<T> detach(const TensorT<T>& a) {
  return TensorT<T>::constant(a.rows(), a.cols(), a.data());
}

// ---- feature standardization ---------------------------------------------

template <typename T>
struct RunningStat {
  std::vector<T> mean, var;
  void init(int n) {
    mean.assign(std::size_t(n), T(0));
    var.assign(std::size_t(n), T(1));
  }
  bool empty() const { return mean.empty(); }
};

inline constexpr double kStdMomentum = 0.9;
inline constexpr double kVarFloor = 1e-5;

// Per-feature standardization with learnable affine, computed over the
// rows of the current pass. use_batch=false reads the running statistics
// instead (the deterministic inference map). Variance is floored at 1e-5;
// at or below the floor the variance path contributes no gradient.
template <typename T>
TensorT<T> standardize(const TensorT<T>& x, const TensorT<T>& gamma,
                       const TensorT<T>& beta, RunningStat<T>& rs,
                       bool use_batch, bool update_running) {
  const int m = x.rows(), n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 ||
      beta.cols() != n) {
    throw ContractError("standardize: affine shapes " +
                        detail::shape_str(gamma.rows(), gamma.cols()) + "/" +
                        detail::shape_str(beta.rows(), beta.cols()) +
                        " for input " + detail::shape_str(m, n));
  }
  if (rs.empty()) rs.init(n);
  if (static_cast<int>(rs.mean.size()) != n) {
    throw ContractError("standardize: running statistics track " +
                        std::to_string(rs.mean.size()) + " features, input has " +
                        std::to_string(n));
  }
  detail::check_finite("standardize", x.data());
  detail::check_finite("standardize", gamma.data());
  detail::check_finite("standardize", beta.data());

  struct Saved {
    std::vector<T> xhat, inv_std;
    std::vector<char> floored;
  };
  auto sv = std::make_shared<Saved>();
  sv->xhat.resize(std::size_t(m) * n);
  sv->inv_std.resize(std::size_t(n));
  sv->floored.assign(std::size_t(n), 0);

  std::vector<T> mu(std::size_t(n), T(0)), var(std::size_t(n), T(0));
  if (use_batch) {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) mu[std::size_t(j)] += x.data()[std::size_t(i) * n + j];
    }
    for (int j = 0; j < n; ++j) mu[std::size_t(j)] /= T(m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        T d = x.data()[std::size_t(i) * n + j] - mu[std::size_t(j)];
        var[std::size_t(j)] += d * d;
      }
    }
    for (int j = 0; j < n; ++j) var[std::size_t(j)] /= T(m);
    if (update_running) {
      for (int j = 0; j < n; ++j) {
        rs.mean[std::size_t(j)] = T(kStdMomentum) * rs.mean[std::size_t(j)] +
                                  T(1 - kStdMomentum) * mu[std::size_t(j)];
        rs.var[std::size_t(j)] = T(kStdMomentum) * rs.var[std::size_t(j)] +
                                 T(1 - kStdMomentum) * var[std::size_t(j)];
      }
    }
  } else {
    mu = rs.mean;
    var = rs.var;
  }
  for (int j = 0; j < n; ++j) {
    T ve = var[std::size_t(j)];
    if (ve <= T(kVarFloor)) {
      ve = T(kVarFloor);
      sv->floored[std::size_t(j)] = 1;
    }
    sv->inv_std[std::size_t(j)] = T(1) / std::sqrt(ve);
  }
  std::vector<T> v(std::size_t(m) * n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T xh = (x.data()[std::size_t(i) * n + j] - mu[std::size_t(j)]) *
             sv->inv_std[std::size_t(j)];
      sv->xhat[std::size_t(i) * n + j] = xh;
      v[std::size_t(i) * n + j] =
          gamma.data()[std::size_t(j)] * xh + beta.data()[std::size_t(j)];
    }
  }
  detail::check_finite("standardize", v);

  TapeT<T>* tp = detail::merge_tape(
      detail::merge_tape(detail::merge_tape<T>(nullptr, x), gamma), beta);
  TensorT<T> o = detail::emit(tp, m, n, std::move(v));
  if (tp) {
    tp->set_back(o, [=]() {
      const std::vector<T>* g = tp->maybe_grad(o.id());
      if (!g) return;
      if (gamma.tracked()) {
        auto& gg = tp->grad_buf(gamma.id(), gamma.size());
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            gg[std::size_t(j)] +=
                (*g)[std::size_t(i) * n + j] * sv->xhat[std::size_t(i) * n + j];
          }
        }
      }
      if (beta.tracked()) {
        auto& gb = tp->grad_buf(beta.id(), beta.size());
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            gb[std::size_t(j)] += (*g)[std::size_t(i) * n + j];
          }
        }
      }
      if (!x.tracked()) return;
      auto& gx = tp->grad_buf(x.id(), x.size());
      if (!use_batch) {
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            gx[std::size_t(i) * n + j] += (*g)[std::size_t(i) * n + j] *
                                          gamma.data()[std::size_t(j)] *
                                          sv->inv_std[std::size_t(j)];
          }
        }
        return;
      }
      // Batch mode couples every row through the shared statistics.
      std::vector<T> sum_dxh(std::size_t(n), T(0)), sum_dxh_xh(std::size_t(n), T(0));
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          T dxh = (*g)[std::size_t(i) * n + j] * gamma.data()[std::size_t(j)];
          sum_dxh[std::size_t(j)] += dxh;
          sum_dxh_xh[std::size_t(j)] += dxh * sv->xhat[std::size_t(i) * n + j];
        }
      }
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          T dxh = (*g)[std::size_t(i) * n + j] * gamma.data()[std::size_t(j)];
          T t = T(m) * dxh - sum_dxh[std::size_t(j)];
          if (!sv->floored[std::size_t(j)]) {
            t -= sv->xhat[std::size_t(i) * n + j] * sum_dxh_xh[std::size_t(j)];
          }
          gx[std::size_t(i) * n + j] += sv->inv_std[std::size_t(j)] / T(m) * t;
        }
      }
    });
  }
  return o;
}

// ---- parameters ----------------------------------------------------------

template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  std::vector<T> slot_m, slot_v;  // first/second moment accumulators
};

// Per-pass context: a tape (or null for pure evaluation), the
// standardization mode, and the parameter bindings made so far. Binding a
// parameter twice returns the same tape leaf, so gradients from repeated
// uses accumulate in one buffer.
template <typename T>
struct ForwardCtxT {
  TapeT<T>* tape = nullptr;
  bool batch_stats = true;
  bool update_running = false;
  std::unordered_map<const ParamT<T>*, TensorT<T>> bound;

  TensorT<T> use(ParamT<T>& p) {
    if (!tape) return p.value;
    auto it = bound.find(&p);
    if (it != bound.end()) return it->second;
    TensorT<T> t = tape->leaf(p.value);
    bound.emplace(&p, t);
    return t;
  }

  std::vector<T> grad_of(const ParamT<T>& p) const {
    auto it = bound.find(&p);
    if (!tape || it == bound.end()) {
      return std::vector<T>(p.value.size(), T(0));
    }
    return tape->grad_of(it->second);
  }
};

// ---- finite-difference harness -------------------------------------------

struct FdReport {
  double max_rel_err = 0.0;
  int worst_input = -1;
  int worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool deterministic = true;
};

// Central differences of a scalar function against supplied analytic
// gradients. fval must be deterministic; the harness evaluates the base
// point twice and flags any disagreement. Error is |a-d| relative to
// max(1, |a|, |d|).
template <typename F>
FdReport fd_check(F&& fval, const std::vector<TensorT<double>>& xs,
                  const std::vector<std::vector<double>>& analytic,
                  double h = 1e-5) {
  if (analytic.size() != xs.size()) {
    throw ContractError("fd_check: " + std::to_string(analytic.size()) +
                        " gradients for " + std::to_string(xs.size()) +
                        " inputs");
  }
  FdReport rep;
  double b1 = fval(xs);
  double b2 = fval(xs);
  rep.deterministic = (b1 == b2);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (analytic[k].size() != xs[k].size()) {
      throw ContractError("fd_check: gradient " + std::to_string(k) +
                          " has length " + std::to_string(analytic[k].size()) +
                          ", input has " + std::to_string(xs[k].size()));
    }
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      std::vector<double> vp = xs[k].data();
      std::vector<double> vm = xs[k].data();
      vp[i] += h;
      vm[i] -= h;
      std::vector<TensorT<double>> xp = xs, xm = xs;
      xp[k] = TensorT<double>::constant(xs[k].rows(), xs[k].cols(), std::move(vp));
      xm[k] = TensorT<double>::constant(xs[k].rows(), xs[k].cols(), std::move(vm));
      double num = (fval(xp) - fval(xm)) / (2.0 * h);
      double a = analytic[k][i];
      double err =
          std::abs(a - num) / std::max({1.0, std::abs(a), std::abs(num)});
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_input = static_cast<int>(k);
        rep.worst_coord = static_cast<int>(i);
        rep.worst_analytic = a;
        rep.worst_numeric = num;
      }
    }
  }
  return rep;
}

using Tensor = TensorT<double>;
using Tape = TapeT<double>;
using Param = ParamT<double>;
using ForwardCtx = ForwardCtxT<double>;

}  // namespace hpk
