#pragma once

#include <string>
#include <vector>

#include "hpk/error.hpp"
#include "hpk/model.hpp"
#include "hpk/rng.hpp"
#include "hpk/sampling.hpp"
#include "hpk/tensor.hpp"

namespace hpk {

// Prediction-time forward passes. All run tape-free with running
// statistics, so they are deterministic affine pipelines given the state
// (plus the sample stream for the Monte Carlo path).

template <typename T>
struct InferOutT {
  int m = 0, K = 0;
  std::vector<T> scores;    // m x K; MPL rows are unnormalized bound scores
  std::vector<int> labels;  // 1-based top-level predictions
};

namespace detail {

template <typename T>
ForwardCtxT<T> eval_ctx() {
  ForwardCtxT<T> ctx;
  ctx.tape = nullptr;
  ctx.batch_stats = false;
  ctx.update_running = false;
  return ctx;
}

template <typename T>
std::vector<int> argmax_labels(const std::vector<T>& scores, int m, int k) {
  std::vector<int> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    out[std::size_t(i)] =
        1 + detail::argmax_row(scores.data() + std::size_t(i) * k, k);
  }
  return out;
}

}  // namespace detail

// Middle level: row argmax of the encoder distribution, 1-based.
template <typename T>
std::vector<int> infer_middle(ModelStateT<T>& st, const TensorT<T>& x,
                              const KnnGraph& g) {
  ForwardCtxT<T> ctx = detail::eval_ctx<T>();
  EncodeOutT<T> enc = encode(ctx, st, x, g);
  LatentSampleT<T> zs = argmax_onehot(to_latent_dist(enc.pi));
  std::vector<int> out(zs.index.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = zs.index[i] + 1;
  return out;
}

// Top level by the most probable latent: decode at the encoder argmax and
// scale by its probability. The scale never moves the per-point argmax,
// but keeps the scores comparable to the exact marginal as lower bounds.
template <typename T>
InferOutT<T> infer_top_mpl(ModelStateT<T>& st, const TensorT<T>& x,
                           const KnnGraph& g) {
  ForwardCtxT<T> ctx = detail::eval_ctx<T>();
  EncodeOutT<T> enc = encode(ctx, st, x, g);
  LatentSampleT<T> zs = argmax_onehot(to_latent_dist(enc.pi));
  TensorT<T> z = TensorT<T>::constant(zs.m, zs.C, zs.values);
  TensorT<T> q = decode(ctx, st, enc.h_e, z);
  InferOutT<T> out;
  out.m = q.rows();
  out.K = q.cols();
  out.scores.resize(q.size());
  for (int i = 0; i < out.m; ++i) {
    T pi_star = enc.pi.data()[std::size_t(i) * zs.C + zs.index[std::size_t(i)]];
    for (int k = 0; k < out.K; ++k) {
      out.scores[std::size_t(i) * out.K + k] =
          q.data()[std::size_t(i) * out.K + k] * pi_star;
    }
  }
  out.labels = detail::argmax_labels(out.scores, out.m, out.K);
  return out;
}

// Top level by Monte Carlo: average decoder outputs over L categorical
// draws. With running statistics each point's decode depends only on its
// drawn class, so the L draws collapse to per-class counts and C decode
// passes; the result is the same average.
template <typename T>
InferOutT<T> infer_top_mc(ModelStateT<T>& st, const TensorT<T>& x,
                          const KnnGraph& g, long long L, Rng& rng) {
  if (L < 1) throw ParamError("infer_top_mc: L must be positive");
  ForwardCtxT<T> ctx = detail::eval_ctx<T>();
  EncodeOutT<T> enc = encode(ctx, st, x, g);
  LatentDistT<T> dist = to_latent_dist(enc.pi);
  const int m = dist.m, C = dist.C;

  std::vector<long long> counts(std::size_t(m) * C, 0);
  for (long long l = 0; l < L; ++l) {
    std::vector<int> idx = categorical_indices(dist, rng);
    for (int i = 0; i < m; ++i) counts[std::size_t(i) * C + idx[std::size_t(i)]]++;
  }

  InferOutT<T> out;
  out.m = m;
  out.K = st.cfg.K_top;
  out.scores.assign(std::size_t(m) * out.K, T(0));
  for (int c = 0; c < C; ++c) {
    bool any = false;
    for (int i = 0; i < m; ++i) any = any || counts[std::size_t(i) * C + c] > 0;
    if (!any) continue;
    TensorT<T> qc = decode_class(ctx, st, enc.h_e, c);
    for (int i = 0; i < m; ++i) {
      T w = T(double(counts[std::size_t(i) * C + c]) / double(L));
      if (w == T(0)) continue;
      for (int k = 0; k < out.K; ++k) {
        out.scores[std::size_t(i) * out.K + k] +=
            w * qc.data()[std::size_t(i) * out.K + k];
      }
    }
  }
  out.labels = detail::argmax_labels(out.scores, out.m, out.K);
  return out;
}

using InferOut = InferOutT<double>;

}  // namespace hpk
