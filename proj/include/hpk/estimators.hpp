#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "hpk/error.hpp"
#include "hpk/model.hpp"
#include "hpk/rng.hpp"
#include "hpk/sampling.hpp"
#include "hpk/tensor.hpp"

namespace hpk {

template <typename T>
struct LossReportT {
  double loss = 0.0;
  std::map<std::string, std::vector<T>> grads;
  std::vector<T> per_point;       // per-point probability/score the loss logs
  std::vector<double> rewards;    // per-sample mean reward (score-function only)
  double mean_zhat = 0.0;
  int clamp_count = 0;            // points whose likelihood hit the log clamp
};

namespace detail {

inline void require_labels(const std::vector<int>& y, int m, int k_top) {
  if (static_cast<int>(y.size()) != m) {
    throw ContractError("labels: " + std::to_string(y.size()) + " for " +
                        std::to_string(m) + " points");
  }
  for (int v : y) {
    if (v < 1 || v > k_top) {
      throw ContractError("labels: value " + std::to_string(v) +
                          " outside [1.." + std::to_string(k_top) + "]");
    }
  }
}

inline std::vector<int> to_zero_based(const std::vector<int>& y) {
  std::vector<int> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] - 1;
  return out;
}

template <typename T>
void collect_grads(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                   LossReportT<T>& rep) {
  for (auto& [name, p] : st.params()) rep.grads[name] = ctx.grad_of(*p);
}

}  // namespace detail

// Most-probable-latent loss with the straight-through backward rule. The
// sample enters the decoder as onehot + (masked pi - detach(masked pi)):
// value exactly one-hot, gradient routed into pi only at the argmax
// entries. The log pi term of the loss is differentiated exactly.
template <typename T>
LossReportT<T> loss_mpl_ste(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                            const TensorT<T>& x, const KnnGraph& g,
                            const std::vector<int>& top_labels) {
  detail::require_labels(top_labels, x.rows(), st.cfg.K_top);
  std::vector<int> y = detail::to_zero_based(top_labels);
  EncodeOutT<T> enc = encode(ctx, st, x, g);
  LatentSampleT<T> zs = argmax_onehot(to_latent_dist(enc.pi));
  TensorT<T> mask = TensorT<T>::constant(zs.m, zs.C, zs.values);
  TensorT<T> masked = mul(enc.pi, mask);
  TensorT<T> z_ste = add(sub(masked, detach(masked)), mask);
  TensorT<T> q = decode(ctx, st, enc.h_e, z_ste);
  TensorT<T> p_pick = rows_pick(q, y);
  TensorT<T> pi_pick = rows_pick(enc.pi, zs.index);
  TensorT<T> loss = scale(
      mean_all(add(log_clamped(p_pick), log_clamped(pi_pick))), T(-1));
  if (ctx.tape) ctx.tape->backward(loss);

  LossReportT<T> rep;
  rep.loss = double(loss.item());
  rep.per_point.resize(std::size_t(x.rows()));
  for (int i = 0; i < x.rows(); ++i) {
    rep.per_point[std::size_t(i)] =
        p_pick.data()[std::size_t(i)] * pi_pick.data()[std::size_t(i)];
    if (rep.per_point[std::size_t(i)] < T(kLogClamp)) rep.clamp_count++;
  }
  if (ctx.tape) detail::collect_grads(ctx, st, rep);
  return rep;
}

// Score-function estimator. The likelihood path (decoder parameters and
// the encoder features feeding it) is differentiated directly through
// Zhat; the sampling path contributes through a surrogate sum of
// log pi picks weighted by the detached per-sample rewards (p - B),
// scaled by 1/(Zhat L m).
template <typename T>
LossReportT<T> loss_mc_reinforce(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                                 const TensorT<T>& x, const KnnGraph& g,
                                 const std::vector<int>& top_labels, int L,
                                 double B, Rng& rng) {
  detail::require_labels(top_labels, x.rows(), st.cfg.K_top);
  if (L < 1) throw ParamError("mc-reinforce: L must be positive");
  std::vector<int> y = detail::to_zero_based(top_labels);
  const int m = x.rows();
  EncodeOutT<T> enc = encode(ctx, st, x, g);
  LatentDistT<T> dist = to_latent_dist(enc.pi);
  TensorT<T> maps = decode_maps(ctx, st, enc.h_e);

  std::vector<std::vector<int>> draws(static_cast<std::size_t>(L));
  std::vector<TensorT<T>> picks(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    draws[std::size_t(l)] = categorical_indices(dist, rng);
    TensorT<T> z = TensorT<T>::constant(
        m, st.cfg.C,
        onehot_sample<T>(m, st.cfg.C, draws[std::size_t(l)]).values);
    picks[std::size_t(l)] = rows_pick(decode_mix(ctx, st, maps, z), y);
  }
  TensorT<T> zhat = scale(sum_rows(concat_cols(picks)), T(1) / T(L));
  TensorT<T> loss = scale(mean_all(log_clamped(zhat)), T(-1));

  LossReportT<T> rep;
  rep.loss = double(loss.item());
  rep.per_point = zhat.data();
  for (T v : zhat.data()) {
    if (v < T(kLogClamp)) rep.clamp_count++;
    rep.mean_zhat += double(v);
  }
  rep.mean_zhat /= m;
  rep.rewards.resize(std::size_t(L), 0.0);
  for (int l = 0; l < L; ++l) {
    double r = 0;
    for (int i = 0; i < m; ++i) {
      r += double(picks[std::size_t(l)].data()[std::size_t(i)]) /
           std::max(double(zhat.data()[std::size_t(i)]), kLogClamp);
    }
    rep.rewards[std::size_t(l)] = r / m;
  }

  if (ctx.tape) {
    TensorT<T> surr = loss;
    for (int l = 0; l < L; ++l) {
      std::vector<T> w(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        double zh = std::max(double(zhat.data()[std::size_t(i)]), kLogClamp);
        w[std::size_t(i)] =
            T(-(double(picks[std::size_t(l)].data()[std::size_t(i)]) - B) /
              (zh * L * m));
      }
      TensorT<T> coeff = TensorT<T>::constant(m, 1, std::move(w));
      surr = add(surr, sum_all(mul(coeff, log_clamped(rows_pick(
                                              enc.pi, draws[std::size_t(l)])))));
    }
    ctx.tape->backward(surr);
    detail::collect_grads(ctx, st, rep);
  }
  return rep;
}

// Same estimator driven by per-class draw counts instead of explicit
// samples. Requires running-statistics mode: with frozen statistics the
// decode of a point depends only on its class, so L draws reduce to the
// count table exactly. Used for large-L consistency checks.
template <typename T>
LossReportT<T> loss_mc_reinforce_counts(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                                        const TensorT<T>& x, const KnnGraph& g,
                                        const std::vector<int>& top_labels,
                                        const std::vector<long long>& counts,
                                        long long L, double B) {
  detail::require_labels(top_labels, x.rows(), st.cfg.K_top);
  if (ctx.batch_stats) {
    throw ContractError(
        "mc-reinforce counts: requires running-statistics mode");
  }
  const int m = x.rows(), C = st.cfg.C;
  if (counts.size() != std::size_t(m) * C) {
    throw ContractError("mc-reinforce counts: table size " +
                        std::to_string(counts.size()) + " for " +
                        std::to_string(m) + "x" + std::to_string(C));
  }
  if (L < 1) throw ParamError("mc-reinforce counts: L must be positive");
  std::vector<int> y = detail::to_zero_based(top_labels);
  EncodeOutT<T> enc = encode(ctx, st, x, g);

  std::vector<TensorT<T>> picks(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    picks[std::size_t(c)] = rows_pick(decode_class(ctx, st, enc.h_e, c), y);
  }
  TensorT<T> pm = concat_cols(picks);  // m x C
  std::vector<T> nv(std::size_t(m) * C);
  for (std::size_t i = 0; i < nv.size(); ++i) nv[i] = T(counts[i]);
  TensorT<T> n = TensorT<T>::constant(m, C, std::move(nv));
  TensorT<T> zhat = scale(sum_rows(mul(n, pm)), T(1) / T(L));
  TensorT<T> loss = scale(mean_all(log_clamped(zhat)), T(-1));

  LossReportT<T> rep;
  rep.loss = double(loss.item());
  rep.per_point = zhat.data();
  for (T v : zhat.data()) {
    if (v < T(kLogClamp)) rep.clamp_count++;
    rep.mean_zhat += double(v);
  }
  rep.mean_zhat /= m;

  if (ctx.tape) {
    std::vector<T> w(std::size_t(m) * C);
    for (int i = 0; i < m; ++i) {
      double zh = std::max(double(zhat.data()[std::size_t(i)]), kLogClamp);
      for (int c = 0; c < C; ++c) {
        double p = double(pm.data()[std::size_t(i) * C + c]);
        w[std::size_t(i) * C + c] =
            T(-double(counts[std::size_t(i) * C + c]) * (p - B) /
              (zh * double(L) * m));
      }
    }
    TensorT<T> coeff = TensorT<T>::constant(m, C, std::move(w));
    TensorT<T> surr =
        add(loss, sum_all(mul(coeff, log_clamped(enc.pi))));
    ctx.tape->backward(surr);
    detail::collect_grads(ctx, st, rep);
  }
  return rep;
}

// Pathwise estimator through the Gumbel-softmax relaxation; the whole
// composition is differentiable, so backward needs no surrogate.
template <typename T>
LossReportT<T> loss_mc_pathwise(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                                const TensorT<T>& x, const KnnGraph& g,
                                const std::vector<int>& top_labels, int L,
                                double tau, Rng& rng) {
  detail::require_labels(top_labels, x.rows(), st.cfg.K_top);
  if (L < 1) throw ParamError("mc-pathwise: L must be positive");
  if (tau <= 0) throw ParamError("mc-pathwise: tau must be positive");
  std::vector<int> y = detail::to_zero_based(top_labels);
  const int m = x.rows();
  EncodeOutT<T> enc = encode(ctx, st, x, g);
  TensorT<T> log_pi = log_clamped(enc.pi);
  TensorT<T> maps = decode_maps(ctx, st, enc.h_e);

  std::vector<TensorT<T>> picks(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    TensorT<T> eps = TensorT<T>::constant(
        m, st.cfg.C, gumbel_noise<T>(m, st.cfg.C, rng));
    TensorT<T> z = softmax_rows(scale(add(log_pi, eps), T(1.0 / tau)));
    picks[std::size_t(l)] = rows_pick(decode_mix(ctx, st, maps, z), y);
  }
  TensorT<T> zhat = scale(sum_rows(concat_cols(picks)), T(1) / T(L));
  TensorT<T> loss = scale(mean_all(log_clamped(zhat)), T(-1));
  if (ctx.tape) ctx.tape->backward(loss);

  LossReportT<T> rep;
  rep.loss = double(loss.item());
  rep.per_point = zhat.data();
  for (T v : zhat.data()) {
    if (v < T(kLogClamp)) rep.clamp_count++;
    rep.mean_zhat += double(v);
  }
  rep.mean_zhat /= m;
  if (ctx.tape) detail::collect_grads(ctx, st, rep);
  return rep;
}

// Exact marginalization over the latent classes; factorizes per point.
// Small-instance guard because this exists to cross-check the samplers
// and estimators, not to train. Requires running-statistics mode: batch
// statistics would couple points and break the factorization being
// verified.
template <typename T>
LossReportT<T> exact_marginal_loss(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                                   const TensorT<T>& x, const KnnGraph& g,
                                   const std::vector<int>& top_labels) {
  detail::require_labels(top_labels, x.rows(), st.cfg.K_top);
  if (st.cfg.C > 8 || x.rows() > 16) {
    throw ParamError("exact_marginal_loss: limited to C <= 8 and m <= 16; got C=" +
                     std::to_string(st.cfg.C) + ", m=" +
                     std::to_string(x.rows()));
  }
  if (ctx.batch_stats) {
    throw ContractError(
        "exact_marginal_loss: requires running-statistics mode");
  }
  std::vector<int> y = detail::to_zero_based(top_labels);
  const int m = x.rows(), C = st.cfg.C;
  EncodeOutT<T> enc = encode(ctx, st, x, g);
  std::vector<TensorT<T>> picks(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    picks[std::size_t(c)] = rows_pick(decode_class(ctx, st, enc.h_e, c), y);
  }
  TensorT<T> marg = sum_rows(mul(enc.pi, concat_cols(picks)));
  TensorT<T> loss = scale(mean_all(log_clamped(marg)), T(-1));
  if (ctx.tape) ctx.tape->backward(loss);

  LossReportT<T> rep;
  rep.loss = double(loss.item());
  rep.per_point = marg.data();
  for (T v : marg.data()) {
    if (v < T(kLogClamp)) rep.clamp_count++;
  }
  if (ctx.tape) detail::collect_grads(ctx, st, rep);
  return rep;
}

using LossReport = LossReportT<double>;

}  // namespace hpk
