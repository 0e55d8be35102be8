#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hpk/error.hpp"
#include "hpk/geometry.hpp"
#include "hpk/rng.hpp"
#include "hpk/sampling.hpp"
#include "hpk/tensor.hpp"

namespace hpk {

inline const std::vector<std::string> kEstimators = {"mpl-ste", "mc-reinforce",
                                                     "mc-pathwise"};

struct ModelConfig {
  int K_top = 0;  // supervised classes
  int C = 0;      // latent classes
  std::vector<int> encoder_widths = {64, 128, 128};
  int F_d = 64;
  std::vector<int> head_widths = {64};
  int k_nn = 16;
  int smoothing_layers = 1;
  double tau = 1.0;
  int L = 5;
  double B = 1.0;
  std::string estimator = "mpl-ste";

  int F_e() const { return encoder_widths.back(); }

  void validate() const {
    if (K_top < 2) throw ParamError("config: K_top must be at least 2");
    if (C < 1) throw ParamError("config: C must be at least 1");
    if (L < 1) throw ParamError("config: L must be at least 1");
    if (tau <= 0) throw ParamError("config: tau must be positive");
    if (k_nn < 1) throw ParamError("config: k_nn must be positive");
    if (F_d < 1) throw ParamError("config: F_d must be positive");
    if (encoder_widths.empty()) throw ParamError("config: empty encoder");
    if (smoothing_layers < 1) throw ParamError("config: smoothing_layers");
    for (int w : encoder_widths) {
      if (w < 1) throw ParamError("config: encoder width must be positive");
    }
    for (int w : head_widths) {
      if (w < 1) throw ParamError("config: head width must be positive");
    }
    bool known = false;
    for (const auto& e : kEstimators) known = known || e == estimator;
    if (!known) {
      throw ParamError("config: estimator must be one of mpl-ste, "
                       "mc-reinforce, mc-pathwise");
    }
  }
};

template <typename T>
struct LinearT {
  ParamT<T> W, b;
};

template <typename T>
struct StdLayerT {
  ParamT<T> gamma, beta;
  RunningStat<T> rs;
};

// All parameters and running statistics of encoder plus decoder.
// Deliberately move-only: copies would alias parameter storage; take
// clone() for a snapshot.
template <typename T>
struct ModelStateT {
  ModelConfig cfg;
  std::vector<LinearT<T>> enc;       // per encoder width
  std::vector<StdLayerT<T>> enc_std;
  std::vector<ParamT<T>> smooth;     // F_e x F_e each
  LinearT<T> enc_head;               // F_e -> C
  std::vector<LinearT<T>> dec_map;   // C maps, F_e -> F_d
  std::vector<LinearT<T>> dec_hidden;  // head stack, last is -> K_top
  std::vector<StdLayerT<T>> dec_std;   // per hidden layer except the last

  ModelStateT() = default;
  ModelStateT(const ModelStateT&) = delete;
  ModelStateT& operator=(const ModelStateT&) = delete;
  ModelStateT(ModelStateT&&) = default;
  ModelStateT& operator=(ModelStateT&&) = default;

  std::vector<std::pair<std::string, ParamT<T>*>> params() {
    std::vector<std::pair<std::string, ParamT<T>*>> out;
    for (std::size_t i = 0; i < enc.size(); ++i) {
      std::string p = "enc" + std::to_string(i);
      out.push_back({p + ".W", &enc[i].W});
      out.push_back({p + ".b", &enc[i].b});
      out.push_back({p + ".gamma", &enc_std[i].gamma});
      out.push_back({p + ".beta", &enc_std[i].beta});
    }
    for (std::size_t i = 0; i < smooth.size(); ++i) {
      out.push_back({"smooth" + std::to_string(i) + ".W", &smooth[i]});
    }
    out.push_back({"enc_head.W", &enc_head.W});
    out.push_back({"enc_head.b", &enc_head.b});
    for (std::size_t i = 0; i < dec_map.size(); ++i) {
      std::string p = "dec_map" + std::to_string(i);
      out.push_back({p + ".W", &dec_map[i].W});
      out.push_back({p + ".b", &dec_map[i].b});
    }
    for (std::size_t i = 0; i < dec_hidden.size(); ++i) {
      std::string p = "dec_head" + std::to_string(i);
      out.push_back({p + ".W", &dec_hidden[i].W});
      out.push_back({p + ".b", &dec_hidden[i].b});
      if (i < dec_std.size()) {
        out.push_back({p + ".gamma", &dec_std[i].gamma});
        out.push_back({p + ".beta", &dec_std[i].beta});
      }
    }
    return out;
  }

  std::vector<std::pair<std::string, RunningStat<T>*>> stats() {
    std::vector<std::pair<std::string, RunningStat<T>*>> out;
    for (std::size_t i = 0; i < enc_std.size(); ++i) {
      out.push_back({"enc" + std::to_string(i) + ".rs", &enc_std[i].rs});
    }
    for (std::size_t i = 0; i < dec_std.size(); ++i) {
      out.push_back({"dec_head" + std::to_string(i) + ".rs", &dec_std[i].rs});
    }
    return out;
  }

  // Groups gradients are reported under; used by the oracle comparisons.
  std::vector<std::string> param_names() {
    std::vector<std::string> out;
    for (auto& [name, p] : params()) out.push_back(name);
    return out;
  }

  ModelStateT clone() const {
    ModelStateT c;
    c.cfg = cfg;
    auto copy_param = [](const ParamT<T>& p) {
      ParamT<T> q;
      q.name = p.name;
      q.value = TensorT<T>::constant(p.value.rows(), p.value.cols(),
                                     p.value.data());
      q.slot_m = p.slot_m;
      q.slot_v = p.slot_v;
      return q;
    };
    auto copy_linear = [&](const LinearT<T>& l) {
      return LinearT<T>{copy_param(l.W), copy_param(l.b)};
    };
    auto copy_std = [&](const StdLayerT<T>& s) {
      StdLayerT<T> o;
      o.gamma = copy_param(s.gamma);
      o.beta = copy_param(s.beta);
      o.rs = s.rs;
      return o;
    };
    for (const auto& l : enc) c.enc.push_back(copy_linear(l));
    for (const auto& s : enc_std) c.enc_std.push_back(copy_std(s));
    for (const auto& p : smooth) c.smooth.push_back(copy_param(p));
    c.enc_head = copy_linear(enc_head);
    for (const auto& l : dec_map) c.dec_map.push_back(copy_linear(l));
    for (const auto& l : dec_hidden) c.dec_hidden.push_back(copy_linear(l));
    for (const auto& s : dec_std) c.dec_std.push_back(copy_std(s));
    return c;
  }
};

namespace detail {

template <typename T>
TensorT<T> glorot(Rng& rng, int fan_in, int fan_out) {
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<T> v(std::size_t(fan_in) * fan_out);
  for (auto& x : v) x = T(uniform(rng, -bound, bound));
  return TensorT<T>::constant(fan_in, fan_out, std::move(v));
}

template <typename T>
LinearT<T> init_linear(Rng& rng, const std::string& name, int fan_in,
                       int fan_out) {
  LinearT<T> l;
  l.W.name = name + ".W";
  l.W.value = glorot<T>(rng, fan_in, fan_out);
  l.b.name = name + ".b";
  l.b.value = TensorT<T>::zeros(1, fan_out);
  return l;
}

template <typename T>
StdLayerT<T> init_std(const std::string& name, int width) {
  StdLayerT<T> s;
  s.gamma.name = name + ".gamma";
  s.gamma.value = TensorT<T>::full(1, width, T(1));
  s.beta.name = name + ".beta";
  s.beta.value = TensorT<T>::zeros(1, width);
  s.rs.init(width);
  return s;
}

}  // namespace detail

template <typename T>
ModelStateT<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = make_rng(seed, 17);
  ModelStateT<T> st;
  st.cfg = cfg;
  int in = 3;
  for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
    int out = cfg.encoder_widths[i];
    std::string p = "enc" + std::to_string(i);
    st.enc.push_back(detail::init_linear<T>(rng, p, in, out));
    st.enc_std.push_back(detail::init_std<T>(p, out));
    in = out;
  }
  for (int i = 0; i < cfg.smoothing_layers; ++i) {
    ParamT<T> w;
    w.name = "smooth" + std::to_string(i) + ".W";
    w.value = detail::glorot<T>(rng, cfg.F_e(), cfg.F_e());
    st.smooth.push_back(std::move(w));
  }
  st.enc_head = detail::init_linear<T>(rng, "enc_head", cfg.F_e(), cfg.C);
  for (int c = 0; c < cfg.C; ++c) {
    st.dec_map.push_back(detail::init_linear<T>(
        rng, "dec_map" + std::to_string(c), cfg.F_e(), cfg.F_d));
  }
  in = cfg.F_d;
  for (std::size_t i = 0; i < cfg.head_widths.size(); ++i) {
    int out = cfg.head_widths[i];
    std::string p = "dec_head" + std::to_string(i);
    st.dec_hidden.push_back(detail::init_linear<T>(rng, p, in, out));
    st.dec_std.push_back(detail::init_std<T>(p, out));
    in = out;
  }
  st.dec_hidden.push_back(detail::init_linear<T>(
      rng, "dec_head" + std::to_string(cfg.head_widths.size()), in, cfg.K_top));
  return st;
}

// Preprocessed coordinates as the network input block.
template <typename T>
TensorT<T> cloud_features(const PointCloud& cloud) {
  cloud.validate();
  std::vector<T> v(cloud.pts.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(cloud.pts[i]);
  return TensorT<T>::constant(cloud.m, 3, std::move(v));
}

template <typename T>
struct EncodeOutT {
  TensorT<T> h_e;  // m x F_e, pre-smoothing features feeding the decoder
  TensorT<T> pi;   // m x C
};

// Per-point MLP, then normal-weighted neighborhood smoothing, then a
// linear head with a row softmax.
template <typename T>
EncodeOutT<T> encode(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                     const TensorT<T>& x, const KnnGraph& g) {
  if (x.rows() != g.m) {
    throw ContractError("encode: " + std::to_string(x.rows()) +
                        " points, graph has " + std::to_string(g.m));
  }
  if (g.a_norm.empty()) throw ContractError("encode: graph weights missing");
  if (g.k != st.cfg.k_nn) {
    throw ContractError("encode: graph k " + std::to_string(g.k) +
                        ", config k_nn " + std::to_string(st.cfg.k_nn));
  }
  TensorT<T> h = x;
  for (std::size_t i = 0; i < st.enc.size(); ++i) {
    h = add_rowvec(matmul(h, ctx.use(st.enc[i].W)), ctx.use(st.enc[i].b));
    h = standardize(h, ctx.use(st.enc_std[i].gamma), ctx.use(st.enc_std[i].beta),
                    st.enc_std[i].rs, ctx.batch_stats, ctx.update_running);
    h = relu(h);
  }
  EncodeOutT<T> out;
  out.h_e = h;
  std::vector<T> w(g.a_norm.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = T(g.a_norm[i]);
  TensorT<T> hs = h;
  for (auto& sw : st.smooth) {
    hs = matmul(neighbor_mix(hs, g.idx, w, g.width()), ctx.use(sw));
  }
  out.pi = softmax_rows(
      add_rowvec(matmul(hs, ctx.use(st.enc_head.W)), ctx.use(st.enc_head.b)));
  return out;
}

// Stacked per-class maps: columns [c*F_d, (c+1)*F_d) hold class c's view
// of every point.
template <typename T>
TensorT<T> decode_maps(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                       const TensorT<T>& h_e) {
  std::vector<TensorT<T>> parts;
  parts.reserve(st.dec_map.size());
  for (auto& l : st.dec_map) {
    parts.push_back(add_rowvec(matmul(h_e, ctx.use(l.W)), ctx.use(l.b)));
  }
  return concat_cols(parts);
}

template <typename T>
TensorT<T> decode_head(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                       const TensorT<T>& h_d) {
  TensorT<T> h = h_d;
  for (std::size_t i = 0; i + 1 < st.dec_hidden.size(); ++i) {
    h = add_rowvec(matmul(h, ctx.use(st.dec_hidden[i].W)),
                   ctx.use(st.dec_hidden[i].b));
    h = standardize(h, ctx.use(st.dec_std[i].gamma), ctx.use(st.dec_std[i].beta),
                    st.dec_std[i].rs, ctx.batch_stats, ctx.update_running);
    h = relu(h);
  }
  auto& last = st.dec_hidden.back();
  return softmax_rows(add_rowvec(matmul(h, ctx.use(last.W)), ctx.use(last.b)));
}

// Decode from precomputed class maps; lets callers that draw many mixes
// per instance pay for the map linears once.
template <typename T>
TensorT<T> decode_mix(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                      const TensorT<T>& maps, const TensorT<T>& z) {
  if (z.cols() != st.cfg.C || z.rows() != maps.rows() ||
      maps.cols() != st.cfg.C * st.cfg.F_d) {
    throw ContractError("decode_mix: maps " + std::to_string(maps.rows()) +
                        "x" + std::to_string(maps.cols()) + ", mix " +
                        std::to_string(z.rows()) + "x" +
                        std::to_string(z.cols()) + " for C=" +
                        std::to_string(st.cfg.C) + ", F_d=" +
                        std::to_string(st.cfg.F_d));
  }
  return decode_head(ctx, st, latent_mix(maps, z, st.cfg.F_d));
}

// p(y | z, x) rows for a latent mix; hard one-hot rows select a single
// class map, simplex rows blend them.
template <typename T>
TensorT<T> decode(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                  const TensorT<T>& h_e, const TensorT<T>& z) {
  if (z.cols() != st.cfg.C || z.rows() != h_e.rows()) {
    throw ContractError("decode: mix " + std::to_string(z.rows()) + "x" +
                        std::to_string(z.cols()) + " for C=" +
                        std::to_string(st.cfg.C) + ", m=" +
                        std::to_string(h_e.rows()));
  }
  return decode_mix(ctx, st, decode_maps(ctx, st, h_e), z);
}

// Decode under a single fixed class for every point; used by the
// enumeration and count-based paths.
template <typename T>
TensorT<T> decode_class(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                        const TensorT<T>& h_e, int c) {
  if (c < 0 || c >= st.cfg.C) {
    throw ContractError("decode_class: class " + std::to_string(c) +
                        " outside C=" + std::to_string(st.cfg.C));
  }
  auto& l = st.dec_map[std::size_t(c)];
  return decode_head(ctx, st,
                     add_rowvec(matmul(h_e, ctx.use(l.W)), ctx.use(l.b)));
}

template <typename T>
LatentDistT<T> to_latent_dist(const TensorT<T>& pi) {
  LatentDistT<T> d;
  d.m = pi.rows();
  d.C = pi.cols();
  d.probs = pi.data();
  return d;
}

using ModelState = ModelStateT<double>;
using EncodeOut = EncodeOutT<double>;

}  // namespace hpk
