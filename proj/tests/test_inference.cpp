#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hpk/estimators.hpp"
#include "hpk/inference.hpp"
#include "hpk/model.hpp"
#include "hpk/rng.hpp"
#include "support/fixtures.hpp"

using namespace hpk;

namespace {

// Dense per-class mixture of decoder outputs, computed term by term.
std::vector<double> marginal_matrix(ModelState& st, const Tensor& x,
                                    const KnnGraph& g) {
  ForwardCtx ctx = fx::frozen_ctx();
  EncodeOut enc = encode(ctx, st, x, g);
  const int m = x.rows(), C = st.cfg.C, K = st.cfg.K_top;
  std::vector<double> out(std::size_t(m) * K, 0.0);
  for (int c = 0; c < C; ++c) {
    Tensor qc = decode_class(ctx, st, enc.h_e, c);
    for (int i = 0; i < m; ++i) {
      double pi = enc.pi.data()[std::size_t(i) * C + c];
      for (int k = 0; k < K; ++k) {
        out[std::size_t(i) * K + k] += pi * qc.data()[std::size_t(i) * K + k];
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("middle-level prediction is the encoder argmax, one-based") {
  Rng rng = make_rng(61, 0);
  ModelConfig cfg = fx::tiny_cfg(2, 4);
  ModelState st = init_params<double>(cfg, 3);
  fx::Instance inst = fx::random_instance(rng, 20, cfg.k_nn, cfg.K_top);
  fx::warm_up(st, inst, 2, 4);

  std::vector<int> mid = infer_middle(st, inst.x, inst.g);
  ForwardCtx ctx = fx::frozen_ctx();
  EncodeOut enc = encode(ctx, st, inst.x, inst.g);
  REQUIRE(mid.size() == 20);
  for (int i = 0; i < 20; ++i) {
    int best = 0;
    for (int c = 1; c < 4; ++c) {
      if (enc.pi.data()[std::size_t(i) * 4 + c] >
          enc.pi.data()[std::size_t(i) * 4 + best]) {
        best = c;
      }
    }
    REQUIRE(mid[std::size_t(i)] == best + 1);
    REQUIRE(mid[std::size_t(i)] >= 1);
    REQUIRE(mid[std::size_t(i)] <= 4);
  }
}

TEST_CASE("most-probable-latent scores are the scaled class-map decode") {
  Rng rng = make_rng(62, 0);
  ModelConfig cfg = fx::tiny_cfg(3, 3);
  ModelState st = init_params<double>(cfg, 5);
  fx::Instance inst = fx::random_instance(rng, 14, cfg.k_nn, cfg.K_top);
  fx::warm_up(st, inst, 3, 6);

  InferOut out = infer_top_mpl(st, inst.x, inst.g);
  REQUIRE(out.m == 14);
  REQUIRE(out.K == 3);

  ForwardCtx ctx = fx::frozen_ctx();
  EncodeOut enc = encode(ctx, st, inst.x, inst.g);
  LatentSample zs = argmax_onehot(to_latent_dist(enc.pi));
  for (int i = 0; i < 14; ++i) {
    int c = zs.index[std::size_t(i)];
    Tensor qc = decode_class(ctx, st, enc.h_e, c);
    double pi = enc.pi.data()[std::size_t(i) * 3 + c];
    int best = 0;
    for (int k = 0; k < 3; ++k) {
      REQUIRE(out.scores[std::size_t(i) * 3 + k] ==
              qc.data()[std::size_t(i) * 3 + k] * pi);
      if (qc.data()[std::size_t(i) * 3 + k] > qc.data()[std::size_t(i) * 3 + best]) {
        best = k;
      }
    }
    // The probability scale never moves the row argmax.
    REQUIRE(out.labels[std::size_t(i)] == best + 1);
  }
}

TEST_CASE("most-probable-latent scores never exceed the marginal") {
  Rng rng = make_rng(63, 0);
  ModelConfig cfg = fx::tiny_cfg(2, 4);
  ModelState st = init_params<double>(cfg, 7);
  fx::Instance inst = fx::random_instance(rng, 16, cfg.k_nn, cfg.K_top);
  fx::warm_up(st, inst, 3, 8);

  InferOut out = infer_top_mpl(st, inst.x, inst.g);
  ForwardCtx ctx = fx::frozen_ctx();
  LossReport marg = exact_marginal_loss(ctx, st, inst.x, inst.g, inst.top);
  for (int i = 0; i < 16; ++i) {
    int y = inst.top[std::size_t(i)] - 1;
    REQUIRE(out.scores[std::size_t(i) * 2 + y] <= marg.per_point[std::size_t(i)]);
  }
}

TEST_CASE("sampled inference converges to the dense mixture") {
  Rng rng = make_rng(64, 0);
  ModelConfig cfg = fx::tiny_cfg(2, 3);
  ModelState st = init_params<double>(cfg, 9);
  fx::Instance inst = fx::random_instance(rng, 12, cfg.k_nn, cfg.K_top);
  fx::warm_up(st, inst, 3, 10);

  std::vector<double> ref = marginal_matrix(st, inst.x, inst.g);
  Rng draw = make_rng(65, 0);
  InferOut out = infer_top_mc(st, inst.x, inst.g, 200000, draw);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    REQUIRE(out.scores[i] == Catch::Approx(ref[i]).margin(0.01));
  }
  for (int lab : out.labels) {
    REQUIRE(lab >= 1);
    REQUIRE(lab <= 2);
  }
}

TEST_CASE("sampled inference is reproducible from its seed") {
  Rng rng = make_rng(66, 0);
  ModelConfig cfg = fx::tiny_cfg(2, 3);
  ModelState st = init_params<double>(cfg, 11);
  fx::Instance inst = fx::random_instance(rng, 10, cfg.k_nn, cfg.K_top);
  fx::warm_up(st, inst, 2, 12);

  Rng a = make_rng(404, 0), b = make_rng(404, 0), c = make_rng(405, 0);
  InferOut oa = infer_top_mc(st, inst.x, inst.g, 500, a);
  InferOut ob = infer_top_mc(st, inst.x, inst.g, 500, b);
  InferOut oc = infer_top_mc(st, inst.x, inst.g, 500, c);
  REQUIRE(oa.scores == ob.scores);
  REQUIRE(oa.labels == ob.labels);
  REQUIRE(oa.scores != oc.scores);

  Rng d = make_rng(406, 0);
  REQUIRE_THROWS_AS(infer_top_mc(st, inst.x, inst.g, 0, d), ParamError);
}
