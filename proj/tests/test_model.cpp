#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hpk/model.hpp"
#include "hpk/rng.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace hpk;

TEST_CASE("parameter shapes follow the configured architecture") {
  ModelConfig cfg = fx::tiny_cfg(4, 5);
  cfg.encoder_widths = {7, 9};
  cfg.F_d = 6;
  cfg.head_widths = {11, 13};
  cfg.smoothing_layers = 2;
  ModelState st = init_params<double>(cfg, 3);

  REQUIRE(st.enc.size() == 2);
  REQUIRE(st.enc[0].W.value.rows() == 3);
  REQUIRE(st.enc[0].W.value.cols() == 7);
  REQUIRE(st.enc[1].W.value.rows() == 7);
  REQUIRE(st.enc[1].W.value.cols() == 9);
  REQUIRE(st.enc[1].b.value.rows() == 1);
  REQUIRE(st.enc[1].b.value.cols() == 9);
  REQUIRE(st.enc_std.size() == 2);
  REQUIRE(st.enc_std[1].gamma.value.cols() == 9);
  REQUIRE(st.enc_std[1].rs.mean.size() == 9);

  REQUIRE(st.smooth.size() == 2);
  REQUIRE(st.smooth[0].value.rows() == 9);
  REQUIRE(st.smooth[0].value.cols() == 9);

  REQUIRE(st.enc_head.W.value.rows() == 9);
  REQUIRE(st.enc_head.W.value.cols() == 5);

  REQUIRE(st.dec_map.size() == 5);
  for (auto& l : st.dec_map) {
    REQUIRE(l.W.value.rows() == 9);
    REQUIRE(l.W.value.cols() == 6);
  }

  REQUIRE(st.dec_hidden.size() == 3);  // two hidden plus the output layer
  REQUIRE(st.dec_hidden[0].W.value.rows() == 6);
  REQUIRE(st.dec_hidden[0].W.value.cols() == 11);
  REQUIRE(st.dec_hidden[1].W.value.cols() == 13);
  REQUIRE(st.dec_hidden[2].W.value.rows() == 13);
  REQUIRE(st.dec_hidden[2].W.value.cols() == 4);
  REQUIRE(st.dec_std.size() == 2);  // none after the output layer
}

TEST_CASE("initial weights respect the fan bound, biases start at zero") {
  ModelConfig cfg = fx::tiny_cfg(3, 4);
  ModelState st = init_params<double>(cfg, 11);
  for (auto& [name, p] : st.params()) {
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
      for (double v : p->value.data()) REQUIRE(v == 0.0);
    } else if (name.find(".gamma") != std::string::npos) {
      for (double v : p->value.data()) REQUIRE(v == 1.0);
    } else if (name.find(".beta") != std::string::npos) {
      for (double v : p->value.data()) REQUIRE(v == 0.0);
    } else {
      double bound =
          std::sqrt(6.0 / (p->value.rows() + p->value.cols()));
      bool all_zero = true;
      for (double v : p->value.data()) {
        REQUIRE(std::abs(v) <= bound);
        all_zero = all_zero && v == 0.0;
      }
      REQUIRE_FALSE(all_zero);
    }
  }
}

TEST_CASE("initialization is seed deterministic") {
  ModelConfig cfg = fx::tiny_cfg();
  ModelState a = init_params<double>(cfg, 5);
  ModelState b = init_params<double>(cfg, 5);
  ModelState c = init_params<double>(cfg, 6);
  auto pa = a.params(), pb = b.params(), pc = c.params();
  bool any_differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].second->value.data() == pb[i].second->value.data());
    any_differs =
        any_differs || pa[i].second->value.data() != pc[i].second->value.data();
  }
  REQUIRE(any_differs);
}

TEST_CASE("encoder emits row-stochastic class probabilities") {
  Rng rng = make_rng(21, 0);
  ModelConfig cfg = fx::tiny_cfg(2, 4);
  ModelState st = init_params<double>(cfg, 7);
  fx::Instance inst = fx::random_instance(rng, 25, cfg.k_nn, cfg.K_top);
  ForwardCtx ctx = fx::frozen_ctx();
  EncodeOut enc = encode(ctx, st, inst.x, inst.g);
  REQUIRE(enc.h_e.rows() == 25);
  REQUIRE(enc.h_e.cols() == cfg.F_e());
  REQUIRE(enc.pi.rows() == 25);
  REQUIRE(enc.pi.cols() == 4);
  for (int i = 0; i < 25; ++i) {
    double s = 0;
    for (int c = 0; c < 4; ++c) {
      double p = enc.pi.data()[std::size_t(i) * 4 + c];
      REQUIRE(p >= 0.0);
      s += p;
    }
    REQUIRE(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("encode rejects graphs that do not match") {
  Rng rng = make_rng(22, 0);
  ModelConfig cfg = fx::tiny_cfg();
  ModelState st = init_params<double>(cfg, 7);
  fx::Instance inst = fx::random_instance(rng, 12, cfg.k_nn, cfg.K_top);
  ForwardCtx ctx = fx::frozen_ctx();

  fx::Instance other = fx::random_instance(rng, 14, cfg.k_nn, cfg.K_top);
  REQUIRE_THROWS_AS(encode(ctx, st, inst.x, other.g), ContractError);

  fx::Instance wide = fx::random_instance(rng, 12, cfg.k_nn + 1, cfg.K_top);
  REQUIRE_THROWS_AS(encode(ctx, st, wide.x, wide.g), ContractError);
}

TEST_CASE("neighborhood smoothing matches the dense operator") {
  Rng rng = make_rng(23, 0);
  fx::Instance inst = fx::random_instance(rng, 30, 4, 2);
  const int f = 5;
  std::vector<double> hv(std::size_t(30) * f);
  for (auto& v : hv) v = uniform(rng, -2, 2);
  Tensor h = Tensor::constant(30, f, hv);
  std::vector<double> w(inst.g.a_norm.begin(), inst.g.a_norm.end());
  Tensor mixed = neighbor_mix(h, inst.g.idx, w, inst.g.width());
  std::vector<double> ref = oracle::smooth_dense(inst.g, hv, f);
  REQUIRE(mixed.rows() == 30);
  REQUIRE(mixed.cols() == f);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    REQUIRE(mixed.data()[i] == Catch::Approx(ref[i]).margin(1e-12));
  }
}

TEST_CASE("single-class decode equals a one-hot mix") {
  Rng rng = make_rng(24, 0);
  ModelConfig cfg = fx::tiny_cfg(3, 3);
  ModelState st = init_params<double>(cfg, 9);
  fx::Instance inst = fx::random_instance(rng, 15, cfg.k_nn, cfg.K_top);
  ForwardCtx ctx = fx::frozen_ctx();
  EncodeOut enc = encode(ctx, st, inst.x, inst.g);
  for (int c = 0; c < cfg.C; ++c) {
    Tensor direct = decode_class(ctx, st, enc.h_e, c);
    LatentSample z = onehot_sample<double>(15, cfg.C, std::vector<int>(15, c));
    Tensor mixed =
        decode(ctx, st, enc.h_e, Tensor::constant(15, cfg.C, z.values));
    REQUIRE(direct.data() == mixed.data());  // bit-exact
  }
}

TEST_CASE("precomputed maps give the same decode") {
  Rng rng = make_rng(25, 0);
  ModelConfig cfg = fx::tiny_cfg(2, 4);
  ModelState st = init_params<double>(cfg, 13);
  fx::Instance inst = fx::random_instance(rng, 10, cfg.k_nn, cfg.K_top);
  ForwardCtx ctx = fx::frozen_ctx();
  EncodeOut enc = encode(ctx, st, inst.x, inst.g);
  Tensor maps = decode_maps(ctx, st, enc.h_e);
  REQUIRE(maps.rows() == 10);
  REQUIRE(maps.cols() == cfg.C * cfg.F_d);
  LatentSample z = gumbel_softmax_sample(to_latent_dist(enc.pi), 1.0, rng);
  Tensor zt = Tensor::constant(10, cfg.C, z.values);
  REQUIRE(decode_mix(ctx, st, maps, zt).data() ==
          decode(ctx, st, enc.h_e, zt).data());

  Tensor bad = Tensor::zeros(10, cfg.C + 1);
  REQUIRE_THROWS_AS(decode_mix(ctx, st, maps, bad), ContractError);
  REQUIRE_THROWS_AS(decode(ctx, st, enc.h_e, Tensor::zeros(9, cfg.C)),
                    ContractError);
  REQUIRE_THROWS_AS(decode_class(ctx, st, enc.h_e, cfg.C), ContractError);
}

TEST_CASE("clone detaches parameter and statistic storage") {
  Rng rng = make_rng(26, 0);
  ModelConfig cfg = fx::tiny_cfg();
  ModelState st = init_params<double>(cfg, 15);
  fx::Instance inst = fx::random_instance(rng, 20, cfg.k_nn, cfg.K_top);
  fx::warm_up(st, inst, 2, 99);

  ModelState snap = st.clone();
  std::vector<double> w0 = st.enc[0].W.value.data();
  std::vector<double> rs0 = st.enc_std[0].rs.mean;
  REQUIRE(snap.enc[0].W.value.data() == w0);
  REQUIRE(snap.enc_std[0].rs.mean == rs0);

  fx::warm_up(st, inst, 1, 100);
  REQUIRE(st.enc[0].W.value.data() != w0);
  REQUIRE(st.enc_std[0].rs.mean != rs0);
  REQUIRE(snap.enc[0].W.value.data() == w0);
  REQUIRE(snap.enc_std[0].rs.mean == rs0);
}

TEST_CASE("configuration validation rejects bad settings") {
  auto bad = [](auto mutate) {
    ModelConfig cfg = fx::tiny_cfg();
    mutate(cfg);
    REQUIRE_THROWS_AS(cfg.validate(), ParamError);
  };
  bad([](ModelConfig& c) { c.K_top = 1; });
  bad([](ModelConfig& c) { c.C = 0; });
  bad([](ModelConfig& c) { c.L = 0; });
  bad([](ModelConfig& c) { c.tau = 0; });
  bad([](ModelConfig& c) { c.k_nn = 0; });
  bad([](ModelConfig& c) { c.F_d = 0; });
  bad([](ModelConfig& c) { c.encoder_widths.clear(); });
  bad([](ModelConfig& c) { c.encoder_widths = {8, 0}; });
  bad([](ModelConfig& c) { c.head_widths = {-1}; });
  bad([](ModelConfig& c) { c.smoothing_layers = 0; });
  bad([](ModelConfig& c) { c.estimator = "gibbs"; });
  REQUIRE_NOTHROW(fx::tiny_cfg().validate());
}

TEST_CASE("probability view over encoder output validates") {
  Rng rng = make_rng(27, 0);
  ModelConfig cfg = fx::tiny_cfg(2, 5);
  ModelState st = init_params<double>(cfg, 17);
  fx::Instance inst = fx::random_instance(rng, 8, cfg.k_nn, cfg.K_top);
  ForwardCtx ctx = fx::frozen_ctx();
  EncodeOut enc = encode(ctx, st, inst.x, inst.g);
  LatentDist d = to_latent_dist(enc.pi);
  REQUIRE_NOTHROW(d.validate());
  REQUIRE(d.m == 8);
  REQUIRE(d.C == 5);
  REQUIRE(d.probs == enc.pi.data());
}
