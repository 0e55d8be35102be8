#pragma once

// Small shared builders for the unit tests: tiny configs, random
// instances, and lightly trained states whose distributions are not
// degenerate.

#include <vector>

#include "hpk/estimators.hpp"
#include "hpk/geometry.hpp"
#include "hpk/model.hpp"
#include "hpk/optimizer.hpp"
#include "hpk/rng.hpp"
#include "hpk/tensor.hpp"

namespace fx {

inline hpk::ModelConfig tiny_cfg(int K = 2, int C = 3,
                                 const std::string& estimator = "mpl-ste") {
  hpk::ModelConfig cfg;
  cfg.K_top = K;
  cfg.C = C;
  cfg.encoder_widths = {8, 8};
  cfg.F_d = 4;
  cfg.head_widths = {8};
  cfg.k_nn = 2;
  cfg.smoothing_layers = 1;
  cfg.L = 3;
  cfg.estimator = estimator;
  return cfg;
}

struct Instance {
  hpk::Tensor x;
  hpk::KnnGraph g;
  std::vector<int> top;  // 1-based
};

inline Instance random_instance(hpk::Rng& rng, int m, int k_nn, int K) {
  hpk::PointCloud pc;
  pc.m = m;
  pc.pts.resize(std::size_t(m) * 3);
  for (auto& v : pc.pts) v = hpk::uniform(rng, -1, 1);
  Instance inst;
  hpk::PointCloud norm = hpk::center_unit_sphere(pc);
  inst.g = hpk::prepare_graph(norm, k_nn);
  std::vector<double> feats(norm.pts.begin(), norm.pts.end());
  inst.x = hpk::Tensor::constant(m, 3, std::move(feats));
  inst.top.resize(std::size_t(m));
  for (auto& t : inst.top) t = hpk::uniform_int(rng, 1, K);
  return inst;
}

// A few optimizer steps in batch-statistics mode. Leaves the running
// statistics populated, so frozen-mode evaluations are meaningful.
inline void warm_up(hpk::ModelState& st, Instance& inst, int steps,
                    std::uint64_t seed) {
  hpk::Adam opt;
  auto params = st.params();
  for (int s = 0; s < steps; ++s) {
    hpk::Rng rng = hpk::make_rng(seed, std::uint64_t(s));
    hpk::Tape tape;
    hpk::ForwardCtx ctx;
    ctx.tape = &tape;
    ctx.batch_stats = true;
    ctx.update_running = true;
    hpk::LossReport rep;
    if (st.cfg.estimator == "mc-reinforce") {
      rep = hpk::loss_mc_reinforce(ctx, st, inst.x, inst.g, inst.top,
                                   st.cfg.L, st.cfg.B, rng);
    } else if (st.cfg.estimator == "mc-pathwise") {
      rep = hpk::loss_mc_pathwise(ctx, st, inst.x, inst.g, inst.top, st.cfg.L,
                                  st.cfg.tau, rng);
    } else {
      rep = hpk::loss_mpl_ste(ctx, st, inst.x, inst.g, inst.top);
    }
    opt.step(params, rep.grads);
  }
}

inline hpk::ForwardCtx frozen_ctx(hpk::Tape* tape = nullptr) {
  hpk::ForwardCtx ctx;
  ctx.tape = tape;
  ctx.batch_stats = false;
  ctx.update_running = false;
  return ctx;
}

}  // namespace fx
