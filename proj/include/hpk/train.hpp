#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hpk/checkpoint.hpp"
#include "hpk/data.hpp"
#include "hpk/error.hpp"
#include "hpk/estimators.hpp"
#include "hpk/evaluation.hpp"
#include "hpk/inference.hpp"
#include "hpk/model.hpp"
#include "hpk/optimizer.hpp"
#include "hpk/rng.hpp"

namespace hpk {

struct TrainConfig {
  ModelConfig model;
  double lr = 1e-3;
  int batch_size = 8;
  int epochs = 50;
  std::uint64_t seed = 0;
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  std::string eval_mode = "auto";  // auto | mpl | mc
  int eval_L = 100;

  void validate() const {
    model.validate();
    if (lr < 0) throw ParamError("train: negative learning rate");
    if (batch_size < 1) throw ParamError("train: batch size must be positive");
    if (epochs < 1) throw ParamError("train: epochs must be positive");
    if (eval_L < 1) throw ParamError("train: eval_L must be positive");
    if (eval_mode != "auto" && eval_mode != "mpl" && eval_mode != "mc") {
      throw ParamError("train: eval_mode must be auto, mpl, or mc");
    }
  }
};

struct MetricsRecord {
  int epoch = 0;
  double loss = 0, top_oa = 0, mid_oa = 0, seconds = 0, mean_zhat = 0;
  long long clamps = 0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},   {"loss", loss},
            {"top_oa", top_oa}, {"mid_oa", mid_oa},
            {"seconds", seconds}, {"mean_zhat", mean_zhat},
            {"clamps", clamps}};
  }
};

// A cloud after the fixed preprocessing: centered, unit-sphere scaled,
// neighbor graph with smoothing weights, labels kept 1-based.
template <typename T>
struct PreparedCloudT {
  TensorT<T> x;
  KnnGraph g;
  std::vector<int> top, mid;
};

template <typename T>
PreparedCloudT<T> prepare_cloud(const LabeledCloud& c, int k_nn) {
  c.validate();
  PreparedCloudT<T> p;
  PointCloud norm = center_unit_sphere(c.cloud);
  p.g = prepare_graph(norm, k_nn);
  p.x = cloud_features<T>(norm);
  p.top = c.top;
  p.mid = c.mid;
  return p;
}

template <typename T>
std::vector<PreparedCloudT<T>> prepare_all(const std::vector<LabeledCloud>& cs,
                                           int k_nn) {
  std::vector<PreparedCloudT<T>> out;
  out.reserve(cs.size());
  for (const auto& c : cs) out.push_back(prepare_cloud<T>(c, k_nn));
  return out;
}

struct EvalSummary {
  double top_oa = 0;   // mean over repeats for the sampling path
  double top_std = 0;  // sample standard deviation over repeats
  double mid_oa = 0;
  std::vector<double> top_per_instance;  // first repeat
  std::vector<double> mid_per_instance;
  int repeats = 1;
};

// mode "mpl" is deterministic; "mc" draws eval_L samples per instance
// with rng streams derived from (seed, repeat, instance).
template <typename T>
EvalSummary evaluate_clouds(ModelStateT<T>& st,
                            std::vector<PreparedCloudT<T>>& data,
                            const std::string& mode, long long L,
                            std::uint64_t seed, int repeats = 1) {
  if (data.empty()) throw ContractError("evaluate: no instances");
  if (mode != "mpl" && mode != "mc") {
    throw ParamError("evaluate: mode must be mpl or mc");
  }
  if (repeats < 1) throw ParamError("evaluate: repeats must be positive");
  EvalSummary out;
  out.repeats = mode == "mpl" ? 1 : repeats;

  // Middle level is argmax inference either way.
  std::vector<std::pair<long long, long long>> mid_ct;
  for (auto& d : data) {
    std::vector<int> mid = infer_middle(st, d.x, d.g);
    mid_ct.push_back({matched_correct(mid, d.mid), d.mid.size()});
  }
  LevelMetrics mm = overall_accuracy(mid_ct);
  out.mid_oa = mm.oa;
  out.mid_per_instance = mm.per_instance;

  std::vector<double> top_oas;
  for (int r = 0; r < out.repeats; ++r) {
    std::vector<std::pair<long long, long long>> top_ct;
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto& d = data[i];
      InferOutT<T> inf;
      if (mode == "mpl") {
        inf = infer_top_mpl(st, d.x, d.g);
      } else {
        Rng rng = make_rng(mix_seed(seed, std::uint64_t(r)), i);
        inf = infer_top_mc(st, d.x, d.g, L, rng);
      }
      top_ct.push_back({direct_correct(inf.labels, d.top), d.top.size()});
    }
    LevelMetrics tm = overall_accuracy(top_ct);
    top_oas.push_back(tm.oa);
    if (r == 0) out.top_per_instance = tm.per_instance;
  }
  double mean = 0;
  for (double v : top_oas) mean += v;
  mean /= top_oas.size();
  out.top_oa = mean;
  if (top_oas.size() > 1) {
    double ss = 0;
    for (double v : top_oas) ss += (v - mean) * (v - mean);
    out.top_std = std::sqrt(ss / (top_oas.size() - 1));
  }
  return out;
}

template <typename T>
struct TrainResultT {
  ModelStateT<T> state;
  std::vector<MetricsRecord> metrics;
  int best_epoch = -1;
  double best_score = -1;
  bool aborted = false;
  std::string abort_reason;
};

namespace detail {

template <typename T>
LossReportT<T> run_estimator(ForwardCtxT<T>& ctx, ModelStateT<T>& st,
                             PreparedCloudT<T>& d, Rng& rng) {
  const ModelConfig& mc = st.cfg;
  if (mc.estimator == "mpl-ste") {
    return loss_mpl_ste(ctx, st, d.x, d.g, d.top);
  }
  if (mc.estimator == "mc-reinforce") {
    return loss_mc_reinforce(ctx, st, d.x, d.g, d.top, mc.L, mc.B, rng);
  }
  return loss_mc_pathwise(ctx, st, d.x, d.g, d.top, mc.L, mc.tau, rng);
}

}  // namespace detail

// Minibatch training with per-instance tapes; gradients are averaged in
// instance order before each optimizer step. Deterministic given
// (config, seed): batch order, sample draws, and evaluation streams are
// all derived from the seed. A non-finite loss aborts the run; the
// checkpoint of the last completed epoch stays on disk.
template <typename T>
TrainResultT<T> train(const TrainConfig& cfg) {
  cfg.validate();
  DatasetManifest man = read_manifest(cfg.manifest);
  if (man.K_top != cfg.model.K_top) {
    throw IncompatibleError("dataset has K_top " + std::to_string(man.K_top) +
                            ", model configured for " +
                            std::to_string(cfg.model.K_top));
  }
  std::vector<PreparedCloudT<T>> train_data =
      prepare_all<T>(load_split(cfg.manifest, "train"), cfg.model.k_nn);
  std::vector<PreparedCloudT<T>> test_data =
      prepare_all<T>(load_split(cfg.manifest, "test"), cfg.model.k_nn);

  std::filesystem::create_directories(cfg.out_dir);
  const std::filesystem::path metrics_path = cfg.out_dir / "metrics.jsonl";
  const std::filesystem::path last_path = cfg.out_dir / "last.hpk";
  const std::filesystem::path best_path = cfg.out_dir / "best.hpk";

  TrainResultT<T> res;
  res.state = init_params<T>(cfg.model, cfg.seed);
  AdamT<T> opt;
  opt.lr = cfg.lr;
  auto params = res.state.params();

  const std::string eval_mode =
      cfg.eval_mode != "auto"
          ? cfg.eval_mode
          : (cfg.model.estimator == "mpl-ste" ? "mpl" : "mc");

  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng = make_rng(cfg.seed, 0x10000u + std::uint64_t(epoch));
    shuffle(order_rng, order);

    double loss_sum = 0, zhat_sum = 0;
    long long clamp_sum = 0;
    std::size_t done = 0;
    bool bad = false;
    while (done < order.size() && !bad) {
      std::size_t bsz =
          std::min<std::size_t>(cfg.batch_size, order.size() - done);
      std::map<std::string, std::vector<T>> acc;
      for (std::size_t b = 0; b < bsz; ++b) {
        auto& d = train_data[order[done + b]];
        Rng samp_rng = make_rng(cfg.seed, mix_seed(0x20000, step++));
        TapeT<T> tape;
        ForwardCtxT<T> ctx;
        ctx.tape = &tape;
        ctx.batch_stats = true;
        ctx.update_running = true;
        LossReportT<T> rep;
        try {
          rep = detail::run_estimator(ctx, res.state, d, samp_rng);
        } catch (const NonFiniteError& e) {
          res.aborted = true;
          res.abort_reason = e.what();
          bad = true;
          break;
        }
        loss_sum += rep.loss;
        zhat_sum += rep.mean_zhat;
        clamp_sum += rep.clamp_count;
        for (auto& [name, g] : rep.grads) {
          auto it = acc.find(name);
          if (it == acc.end()) {
            acc.emplace(name, std::move(g));
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
          }
        }
      }
      if (bad) break;
      for (auto& [name, g] : acc) {
        for (auto& v : g) v /= T(bsz);
      }
      opt.step(params, acc);
      done += bsz;
    }
    if (bad) break;

    EvalSummary ev;
    try {
      ev = evaluate_clouds(res.state, test_data, eval_mode, cfg.eval_L,
                           mix_seed(cfg.seed, 0x30000u + std::uint64_t(epoch)));
    } catch (const NonFiniteError& e) {
      // Divergence can also surface in the evaluation forward pass.
      res.aborted = true;
      res.abort_reason = e.what();
      break;
    }
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / double(train_data.size());
    rec.top_oa = ev.top_oa;
    rec.mid_oa = ev.mid_oa;
    rec.mean_zhat = zhat_sum / double(train_data.size());
    rec.clamps = clamp_sum;
    rec.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    res.metrics.push_back(rec);
    {
      std::ofstream mf(metrics_path, std::ios::app);
      if (!mf) throw Error("cannot append " + metrics_path.string());
      mf << rec.to_json().dump() << "\n";
    }
    save_checkpoint(last_path, res.state);
    double score = (ev.top_oa + ev.mid_oa) / 2;
    if (score > res.best_score) {
      res.best_score = score;
      res.best_epoch = epoch;
      save_checkpoint(best_path, res.state);
    }
  }
  return res;
}

using TrainResult = TrainResultT<double>;
using PreparedCloud = PreparedCloudT<double>;

}  // namespace hpk
