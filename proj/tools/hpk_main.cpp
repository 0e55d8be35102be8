// hpk: point-cloud part segmentation with a discrete latent middle level.
// Subcommands cover the full workflow: synthesize data, train, evaluate,
// run inference, export colored clouds, and self-check gradients/oracles.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hpk/hpk.hpp"

namespace fs = std::filesystem;

namespace {

fs::path resolve_out(const std::string& cli_value) {
  if (!cli_value.empty()) return cli_value;
  if (const char* env = std::getenv("HPK_OUT_DIR")) {
    if (*env) return env;
  }
  return ".";
}

std::string peek_precision(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw hpk::Error("cannot open " + p.string());
  std::string tag, line;
  std::getline(f, tag);
  if (tag != "hpk.v1") {
    throw hpk::ParseError("not an hpk.v1 checkpoint: " + p.string(), 1);
  }
  std::getline(f, line);
  std::istringstream is(line);
  std::string k, v;
  is >> k >> v;
  if (k != "precision" || (v != "fp64" && v != "fp32")) {
    throw hpk::ParseError("bad precision line in " + p.string(), 2);
  }
  return v;
}

struct TrainArgs {
  std::string manifest, out, estimator = "mpl-ste", eval_mode = "auto";
  std::string precision = "fp64";
  int classes = 8, epochs = 50, batch = 8, eval_L = 100;
  int knn = 16, fd = 64, smoothing = 1, draws = 5;
  std::vector<int> enc_widths = {64, 128, 128}, head_widths = {64};
  double lr = 1e-3, tau = 1.0, baseline = 1.0;
  std::uint64_t seed = 1;
};

template <typename T>
int run_train(const TrainArgs& a) {
  hpk::TrainConfig cfg;
  cfg.model.C = a.classes;
  cfg.model.estimator = a.estimator;
  cfg.model.encoder_widths = a.enc_widths;
  cfg.model.head_widths = a.head_widths;
  cfg.model.F_d = a.fd;
  cfg.model.k_nn = a.knn;
  cfg.model.smoothing_layers = a.smoothing;
  cfg.model.L = a.draws;
  cfg.model.tau = a.tau;
  cfg.model.B = a.baseline;
  cfg.lr = a.lr;
  cfg.batch_size = a.batch;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.manifest = a.manifest;
  cfg.out_dir = resolve_out(a.out);
  cfg.eval_mode = a.eval_mode;
  cfg.eval_L = a.eval_L;
  cfg.model.K_top = hpk::read_manifest(cfg.manifest).K_top;

  hpk::TrainResultT<T> res = hpk::train<T>(cfg);
  for (const auto& r : res.metrics) {
    std::cout << "epoch " << r.epoch << " loss " << r.loss << " top_oa "
              << r.top_oa << " mid_oa " << r.mid_oa << "\n";
  }
  if (res.aborted) {
    std::cerr << "error: training aborted: " << res.abort_reason
              << " (last completed epoch kept in last.hpk)\n";
    return 1;
  }
  std::cout << "best epoch " << res.best_epoch << " score " << res.best_score
            << "\nwrote " << (cfg.out_dir / "best.hpk").string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, manifest, split = "test", mode = "auto";
  int draws = 100, repeats = 1;
  std::uint64_t seed = 0;
};

template <typename T>
int run_eval(const EvalArgs& a) {
  hpk::ModelStateT<T> st = hpk::load_checkpoint<T>(a.checkpoint);
  auto data = hpk::prepare_all<T>(hpk::load_split(a.manifest, a.split),
                                  st.cfg.k_nn);
  std::string mode = a.mode != "auto"
                         ? a.mode
                         : (st.cfg.estimator == "mpl-ste" ? "mpl" : "mc");
  hpk::EvalSummary ev = hpk::evaluate_clouds(st, data, mode, a.draws, a.seed,
                                             a.repeats);
  nlohmann::json out = {{"mode", mode},
                        {"instances", data.size()},
                        {"top_oa", ev.top_oa},
                        {"mid_oa", ev.mid_oa},
                        {"repeats", ev.repeats}};
  if (ev.repeats > 1) out["top_oa_std"] = ev.top_std;
  std::cout << out.dump(2) << "\n";
  return 0;
}

struct InferArgs {
  std::string checkpoint, cloud, out, mode = "auto";
  int draws = 100;
  std::uint64_t seed = 0;
};

template <typename T>
int run_infer(const InferArgs& a) {
  hpk::ModelStateT<T> st = hpk::load_checkpoint<T>(a.checkpoint);
  hpk::LabeledCloud c = hpk::read_cloud(a.cloud);
  hpk::PreparedCloudT<T> d = hpk::prepare_cloud<T>(c, st.cfg.k_nn);
  std::vector<int> mid = hpk::infer_middle(st, d.x, d.g);
  hpk::InferOutT<T> top;
  std::string mode = a.mode != "auto"
                         ? a.mode
                         : (st.cfg.estimator == "mpl-ste" ? "mpl" : "mc");
  if (mode == "mpl") {
    top = hpk::infer_top_mpl(st, d.x, d.g);
  } else if (mode == "mc") {
    hpk::Rng rng = hpk::make_rng(a.seed, 0);
    top = hpk::infer_top_mc(st, d.x, d.g, a.draws, rng);
  } else {
    throw hpk::ParamError("infer: mode must be auto, mpl, or mc");
  }
  hpk::write_labels(a.out, top.labels, mid);
  std::cout << "wrote " << a.out << " (" << top.labels.size() << " points, "
            << mode << " top inference, top accuracy vs file "
            << double(hpk::direct_correct(top.labels, c.top)) / c.top.size()
            << ")\n";
  return 0;
}

int run_export(const std::string& cloud_path, const std::string& labels_path,
               const std::string& level, const std::string& out) {
  hpk::LabeledCloud c = hpk::read_cloud(cloud_path);
  std::vector<int> top = c.top, mid = c.mid;
  if (!labels_path.empty()) {
    auto [t, m] = hpk::read_labels(labels_path);
    if (t.size() != std::size_t(c.cloud.m)) {
      throw hpk::IncompatibleError(
          "label file has " + std::to_string(t.size()) + " rows, cloud has " +
          std::to_string(c.cloud.m) + " points");
    }
    top = std::move(t);
    mid = std::move(m);
  }
  hpk::export_colored(out, c.cloud, level == "top" ? top : mid);
  std::cout << "wrote " << out << " colored by " << level << " labels\n";
  return 0;
}

// ---- grad-check ----------------------------------------------------------

using BuildFn = std::function<hpk::Tensor(const std::vector<hpk::Tensor>&)>;

struct PrimSpec {
  std::string name;
  std::vector<std::pair<int, int>> shapes;
  double lo = -1.0, hi = 1.0;
  BuildFn build;
};

hpk::FdReport prim_fd(const PrimSpec& ps, hpk::Rng& rng, double h) {
  std::vector<hpk::Tensor> xs;
  for (auto [r, c] : ps.shapes) {
    std::vector<double> v(std::size_t(r) * c);
    for (auto& x : v) x = hpk::uniform(rng, ps.lo, ps.hi);
    xs.push_back(hpk::Tensor::constant(r, c, std::move(v)));
  }
  hpk::Tape tp;
  std::vector<hpk::Tensor> leaves;
  for (auto& x : xs) leaves.push_back(tp.leaf(x));
  hpk::Tensor out = ps.build(leaves);
  tp.backward(out);
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) analytic.push_back(tp.grad_of(l));
  auto fval = [&](const std::vector<hpk::Tensor>& v) {
    return ps.build(v).item();
  };
  return hpk::fd_check(fval, xs, analytic, h);
}

int run_grad_check(int seeds, double h, double tol) {
  using namespace hpk;
  // Fixed index sets for the gather-style primitives.
  const std::vector<int> picks = {2, 0, 3, 1, 2};
  const std::vector<int> nbr_flat = {0, 1, 2, 1, 0, 3, 2, 4, 0,
                                     3, 2, 1, 4, 3, 0};
  const std::vector<double> nbr_w(15, 1.0 / 3.0);

  auto sq = [](Tensor t) { return mul(t, t); };
  std::vector<PrimSpec> specs;
  specs.push_back({"matmul", {{3, 4}, {4, 2}}, -1, 1,
                   [&](auto& x) { return sum_all(sq(matmul(x[0], x[1]))); }});
  specs.push_back({"add", {{3, 4}, {3, 4}}, -1, 1,
                   [&](auto& x) { return sum_all(sq(add(x[0], x[1]))); }});
  specs.push_back({"sub", {{3, 4}, {3, 4}}, -1, 1,
                   [&](auto& x) { return sum_all(sq(sub(x[0], x[1]))); }});
  specs.push_back({"mul", {{3, 4}, {3, 4}}, -1, 1,
                   [&](auto& x) { return sum_all(sq(mul(x[0], x[1]))); }});
  specs.push_back({"add_rowvec", {{3, 4}, {1, 4}}, -1, 1, [&](auto& x) {
                     return sum_all(sq(add_rowvec(x[0], x[1])));
                   }});
  specs.push_back({"scale", {{3, 4}}, -1, 1,
                   [&](auto& x) { return sum_all(sq(scale(x[0], 1.7))); }});
  specs.push_back({"relu", {{3, 4}}, 0.1, 1.2,
                   [&](auto& x) { return sum_all(sq(relu(x[0]))); }});
  specs.push_back({"log_clamped", {{3, 4}}, 0.2, 1.5,
                   [&](auto& x) { return sum_all(sq(log_clamped(x[0]))); }});
  specs.push_back({"softmax_rows", {{4, 5}}, -2, 2, [&](auto& x) {
                     return sum_all(sq(mul(softmax_rows(x[0]), x[0])));
                   }});
  specs.push_back({"sum_all", {{3, 4}}, -1, 1,
                   [&](auto& x) { return sq(sum_all(x[0])); }});
  specs.push_back({"mean_all", {{3, 4}}, -1, 1,
                   [&](auto& x) { return sq(mean_all(x[0])); }});
  specs.push_back({"sum_rows", {{3, 4}}, -1, 1,
                   [&](auto& x) { return sum_all(sq(sum_rows(x[0]))); }});
  specs.push_back({"concat_cols", {{3, 2}, {3, 3}}, -1, 1, [&](auto& x) {
                     return sum_all(
                         sq(concat_cols(std::vector<hpk::Tensor>{x[0], x[1]})));
                   }});
  specs.push_back({"rows_pick", {{5, 4}}, -1, 1, [&](auto& x) {
                     return sum_all(sq(rows_pick(x[0], picks)));
                   }});
  specs.push_back({"latent_mix", {{5, 12}, {5, 3}}, -1, 1, [&](auto& x) {
                     return sum_all(sq(latent_mix(x[0], x[1], 4)));
                   }});
  specs.push_back({"neighbor_mix", {{5, 4}}, -1, 1, [&](auto& x) {
                     return sum_all(sq(neighbor_mix(x[0], nbr_flat, nbr_w, 3)));
                   }});
  specs.push_back({"standardize_batch", {{6, 3}, {1, 3}, {1, 3}}, -2, 2,
                   [&](auto& x) {
                     RunningStat<double> rs;
                     rs.init(3);
                     return sum_all(
                         sq(standardize(x[0], x[1], x[2], rs, true, false)));
                   }});
  specs.push_back({"standardize_frozen", {{6, 3}, {1, 3}, {1, 3}}, -2, 2,
                   [&](auto& x) {
                     RunningStat<double> rs;
                     rs.init(3);
                     rs.mean = {0.1, -0.2, 0.3};
                     rs.var = {0.5, 1.1, 0.9};
                     return sum_all(
                         sq(standardize(x[0], x[1], x[2], rs, false, false)));
                   }});

  bool ok = true;
  for (const auto& ps : specs) {
    double worst = 0;
    bool det = true;
    for (int s = 1; s <= seeds; ++s) {
      Rng rng = make_rng(std::uint64_t(s), 77);
      FdReport rep = prim_fd(ps, rng, h);
      worst = std::max(worst, rep.max_rel_err);
      det = det && rep.deterministic;
    }
    bool pass = worst <= tol && det;
    ok = ok && pass;
    std::printf("%-20s max_rel_err %.3e %s\n", ps.name.c_str(), worst,
                pass ? "ok" : "FAIL");
  }
  // detach must pass values through and stop gradients entirely.
  {
    Tape tp;
    Tensor x = tp.leaf(Tensor::constant(2, 2, {1, 2, 3, 4}));
    Tensor out = sum_all(mul(x, detach(scale(x, 3.0))));
    tp.backward(out);
    std::vector<double> gx = tp.grad_of(x);
    bool pass = true;
    for (int i = 0; i < 4; ++i) {
      pass = pass && gx[std::size_t(i)] == 3.0 * x.data()[std::size_t(i)];
    }
    ok = ok && pass;
    std::printf("%-20s gradient blocked      %s\n", "detach",
                pass ? "ok" : "FAIL");
  }
  std::printf("%s\n", ok ? "grad-check ok" : "grad-check FAILED");
  return ok ? 0 : 1;
}

// ---- oracle-check --------------------------------------------------------

int run_oracle_check(std::uint64_t seed) {
  using namespace hpk;
  bool all = true;
  auto report = [&](const char* name, bool pass) {
    all = all && pass;
    std::printf("%-24s %s\n", name, pass ? "ok" : "FAIL");
  };

  {  // neighbor search vs exhaustive sort
    Rng rng = make_rng(seed, 1);
    PointCloud pc;
    pc.m = 120;
    pc.pts.resize(360);
    for (auto& v : pc.pts) v = uniform(rng, -1, 1);
    KnnGraph g = build_knn(pc, 8);
    bool pass = true;
    for (int i = 0; i < 120 && pass; ++i) {
      std::vector<std::pair<double, int>> all_d;
      for (int j = 0; j < 120; ++j) {
        if (j == i) continue;
        double dx = pc.x(i) - pc.x(j), dy = pc.y(i) - pc.y(j),
               dz = pc.z(i) - pc.z(j);
        all_d.push_back({dx * dx + dy * dy + dz * dz, j});
      }
      std::sort(all_d.begin(), all_d.end());
      pass = pass && g.idx[std::size_t(i) * g.width()] == i;
      for (int j = 0; j < 8; ++j) {
        pass = pass && g.idx[std::size_t(i) * g.width() + j + 1] ==
                           all_d[std::size_t(j)].second;
      }
    }
    report("knn vs exhaustive", pass);
  }

  {  // optimal assignment vs permutation enumeration
    Rng rng = make_rng(seed, 2);
    bool pass = true;
    for (int t = 0; t < 50 && pass; ++t) {
      int P = uniform_int(rng, 1, 5), T = uniform_int(rng, 1, 5);
      ContingencyTable tab;
      tab.P = P;
      tab.T = T;
      tab.n.resize(std::size_t(P) * T);
      for (auto& v : tab.n) v = uniform_int(rng, 0, 30);
      int n = std::max(P, T);
      std::vector<int> perm(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) perm[std::size_t(i)] = i;
      long long best = 0;
      do {
        long long s = 0;
        for (int i = 0; i < P; ++i) {
          if (perm[std::size_t(i)] < T) s += tab.at(i, perm[std::size_t(i)]);
        }
        best = std::max(best, s);
      } while (std::next_permutation(perm.begin(), perm.end()));
      Assignment a = hungarian_match(tab);
      pass = a.agreement == best;
    }
    report("matching vs brute force", pass);
  }

  {  // categorical sampler frequencies (chi-square, df=4, alpha=0.001)
    Rng rng = make_rng(seed, 3);
    std::vector<double> probs = {0.35, 0.25, 0.2, 0.15, 0.05};
    LatentDistT<double> dist;
    dist.m = 1;
    dist.C = 5;
    dist.probs = probs;
    const int N = 20000;
    std::vector<long long> cnt(5, 0);
    for (int i = 0; i < N; ++i) {
      cnt[std::size_t(categorical_indices(dist, rng)[0])]++;
    }
    double chi2 = 0;
    for (int c = 0; c < 5; ++c) {
      double e = N * probs[std::size_t(c)];
      double d = double(cnt[std::size_t(c)]) - e;
      chi2 += d * d / e;
    }
    report("categorical frequencies", chi2 < 18.467);
  }

  {  // normals on a flat sheet line up with its axis
    Rng rng = make_rng(seed, 4);
    PointCloud pc;
    pc.m = 200;
    pc.pts.resize(600);
    for (int i = 0; i < 200; ++i) {
      pc.pts[std::size_t(i) * 3 + 0] = uniform(rng, -1, 1);
      pc.pts[std::size_t(i) * 3 + 1] = uniform(rng, -1, 1);
      pc.pts[std::size_t(i) * 3 + 2] = 0.0;
    }
    KnnGraph g = build_knn(pc, 12);
    NormalField nf = estimate_normals(pc, g);
    bool pass = true;
    for (int i = 0; i < 200; ++i) {
      pass = pass && std::abs(std::abs(nf.n[std::size_t(i) * 3 + 2]) - 1.0) <
                         1e-9;
    }
    report("plane normal recovery", pass);
  }

  std::printf("%s\n", all ? "oracle-check ok" : "oracle-check FAILED");
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised two-level point-cloud part segmentation"};
  app.require_subcommand(1);
  const std::vector<std::string> modes = {"auto", "mpl", "mc"};
  const std::vector<std::string> precisions = {"fp64", "fp32"};

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Synthesize a labeled dataset");
  std::string g_family = "chairs", g_out;
  int g_train = 200, g_test = 50, g_points = 512;
  std::uint64_t g_seed = 1;
  gen->add_option("--family", g_family, "Object family")
      ->check(CLI::IsMember({"chairs", "tables", "lamps", "mixed"}));
  gen->add_option("--train", g_train, "Training objects");
  gen->add_option("--test", g_test, "Test objects");
  gen->add_option("--points", g_points, "Points per object");
  gen->add_option("--seed", g_seed, "Generator seed");
  gen->add_option("--out", g_out, "Output directory (default $HPK_OUT_DIR)");

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  TrainArgs ta;
  tr->add_option("--manifest", ta.manifest, "Dataset manifest")->required();
  tr->add_option("--estimator", ta.estimator, "Gradient estimator")
      ->check(CLI::IsMember(hpk::kEstimators));
  tr->add_option("--classes", ta.classes, "Latent classes C");
  tr->add_option("--epochs", ta.epochs, "Training epochs");
  tr->add_option("--batch", ta.batch, "Minibatch size");
  tr->add_option("--lr", ta.lr, "Adam step size");
  tr->add_option("--seed", ta.seed, "Run seed");
  tr->add_option("--enc-widths", ta.enc_widths, "Encoder layer widths");
  tr->add_option("--head-widths", ta.head_widths, "Decoder head widths");
  tr->add_option("--fd", ta.fd, "Decoder feature width");
  tr->add_option("--knn", ta.knn, "Neighbors for the graph");
  tr->add_option("--smoothing", ta.smoothing, "Smoothing layers");
  tr->add_option("--draws", ta.draws, "Monte Carlo draws per step");
  tr->add_option("--tau", ta.tau, "Relaxation temperature");
  tr->add_option("--baseline", ta.baseline, "Reward baseline (0 disables)");
  tr->add_option("--eval-mode", ta.eval_mode, "Per-epoch eval mode")
      ->check(CLI::IsMember(modes));
  tr->add_option("--eval-L", ta.eval_L, "Draws for mc eval");
  tr->add_option("--precision", ta.precision, "Numeric precision")
      ->check(CLI::IsMember(precisions));
  tr->add_option("--out", ta.out, "Output directory (default $HPK_OUT_DIR)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  EvalArgs ea;
  ev->add_option("--checkpoint", ea.checkpoint, "Model checkpoint")->required();
  ev->add_option("--manifest", ea.manifest, "Dataset manifest")->required();
  ev->add_option("--split", ea.split, "Manifest split")
      ->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--mode", ea.mode, "Top-level inference mode")
      ->check(CLI::IsMember(modes));
  ev->add_option("--draws", ea.draws, "Draws for mc mode");
  ev->add_option("--repeats", ea.repeats, "Sampling repeats for mc mode");
  ev->add_option("--seed", ea.seed, "Sampling seed");

  // infer
  auto* in = app.add_subcommand("infer", "Label one cloud");
  InferArgs ia;
  in->add_option("--checkpoint", ia.checkpoint, "Model checkpoint")->required();
  in->add_option("--cloud", ia.cloud, "Input cloud (.ptc)")->required();
  in->add_option("--out", ia.out, "Output label file (.lbl)")->required();
  in->add_option("--mode", ia.mode, "Top-level inference mode")
      ->check(CLI::IsMember(modes));
  in->add_option("--draws", ia.draws, "Draws for mc mode");
  in->add_option("--seed", ia.seed, "Sampling seed");

  // export-colored
  auto* ex = app.add_subcommand("export-colored", "Write a colored PLY");
  std::string x_cloud, x_labels, x_level = "mid", x_out;
  ex->add_option("--cloud", x_cloud, "Input cloud (.ptc)")->required();
  ex->add_option("--labels", x_labels, "Label file (defaults to the cloud's)");
  ex->add_option("--level", x_level, "Label level")
      ->check(CLI::IsMember({"top", "mid"}));
  ex->add_option("--out", x_out, "Output PLY path")->required();

  // grad-check
  auto* gc = app.add_subcommand("grad-check",
                                "Finite-difference check of every primitive");
  int c_seeds = 20;
  double c_h = 1e-5, c_tol = 1e-5;
  gc->add_option("--seeds", c_seeds, "Random repetitions per primitive");
  gc->add_option("--step", c_h, "Finite-difference step");
  gc->add_option("--tol", c_tol, "Relative error tolerance");

  // oracle-check
  auto* oc = app.add_subcommand("oracle-check",
                                "Compare fast paths against brute force");
  std::uint64_t o_seed = 1;
  oc->add_option("--seed", o_seed, "Seed for the random cases");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      fs::path dir = resolve_out(g_out);
      hpk::DatasetManifest man =
          hpk::generate_dataset(g_family, g_seed, g_train, g_test, g_points,
                                dir);
      std::cout << "wrote " << man.entries.size() << " clouds to "
                << dir.string() << " (K_top " << man.K_top << ", parts "
                << man.C_true << ")\n";
      return 0;
    }
    if (tr->parsed()) {
      return ta.precision == "fp32" ? run_train<float>(ta)
                                    : run_train<double>(ta);
    }
    if (ev->parsed()) {
      return peek_precision(ea.checkpoint) == "fp32" ? run_eval<float>(ea)
                                                     : run_eval<double>(ea);
    }
    if (in->parsed()) {
      return peek_precision(ia.checkpoint) == "fp32" ? run_infer<float>(ia)
                                                     : run_infer<double>(ia);
    }
    if (ex->parsed()) return run_export(x_cloud, x_labels, x_level, x_out);
    if (gc->parsed()) return run_grad_check(c_seeds, c_h, c_tol);
    if (oc->parsed()) return run_oracle_check(o_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
