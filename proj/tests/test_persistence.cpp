#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hpk/checkpoint.hpp"
#include "hpk/model.hpp"
#include "hpk/optimizer.hpp"
#include "hpk/rng.hpp"
#include "support/fixtures.hpp"

using namespace hpk;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) out.push_back(line);
  return out;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream f(p);
  for (const auto& l : lines) f << l << "\n";
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

template <typename T>
void require_states_equal(ModelStateT<T>& a, ModelStateT<T>& b) {
  auto pa = a.params(), pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    REQUIRE(pa[i].second->value.data() == pb[i].second->value.data());
  }
  auto sa = a.stats(), sb = b.stats();
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    REQUIRE(sa[i].second->mean == sb[i].second->mean);
    REQUIRE(sa[i].second->var == sb[i].second->var);
  }
}

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly and reproduce their bytes") {
  fs::path dir = fresh_dir("hpk_test_ckpt64");
  Rng rng = make_rng(81, 0);
  ModelConfig cfg = fx::tiny_cfg(3, 4, "mc-reinforce");
  cfg.tau = 0.37;
  cfg.B = 0.5;
  ModelState st = init_params<double>(cfg, 4);
  fx::Instance inst = fx::random_instance(rng, 18, cfg.k_nn, cfg.K_top);
  fx::warm_up(st, inst, 3, 5);

  save_checkpoint(dir / "a.hpk", st);
  ModelState re = load_checkpoint<double>(dir / "a.hpk");
  require_states_equal(st, re);
  REQUIRE(re.cfg.K_top == 3);
  REQUIRE(re.cfg.C == 4);
  REQUIRE(re.cfg.tau == 0.37);
  REQUIRE(re.cfg.B == 0.5);
  REQUIRE(re.cfg.estimator == "mc-reinforce");

  save_checkpoint(dir / "b.hpk", re);
  REQUIRE(slurp(dir / "a.hpk") == slurp(dir / "b.hpk"));
}

TEST_CASE("single-precision checkpoints round-trip") {
  fs::path dir = fresh_dir("hpk_test_ckpt32");
  ModelConfig cfg = fx::tiny_cfg();
  ModelStateT<float> st = init_params<float>(cfg, 6);
  auto stats = st.stats();
  for (std::size_t i = 0; i < stats.size(); ++i) {
    for (auto& v : stats[i].second->mean) v = 0.125f * float(i + 1);
    for (auto& v : stats[i].second->var) v = 0.5f + 0.25f * float(i);
  }
  save_checkpoint(dir / "a.hpk", st);
  ModelStateT<float> re = load_checkpoint<float>(dir / "a.hpk");
  require_states_equal(st, re);

  REQUIRE_THROWS_AS(load_checkpoint<double>(dir / "a.hpk"),
                    IncompatibleError);
  ModelState st64 = init_params<double>(cfg, 6);
  save_checkpoint(dir / "b.hpk", st64);
  REQUIRE_THROWS_AS(load_checkpoint<float>(dir / "b.hpk"), IncompatibleError);
}

TEST_CASE("doctored checkpoints are refused with a reason") {
  fs::path dir = fresh_dir("hpk_test_ckpt_bad");
  ModelConfig cfg = fx::tiny_cfg();
  ModelState st = init_params<double>(cfg, 7);
  save_checkpoint(dir / "good.hpk", st);
  std::vector<std::string> lines = read_lines(dir / "good.hpk");

  {
    std::vector<std::string> bad = lines;
    bad[0] = "hpk.v2";
    write_lines(dir / "tag.hpk", bad);
    REQUIRE_THROWS_AS(load_checkpoint<double>(dir / "tag.hpk"), ParseError);
  }
  {
    // First parameter header: shape that disagrees with the config.
    std::vector<std::string> bad = lines;
    bad[4] = "param enc0.W 4 8";
    write_lines(dir / "shape.hpk", bad);
    REQUIRE_THROWS_AS(load_checkpoint<double>(dir / "shape.hpk"),
                      IncompatibleError);
  }
  {
    std::vector<std::string> bad = lines;
    bad[4] = "param enc0.Q 3 8";
    write_lines(dir / "name.hpk", bad);
    REQUIRE_THROWS_AS(load_checkpoint<double>(dir / "name.hpk"), ParseError);
  }
  {
    // Drop one value token from the first parameter row.
    std::vector<std::string> bad = lines;
    bad[5] = bad[5].substr(0, bad[5].rfind(' '));
    write_lines(dir / "short.hpk", bad);
    REQUIRE_THROWS_AS(load_checkpoint<double>(dir / "short.hpk"), ParseError);
  }
  {
    std::vector<std::string> bad = lines;
    REQUIRE(bad.back() == "end");
    bad.pop_back();
    write_lines(dir / "noend.hpk", bad);
    REQUIRE_THROWS_AS(load_checkpoint<double>(dir / "noend.hpk"), ParseError);
  }
  {
    std::vector<std::string> bad = lines;
    bad[3] = "params 3";
    write_lines(dir / "count.hpk", bad);
    REQUIRE_THROWS_AS(load_checkpoint<double>(dir / "count.hpk"), ParseError);
  }
  REQUIRE_THROWS_AS(load_checkpoint<double>(dir / "missing.hpk"), Error);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  ParamT<double> p;
  p.name = "w";
  p.value = Tensor::constant(1, 3, {0.5, -1.25, 2.0});
  std::vector<std::pair<std::string, ParamT<double>*>> params = {{"w", &p}};
  std::map<std::string, std::vector<double>> grads = {{"w", {1.0, -2.0, 0.5}}};

  AdamT<double> opt;
  opt.lr = 0.0;
  opt.step(params, grads);
  opt.step(params, grads);
  REQUIRE(p.value.data() == std::vector<double>{0.5, -1.25, 2.0});
  REQUIRE(p.slot_m.size() == 3);  // moments still accumulate
  REQUIRE(p.slot_m[0] != 0.0);
}

TEST_CASE("the adaptive update follows its formula") {
  ParamT<double> p;
  p.name = "w";
  p.value = Tensor::constant(1, 2, {1.0, -0.5});
  std::vector<std::pair<std::string, ParamT<double>*>> params = {{"w", &p}};

  AdamT<double> opt;
  double m0 = 0, v0 = 0, m1 = 0, v1 = 0;
  double ref0 = 1.0, ref1 = -0.5;
  std::vector<std::vector<double>> steps = {{0.3, -0.7}, {-0.1, 0.4}, {0.2, 0.2}};
  for (std::size_t s = 0; s < steps.size(); ++s) {
    std::map<std::string, std::vector<double>> grads = {{"w", steps[s]}};
    opt.step(params, grads);

    double t = double(s + 1);
    double bc1 = 1.0 - std::pow(opt.beta1, t);
    double bc2 = 1.0 - std::pow(opt.beta2, t);
    m0 = opt.beta1 * m0 + (1 - opt.beta1) * steps[s][0];
    v0 = opt.beta2 * v0 + (1 - opt.beta2) * steps[s][0] * steps[s][0];
    m1 = opt.beta1 * m1 + (1 - opt.beta1) * steps[s][1];
    v1 = opt.beta2 * v1 + (1 - opt.beta2) * steps[s][1] * steps[s][1];
    ref0 -= opt.lr * (m0 / bc1) / (std::sqrt(v0 / bc2) + opt.eps);
    ref1 -= opt.lr * (m1 / bc1) / (std::sqrt(v1 / bc2) + opt.eps);
    REQUIRE(p.value.data()[0] == Catch::Approx(ref0).epsilon(1e-14));
    REQUIRE(p.value.data()[1] == Catch::Approx(ref1).epsilon(1e-14));
  }
}

TEST_CASE("gradient bookkeeping mistakes are contract errors") {
  ParamT<double> p;
  p.name = "w";
  p.value = Tensor::constant(1, 2, {1.0, 2.0});
  std::vector<std::pair<std::string, ParamT<double>*>> params = {{"w", &p}};
  AdamT<double> opt;

  std::map<std::string, std::vector<double>> none = {{"q", {1.0, 1.0}}};
  REQUIRE_THROWS_AS(opt.step(params, none), ContractError);
  std::map<std::string, std::vector<double>> short_g = {{"w", {1.0}}};
  REQUIRE_THROWS_AS(opt.step(params, short_g), ContractError);
}
