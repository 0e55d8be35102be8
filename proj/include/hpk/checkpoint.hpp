#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpk/error.hpp"
#include "hpk/model.hpp"

namespace hpk {

// Checkpoint format "hpk.v1": line-oriented text. Values are serialized
// as C hexadecimal floats, so save/load round-trips are bit-exact.
//
//   hpk.v1
//   precision fp64
//   config <one-line JSON>
//   params <count>
//   param <name> <rows> <cols>
//   <values on one line>
//   ...
//   stats <count>
//   stat <name> <n>
//   <means>
//   <variances>
//   ...
//   end

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"K_top", c.K_top},
          {"C", c.C},
          {"encoder_widths", c.encoder_widths},
          {"F_d", c.F_d},
          {"head_widths", c.head_widths},
          {"k_nn", c.k_nn},
          {"smoothing_layers", c.smoothing_layers},
          {"tau", c.tau},
          {"L", c.L},
          {"B", c.B},
          {"estimator", c.estimator}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.K_top = j.at("K_top").get<int>();
    c.C = j.at("C").get<int>();
    c.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
    c.F_d = j.at("F_d").get<int>();
    c.head_widths = j.at("head_widths").get<std::vector<int>>();
    c.k_nn = j.at("k_nn").get<int>();
    c.smoothing_layers = j.at("smoothing_layers").get<int>();
    c.tau = j.at("tau").get<double>();
    c.L = j.at("L").get<int>();
    c.B = j.at("B").get<double>();
    c.estimator = j.at("estimator").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace detail {

template <typename T>
const char* precision_tag() {
  return sizeof(T) == 8 ? "fp64" : "fp32";
}

inline std::string hex_full(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

template <typename T>
void write_values(std::ofstream& f, const std::vector<T>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) f << ' ';
    f << hex_full(double(v[i]));
  }
  f << '\n';
}

template <typename T>
std::vector<T> read_values(std::ifstream& f, std::size_t n, int line) {
  std::string s;
  if (!std::getline(f, s)) throw ParseError("missing value row", line);
  std::vector<T> out;
  out.reserve(n);
  const char* p = s.c_str();
  char* end = nullptr;
  while (*p) {
    while (*p == ' ') ++p;
    if (!*p) break;
    double v = std::strtod(p, &end);
    if (end == p) throw ParseError("bad value token", line);
    out.push_back(T(v));
    p = end;
  }
  if (out.size() != n) {
    throw ParseError("expected " + std::to_string(n) + " values, got " +
                         std::to_string(out.size()),
                     line);
  }
  return out;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, ModelStateT<T>& st) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << "hpk.v1\n";
  f << "precision " << detail::precision_tag<T>() << "\n";
  f << "config " << config_to_json(st.cfg).dump() << "\n";
  auto params = st.params();
  f << "params " << params.size() << "\n";
  for (auto& [name, p] : params) {
    f << "param " << name << " " << p->value.rows() << " " << p->value.cols()
      << "\n";
    detail::write_values(f, p->value.data());
  }
  auto stats = st.stats();
  f << "stats " << stats.size() << "\n";
  for (auto& [name, s] : stats) {
    f << "stat " << name << " " << s->mean.size() << "\n";
    detail::write_values(f, s->mean);
    detail::write_values(f, s->var);
  }
  f << "end\n";
  if (!f) throw Error("write failed: " + path.string());
}

template <typename T>
ModelStateT<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  int ln = 0;
  auto next = [&](const char* what) {
    std::string s;
    ++ln;
    if (!std::getline(f, s)) {
      throw ParseError(std::string("missing ") + what, ln);
    }
    return s;
  };
  if (next("format tag") != "hpk.v1") {
    throw ParseError("not an hpk.v1 checkpoint", 1);
  }
  {
    std::istringstream is(next("precision"));
    std::string k, v;
    is >> k >> v;
    if (k != "precision") throw ParseError("expected precision line", ln);
    if (v != detail::precision_tag<T>()) {
      throw IncompatibleError("checkpoint precision " + v +
                              " does not match requested " +
                              detail::precision_tag<T>());
    }
  }
  ModelConfig cfg;
  {
    std::string s = next("config");
    if (s.rfind("config ", 0) != 0) throw ParseError("expected config line", ln);
    try {
      cfg = config_from_json(nlohmann::json::parse(s.substr(7)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("config: ") + e.what(), ln);
    }
  }
  // Build the structure, then overwrite every value from the file.
  ModelStateT<T> st = init_params<T>(cfg, 0);
  auto params = st.params();
  auto stats = st.stats();
  {
    std::istringstream is(next("params"));
    std::string k;
    std::size_t cnt = 0;
    is >> k >> cnt;
    if (k != "params" || cnt != params.size()) {
      throw ParseError("expected 'params " + std::to_string(params.size()) +
                           "' for this config",
                       ln);
    }
  }
  for (auto& [name, p] : params) {
    std::istringstream is(next("param header"));
    std::string k, nm;
    int r = 0, c = 0;
    is >> k >> nm >> r >> c;
    if (k != "param" || nm != name) {
      throw ParseError("expected parameter " + name, ln);
    }
    if (r != p->value.rows() || c != p->value.cols()) {
      throw IncompatibleError("parameter " + name + " has shape " +
                              std::to_string(r) + "x" + std::to_string(c) +
                              ", config requires " +
                              std::to_string(p->value.rows()) + "x" +
                              std::to_string(p->value.cols()));
    }
    ++ln;
    p->value.mutable_data() = detail::read_values<T>(f, p->value.size(), ln);
  }
  {
    std::istringstream is(next("stats"));
    std::string k;
    std::size_t cnt = 0;
    is >> k >> cnt;
    if (k != "stats" || cnt != stats.size()) {
      throw ParseError("expected 'stats " + std::to_string(stats.size()) + "'",
                       ln);
    }
  }
  for (auto& [name, s] : stats) {
    std::istringstream is(next("stat header"));
    std::string k, nm;
    std::size_t n = 0;
    is >> k >> nm >> n;
    if (k != "stat" || nm != name || n != s->mean.size()) {
      throw ParseError("expected statistics " + name, ln);
    }
    ++ln;
    s->mean = detail::read_values<T>(f, n, ln);
    ++ln;
    s->var = detail::read_values<T>(f, n, ln);
  }
  if (next("end marker") != "end") throw ParseError("missing end marker", ln);
  return st;
}

}  // namespace hpk
