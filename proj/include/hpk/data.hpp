#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hpk/error.hpp"
#include "hpk/geometry.hpp"
#include "hpk/rng.hpp"

namespace hpk {

struct FamilySchema {
  std::string name;
  int K_top = 0;
  int C_true = 0;
};

inline const std::vector<FamilySchema>& family_schemas() {
  static const std::vector<FamilySchema> k = {
      {"chairs", 4, 8},
      {"tables", 3, 6},
      {"lamps", 3, 6},
      {"mixed", 10, 20},
  };
  return k;
}

inline const FamilySchema& schema_for(const std::string& family) {
  for (const auto& s : family_schemas()) {
    if (s.name == family) return s;
  }
  throw ParamError("unknown family '" + family +
                   "'; expected chairs, tables, lamps, or mixed");
}

struct LabeledCloud {
  PointCloud cloud;
  std::vector<int> top, mid;  // 1-based
  std::string family;
  int K_top = 0, C_true = 0;

  void validate() const {
    cloud.validate();
    if (top.size() != std::size_t(cloud.m) || mid.size() != top.size()) {
      throw ContractError("labeled cloud: label counts " +
                          std::to_string(top.size()) + "/" +
                          std::to_string(mid.size()) + " for " +
                          std::to_string(cloud.m) + " points");
    }
    for (std::size_t i = 0; i < top.size(); ++i) {
      if (top[i] < 1 || top[i] > K_top || mid[i] < 1 || mid[i] > C_true) {
        throw ContractError("labeled cloud: labels (" +
                            std::to_string(top[i]) + "," +
                            std::to_string(mid[i]) + ") outside schema " +
                            std::to_string(K_top) + "/" +
                            std::to_string(C_true));
      }
    }
  }
};

// ---- procedural objects ---------------------------------------------------
// Objects are assembled from three surface primitives. Points are drawn
// i.i.d. with probability proportional to patch area, so a patch with
// area fraction f receives m*f points in expectation.

namespace detail {

struct Patch {
  enum Kind { kRect, kCylinder, kDisk } kind;
  int top, mid;
  double area;
  // rect: p0 + a*e1 + b*e2 ; cylinder: lateral surface from base along
  // axis (unit) with radius/height ; disk: filled circle around center.
  std::array<double, 3> p0{}, e1{}, e2{};
  double radius = 0, height = 0;
};

inline std::array<double, 3> cross3(const std::array<double, 3>& a,
                                    const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

inline double norm3(const std::array<double, 3>& a) {
  return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
}

// Any two unit vectors completing axis to an orthonormal frame,
// deterministic in the axis.
inline void frame3(const std::array<double, 3>& w, std::array<double, 3>& u,
                   std::array<double, 3>& v) {
  std::array<double, 3> ref = std::abs(w[2]) < 0.9
                                  ? std::array<double, 3>{0, 0, 1}
                                  : std::array<double, 3>{1, 0, 0};
  u = cross3(ref, w);
  double n = norm3(u);
  u = {u[0] / n, u[1] / n, u[2] / n};
  v = cross3(w, u);
}

inline void add_rect(std::vector<Patch>& ps, int top, int mid,
                     std::array<double, 3> p0, std::array<double, 3> e1,
                     std::array<double, 3> e2) {
  Patch p;
  p.kind = Patch::kRect;
  p.top = top;
  p.mid = mid;
  p.p0 = p0;
  p.e1 = e1;
  p.e2 = e2;
  p.area = norm3(cross3(e1, e2));
  ps.push_back(p);
}

// Axis-aligned box shell; six rect faces sharing one label pair.
inline void add_box(std::vector<Patch>& ps, int top, int mid, double x0,
                    double y0, double z0, double x1, double y1, double z1) {
  double dx = x1 - x0, dy = y1 - y0, dz = z1 - z0;
  add_rect(ps, top, mid, {x0, y0, z1}, {dx, 0, 0}, {0, dy, 0});
  add_rect(ps, top, mid, {x0, y0, z0}, {dx, 0, 0}, {0, dy, 0});
  add_rect(ps, top, mid, {x0, y0, z0}, {dx, 0, 0}, {0, 0, dz});
  add_rect(ps, top, mid, {x0, y1, z0}, {dx, 0, 0}, {0, 0, dz});
  add_rect(ps, top, mid, {x0, y0, z0}, {0, dy, 0}, {0, 0, dz});
  add_rect(ps, top, mid, {x1, y0, z0}, {0, dy, 0}, {0, 0, dz});
}

inline void add_cylinder(std::vector<Patch>& ps, int top, int mid,
                         std::array<double, 3> base, std::array<double, 3> axis,
                         double radius, double height) {
  Patch p;
  p.kind = Patch::kCylinder;
  p.top = top;
  p.mid = mid;
  p.p0 = base;
  double n = norm3(axis);
  p.e1 = {axis[0] / n, axis[1] / n, axis[2] / n};
  p.radius = radius;
  p.height = height;
  p.area = 2.0 * 3.14159265358979323846 * radius * height;
  ps.push_back(p);
}

inline void add_disk(std::vector<Patch>& ps, int top, int mid,
                     std::array<double, 3> center, std::array<double, 3> axis,
                     double radius) {
  Patch p;
  p.kind = Patch::kDisk;
  p.top = top;
  p.mid = mid;
  p.p0 = center;
  double n = norm3(axis);
  p.e1 = {axis[0] / n, axis[1] / n, axis[2] / n};
  p.radius = radius;
  p.area = 3.14159265358979323846 * radius * radius;
  ps.push_back(p);
}

inline std::array<double, 3> sample_patch(const Patch& p, Rng& rng) {
  switch (p.kind) {
    case Patch::kRect: {
      double a = u01(rng), b = u01(rng);
      return {p.p0[0] + a * p.e1[0] + b * p.e2[0],
              p.p0[1] + a * p.e1[1] + b * p.e2[1],
              p.p0[2] + a * p.e1[2] + b * p.e2[2]};
    }
    case Patch::kCylinder: {
      std::array<double, 3> u, v;
      frame3(p.e1, u, v);
      double th = 2.0 * 3.14159265358979323846 * u01(rng);
      double t = u01(rng) * p.height;
      double cx = std::cos(th) * p.radius, sx = std::sin(th) * p.radius;
      return {p.p0[0] + t * p.e1[0] + cx * u[0] + sx * v[0],
              p.p0[1] + t * p.e1[1] + cx * u[1] + sx * v[1],
              p.p0[2] + t * p.e1[2] + cx * u[2] + sx * v[2]};
    }
    case Patch::kDisk: {
      std::array<double, 3> u, v;
      frame3(p.e1, u, v);
      double th = 2.0 * 3.14159265358979323846 * u01(rng);
      double r = p.radius * std::sqrt(u01(rng));
      double cx = std::cos(th) * r, sx = std::sin(th) * r;
      return {p.p0[0] + cx * u[0] + sx * v[0], p.p0[1] + cx * u[1] + sx * v[1],
              p.p0[2] + cx * u[2] + sx * v[2]};
    }
  }
  throw ContractError("sample_patch: unreachable");
}

// Chairs: top 1=seat 2=back 3=leg 4=arm; mid 1=seat-panel 2=seat-apron
// 3=back-panel 4=back-frame 5=leg-shaft 6=leg-foot 7=arm-rail 8=arm-post.
// Arms appear on roughly half the chairs.
inline std::vector<Patch> chair_patches(Rng& rng) {
  std::vector<Patch> ps;
  double w = uniform(rng, 0.45, 0.62);
  double d = uniform(rng, 0.42, 0.52);
  double t = uniform(rng, 0.03, 0.05);
  double hs = uniform(rng, 0.40, 0.50);
  add_rect(ps, 1, 1, {-w / 2, -d / 2, hs}, {w, 0, 0}, {0, d, 0});
  add_rect(ps, 1, 1, {-w / 2, -d / 2, hs - t}, {w, 0, 0}, {0, d, 0});
  double ha = uniform(rng, 0.07, 0.11);
  double za = hs - t - ha;
  add_rect(ps, 1, 2, {-w / 2, -d / 2, za}, {w, 0, 0}, {0, 0, ha});
  add_rect(ps, 1, 2, {-w / 2, d / 2, za}, {w, 0, 0}, {0, 0, ha});
  add_rect(ps, 1, 2, {-w / 2, -d / 2, za}, {0, d, 0}, {0, 0, ha});
  add_rect(ps, 1, 2, {w / 2, -d / 2, za}, {0, d, 0}, {0, 0, ha});

  double wb = 0.9 * w, tb = 0.03, hb = uniform(rng, 0.38, 0.52);
  double yb = d / 2 - tb;
  add_rect(ps, 2, 3, {-wb / 2, yb, hs}, {wb, 0, 0}, {0, 0, hb});
  add_rect(ps, 2, 3, {-wb / 2, yb + tb, hs}, {wb, 0, 0}, {0, 0, hb});
  add_rect(ps, 2, 3, {-wb / 2, yb, hs + hb}, {wb, 0, 0}, {0, tb, 0});
  double rf = uniform(rng, 0.018, 0.024);
  for (double sx : {-1.0, 1.0}) {
    add_cylinder(ps, 2, 4, {sx * (wb / 2 + rf), yb + tb / 2, hs}, {0, 0, 1},
                 rf, hb + 0.03);
  }

  double rl = uniform(rng, 0.022, 0.030);
  double hf = 0.035;
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      double lx = sx * (w / 2 - 0.06), ly = sy * (d / 2 - 0.06);
      add_cylinder(ps, 3, 5, {lx, ly, hf}, {0, 0, 1}, rl, hs - t - hf);
      add_cylinder(ps, 3, 6, {lx, ly, 0}, {0, 0, 1}, rl + 0.02, hf);
      add_disk(ps, 3, 6, {lx, ly, 0}, {0, 0, 1}, rl + 0.02);
    }
  }

  if (u01(rng) < 0.5) {
    double harm = hs + uniform(rng, 0.18, 0.25);
    double ra = 0.02;
    for (double sx : {-1.0, 1.0}) {
      double ax = sx * (w / 2 + ra);
      add_cylinder(ps, 4, 7, {ax, -d / 2 + 0.05, harm}, {0, 1, 0}, ra,
                   d - 0.10);
      add_cylinder(ps, 4, 8, {ax, 0, hs}, {0, 0, 1}, 0.018, harm - hs);
    }
  }
  return ps;
}

// Tables: top 1=tabletop 2=leg 3=support; mid 1=top-panel 2=top-apron
// 3=leg-shaft 4=leg-foot 5=stretcher-beam 6=cross-beam.
inline std::vector<Patch> table_patches(Rng& rng) {
  std::vector<Patch> ps;
  double w = uniform(rng, 0.85, 1.20);
  double d = uniform(rng, 0.60, 0.85);
  double t = 0.04;
  double h = uniform(rng, 0.66, 0.78);
  add_box(ps, 1, 1, -w / 2, -d / 2, h - t, w / 2, d / 2, h);
  double ha = uniform(rng, 0.08, 0.12), inset = 0.06;
  double za = h - t - ha;
  add_rect(ps, 1, 2, {-w / 2 + inset, -d / 2 + inset, za}, {w - 2 * inset, 0, 0},
           {0, 0, ha});
  add_rect(ps, 1, 2, {-w / 2 + inset, d / 2 - inset, za}, {w - 2 * inset, 0, 0},
           {0, 0, ha});
  add_rect(ps, 1, 2, {-w / 2 + inset, -d / 2 + inset, za}, {0, d - 2 * inset, 0},
           {0, 0, ha});
  add_rect(ps, 1, 2, {w / 2 - inset, -d / 2 + inset, za}, {0, d - 2 * inset, 0},
           {0, 0, ha});

  double rl = uniform(rng, 0.030, 0.040);
  double hf = 0.035;
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      double lx = sx * (w / 2 - 0.09), ly = sy * (d / 2 - 0.09);
      add_cylinder(ps, 2, 3, {lx, ly, hf}, {0, 0, 1}, rl, h - t - hf);
      add_cylinder(ps, 2, 4, {lx, ly, 0}, {0, 0, 1}, rl + 0.02, hf);
      add_disk(ps, 2, 4, {lx, ly, 0}, {0, 0, 1}, rl + 0.02);
    }
  }

  double zs = uniform(rng, 0.12, 0.20), bs = 0.035;
  for (double sy : {-1.0, 1.0}) {
    double by = sy * (d / 2 - 0.09);
    add_box(ps, 3, 5, -w / 2 + 0.09, by - bs / 2, zs, w / 2 - 0.09,
            by + bs / 2, zs + bs);
  }
  add_box(ps, 3, 6, -bs / 2, -d / 2 + 0.09, zs, bs / 2, d / 2 - 0.09,
          zs + bs);
  return ps;
}

// Lamps: top 1=base 2=stem 3=shade; mid 1=base-plate 2=base-weight
// 3=stem-rod 4=stem-joint 5=shade-body 6=shade-cap.
inline std::vector<Patch> lamp_patches(Rng& rng) {
  std::vector<Patch> ps;
  double rb = uniform(rng, 0.13, 0.18);
  add_disk(ps, 1, 1, {0, 0, 0.02}, {0, 0, 1}, rb);
  add_cylinder(ps, 1, 1, {0, 0, 0}, {0, 0, 1}, rb, 0.02);
  double rw = 0.6 * rb, hw = uniform(rng, 0.05, 0.08);
  add_cylinder(ps, 1, 2, {0, 0, 0.02}, {0, 0, 1}, rw, hw);
  add_disk(ps, 1, 2, {0, 0, 0.02 + hw}, {0, 0, 1}, rw);

  double h = uniform(rng, 0.48, 0.62);
  double z0 = 0.02 + hw;
  add_cylinder(ps, 2, 3, {0, 0, z0}, {0, 0, 1}, 0.014, h - z0);
  double zj = z0 + 0.55 * (h - z0), hj = 0.06;
  add_cylinder(ps, 2, 4, {0, 0, zj}, {0, 0, 1}, 0.034, hj);
  add_disk(ps, 2, 4, {0, 0, zj}, {0, 0, 1}, 0.034);
  add_disk(ps, 2, 4, {0, 0, zj + hj}, {0, 0, 1}, 0.034);

  double rs = uniform(rng, 0.11, 0.16), hsd = uniform(rng, 0.16, 0.22);
  add_cylinder(ps, 3, 5, {0, 0, h}, {0, 0, 1}, rs, hsd);
  add_disk(ps, 3, 6, {0, 0, h + hsd}, {0, 0, 1}, rs);
  return ps;
}

}  // namespace detail

// Deterministic in (family, seed). Mixed draws one of the three concrete
// families and offsets its labels into the union label space.
inline LabeledCloud generate_object(const std::string& family,
                                    std::uint64_t seed, int m = 512) {
  const FamilySchema& schema = schema_for(family);
  if (m < 1) throw ParamError("generate_object: m must be positive");
  Rng rng = make_rng(seed, 23);
  std::vector<detail::Patch> ps;
  int top_off = 0, mid_off = 0;
  if (family == "chairs") {
    ps = detail::chair_patches(rng);
  } else if (family == "tables") {
    ps = detail::table_patches(rng);
  } else if (family == "lamps") {
    ps = detail::lamp_patches(rng);
  } else {
    switch (uniform_int(rng, 0, 2)) {
      case 0:
        ps = detail::chair_patches(rng);
        top_off = 0;
        mid_off = 0;
        break;
      case 1:
        ps = detail::table_patches(rng);
        top_off = 4;
        mid_off = 8;
        break;
      default:
        ps = detail::lamp_patches(rng);
        top_off = 7;
        mid_off = 14;
        break;
    }
  }

  std::vector<double> cdf(ps.size());
  double total = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    total += ps[i].area;
    cdf[i] = total;
  }
  LabeledCloud out;
  out.family = family;
  out.K_top = schema.K_top;
  out.C_true = schema.C_true;
  out.cloud.m = m;
  out.cloud.pts.resize(std::size_t(m) * 3);
  out.top.resize(std::size_t(m));
  out.mid.resize(std::size_t(m));
  for (int i = 0; i < m; ++i) {
    double u = u01(rng) * total;
    std::size_t pi = std::size_t(
        std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    if (pi >= ps.size()) pi = ps.size() - 1;
    std::array<double, 3> p = detail::sample_patch(ps[pi], rng);
    out.cloud.pts[std::size_t(i) * 3 + 0] = p[0];
    out.cloud.pts[std::size_t(i) * 3 + 1] = p[1];
    out.cloud.pts[std::size_t(i) * 3 + 2] = p[2];
    out.top[std::size_t(i)] = ps[pi].top + top_off;
    out.mid[std::size_t(i)] = ps[pi].mid + mid_off;
  }
  out.validate();
  return out;
}

// ---- file formats ---------------------------------------------------------

namespace detail {

inline std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& tok, int line) {
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') {
    throw ParseError("bad number '" + tok + "'", line);
  }
  return v;
}

inline long parse_long(const std::string& tok, int line) {
  char* end = nullptr;
  long v = std::strtol(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0') {
    throw ParseError("bad integer '" + tok + "'", line);
  }
  return v;
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace detail

// Cloud format: "ptc v1 <m> <K_top> <C_true>" then m lines
// "x y z top mid", coordinates at full precision.
inline void write_cloud(const std::filesystem::path& path,
                        const LabeledCloud& c) {
  c.validate();
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << "ptc v1 " << c.cloud.m << " " << c.K_top << " " << c.C_true << "\n";
  for (int i = 0; i < c.cloud.m; ++i) {
    f << detail::fmt_full(c.cloud.x(i)) << " " << detail::fmt_full(c.cloud.y(i))
      << " " << detail::fmt_full(c.cloud.z(i)) << " " << c.top[std::size_t(i)]
      << " " << c.mid[std::size_t(i)] << "\n";
  }
  if (!f) throw Error("write failed: " + path.string());
}

inline LabeledCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw ParseError("empty file", 1);
  auto head = detail::split_ws(line);
  if (head.size() != 5 || head[0] != "ptc" || head[1] != "v1") {
    throw ParseError("expected header 'ptc v1 <m> <K_top> <C_true>'", 1);
  }
  LabeledCloud c;
  c.cloud.m = static_cast<int>(detail::parse_long(head[2], 1));
  c.K_top = static_cast<int>(detail::parse_long(head[3], 1));
  c.C_true = static_cast<int>(detail::parse_long(head[4], 1));
  if (c.cloud.m < 1 || c.K_top < 1 || c.C_true < 1) {
    throw ParseError("non-positive counts in header", 1);
  }
  c.cloud.pts.resize(std::size_t(c.cloud.m) * 3);
  c.top.resize(std::size_t(c.cloud.m));
  c.mid.resize(std::size_t(c.cloud.m));
  for (int i = 0; i < c.cloud.m; ++i) {
    int ln = i + 2;
    if (!std::getline(f, line)) {
      throw ParseError("missing point row " + std::to_string(i + 1) + " of " +
                           std::to_string(c.cloud.m),
                       ln);
    }
    auto tok = detail::split_ws(line);
    if (tok.size() != 5) {
      throw ParseError("expected 'x y z top mid', got " +
                           std::to_string(tok.size()) + " fields",
                       ln);
    }
    c.cloud.pts[std::size_t(i) * 3 + 0] = detail::parse_double(tok[0], ln);
    c.cloud.pts[std::size_t(i) * 3 + 1] = detail::parse_double(tok[1], ln);
    c.cloud.pts[std::size_t(i) * 3 + 2] = detail::parse_double(tok[2], ln);
    c.top[std::size_t(i)] = static_cast<int>(detail::parse_long(tok[3], ln));
    c.mid[std::size_t(i)] = static_cast<int>(detail::parse_long(tok[4], ln));
  }
  c.validate();
  return c;
}

// Label format: "lbl v1 <m>" then m lines "<top> <mid>".
inline void write_labels(const std::filesystem::path& path,
                         const std::vector<int>& top,
                         const std::vector<int>& mid) {
  if (top.size() != mid.size() || top.empty()) {
    throw ContractError("write_labels: " + std::to_string(top.size()) + "/" +
                        std::to_string(mid.size()) + " labels");
  }
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << "lbl v1 " << top.size() << "\n";
  for (std::size_t i = 0; i < top.size(); ++i) {
    f << top[i] << " " << mid[i] << "\n";
  }
  if (!f) throw Error("write failed: " + path.string());
}

inline std::pair<std::vector<int>, std::vector<int>> read_labels(
    const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw ParseError("empty file", 1);
  auto head = detail::split_ws(line);
  if (head.size() != 3 || head[0] != "lbl" || head[1] != "v1") {
    throw ParseError("expected header 'lbl v1 <m>'", 1);
  }
  long m = detail::parse_long(head[2], 1);
  if (m < 1) throw ParseError("non-positive count in header", 1);
  std::vector<int> top(static_cast<std::size_t>(m)), mid(static_cast<std::size_t>(m));
  for (long i = 0; i < m; ++i) {
    int ln = static_cast<int>(i) + 2;
    if (!std::getline(f, line)) {
      throw ParseError("missing label row " + std::to_string(i + 1) + " of " +
                           std::to_string(m),
                       ln);
    }
    auto tok = detail::split_ws(line);
    if (tok.size() != 2) {
      throw ParseError("expected '<top> <mid>'", ln);
    }
    top[std::size_t(i)] = static_cast<int>(detail::parse_long(tok[0], ln));
    mid[std::size_t(i)] = static_cast<int>(detail::parse_long(tok[1], ln));
  }
  return {top, mid};
}

// ---- colored export -------------------------------------------------------

inline const std::vector<std::array<int, 3>>& default_palette() {
  static const std::vector<std::array<int, 3>> k = {
      {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
      {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
      {210, 245, 60}, {170, 110, 40},  {0, 128, 128},  {128, 128, 128},
  };
  return k;
}

// ASCII PLY with per-vertex color; label id c takes palette entry
// c mod palette-size.
inline void export_colored(const std::filesystem::path& path,
                           const PointCloud& cloud,
                           const std::vector<int>& labels,
                           const std::vector<std::array<int, 3>>& palette =
                               default_palette()) {
  cloud.validate();
  if (labels.size() != std::size_t(cloud.m)) {
    throw ContractError("export_colored: " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(cloud.m) + " points");
  }
  if (palette.empty()) throw ParamError("export_colored: empty palette");
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << "ply\nformat ascii 1.0\nelement vertex " << cloud.m
    << "\nproperty float x\nproperty float y\nproperty float z\n"
       "property uchar red\nproperty uchar green\nproperty uchar blue\n"
       "end_header\n";
  char buf[128];
  for (int i = 0; i < cloud.m; ++i) {
    const auto& rgb =
        palette[std::size_t(labels[std::size_t(i)]) % palette.size()];
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d %d %d\n", cloud.x(i),
                  cloud.y(i), cloud.z(i), rgb[0], rgb[1], rgb[2]);
    f << buf;
  }
  if (!f) throw Error("write failed: " + path.string());
}

// ---- dataset manifests ----------------------------------------------------

struct ManifestEntry {
  std::string path;  // relative to the manifest file
  std::string split;  // train | test
};

struct DatasetManifest {
  std::string family;
  std::uint64_t seed = 0;
  int m = 0;
  int K_top = 0, C_true = 0;
  std::vector<ManifestEntry> entries;
};

// One JSON record per line; first line is the header.
inline void write_manifest(const std::filesystem::path& path,
                           const DatasetManifest& man) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  nlohmann::json head = {{"family", man.family}, {"seed", man.seed},
                         {"m", man.m},           {"K_top", man.K_top},
                         {"C_true", man.C_true}};
  f << head.dump() << "\n";
  for (const auto& e : man.entries) {
    nlohmann::json rec = {{"path", e.path}, {"split", e.split}};
    f << rec.dump() << "\n";
  }
  if (!f) throw Error("write failed: " + path.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw ParseError("empty manifest", 1);
  DatasetManifest man;
  try {
    nlohmann::json head = nlohmann::json::parse(line);
    man.family = head.at("family").get<std::string>();
    man.seed = head.at("seed").get<std::uint64_t>();
    man.m = head.at("m").get<int>();
    man.K_top = head.at("K_top").get<int>();
    man.C_true = head.at("C_true").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest header: ") + e.what(), 1);
  }
  int ln = 1;
  while (std::getline(f, line)) {
    ++ln;
    if (line.empty()) continue;
    try {
      nlohmann::json rec = nlohmann::json::parse(line);
      ManifestEntry e;
      e.path = rec.at("path").get<std::string>();
      e.split = rec.at("split").get<std::string>();
      if (e.split != "train" && e.split != "test") {
        throw ParseError("split must be train or test", ln);
      }
      man.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("manifest entry: ") + e.what(), ln);
    }
  }
  return man;
}

// Generates objects with per-object seeds derived from the dataset seed,
// writes one cloud file each plus the manifest, and returns the manifest.
inline DatasetManifest generate_dataset(const std::string& family,
                                        std::uint64_t seed, int n_train,
                                        int n_test, int m,
                                        const std::filesystem::path& dir) {
  const FamilySchema& schema = schema_for(family);
  if (n_train < 1 || n_test < 0) {
    throw ParamError("generate_dataset: need at least one training object");
  }
  std::filesystem::create_directories(dir);
  DatasetManifest man;
  man.family = family;
  man.seed = seed;
  man.m = m;
  man.K_top = schema.K_top;
  man.C_true = schema.C_true;
  char name[64];
  for (int i = 0; i < n_train + n_test; ++i) {
    LabeledCloud c = generate_object(family, mix_seed(seed, std::uint64_t(i)), m);
    bool train = i < n_train;
    std::snprintf(name, sizeof(name), "%s_%04d.ptc", train ? "train" : "test",
                  train ? i : i - n_train);
    write_cloud(dir / name, c);
    man.entries.push_back({name, train ? "train" : "test"});
  }
  write_manifest(dir / "manifest.jsonl", man);
  return man;
}

inline std::vector<LabeledCloud> load_split(
    const std::filesystem::path& manifest_path, const std::string& split) {
  DatasetManifest man = read_manifest(manifest_path);
  std::filesystem::path dir = manifest_path.parent_path();
  std::vector<LabeledCloud> out;
  for (const auto& e : man.entries) {
    if (e.split != split) continue;
    LabeledCloud c = read_cloud(dir / e.path);
    if (c.K_top != man.K_top || c.C_true != man.C_true) {
      throw IncompatibleError("cloud " + e.path + " schema " +
                              std::to_string(c.K_top) + "/" +
                              std::to_string(c.C_true) +
                              " does not match manifest " +
                              std::to_string(man.K_top) + "/" +
                              std::to_string(man.C_true));
    }
    out.push_back(std::move(c));
  }
  if (out.empty()) {
    throw Error("manifest " + manifest_path.string() + " has no '" + split +
                "' entries");
  }
  return out;
}

}  // namespace hpk
