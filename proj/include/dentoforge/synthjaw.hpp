#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dentoforge/errors.hpp"
#include "dentoforge/geometry.hpp"
#include "dentoforge/jawgraph.hpp"
#include "dentoforge/rng.hpp"

namespace dentoforge::synthjaw {

using jawgraph::JawGraph;
using jawgraph::JawSide;
using jawgraph::ToothLayout;
using jawgraph::ToothNode;

struct ExtentPrior {
  double h_mean, w_mean, l_mean;
  double h_sigma, w_sigma, l_sigma;
};

// Procedural arch model. Tooth centers sit on the symmetric curve
// x -> (x, -arch_depth * (|x| / half_width)^curvature, 0); per-position
// extents are drawn from the priors and shared between mirror pairs so a
// noiseless jaw is exactly symmetric.
struct ArchParams {
  double arch_width = 76.0;   // full width, mm
  double arch_depth = 46.0;   // mm
  double curvature = 1.8;
  std::array<ExtentPrior, 7> priors{};  // FDI positions 1..7
  double pos_jitter = 0.05;    // mm, clamped at +-0.08 in-plane
  double z_jitter = 0.15;      // mm, clamped at +-0.3
  double angle_jitter = 0.006; // rad, clamped at +-0.012
  double min_gap = 0.1;        // mm, hard clearance between adjacent boxes
  int teeth_per_quadrant = 7;

  static ArchParams defaults() {
    ArchParams p;
    p.priors = {{
        {9.5, 7.4, 6.0, 0.30, 0.30, 0.25},   // central incisor
        {9.0, 6.0, 5.8, 0.30, 0.25, 0.25},   // lateral incisor
        {10.0, 6.8, 7.2, 0.30, 0.25, 0.25},  // canine
        {8.2, 6.3, 8.0, 0.30, 0.25, 0.25},   // first premolar
        {8.0, 6.1, 8.2, 0.30, 0.25, 0.25},   // second premolar
        {7.4, 9.1, 9.8, 0.30, 0.30, 0.30},   // first molar
        {7.0, 8.7, 9.5, 0.30, 0.30, 0.30},   // second molar
    }};
    return p;
  }
};

namespace detail {

// In-plane jitter budget reserved per adjacent gap; must stay in sync with
// the clamps applied in sample_jaw.
inline constexpr double kPosClamp = 0.08;
inline constexpr double kAngleClamp = 0.012;

struct ArchCurve {
  double half, depth, curv;
  std::vector<double> xs, ss;  // cumulative arc length on [0, half]

  explicit ArchCurve(const ArchParams& p)
      : half(p.arch_width / 2.0), depth(p.arch_depth), curv(p.curvature) {
    const int n = 8192;
    xs.resize(n + 1);
    ss.resize(n + 1);
    double acc = 0.0;
    double prev_x = 0.0, prev_i = integrand(0.0);
    xs[0] = 0.0;
    ss[0] = 0.0;
    for (int i = 1; i <= n; ++i) {
      const double x = half * static_cast<double>(i) / n;
      const double cur = integrand(x);
      acc += 0.5 * (prev_i + cur) * (x - prev_x);
      xs[i] = x;
      ss[i] = acc;
      prev_x = x;
      prev_i = cur;
    }
  }

  double slope(double x_abs) const {
    if (x_abs <= 0.0) return 0.0;
    return -depth * curv / half * std::pow(x_abs / half, curv - 1.0);
  }

  double integrand(double x_abs) const {
    const double yp = slope(x_abs);
    return std::sqrt(1.0 + yp * yp);
  }

  double y(double x_abs) const { return -depth * std::pow(x_abs / half, curv); }

  double total_half_length() const { return ss.back(); }

  // Inverse arc length: s in [0, total_half_length] -> x in [0, half].
  double x_at(double s) const {
    if (s <= 0.0) return 0.0;
    if (s >= ss.back()) return half;
    auto it = std::upper_bound(ss.begin(), ss.end(), s);
    const size_t i = static_cast<size_t>(it - ss.begin());
    const double t = (s - ss[i - 1]) / (ss[i] - ss[i - 1]);
    return xs[i - 1] + t * (xs[i] - xs[i - 1]);
  }
};

inline double clamp_sym(double v, double bound) {
  return std::clamp(v, -bound, bound);
}

}  // namespace detail

// A full jaw with every tooth present and every layout defined.
// Deterministic for a fixed seed. Throws NumericError when the priors
// cannot satisfy the clearance requirements on the configured arch.
inline JawGraph sample_jaw(const ArchParams& params, JawSide side,
                           std::uint64_t seed) {
  const int npos = params.teeth_per_quadrant;
  if (npos < 1 || npos > 7) throw ValidationError("teeth_per_quadrant must be in [1,7]");
  if (!(params.arch_width > 0) || !(params.arch_depth > 0))
    throw ValidationError("arch dimensions must be positive");

  const detail::ArchCurve curve(params);

  // Extents shared per position between mirror pairs.
  std::array<double, 7> h{}, w{}, l{};
  for (int p = 0; p < npos; ++p) {
    Rng rng = Rng::keyed({seed, 0xE17ull, static_cast<std::uint64_t>(p)});
    const ExtentPrior& pr = params.priors[static_cast<size_t>(p)];
    auto draw = [&](double mean, double sigma) {
      const double v = mean + sigma * detail::clamp_sym(rng.normal(), 2.5);
      return std::max(v, 0.2 * mean);
    };
    h[p] = draw(pr.h_mean, pr.h_sigma);
    w[p] = draw(pr.w_mean, pr.w_sigma);
    l[p] = draw(pr.l_mean, pr.l_sigma);
  }

  const double arc_total = 2.0 * curve.total_half_length();
  double sum_w = 0.0;
  for (int p = 0; p < npos; ++p) sum_w += 2.0 * w[p];
  const int n_gaps = 2 * npos - 1;
  if (arc_total <= sum_w + n_gaps * params.min_gap)
    throw NumericError("jaw generation failed: arch length " +
                       std::to_string(arc_total) +
                       " mm cannot fit teeth of total width " +
                       std::to_string(sum_w) + " mm with the minimum gap");

  // Provisional uniform placement to measure tangent turning per pair.
  const double g_uniform = (arc_total - sum_w) / n_gaps;
  std::array<double, 7> s_prov{};
  {
    double acc = g_uniform / 2.0;
    for (int p = 0; p < npos; ++p) {
      s_prov[p] = acc + w[p] / 2.0;
      acc += w[p] + g_uniform;
    }
  }
  std::array<double, 7> k_prov{};
  for (int p = 0; p < npos; ++p)
    k_prov[p] = std::atan(curve.slope(curve.x_at(s_prov[p])));

  // Clearance per gap: hard minimum + rotation fan-out + jitter reserve.
  auto rot_margin = [&](double la, double lb, double dk) {
    return (la + lb) / 4.0 * std::abs(dk) +
           (la + lb) / 2.0 * detail::kAngleClamp;
  };
  std::array<double, 8> req{};  // req[0] central gap, req[j] between pos j and j+1
  req[0] = params.min_gap + rot_margin(l[0], l[0], 2.0 * std::abs(k_prov[0])) +
           2.0 * std::sqrt(2.0) * detail::kPosClamp;
  double req_total = req[0];
  for (int j = 1; j < npos; ++j) {
    req[j] = params.min_gap +
             rot_margin(l[j - 1], l[j], k_prov[j] - k_prov[j - 1]) +
             2.0 * std::sqrt(2.0) * detail::kPosClamp;
    req_total += 2.0 * req[j];
  }

  const double slack = arc_total - sum_w - req_total;
  if (slack < 0.0)
    throw NumericError(
        "jaw generation failed: priors cannot satisfy the non-overlap gap "
        "(short by " + std::to_string(-slack) + " mm of arch length)");
  const double share = slack / n_gaps;

  // Final symmetric placement: arc offset of each position from the midline.
  std::array<double, 7> s_mid{};
  {
    double acc = (req[0] + share) / 2.0;
    for (int p = 0; p < npos; ++p) {
      s_mid[p] = acc + w[p] / 2.0;
      acc += w[p] + (p + 1 < npos ? req[p + 1] + share : 0.0);
    }
  }

  const int right_q = (side == JawSide::Upper) ? 1 : 4;
  const int left_q = (side == JawSide::Upper) ? 2 : 3;

  JawGraph g;
  g.jaw_side = side;
  auto add_tooth = [&](int quadrant, int pos, double sign) {
    const int p = pos - 1;
    const double X = curve.x_at(s_mid[p]);
    const double Y = curve.y(X);
    const double K = std::atan(curve.slope(X));

    ToothNode node;
    node.tooth_id = quadrant * 10 + pos;
    Rng jit = Rng::keyed({seed, 0x71ee7ull,
                          static_cast<std::uint64_t>(node.tooth_id)});
    ToothLayout L;
    L.x = sign * X + params.pos_jitter *
                         detail::clamp_sym(jit.normal(),
                                           detail::kPosClamp / std::max(params.pos_jitter, 1e-12));
    L.y = Y + params.pos_jitter *
                  detail::clamp_sym(jit.normal(),
                                    detail::kPosClamp / std::max(params.pos_jitter, 1e-12));
    L.z = params.z_jitter * detail::clamp_sym(jit.normal(), 2.0);  // z play is free of the gap budget
    L.h = h[p];
    L.w = w[p];
    L.l = l[p];
    L.k = sign * K + params.angle_jitter *
                          detail::clamp_sym(jit.normal(),
                                            detail::kAngleClamp / std::max(params.angle_jitter, 1e-12));
    L.r = params.angle_jitter *
          detail::clamp_sym(jit.normal(),
                            detail::kAngleClamp / std::max(params.angle_jitter, 1e-12));
    node.layout = L;
    node.missing = false;
    g.nodes.push_back(std::move(node));
  };

  // Arch order: right quadrant outermost-first, then left quadrant outward.
  for (int pos = npos; pos >= 1; --pos) add_tooth(right_q, pos, +1.0);
  for (int pos = 1; pos <= npos; ++pos) add_tooth(left_q, pos, -1.0);

  g.edges = jawgraph::build_edges(g.nodes, g.jaw_side);
  return g;
}

// Marks the given teeth missing (layout withheld, features zeroed) and
// returns the withheld layouts for evaluation. At most four teeth may be
// masked.
inline std::pair<JawGraph, std::map<int, ToothLayout>> mask_missing(
    const JawGraph& graph, const std::vector<int>& tooth_ids) {
  if (tooth_ids.size() > 4)
    throw ValidationError("at most 4 missing teeth supported (requested " +
                          std::to_string(tooth_ids.size()) + ")");
  JawGraph out = graph;
  std::map<int, ToothLayout> truth;
  for (int id : tooth_ids) {
    bool found = false;
    for (auto& node : out.nodes) {
      if (node.tooth_id != id) continue;
      found = true;
      if (!node.layout)
        throw ValidationError("tooth " + std::to_string(id) +
                              " has no layout to withhold");
      truth[id] = *node.layout;
      node.layout.reset();
      node.missing = true;
      std::fill(node.features.begin(), node.features.end(), 0.0);
    }
    if (!found)
      throw ValidationError("tooth " + std::to_string(id) + " not present in jaw");
  }
  return {std::move(out), std::move(truth)};
}

// Points drawn uniformly inside a superellipsoid |u/a|^p + |v/b|^p + |t/c|^p <= 1
// (p = 2.5) fitted to the oriented layout box. Deterministic per seed.
inline std::vector<Eigen::Vector3d> sample_tooth_points(const ToothLayout& layout,
                                                        int category, int n,
                                                        std::uint64_t seed) {
  if (n < 1) throw ValidationError("sample_tooth_points requires n >= 1");
  constexpr double p = 2.5;
  const Eigen::Vector3d he = geometry::layout_half_extents(layout);
  const Eigen::Matrix3d R = geometry::rotation_from_layout(layout);
  const Eigen::Vector3d c = geometry::layout_center(layout);

  Rng rng = Rng::keyed({seed, 0x700758ull, static_cast<std::uint64_t>(category)});
  std::vector<Eigen::Vector3d> out;
  out.reserve(static_cast<size_t>(n));
  while (out.size() < static_cast<size_t>(n)) {
    const double u = rng.uniform(-1.0, 1.0);
    const double v = rng.uniform(-1.0, 1.0);
    const double t = rng.uniform(-1.0, 1.0);
    const double m = std::pow(std::abs(u), p) + std::pow(std::abs(v), p) +
                     std::pow(std::abs(t), p);
    if (m > 1.0) continue;
    const Eigen::Vector3d local(u * he.x(), v * he.y(), t * he.z());
    out.push_back(c + R * local);
  }
  return out;
}

}  // namespace dentoforge::synthjaw
