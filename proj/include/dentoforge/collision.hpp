#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dentoforge/errors.hpp"
#include "dentoforge/gaussians.hpp"

namespace dentoforge::collision {

using PointSet = std::vector<Eigen::Vector3d>;

inline Eigen::Vector3d centroid(const PointSet& points) {
  if (points.empty()) throw ValidationError("centroid of an empty point set");
  Eigen::Vector3d m = Eigen::Vector3d::Zero();
  for (const auto& p : points) m += p;
  return m / static_cast<double>(points.size());
}

// Mean Euclidean distance of the points to their centroid; the adaptive
// collision radius R_i.
inline double intravariance(const PointSet& points) {
  if (points.empty()) throw ValidationError("intravariance of an empty point set");
  const Eigen::Vector3d m = centroid(points);
  double acc = 0.0;
  for (const auto& p : points) acc += (p - m).norm();
  return acc / static_cast<double>(points.size());
}

// Hinge penalty of one anchor tooth against its arch neighbors: for every
// neighbor point closer to the anchor centroid than the anchor
// intravariance, the shortfall is charged. Absent neighbors contribute 0.
inline double collision_loss(const PointSet& anchor, const PointSet* left,
                             const PointSet* right) {
  if (anchor.empty()) throw ValidationError("collision_loss with empty anchor");
  const Eigen::Vector3d pm = centroid(anchor);
  const double R = intravariance(anchor);
  double loss = 0.0;
  for (const PointSet* nb : {left, right}) {
    if (!nb) continue;
    for (const auto& q : *nb) loss += std::max(0.0, R - (q - pm).norm());
  }
  return loss;
}

struct CollisionGrads {
  std::vector<Eigen::Vector3d> anchor;
  std::vector<Eigen::Vector3d> left;
  std::vector<Eigen::Vector3d> right;
};

// Exact subgradients of collision_loss with the zero branch at the hinge
// kink. Gradients flow into the anchor through both R and the centroid.
inline CollisionGrads collision_grad(const PointSet& anchor, const PointSet* left,
                                     const PointSet* right) {
  if (anchor.empty()) throw ValidationError("collision_grad with empty anchor");
  const size_t K = anchor.size();
  const Eigen::Vector3d pm = centroid(anchor);
  const double R = intravariance(anchor);

  CollisionGrads g;
  g.anchor.assign(K, Eigen::Vector3d::Zero());
  if (left) g.left.assign(left->size(), Eigen::Vector3d::Zero());
  if (right) g.right.assign(right->size(), Eigen::Vector3d::Zero());

  // dR/dp_k = (u_k - mean_u) / K with u_k the unit offset from the centroid.
  std::vector<Eigen::Vector3d> unit(K, Eigen::Vector3d::Zero());
  Eigen::Vector3d unit_mean = Eigen::Vector3d::Zero();
  for (size_t k = 0; k < K; ++k) {
    const Eigen::Vector3d d = anchor[k] - pm;
    const double nrm = d.norm();
    unit[k] = nrm > 0 ? Eigen::Vector3d(d / nrm) : Eigen::Vector3d::Zero();
    unit_mean += unit[k];
  }
  unit_mean /= static_cast<double>(K);

  int active = 0;
  Eigen::Vector3d dL_dpm = Eigen::Vector3d::Zero();
  auto visit = [&](const PointSet& nb, std::vector<Eigen::Vector3d>& grad_nb) {
    for (size_t j = 0; j < nb.size(); ++j) {
      const Eigen::Vector3d d = nb[j] - pm;
      const double dist = d.norm();
      if (R - dist <= 0.0) continue;  // hinge inactive (zero branch at the kink)
      ++active;
      if (dist > 0.0) {
        const Eigen::Vector3d v = d / dist;
        grad_nb[j] -= v;   // moving the neighbor away from pm lowers the loss
        dL_dpm += v;       // moving pm toward the neighbor raises the distance term
      }
    }
  };
  if (left) visit(*left, g.left);
  if (right) visit(*right, g.right);

  // Each active term contributes +1 to dL/dR; spread over anchor points.
  const double dL_dR = static_cast<double>(active);
  for (size_t k = 0; k < K; ++k) {
    g.anchor[k] = dL_dR * (unit[k] - unit_mean) / static_cast<double>(K) +
                  dL_dpm / static_cast<double>(K);
  }
  return g;
}

struct CollisionReport {
  struct PairDepth {
    int tooth_a = 0;  // FDI codes
    int tooth_b = 0;
    double depth_mm = 0.0;
  };
  std::vector<PairDepth> pairs;
  std::vector<std::pair<int, double>> per_tooth_loss;  // FDI -> L_col
  double total_loss = 0.0;
  double pd_mm = 0.0;  // mean pair depth

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["pd_mm"] = pd_mm;
    j["total_loss"] = total_loss;
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : pairs)
      j["pairs"].push_back({{"tooth_a", p.tooth_a},
                            {"tooth_b", p.tooth_b},
                            {"depth_mm", p.depth_mm}});
    j["per_tooth_loss"] = nlohmann::json::array();
    for (const auto& [fdi, loss] : per_tooth_loss)
      j["per_tooth_loss"].push_back({{"tooth", fdi}, {"loss", loss}});
    return j;
  }
};

// Penetration depth between two teeth, symmetric in the pair order:
// depth(i->j) probes tooth j's points against tooth i's centroid radius.
inline double pair_depth(const PointSet& a, const PointSet& b) {
  auto directed = [](const PointSet& anchor, const PointSet& probe) {
    const Eigen::Vector3d pm = centroid(anchor);
    const double R = intravariance(anchor);
    double depth = 0.0;
    for (const auto& q : probe)
      depth = std::max(depth, R - (q - pm).norm());
    return std::max(depth, 0.0);
  };
  return std::max(directed(a, b), directed(b, a));
}

// Evaluation metric over a scene: per arch-adjacent pair depth, mean as PD,
// plus each tooth's hinge loss against its neighbors. Teeth are passed in
// arch order as (fdi, centers) pairs.
inline CollisionReport penetration_report(
    const std::vector<std::pair<int, PointSet>>& teeth_in_arch_order) {
  CollisionReport report;
  const size_t n = teeth_in_arch_order.size();
  if (n == 0) throw ValidationError("penetration_report needs at least one tooth");

  double depth_sum = 0.0;
  for (size_t i = 0; i + 1 < n; ++i) {
    const auto& [fa, pa] = teeth_in_arch_order[i];
    const auto& [fb, pb] = teeth_in_arch_order[i + 1];
    const double d = pair_depth(pa, pb);
    report.pairs.push_back({fa, fb, d});
    depth_sum += d;
  }
  report.pd_mm = report.pairs.empty() ? 0.0 : depth_sum / report.pairs.size();

  for (size_t i = 0; i < n; ++i) {
    const PointSet* left = i > 0 ? &teeth_in_arch_order[i - 1].second : nullptr;
    const PointSet* right = i + 1 < n ? &teeth_in_arch_order[i + 1].second : nullptr;
    const double loss = collision_loss(teeth_in_arch_order[i].second, left, right);
    report.per_tooth_loss.push_back({teeth_in_arch_order[i].first, loss});
    report.total_loss += loss;
  }
  return report;
}

// Adapter over Gaussian centers. arch_fdi lists the scene's teeth in arch
// order by FDI code; teeth absent from the scene are skipped.
inline CollisionReport penetration_distance(const gsplat::SceneGaussians& scene,
                                            const std::vector<int>& arch_fdi) {
  std::vector<std::pair<int, PointSet>> ordered;
  for (int fdi : arch_fdi) {
    for (const auto& tooth : scene.teeth) {
      if (tooth.fdi == fdi && !tooth.gaussians.empty()) {
        ordered.push_back({fdi, gsplat::tooth_centers(tooth)});
        break;
      }
    }
  }
  if (ordered.empty())
    throw ValidationError("penetration_distance: no teeth matched the arch order");
  return penetration_report(ordered);
}

}  // namespace dentoforge::collision
