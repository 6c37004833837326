#pragma once

#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "dentoforge/jawgraph.hpp"

namespace dentoforge::geometry {

// Layout box frame: local x spans the width w (along the arch tangent),
// local y the length l (bucco-lingual), local z the height h.
// World rotation is Rz(k) * Rx(r).
inline Eigen::Matrix3d rotation_from_layout(const jawgraph::ToothLayout& L) {
  const double ck = std::cos(L.k), sk = std::sin(L.k);
  const double cr = std::cos(L.r), sr = std::sin(L.r);
  Eigen::Matrix3d Rz, Rx;
  Rz << ck, -sk, 0, sk, ck, 0, 0, 0, 1;
  Rx << 1, 0, 0, 0, cr, -sr, 0, sr, cr;
  return Rz * Rx;
}

inline Eigen::Vector3d layout_center(const jawgraph::ToothLayout& L) {
  return {L.x, L.y, L.z};
}

inline Eigen::Vector3d layout_half_extents(const jawgraph::ToothLayout& L) {
  return {L.w / 2.0, L.l / 2.0, L.h / 2.0};
}

inline Eigen::Vector3d layout_local_to_world(const jawgraph::ToothLayout& L,
                                             const Eigen::Vector3d& local) {
  return layout_center(L) + rotation_from_layout(L) * local;
}

inline std::array<Eigen::Vector3d, 8> layout_corners(const jawgraph::ToothLayout& L) {
  const Eigen::Vector3d he = layout_half_extents(L);
  std::array<Eigen::Vector3d, 8> out;
  int idx = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1})
        out[idx++] = layout_local_to_world(
            L, Eigen::Vector3d(sx * he.x(), sy * he.y(), sz * he.z()));
  return out;
}

// True when the point lies inside the oriented layout box inflated by eps.
inline bool point_in_layout_box(const jawgraph::ToothLayout& L,
                                const Eigen::Vector3d& p, double eps = 0.0) {
  const Eigen::Vector3d local =
      rotation_from_layout(L).transpose() * (p - layout_center(L));
  const Eigen::Vector3d he = layout_half_extents(L);
  return std::abs(local.x()) <= he.x() + eps &&
         std::abs(local.y()) <= he.y() + eps &&
         std::abs(local.z()) <= he.z() + eps;
}

// Separating-axis test for two oriented layout boxes.
inline bool layout_boxes_overlap(const jawgraph::ToothLayout& A,
                                 const jawgraph::ToothLayout& B) {
  const Eigen::Matrix3d Ra = rotation_from_layout(A);
  const Eigen::Matrix3d Rb = rotation_from_layout(B);
  const Eigen::Vector3d ea = layout_half_extents(A);
  const Eigen::Vector3d eb = layout_half_extents(B);
  const Eigen::Vector3d d = layout_center(B) - layout_center(A);

  std::array<Eigen::Vector3d, 15> axes;
  int n = 0;
  for (int i = 0; i < 3; ++i) axes[n++] = Ra.col(i);
  for (int i = 0; i < 3; ++i) axes[n++] = Rb.col(i);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Eigen::Vector3d c = Ra.col(i).cross(Rb.col(j));
      if (c.squaredNorm() > 1e-12) axes[n++] = c.normalized();
    }
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d& ax = axes[i];
    double ra = 0, rb = 0;
    for (int j = 0; j < 3; ++j) {
      ra += ea[j] * std::abs(ax.dot(Ra.col(j)));
      rb += eb[j] * std::abs(ax.dot(Rb.col(j)));
    }
    if (std::abs(ax.dot(d)) > ra + rb) return false;
  }
  return true;
}

}  // namespace dentoforge::geometry
