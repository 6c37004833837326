#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dentoforge/errors.hpp"
#include "dentoforge/geometry.hpp"
#include "dentoforge/jawgraph.hpp"
#include "dentoforge/rng.hpp"

namespace dentoforge::gsplat {

using jawgraph::ToothLayout;

// One anisotropic splat. Scales are stored in log space and opacity as a
// logit so unconstrained optimization cannot leave the valid domain; color
// is the degree-0 spherical-harmonic coefficient triple.
struct Gaussian3D {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();           // mm
  Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();        // exp -> mm
  Eigen::Vector4d rotation = Eigen::Vector4d(1, 0, 0, 0);     // quaternion wxyz
  double opacity_logit = 0.0;                                 // sigmoid -> (0,1)
  Eigen::Vector3d color = Eigen::Vector3d(0.5, 0.5, 0.5);
};

struct ToothGaussians {
  int tooth_index = 0;  // stable index within the scene
  int fdi = 0;
  ToothLayout layout;
  std::vector<Gaussian3D> gaussians;
};

struct SceneGaussians {
  std::vector<ToothGaussians> teeth;

  size_t total_gaussians() const {
    size_t n = 0;
    for (const auto& t : teeth) n += t.gaussians.size();
    return n;
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q_raw) {
  const Eigen::Vector4d q = q_raw / q_raw.norm();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

// Sigma = R * diag(exp(log_scale))^2 * R^T.
inline Eigen::Matrix3d covariance(const Gaussian3D& g) {
  const Eigen::Matrix3d R = quaternion_to_matrix(g.rotation);
  const Eigen::Vector3d s2 = (2.0 * g.log_scale).array().exp();
  return R * s2.asDiagonal() * R.transpose();
}

// Layout-guided initialization: n Gaussians uniform inside the oriented
// layout box, isotropic scales min(h,w,l)/(2 n^(1/3)), opacity 0.5,
// mid-gray color. Deterministic per seed.
inline ToothGaussians init_from_layout(const ToothLayout& layout, int n,
                                       std::uint64_t seed) {
  if (n < 1) throw ValidationError("init_from_layout requires n >= 1");
  ToothGaussians tooth;
  tooth.layout = layout;
  tooth.gaussians.reserve(static_cast<size_t>(n));

  const Eigen::Vector3d he = geometry::layout_half_extents(layout);
  const Eigen::Matrix3d R = geometry::rotation_from_layout(layout);
  const Eigen::Vector3d c = geometry::layout_center(layout);
  const double min_extent = std::min({layout.h, layout.w, layout.l});
  const double scale = min_extent / (2.0 * std::cbrt(static_cast<double>(n)));

  Rng rng = Rng::keyed({seed, 0x6a055ull});
  for (int i = 0; i < n; ++i) {
    Gaussian3D g;
    const Eigen::Vector3d local(rng.uniform(-he.x(), he.x()),
                                rng.uniform(-he.y(), he.y()),
                                rng.uniform(-he.z(), he.z()));
    g.center = c + R * local;
    g.log_scale = Eigen::Vector3d::Constant(std::log(scale));
    g.opacity_logit = 0.0;
    g.color = Eigen::Vector3d(0.5, 0.5, 0.5);
    tooth.gaussians.push_back(g);
  }
  return tooth;
}

// Refreshed layout: center from the mean of centers, extents from the
// principal-axis spread of the center cloud plus three median axis scales
// per side, k/r read off the principal-axes rotation. Axes are matched to
// the previous layout frame so repeated refreshes stay stable.
inline ToothLayout layout_from_gaussians(const ToothGaussians& tooth) {
  if (tooth.gaussians.empty())
    throw ValidationError("layout_from_gaussians requires at least one Gaussian");

  const size_t n = tooth.gaussians.size();
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& g : tooth.gaussians) mean += g.center;
  mean /= static_cast<double>(n);

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& g : tooth.gaussians) {
    const Eigen::Vector3d d = g.center - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Eigen::Matrix3d axes = eig.eigenvectors();  // columns, ascending eigenvalue

  // Match columns to the previous frame (width, length, height) and fix
  // signs so the result is a proper neighbor of the old rotation.
  const Eigen::Matrix3d prev = geometry::rotation_from_layout(tooth.layout);
  Eigen::Matrix3d matched = Eigen::Matrix3d::Zero();
  bool used[3] = {false, false, false};
  for (int target = 0; target < 3; ++target) {
    int best = -1;
    double best_dot = -1.0;
    for (int cand = 0; cand < 3; ++cand) {
      if (used[cand]) continue;
      const double d = std::abs(prev.col(target).dot(axes.col(cand)));
      if (d > best_dot) {
        best_dot = d;
        best = cand;
      }
    }
    used[best] = true;
    const double sign = prev.col(target).dot(axes.col(best)) < 0 ? -1.0 : 1.0;
    matched.col(target) = sign * axes.col(best);
  }

  std::vector<double> scales;
  scales.reserve(3 * n);
  for (const auto& g : tooth.gaussians)
    for (int i = 0; i < 3; ++i) scales.push_back(std::exp(g.log_scale[i]));
  std::nth_element(scales.begin(), scales.begin() + scales.size() / 2, scales.end());
  const double median_scale = scales[scales.size() / 2];

  Eigen::Vector3d spread = Eigen::Vector3d::Zero();
  for (int axis = 0; axis < 3; ++axis) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& g : tooth.gaussians) {
      const double t = matched.col(axis).dot(g.center - mean);
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    spread[axis] = hi - lo;
  }

  ToothLayout out;
  out.x = mean.x();
  out.y = mean.y();
  out.z = mean.z();
  out.w = spread[0] + 6.0 * median_scale;
  out.l = spread[1] + 6.0 * median_scale;
  out.h = spread[2] + 6.0 * median_scale;
  out.k = std::atan2(matched.col(0).y(), matched.col(0).x());
  out.r = std::atan2(matched.col(1).z(), matched.col(2).z());
  constexpr double pi = std::numbers::pi;
  if (out.k <= -pi) out.k += 2 * pi;
  if (out.r <= -pi) out.r += 2 * pi;
  return out;
}

// Centers of every Gaussian of one tooth, in scene order.
inline std::vector<Eigen::Vector3d> tooth_centers(const ToothGaussians& t) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(t.gaussians.size());
  for (const auto& g : t.gaussians) out.push_back(g.center);
  return out;
}

}  // namespace dentoforge::gsplat
