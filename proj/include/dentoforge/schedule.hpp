#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dentoforge/errors.hpp"

namespace dentoforge::diffusion {

// Variance-preserving signal/noise scales alpha/sigma for eta = 0..T with
// alpha[0] = 1, sigma[0] = 0, alpha strictly decreasing and
// alpha^2 + sigma^2 = 1. Both kinds are defined in continuous time
// t = eta/T so every invariant holds for any T >= 1; the terminal signal
// fraction is floored at kAlphaBarMin to keep the reverse update
// (division by alpha) finite.
struct NoiseSchedule {
  int T = 0;
  std::string kind;
  std::vector<double> alpha;  // size T+1
  std::vector<double> sigma;  // size T+1
};

inline constexpr double kAlphaBarMin = 1e-3;

inline NoiseSchedule make_schedule(int T, const std::string& kind) {
  if (T < 1) throw ValidationError("noise schedule requires T >= 1");
  if (kind != "cosine" && kind != "linear")
    throw ValidationError("unknown schedule kind '" + kind + "'");

  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.alpha.resize(static_cast<size_t>(T) + 1);
  s.sigma.resize(static_cast<size_t>(T) + 1);

  constexpr double offset = 0.008;  // cosine shoulder
  const double f0 = std::cos(offset / (1.0 + offset) * std::numbers::pi / 2.0);
  const double denom = f0 * f0;

  for (int eta = 0; eta <= T; ++eta) {
    const double t = static_cast<double>(eta) / static_cast<double>(T);
    double alpha_bar;
    if (kind == "cosine") {
      const double f = std::cos((t + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      alpha_bar = kAlphaBarMin + (1.0 - kAlphaBarMin) * (f * f / denom);
    } else {
      alpha_bar = 1.0 - (1.0 - kAlphaBarMin) * t;
    }
    if (eta == 0) alpha_bar = 1.0;
    s.alpha[static_cast<size_t>(eta)] = std::sqrt(alpha_bar);
    s.sigma[static_cast<size_t>(eta)] = std::sqrt(1.0 - alpha_bar);
  }
  return s;
}

// The forward perturbation alpha*x + sigma*eps applied only to rows flagged
// missing; observed rows pass through unchanged (conditioning by
// concatenation happens in the denoiser input).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
forward_noise(const Eigen::MatrixBase<Derived>& layouts, int eta,
              const Eigen::MatrixBase<Derived>& eps,
              const std::vector<bool>& missing, const NoiseSchedule& sched) {
  if (layouts.rows() != eps.rows() || layouts.cols() != eps.cols())
    throw ValidationError("forward_noise: eps shape mismatch");
  if (static_cast<size_t>(layouts.rows()) != missing.size())
    throw ValidationError("forward_noise: missing mask length mismatch");
  if (eta < 0 || eta > sched.T)
    throw ValidationError("forward_noise: timestep out of range");

  using Scalar = typename Derived::Scalar;
  const Scalar a = static_cast<Scalar>(sched.alpha[static_cast<size_t>(eta)]);
  const Scalar s = static_cast<Scalar>(sched.sigma[static_cast<size_t>(eta)]);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out = layouts;
  for (Eigen::Index i = 0; i < layouts.rows(); ++i) {
    if (!missing[static_cast<size_t>(i)]) continue;
    out.row(i) = a * layouts.row(i) + s * eps.row(i);
  }
  return out;
}

}  // namespace dentoforge::diffusion
