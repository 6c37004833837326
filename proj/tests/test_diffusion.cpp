#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dentoforge/rng.hpp"
#include "dentoforge/schedule.hpp"
#include "dentoforge/text_embedding.hpp"

using namespace dentoforge;
using namespace dentoforge::diffusion;

TEST_CASE("schedule endpoints and invariants hold for both kinds and many T") {
  for (const char* kind : {"cosine", "linear"}) {
    for (int T : {1, 2, 10, 50, 1000}) {
      NoiseSchedule s = make_schedule(T, kind);
      CHECK(s.alpha[0] == 1.0);
      CHECK(s.sigma[0] == 0.0);
      CHECK(s.sigma[static_cast<size_t>(T)] >= 0.999);
      for (int eta = 1; eta <= T; ++eta) {
        CHECK(s.alpha[eta] < s.alpha[eta - 1]);
        CHECK(s.sigma[eta] > s.sigma[eta - 1]);
        CHECK(s.alpha[eta] > 0.0);
        const double vp = s.alpha[eta] * s.alpha[eta] + s.sigma[eta] * s.sigma[eta];
        CHECK(std::abs(vp - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("cosine T=1000 midpoint preserves variance") {
  NoiseSchedule s = make_schedule(1000, "cosine");
  const double vp = s.alpha[500] * s.alpha[500] + s.sigma[500] * s.sigma[500];
  CHECK(std::abs(vp - 1.0) < 1e-12);
}

TEST_CASE("make_schedule rejects bad inputs") {
  REQUIRE_THROWS_AS(make_schedule(0, "cosine"), ValidationError);
  REQUIRE_THROWS_AS(make_schedule(10, "quadratic"), ValidationError);
}

TEST_CASE("forward_noise at eta=0 is the identity") {
  NoiseSchedule s = make_schedule(100, "cosine");
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 8);
  Eigen::MatrixXd eps = Eigen::MatrixXd::Random(5, 8);
  std::vector<bool> missing(5, true);
  Eigen::MatrixXd out = forward_noise(x, 0, eps, missing, s);
  CHECK((out - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward_noise direct substitution") {
  // alpha=0.8, sigma=0.6, x=1, eps=0.5 -> 1.1
  NoiseSchedule s = make_schedule(1, "linear");
  s.alpha[1] = 0.8;
  s.sigma[1] = 0.6;
  Eigen::MatrixXd x(1, 1), eps(1, 1);
  x << 1.0;
  eps << 0.5;
  Eigen::MatrixXd out = forward_noise(x, 1, eps, {true}, s);
  CHECK(out(0, 0) == Catch::Approx(1.1).margin(1e-15));
}

TEST_CASE("forward_noise leaves observed rows untouched") {
  NoiseSchedule s = make_schedule(100, "cosine");
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 8);
  Eigen::MatrixXd eps = Eigen::MatrixXd::Ones(4, 8);
  std::vector<bool> missing{false, true, false, true};
  Eigen::MatrixXd out = forward_noise(x, 60, eps, missing, s);
  CHECK((out.row(0) - x.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.row(2) - x.row(2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.row(1) - x.row(1)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("forward_noise rejects shape mismatches") {
  NoiseSchedule s = make_schedule(10, "linear");
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 8);
  Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(2, 8);
  REQUIRE_THROWS_AS(forward_noise(x, 1, eps, std::vector<bool>(3, true), s),
                    ValidationError);
}

TEST_CASE("at eta=T the output is dominated by the noise") {
  // Monte-Carlo correlation between input and output below 0.05.
  NoiseSchedule s = make_schedule(1000, "cosine");
  Rng rng(2024);
  const int n = 4000;
  std::vector<double> xs(n), ys(n);
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd x(1, 1), eps(1, 1);
    x << rng.normal();
    eps << rng.normal();
    Eigen::MatrixXd out = forward_noise(x, 1000, eps, {true}, s);
    xs[i] = x(0, 0);
    ys[i] = out(0, 0);
  }
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) { mx += xs[i]; my += ys[i]; }
  mx /= n; my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  const double corr = sxy / std::sqrt(sxx * syy);
  CHECK(std::abs(corr) < 0.06);
}

TEST_CASE("forward/reverse algebraic round-trip is exact") {
  NoiseSchedule s = make_schedule(1000, "linear");
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int eta = static_cast<int>(rng.uniform_int(1, 1000));
    Eigen::MatrixXd x0 = Eigen::MatrixXd::Random(3, 8);
    Eigen::MatrixXd eps = Eigen::MatrixXd::Random(3, 8);
    Eigen::MatrixXd xe = forward_noise(x0, eta, eps, std::vector<bool>(3, true), s);
    Eigen::MatrixXd rec = (xe - s.sigma[eta] * eps) / s.alpha[eta];
    CHECK((rec - x0).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("embed_text determinism and normalization") {
  auto a = embed_text("missing canine");
  auto b = embed_text("missing canine");
  CHECK((a.vec - b.vec).norm() == 0.0);
  CHECK(std::abs(a.vec.norm() - 1.0) < 1e-9);
  CHECK(a.vec.size() == kTextDim);
}

TEST_CASE("different prompts embed differently") {
  auto a = embed_text("canine");
  auto b = embed_text("molar");
  CHECK(a.vec.dot(b.vec) < 1.0 - 1e-6);
}

TEST_CASE("empty prompt is rejected") {
  REQUIRE_THROWS_AS(embed_text(""), ValidationError);
  REQUIRE_THROWS_AS(embed_text("  ,. "), ValidationError);
}
