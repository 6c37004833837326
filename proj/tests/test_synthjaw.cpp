#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dentoforge/collision.hpp"
#include "dentoforge/geometry.hpp"
#include "dentoforge/synthjaw.hpp"

using namespace dentoforge;
using namespace dentoforge::synthjaw;
using jawgraph::JawSide;

TEST_CASE("noiseless jaws are exactly mirror symmetric") {
  ArchParams p = ArchParams::defaults();
  p.pos_jitter = 0.0;
  p.z_jitter = 0.0;
  p.angle_jitter = 0.0;
  JawGraph g = sample_jaw(p, JawSide::Upper, 7);

  for (const auto& node : g.nodes) {
    const int partner = jawgraph::fdi::mirror(node.tooth_id);
    const auto* other = g.find(partner);
    REQUIRE(other != nullptr);
    const auto& a = *node.layout;
    const auto& b = *other->layout;
    CHECK(std::abs(a.x + b.x) < 1e-9);
    CHECK(std::abs(a.y - b.y) < 1e-9);
    CHECK(std::abs(a.z - b.z) < 1e-9);
    CHECK(a.h == b.h);
    CHECK(a.w == b.w);
    CHECK(a.l == b.l);
    CHECK(std::abs(a.k + b.k) < 1e-9);
    CHECK(std::abs(a.r - b.r) < 1e-9);
  }
}

TEST_CASE("sample_jaw is deterministic per seed") {
  ArchParams p = ArchParams::defaults();
  JawGraph a = sample_jaw(p, JawSide::Upper, 42);
  JawGraph b = sample_jaw(p, JawSide::Upper, 42);
  CHECK(jawgraph::graphs_equal(a, b));
  JawGraph c = sample_jaw(p, JawSide::Upper, 43);
  CHECK_FALSE(jawgraph::graphs_equal(a, c));
}

TEST_CASE("generated jaws validate and carry 14 teeth") {
  JawGraph g = sample_jaw(ArchParams::defaults(), JawSide::Lower, 5);
  CHECK(g.nodes.size() == 14);
  CHECK(jawgraph::validate(g).empty());
  for (const auto& n : g.nodes) CHECK(jawgraph::fdi::belongs_to(n.tooth_id, JawSide::Lower));
}

TEST_CASE("no adjacent-pair box overlaps over many samples") {
  // Brute-force oracle: SAT intersection over every arch-adjacent pair.
  ArchParams p = ArchParams::defaults();
  int overlaps = 0;
  const int samples = 1000;
  for (int s = 0; s < samples; ++s) {
    JawGraph g = sample_jaw(p, s % 2 == 0 ? JawSide::Upper : JawSide::Lower,
                            static_cast<std::uint64_t>(1000 + s));
    const auto order = jawgraph::arch_order(g);
    for (size_t i = 0; i + 1 < order.size(); ++i) {
      const auto& a = *g.nodes[order[i]].layout;
      const auto& b = *g.nodes[order[i + 1]].layout;
      if (geometry::layout_boxes_overlap(a, b)) ++overlaps;
    }
  }
  CHECK(overlaps == 0);
}

TEST_CASE("infeasible priors raise a generation error") {
  ArchParams p = ArchParams::defaults();
  for (auto& prior : p.priors) {
    prior.w_mean *= 3.0;  // teeth far too wide for the arch
    prior.w_sigma = 0.0;
  }
  REQUIRE_THROWS_AS(sample_jaw(p, JawSide::Upper, 1), NumericError);
}

TEST_CASE("mask_missing of nothing leaves the graph unchanged") {
  JawGraph g = sample_jaw(ArchParams::defaults(), JawSide::Upper, 9);
  auto [masked, truth] = mask_missing(g, {});
  CHECK(jawgraph::graphs_equal(g, masked));
  CHECK(truth.empty());
}

TEST_CASE("mask_missing withholds the layout and zeroes features") {
  JawGraph g = sample_jaw(ArchParams::defaults(), JawSide::Upper, 9);
  auto [masked, truth] = mask_missing(g, {11});
  const auto* node = masked.find(11);
  REQUIRE(node != nullptr);
  CHECK(node->missing);
  CHECK_FALSE(node->layout.has_value());
  for (double f : node->features) CHECK(f == 0.0);
  REQUIRE(truth.count(11) == 1);
  CHECK(truth.at(11) == *g.find(11)->layout);
}

TEST_CASE("mask_missing caps at four teeth") {
  JawGraph g = sample_jaw(ArchParams::defaults(), JawSide::Upper, 9);
  REQUIRE_THROWS_MATCHES(
      mask_missing(g, {11, 12, 13, 14, 15}), ValidationError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("at most 4 missing teeth")));
}

TEST_CASE("mask_missing rejects unknown teeth") {
  JawGraph g = sample_jaw(ArchParams::defaults(), JawSide::Upper, 9);
  REQUIRE_THROWS_AS(mask_missing(g, {48}), ValidationError);
}

TEST_CASE("tooth points collapse to the center for a degenerate box") {
  jawgraph::ToothLayout L;
  L.x = 3.0; L.y = -2.0; L.z = 1.0;
  L.h = 1e-9; L.w = 1e-9; L.l = 1e-9;
  auto pts = sample_tooth_points(L, 0, 1, 7);
  REQUIRE(pts.size() == 1);
  CHECK((pts[0] - Eigen::Vector3d(3.0, -2.0, 1.0)).norm() < 1e-8);
}

TEST_CASE("tooth points stay inside the oriented box") {
  jawgraph::ToothLayout L;
  L.x = 5.0; L.y = -30.0; L.z = 0.4;
  L.h = 9.0; L.w = 7.0; L.l = 6.0;
  L.k = 0.7; L.r = -0.1;
  auto pts = sample_tooth_points(L, 11, 5000, 21);
  for (const auto& p : pts)
    CHECK(geometry::point_in_layout_box(L, p, 1e-6));
}

TEST_CASE("tooth point centroid matches the layout center") {
  jawgraph::ToothLayout L;
  L.x = -4.0; L.y = -12.0; L.z = 0.0;
  L.h = 8.0; L.w = 7.5; L.l = 6.5;
  L.k = -0.5;
  auto pts = sample_tooth_points(L, 23, 100000, 3);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  CHECK((mean - Eigen::Vector3d(-4.0, -12.0, 0.0)).norm() < 0.05);
}

TEST_CASE("tooth point sampling is deterministic per seed") {
  jawgraph::ToothLayout L;
  L.h = 8.0; L.w = 7.0; L.l = 6.0;
  auto a = sample_tooth_points(L, 16, 100, 99);
  auto b = sample_tooth_points(L, 16, 100, 99);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("generated tooth point sets have intravariance in [1, 8] mm") {
  ArchParams p = ArchParams::defaults();
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    JawGraph g = sample_jaw(p, JawSide::Upper, seed);
    for (const auto& node : g.nodes) {
      auto pts = sample_tooth_points(*node.layout, node.tooth_id, 2000, seed);
      const double r = collision::intravariance(pts);
      CHECK(r >= 1.0);
      CHECK(r <= 8.0);
    }
  }
}
