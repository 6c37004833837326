#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dentoforge/layout_model.hpp"
#include "dentoforge/synthjaw.hpp"

using namespace dentoforge;
using namespace dentoforge::diffusion;
using jawgraph::JawGraph;
using jawgraph::JawSide;

namespace {

DenoiserConfig toy_config(int T = 20) {
  DenoiserConfig cfg;
  cfg.blocks = 2;
  cfg.heads = 4;
  cfg.width = 32;
  cfg.T = T;
  cfg.dropout = 0.0;
  return cfg;
}

std::vector<JawGraph> toy_dataset(int n, std::uint64_t seed0) {
  std::vector<JawGraph> out;
  auto params = synthjaw::ArchParams::defaults();
  for (int i = 0; i < n; ++i)
    out.push_back(synthjaw::sample_jaw(params, JawSide::Upper, seed0 + i));
  return out;
}

// Closed-form oracle: eps_hat = (x_eta - alpha * x0) / sigma for a known x0.
struct OracleDenoiser {
  using scalar_type = double;
  DenoiserConfig cfg;
  Eigen::MatrixXd x0;  // canonical rows
  NoiseSchedule sched;

  const DenoiserConfig& config() const { return cfg; }
  autodiff::Mat<double> predict(const BatchInput<double>& in, int) const {
    const int eta = in.eta_per_sample[0];
    const double a = sched.alpha[static_cast<size_t>(eta)];
    const double s = sched.sigma[static_cast<size_t>(eta)];
    return (in.noisy - a * x0) / s;
  }
};

}  // namespace

TEST_CASE("masked MSE is zero when the prediction equals the target noise") {
  autodiff::Tape<double> tape;
  autodiff::Mat<double> eps = autodiff::Mat<double>::Random(6, 8);
  autodiff::Mat<double> mask = autodiff::Mat<double>::Zero(6, 8);
  mask.topRows(2).setOnes();
  const int pred = tape.constant(eps);
  const int loss = tape.mse_masked(pred, &eps, &mask);
  CHECK(tape.value(loss)(0, 0) == 0.0);
}

TEST_CASE("train_step loss is finite and non-negative") {
  auto data = toy_dataset(4, 100);
  auto norm = LayoutNormalizer::fit(data);
  auto sched = make_schedule(20, "cosine");
  GraphDenoiser<double> den(toy_config(), 7);

  std::vector<TrainPair> pairs;
  for (size_t i = 0; i < data.size(); ++i)
    pairs.push_back({&data[i], {11, 24}, i});

  den.params().zero_grads();
  const double loss = train_step(den, pairs, sched, norm, 555);
  CHECK(std::isfinite(loss));
  CHECK(loss >= 0.0);

  // Gradients reached the parameters.
  double gnorm = 0.0;
  for (const auto& e : den.params().entries) gnorm += e.grad.squaredNorm();
  CHECK(gnorm > 0.0);
}

TEST_CASE("analytic gradients match a directional finite difference") {
  // 2-block toy denoiser, double precision, dropout off.
  auto data = toy_dataset(2, 300);
  auto norm = LayoutNormalizer::fit(data);
  auto sched = make_schedule(20, "cosine");
  GraphDenoiser<double> den(toy_config(), 11);

  std::vector<TrainPair> pairs{{&data[0], {12, 26}, 0}, {&data[1], {21}, 1}};
  PreparedBatch<double> batch = prepare_batch<double>(pairs, sched, norm, 777);

  den.params().zero_grads();
  const double base = den.train_step_loss(batch.input, sched.T, batch.eps_target,
                                          batch.loss_mask, 0, false);
  CHECK(std::isfinite(base));

  // Random unit direction over all parameters.
  Rng dir_rng(99);
  std::vector<autodiff::Mat<double>> dir;
  double norm2 = 0.0;
  for (const auto& e : den.params().entries) {
    autodiff::Mat<double> d(e.value.rows(), e.value.cols());
    for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = dir_rng.normal();
    norm2 += d.squaredNorm();
    dir.push_back(std::move(d));
  }
  const double inv = 1.0 / std::sqrt(norm2);
  double analytic = 0.0;
  for (size_t i = 0; i < dir.size(); ++i) {
    dir[i] *= inv;
    analytic += den.params().entries[i].grad.cwiseProduct(dir[i]).sum();
  }

  const double h = 1e-4;
  auto eval_at = [&](double t) {
    for (size_t i = 0; i < dir.size(); ++i)
      den.params().entries[i].value += t * dir[i];
    GraphDenoiser<double>& d2 = den;
    const double l = d2.train_step_loss(batch.input, sched.T, batch.eps_target,
                                        batch.loss_mask, 0, false);
    for (size_t i = 0; i < dir.size(); ++i)
      den.params().entries[i].value -= t * dir[i];
    return l;
  };
  den.params().zero_grads();
  const double fd = (eval_at(h) - eval_at(-h)) / (2 * h);
  const double rel = std::abs(fd - analytic) /
                     std::max({std::abs(fd), std::abs(analytic), 1e-8});
  CHECK(rel < 1e-3);
}

TEST_CASE("sampling with zero missing teeth returns the input graph") {
  auto data = toy_dataset(1, 50);
  auto norm = LayoutNormalizer::fit(data);
  auto sched = make_schedule(20, "cosine");
  GraphDenoiser<float> den(toy_config().blocks ? toy_config() : toy_config(), 3);
  auto y = embed_text("full healthy jaw");
  JawGraph out = sample_layout(den, data[0], y, sched, 10, 42, norm);
  CHECK(jawgraph::graphs_equal(out, data[0]));
}

TEST_CASE("sampling defines every layout and clamps observed rows bit-exactly") {
  auto data = toy_dataset(1, 60);
  auto norm = LayoutNormalizer::fit(data);
  auto sched = make_schedule(20, "cosine");
  GraphDenoiser<float> den(toy_config(), 3);

  auto [masked, truth] = synthjaw::mask_missing(data[0], {13, 22});
  auto y = embed_text(prompt_for_missing(masked));
  JawGraph out = sample_layout(den, masked, y, sched, 10, 42, norm);

  REQUIRE(out.nodes.size() == 14);
  int defined = 0;
  for (const auto& n : out.nodes) defined += n.layout.has_value();
  CHECK(defined == 14);

  for (size_t i = 0; i < out.nodes.size(); ++i) {
    const auto& src = masked.nodes[i];
    if (!src.layout) continue;
    CHECK(src.layout->x == out.nodes[i].layout->x);
    CHECK(src.layout->y == out.nodes[i].layout->y);
    CHECK(src.layout->z == out.nodes[i].layout->z);
    CHECK(src.layout->h == out.nodes[i].layout->h);
    CHECK(src.layout->w == out.nodes[i].layout->w);
    CHECK(src.layout->l == out.nodes[i].layout->l);
    CHECK(src.layout->k == out.nodes[i].layout->k);
    CHECK(src.layout->r == out.nodes[i].layout->r);
  }
}

TEST_CASE("sampling is deterministic per seed") {
  auto data = toy_dataset(1, 61);
  auto norm = LayoutNormalizer::fit(data);
  auto sched = make_schedule(20, "cosine");
  GraphDenoiser<float> den(toy_config(), 3);
  auto [masked, truth] = synthjaw::mask_missing(data[0], {11});
  auto y = embed_text(prompt_for_missing(masked));
  JawGraph a = sample_layout(den, masked, y, sched, 10, 42, norm);
  JawGraph b = sample_layout(den, masked, y, sched, 10, 42, norm);
  CHECK(jawgraph::graphs_equal(a, b));
  JawGraph c = sample_layout(den, masked, y, sched, 10, 43, norm);
  CHECK_FALSE(jawgraph::graphs_equal(a, c));
}

TEST_CASE("sampling is exactly equivariant to node relabeling") {
  auto data = toy_dataset(1, 62);
  auto norm = LayoutNormalizer::fit(data);
  auto sched = make_schedule(20, "cosine");
  GraphDenoiser<float> den(toy_config(), 3);
  auto [masked, truth] = synthjaw::mask_missing(data[0], {15, 23});
  auto y = embed_text(prompt_for_missing(masked));
  JawGraph base = sample_layout(den, masked, y, sched, 8, 9, norm);

  // Rotate node order and remap edge endpoints consistently.
  JawGraph shuffled = masked;
  const size_t n = shuffled.nodes.size();
  std::vector<int> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = static_cast<int>((i * 5 + 3) % n);
  JawGraph permuted;
  permuted.jaw_side = shuffled.jaw_side;
  permuted.nodes.resize(n);
  std::vector<int> where(n);
  for (size_t i = 0; i < n; ++i) {
    permuted.nodes[static_cast<size_t>(perm[i])] = shuffled.nodes[i];
    where[i] = perm[i];
  }
  for (const auto& e : shuffled.edges)
    permuted.edges.push_back({where[static_cast<size_t>(e.src)],
                              where[static_cast<size_t>(e.dst)], e.relation});

  JawGraph out_perm = sample_layout(den, permuted, y, sched, 8, 9, norm);
  for (size_t i = 0; i < n; ++i) {
    const auto& a = *base.nodes[i].layout;
    const auto& b = *out_perm.nodes[static_cast<size_t>(where[i])].layout;
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.k == b.k);
  }
}

TEST_CASE("T=1 oracle denoiser inversion recovers the clean layouts") {
  auto data = toy_dataset(1, 70);
  auto norm = LayoutNormalizer::fit(data);
  auto sched = make_schedule(1, "linear");

  auto [masked, truth] = synthjaw::mask_missing(data[0], {12, 25});

  OracleDenoiser oracle;
  oracle.cfg = toy_config(1);
  oracle.sched = sched;
  oracle.x0 = canonicalize(data[0], norm).layout_rows;

  auto y = embed_text(prompt_for_missing(masked));
  JawGraph out = sample_layout(oracle, masked, y, sched, 1, 5, norm);
  for (const auto& [fdi, L] : truth) {
    const auto* node = out.find(fdi);
    REQUIRE(node != nullptr);
    REQUIRE(node->layout.has_value());
    const auto got = norm.normalize(*node->layout);
    const auto want = norm.normalize(L);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("schedule mismatch is rejected") {
  auto data = toy_dataset(1, 80);
  auto norm = LayoutNormalizer::fit(data);
  auto sched = make_schedule(50, "cosine");  // model trained with T=20
  GraphDenoiser<float> den(toy_config(), 3);
  auto [masked, truth] = synthjaw::mask_missing(data[0], {11});
  auto y = embed_text("x");
  REQUIRE_THROWS_AS(sample_layout(den, masked, y, sched, 5, 1, norm),
                    ValidationError);
}

TEST_CASE("denoiser output shape is rows x 8") {
  auto data = toy_dataset(2, 90);
  auto norm = LayoutNormalizer::fit(data);
  auto sched = make_schedule(20, "cosine");
  GraphDenoiser<float> den(toy_config(), 3);
  std::vector<TrainPair> pairs{{&data[0], {11}, 0}, {&data[1], {27, 16}, 1}};
  auto batch = prepare_batch<float>(pairs, sched, norm, 1);
  auto out = den.predict(batch.input, sched.T);
  CHECK(out.rows() == 28);
  CHECK(out.cols() == 8);
}
