#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dentoforge/denoiser.hpp"
#include "dentoforge/errors.hpp"
#include "dentoforge/jawgraph.hpp"
#include "dentoforge/rng.hpp"
#include "dentoforge/schedule.hpp"
#include "dentoforge/text_embedding.hpp"

namespace dentoforge::diffusion {

using jawgraph::JawGraph;
using jawgraph::ToothLayout;

inline Eigen::Matrix<double, 1, 8> layout_to_row(const ToothLayout& L) {
  Eigen::Matrix<double, 1, 8> r;
  r << L.x, L.y, L.z, L.h, L.w, L.l, L.k, L.r;
  return r;
}

inline ToothLayout row_to_layout(const Eigen::Matrix<double, 1, 8>& r) {
  ToothLayout L;
  L.x = r[0]; L.y = r[1]; L.z = r[2];
  L.h = r[3]; L.w = r[4]; L.l = r[5];
  L.k = r[6]; L.r = r[7];
  return L;
}

// Per-channel affine map to zero mean / unit variance, fit on the training
// set and stored with the model.
struct LayoutNormalizer {
  Eigen::Matrix<double, 8, 1> mean = Eigen::Matrix<double, 8, 1>::Zero();
  Eigen::Matrix<double, 8, 1> std = Eigen::Matrix<double, 8, 1>::Ones();

  static LayoutNormalizer fit(const std::vector<JawGraph>& graphs) {
    std::vector<Eigen::Matrix<double, 1, 8>> rows;
    for (const auto& g : graphs)
      for (const auto& n : g.nodes)
        if (n.layout) rows.push_back(layout_to_row(*n.layout));
    if (rows.empty()) throw ValidationError("normalizer fit on empty data");
    LayoutNormalizer out;
    out.mean.setZero();
    for (const auto& r : rows) out.mean += r.transpose();
    out.mean /= static_cast<double>(rows.size());
    Eigen::Matrix<double, 8, 1> var = Eigen::Matrix<double, 8, 1>::Zero();
    for (const auto& r : rows) {
      const Eigen::Matrix<double, 8, 1> d = r.transpose() - out.mean;
      var += d.cwiseProduct(d);
    }
    var /= static_cast<double>(rows.size());
    out.std = var.cwiseSqrt().cwiseMax(1e-6);
    return out;
  }

  Eigen::Matrix<double, 1, 8> normalize(const ToothLayout& L) const {
    return (layout_to_row(L).transpose() - mean).cwiseQuotient(std).transpose();
  }

  ToothLayout denormalize(const Eigen::Matrix<double, 1, 8>& row) const {
    return row_to_layout(
        (row.transpose().cwiseProduct(std) + mean).transpose());
  }
};

// Arch-order canonical view of a graph. All model-facing row layouts are in
// this order, which makes sampling exactly equivariant to node relabeling.
struct CanonicalGraph {
  std::vector<int> node_of_row;  // canonical row -> node index
  std::vector<int> cats;         // category vocabulary index
  std::vector<int> fdi;
  std::vector<bool> missing;
  Eigen::MatrixXd layout_rows;   // N x 8 normalized; zeros where missing
  Eigen::MatrixXd features;      // N x feature_dim
  autodiff::IMat edge_type;      // N x N
};

inline CanonicalGraph canonicalize(const JawGraph& g,
                                   const LayoutNormalizer& norm) {
  CanonicalGraph c;
  c.node_of_row = jawgraph::arch_order(g);
  const int n = static_cast<int>(c.node_of_row.size());
  std::vector<int> row_of_node(g.nodes.size());
  for (int r = 0; r < n; ++r) row_of_node[static_cast<size_t>(c.node_of_row[r])] = r;

  c.layout_rows = Eigen::MatrixXd::Zero(n, 8);
  c.features = Eigen::MatrixXd::Zero(n, jawgraph::kFeatureDim);
  c.edge_type = autodiff::IMat::Constant(n, n, -1);
  for (int r = 0; r < n; ++r) {
    const auto& node = g.nodes[static_cast<size_t>(c.node_of_row[r])];
    c.cats.push_back(jawgraph::fdi::category_index(node.tooth_id));
    c.fdi.push_back(node.tooth_id);
    c.missing.push_back(node.missing || !node.layout);
    if (node.layout) c.layout_rows.row(r) = norm.normalize(*node.layout);
    for (int f = 0; f < jawgraph::kFeatureDim; ++f)
      c.features(r, f) = node.features[static_cast<size_t>(f)];
    c.edge_type(r, r) = 0;
  }
  for (const auto& e : g.edges) {
    const int a = row_of_node[static_cast<size_t>(e.src)];
    const int b = row_of_node[static_cast<size_t>(e.dst)];
    const int code = 1 + static_cast<int>(e.relation);
    c.edge_type(a, b) = code;
    c.edge_type(b, a) = code;
  }
  return c;
}

inline const char* tooth_position_name(int position) {
  static const char* names[] = {"central incisor", "lateral incisor", "canine",
                                "first premolar", "second premolar",
                                "first molar", "second molar", "third molar"};
  return names[std::clamp(position, 1, 8) - 1];
}

// Deterministic textual description of a masked jaw, used both as training
// conditioning and as the default generate prompt.
inline std::string prompt_for_missing(const JawGraph& g) {
  std::string prompt = "restore missing teeth:";
  bool any = false;
  for (const auto& n : g.nodes) {
    if (!n.missing && n.layout) continue;
    prompt += std::string(" ") +
              (g.jaw_side == jawgraph::JawSide::Upper ? "upper" : "lower") + " " +
              tooth_position_name(jawgraph::fdi::position(n.tooth_id));
    any = true;
  }
  if (!any) prompt = "full healthy jaw";
  return prompt;
}

// One training pair: a complete target graph plus the teeth withheld from
// the conditioning side.
struct TrainPair {
  const JawGraph* target = nullptr;
  std::vector<int> mask_fdi;
  std::uint64_t sample_id = 0;
};

template <typename S>
struct PreparedBatch {
  BatchInput<S> input;
  Mat<S> eps_target;
  Mat<S> loss_mask;
  std::vector<std::uint64_t> sample_ids;
};

inline Eigen::MatrixXd text_tokens_from_embedding(const TextEmbedding& y) {
  Eigen::MatrixXd tokens(kTextTokens, kTextTokenDim);
  for (int t = 0; t < kTextTokens; ++t)
    for (int d = 0; d < kTextTokenDim; ++d)
      tokens(t, d) = y.vec[t * kTextTokenDim + d];
  return tokens;
}

// Assembles a block-diagonal batch: per sample draw eta and per-missing-row
// noise, apply the forward perturbation, and expose the observed layouts as
// source context.
template <typename S>
PreparedBatch<S> prepare_batch(const std::vector<TrainPair>& pairs,
                               const NoiseSchedule& sched,
                               const LayoutNormalizer& norm,
                               std::uint64_t noise_key) {
  PreparedBatch<S> out;
  int total_rows = 0;
  std::vector<CanonicalGraph> canon;
  std::vector<std::vector<bool>> masked;
  for (const auto& p : pairs) {
    CanonicalGraph c = canonicalize(*p.target, norm);
    std::vector<bool> m(c.fdi.size(), false);
    for (int fdi : p.mask_fdi) {
      bool found = false;
      for (size_t r = 0; r < c.fdi.size(); ++r)
        if (c.fdi[r] == fdi) {
          m[r] = true;
          found = true;
        }
      if (!found)
        throw ValidationError("mask names tooth " + std::to_string(fdi) +
                              " absent from the sample");
    }
    total_rows += static_cast<int>(c.fdi.size());
    canon.push_back(std::move(c));
    masked.push_back(std::move(m));
  }

  auto& in = out.input;
  const int R = total_rows;
  const int B = static_cast<int>(pairs.size());
  in.noisy = Mat<S>::Zero(R, 8);
  in.features = Mat<S>::Zero(R, jawgraph::kFeatureDim);
  in.src_layout = Mat<S>::Zero(R, 8);
  in.missing_flag = Mat<S>::Zero(R, 1);
  in.edge_type = autodiff::IMat::Constant(R, R, -1);
  in.text_tokens = Mat<S>::Zero(B * kTextTokens, kTextTokenDim);
  out.eps_target = Mat<S>::Zero(R, 8);
  out.loss_mask = Mat<S>::Zero(R, 8);

  int row0 = 0;
  for (int b = 0; b < B; ++b) {
    const CanonicalGraph& c = canon[static_cast<size_t>(b)];
    const auto& m = masked[static_cast<size_t>(b)];
    const int n = static_cast<int>(c.fdi.size());
    const std::uint64_t sid = pairs[static_cast<size_t>(b)].sample_id;
    out.sample_ids.push_back(sid);

    Rng eta_rng = Rng::keyed({noise_key, 0xE7A0ull, sid});
    const int eta = static_cast<int>(eta_rng.uniform_int(1, sched.T));
    in.eta_per_sample.push_back(eta);

    Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(n, 8);
    for (int r = 0; r < n; ++r) {
      if (!m[static_cast<size_t>(r)]) continue;
      Rng nrng = Rng::keyed({noise_key, 0x0E95ull, sid,
                             static_cast<std::uint64_t>(c.fdi[r])});
      for (int ch = 0; ch < 8; ++ch) eps(r, ch) = nrng.normal();
    }
    const Eigen::MatrixXd noisy =
        forward_noise(c.layout_rows, eta, eps, m, sched);

    // Training prompt mirrors the generate-time description of the mask.
    JawGraph masked_view = *pairs[static_cast<size_t>(b)].target;
    const auto& mask_fdi = pairs[static_cast<size_t>(b)].mask_fdi;
    for (auto& node : masked_view.nodes)
      if (std::find(mask_fdi.begin(), mask_fdi.end(), node.tooth_id) !=
          mask_fdi.end())
        node.missing = true;
    const TextEmbedding y = embed_text(prompt_for_missing(masked_view));
    const Eigen::MatrixXd tokens = text_tokens_from_embedding(y);
    for (int t = 0; t < kTextTokens; ++t)
      for (int d = 0; d < kTextTokenDim; ++d)
        in.text_tokens(b * kTextTokens + t, d) = static_cast<S>(tokens(t, d));

    for (int r = 0; r < n; ++r) {
      const int gr = row0 + r;
      in.cat_index.push_back(c.cats[static_cast<size_t>(r)]);
      in.sample_of_row.push_back(b);
      const bool miss = m[static_cast<size_t>(r)];
      in.missing_flag(gr, 0) = miss ? S(1) : S(0);
      for (int ch = 0; ch < 8; ++ch) {
        in.noisy(gr, ch) = static_cast<S>(noisy(r, ch));
        in.src_layout(gr, ch) = miss ? S(0) : static_cast<S>(c.layout_rows(r, ch));
        out.eps_target(gr, ch) = static_cast<S>(eps(r, ch));
        out.loss_mask(gr, ch) = miss ? S(1) : S(0);
      }
      for (int f = 0; f < jawgraph::kFeatureDim; ++f)
        in.features(gr, f) = miss ? S(0) : static_cast<S>(c.features(r, f));
      for (int r2 = 0; r2 < n; ++r2)
        in.edge_type(gr, row0 + r2) = c.edge_type(r, r2);
    }
    row0 += n;
  }
  return out;
}

// One optimizer-ready step: draws (eta, eps) per sample, runs the denoiser,
// and accumulates parameter gradients of the masked-channel MSE.
template <typename S>
S train_step(GraphDenoiser<S>& den, const std::vector<TrainPair>& pairs,
             const NoiseSchedule& sched, const LayoutNormalizer& norm,
             std::uint64_t noise_key, bool training = true) {
  PreparedBatch<S> batch = prepare_batch<S>(pairs, sched, norm, noise_key);
  const S loss = den.train_step_loss(batch.input, sched.T, batch.eps_target,
                                     batch.loss_mask, noise_key, training);
  if (!std::isfinite(static_cast<double>(loss))) {
    std::string ids;
    for (std::uint64_t id : batch.sample_ids) ids += " " + std::to_string(id);
    throw NumericError("non-finite training loss in batch of samples:" + ids);
  }
  return loss;
}

// Adam over a parameter store; moments are part of the training state and
// serialize with checkpoints.
template <typename S>
class AdamOptimizer {
 public:
  AdamOptimizer(ParamStore<S>& store, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& e : store.entries) {
      m_.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
      v_.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < store_.entries.size(); ++i) {
      auto& e = store_.entries[i];
      m_[i] = S(beta1_) * m_[i] + S(1.0 - beta1_) * e.grad;
      v_[i] = (S(beta2_) * v_[i]).eval() +
              S(1.0 - beta2_) * e.grad.cwiseProduct(e.grad);
      for (Eigen::Index k = 0; k < e.value.size(); ++k) {
        const double mh = static_cast<double>(m_[i].data()[k]) / bc1;
        const double vh = static_cast<double>(v_[i].data()[k]) / bc2;
        e.value.data()[k] -=
            static_cast<S>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  std::vector<Mat<S>>& first_moments() { return m_; }
  std::vector<Mat<S>>& second_moments() { return v_; }
  long long& step_count() { return t_; }
  double& learning_rate() { return lr_; }

 private:
  ParamStore<S>& store_;
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

// Algorithm-1 sampling: noise the unknown layout channels to the terminal
// timestep, then walk a strided reverse schedule, re-clamping observed rows
// each step; fresh noise is added at every step except the last (eta = 1).
// Deterministic per seed and exactly equivariant to node relabeling.
template <typename Den>
JawGraph sample_layout(Den& den, const JawGraph& g_s,
                       const TextEmbedding& y_s, const NoiseSchedule& sched,
                       int steps, std::uint64_t seed,
                       const LayoutNormalizer& norm) {
  using S = typename Den::scalar_type;
  {
    const auto violations = jawgraph::validate(g_s);
    if (!violations.empty())
      throw ValidationError("sample_layout input invalid: " + violations.front());
  }
  if (den.config().T != sched.T)
    throw ValidationError("denoiser was trained with T=" +
                          std::to_string(den.config().T) +
                          " but the schedule has T=" + std::to_string(sched.T));
  if (steps < 1) throw ValidationError("sample_layout requires steps >= 1");

  bool any_missing = false;
  for (const auto& n : g_s.nodes)
    if (n.missing || !n.layout) any_missing = true;
  if (!any_missing) return g_s;

  const CanonicalGraph c = canonicalize(g_s, norm);
  const int n = static_cast<int>(c.fdi.size());

  // Initial state: observed rows carry their layouts, unknown rows are
  // noised from zero to the terminal timestep.
  Eigen::MatrixXd x = c.layout_rows;
  for (int r = 0; r < n; ++r) {
    if (!c.missing[static_cast<size_t>(r)]) continue;
    Rng rng = Rng::keyed({seed, 0x1417ull,
                          static_cast<std::uint64_t>(c.fdi[r])});
    for (int ch = 0; ch < 8; ++ch)
      x(r, ch) = sched.alpha[static_cast<size_t>(sched.T)] * 0.0 +
                 sched.sigma[static_cast<size_t>(sched.T)] * rng.normal();
  }

  // Visited timesteps, strictly decreasing from T and always ending at 1.
  std::vector<int> etas;
  for (int i = 0; i < steps; ++i) {
    const double t =
        steps == 1 ? sched.T
                   : static_cast<double>(sched.T) -
                         static_cast<double>(i) * (sched.T - 1) / (steps - 1);
    int eta = std::max(1, static_cast<int>(std::lround(t)));
    if (!etas.empty()) eta = std::min(eta, etas.back() - 1);
    if (eta < 1) break;
    etas.push_back(eta);
  }
  if (etas.empty() || etas.back() != 1) etas.push_back(1);

  const Eigen::MatrixXd tokens_d = text_tokens_from_embedding(y_s);
  for (int eta : etas) {
    // Clamp observed rows bit-exactly before every network call.
    for (int r = 0; r < n; ++r)
      if (!c.missing[static_cast<size_t>(r)]) x.row(r) = c.layout_rows.row(r);

    BatchInput<S> in;
    in.cat_index = c.cats;
    in.noisy = x.template cast<S>();
    in.features = c.features.template cast<S>();
    in.src_layout = Mat<S>::Zero(n, 8);
    in.missing_flag = Mat<S>::Zero(n, 1);
    for (int r = 0; r < n; ++r) {
      const bool miss = c.missing[static_cast<size_t>(r)];
      in.missing_flag(r, 0) = miss ? S(1) : S(0);
      if (!miss)
        in.src_layout.row(r) = c.layout_rows.row(r).template cast<S>();
      in.sample_of_row.push_back(0);
    }
    in.eta_per_sample.push_back(eta);
    in.edge_type = c.edge_type;
    in.text_tokens = tokens_d.template cast<S>();

    const Mat<S> eps_hat = den.predict(in, sched.T);
    const double a = sched.alpha[static_cast<size_t>(eta)];
    const double s = sched.sigma[static_cast<size_t>(eta)];
    for (int r = 0; r < n; ++r) {
      if (!c.missing[static_cast<size_t>(r)]) continue;
      Rng zrng = Rng::keyed({seed, 0x5a3bull, static_cast<std::uint64_t>(eta),
                             static_cast<std::uint64_t>(c.fdi[r])});
      for (int ch = 0; ch < 8; ++ch) {
        const double x0 = std::clamp(
            (x(r, ch) - s * static_cast<double>(eps_hat(r, ch))) / a, -8.0, 8.0);
        const double z = (eta == 1) ? 0.0 : zrng.normal();
        x(r, ch) = x0 + s * z;
      }
    }
  }

  JawGraph out = g_s;
  constexpr double pi = std::numbers::pi;
  for (int r = 0; r < n; ++r) {
    if (!c.missing[static_cast<size_t>(r)]) continue;
    ToothLayout L = norm.denormalize(x.row(r));
    L.h = std::max(L.h, 1e-3);
    L.w = std::max(L.w, 1e-3);
    L.l = std::max(L.l, 1e-3);
    L.k = std::remainder(L.k, 2 * pi);
    L.r = std::remainder(L.r, 2 * pi);
    if (L.k <= -pi) L.k += 2 * pi;
    if (L.r <= -pi) L.r += 2 * pi;
    out.nodes[static_cast<size_t>(c.node_of_row[r])].layout = L;
  }
  return out;
}

}  // namespace dentoforge::diffusion
