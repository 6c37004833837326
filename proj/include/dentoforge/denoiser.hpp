#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "dentoforge/autodiff.hpp"
#include "dentoforge/errors.hpp"
#include "dentoforge/rng.hpp"

namespace dentoforge::diffusion {

template <typename S>
using Mat = autodiff::Mat<S>;

inline constexpr int kLayoutDim = 8;
inline constexpr int kCategoryVocab = 32;
inline constexpr int kTextTokens = 8;
inline constexpr int kTextTokenDim = 8;  // kTextTokens * kTextTokenDim == d_t

struct DenoiserConfig {
  int blocks = 5;
  int heads = 8;
  int width = 512;
  int T = 1000;
  double dropout = 0.1;
  int category_embed_dim = 16;
  int feature_dim = 16;
  int time_embed_dim = 32;

  int head_dim() const { return width / heads; }
  int const_input_dim() const {
    return kLayoutDim + feature_dim + kLayoutDim + 1 + time_embed_dim;
  }
};

template <typename S>
struct ParamStore {
  struct Entry {
    std::string name;
    Mat<S> value;
    Mat<S> grad;
  };
  std::vector<Entry> entries;
  std::unordered_map<std::string, int> index;

  Entry& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    Entry e;
    e.name = name;
    e.value = Mat<S>::Zero(rows, cols);
    e.grad = Mat<S>::Zero(rows, cols);
    index[name] = static_cast<int>(entries.size());
    entries.push_back(std::move(e));
    return entries.back();
  }

  Entry& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw NumericError("unknown parameter " + name);
    return entries[static_cast<size_t>(it->second)];
  }

  void zero_grads() {
    for (auto& e : entries) e.grad.setZero();
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries) n += static_cast<size_t>(e.value.size());
    return n;
  }
};

// Stacked multi-graph input in canonical (arch-order) row layout. Rows of
// different samples never attend to each other: edge_type carries -1 across
// samples and the cross mask confines text attention to the owning sample.
template <typename S>
struct BatchInput {
  std::vector<int> cat_index;       // R rows
  Mat<S> noisy;                     // R x 8, normalized layout channels
  Mat<S> features;                  // R x feature_dim
  Mat<S> src_layout;                // R x 8, zeros on missing rows
  Mat<S> missing_flag;              // R x 1
  std::vector<int> sample_of_row;   // R
  std::vector<int> eta_per_sample;  // B
  autodiff::IMat edge_type;         // R x R: -1 none, 0 self, 1 Neighbor,
                                    //         2 Symmetry, 3 Arch
  Mat<S> text_tokens;               // (B * kTextTokens) x kTextTokenDim

  Eigen::Index rows() const { return noisy.rows(); }
  int samples() const { return static_cast<int>(eta_per_sample.size()); }
};

// Graph transformer denoiser: per block graph attention over typed edges,
// cross-attention to text tokens, and a GELU MLP, all pre-norm residual.
// Output is the predicted noise per layout channel (R x 8).
template <typename S>
class GraphDenoiser {
 public:
  using scalar_type = S;

  GraphDenoiser(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.width % cfg.heads != 0)
      throw ValidationError("denoiser width must be divisible by heads");
    build_params(seed);
  }

  const DenoiserConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  // Prediction without gradients (sampling path).
  Mat<S> predict(const BatchInput<S>& in, int T) {
    autodiff::Tape<S> tape;
    Scratch scratch;
    const int out = forward(tape, in, T, /*training=*/false, 0, scratch);
    return tape.value(out);
  }

  // MSE over masked entries against the target noise; gradients are
  // accumulated into the parameter store.
  S train_step_loss(const BatchInput<S>& in, int T, const Mat<S>& eps_target,
                    const Mat<S>& loss_mask, std::uint64_t dropout_seed,
                    bool training = true) {
    autodiff::Tape<S> tape;
    Scratch scratch;
    const int out = forward(tape, in, T, training, dropout_seed, scratch);
    scratch.consts.push_back(eps_target);
    const Mat<S>* target = &scratch.consts.back();
    scratch.consts.push_back(loss_mask);
    const Mat<S>* mask = &scratch.consts.back();
    const int loss = tape.mse_masked(out, target, mask);
    const S loss_value = tape.value(loss)(0, 0);
    tape.backward(loss);
    return loss_value;
  }

 private:
  struct Scratch {
    std::deque<Mat<S>> consts;
    std::deque<autodiff::IMat> itypes;
    std::deque<std::vector<int>> rows;
  };

  void build_params(std::uint64_t seed) {
    int pi = 0;
    auto init_linear = [&](const std::string& name, int rows, int cols,
                           double gain = 1.0) {
      auto& e = params_.add(name, rows, cols);
      Rng rng = Rng::keyed({seed, 0xDE401ull, static_cast<std::uint64_t>(pi++)});
      const double std = gain * std::sqrt(2.0 / (rows + cols));
      for (Eigen::Index i = 0; i < e.value.size(); ++i)
        e.value.data()[i] = static_cast<S>(std * rng.normal());
    };
    auto init_zeros = [&](const std::string& name, int rows, int cols) {
      params_.add(name, rows, cols);
      ++pi;
    };
    auto init_ones = [&](const std::string& name, int rows, int cols) {
      auto& e = params_.add(name, rows, cols);
      e.value.setOnes();
      ++pi;
    };

    const int D = cfg_.width;
    const int dh = cfg_.head_dim();
    init_linear("cat_emb", kCategoryVocab, cfg_.category_embed_dim, 0.5);
    init_linear("w_cat", cfg_.category_embed_dim, D);
    init_linear("w_in", cfg_.const_input_dim(), D);
    init_zeros("b_in", 1, D);
    init_linear("tok_w", kTextTokenDim, D);
    init_zeros("tok_b", 1, D);

    for (int b = 0; b < cfg_.blocks; ++b) {
      const std::string p = "blk" + std::to_string(b) + ".";
      init_ones(p + "ln1.g", 1, D);
      init_zeros(p + "ln1.b", 1, D);
      for (int h = 0; h < cfg_.heads; ++h) {
        const std::string q = p + "attn.h" + std::to_string(h) + ".";
        init_linear(q + "wq", D, dh);
        init_linear(q + "wk", D, dh);
        init_linear(q + "wv", D, dh);
        init_linear(q + "wo", dh, D);
        init_zeros(q + "edge", 1, 4);
      }
      init_zeros(p + "attn.bias", 1, D);
      init_ones(p + "ln2.g", 1, D);
      init_zeros(p + "ln2.b", 1, D);
      for (int h = 0; h < cfg_.heads; ++h) {
        const std::string q = p + "cross.h" + std::to_string(h) + ".";
        init_linear(q + "wq", D, dh);
        init_linear(q + "wk", D, dh);
        init_linear(q + "wv", D, dh);
        init_linear(q + "wo", dh, D);
      }
      init_zeros(p + "cross.bias", 1, D);
      init_ones(p + "ln3.g", 1, D);
      init_zeros(p + "ln3.b", 1, D);
      init_linear(p + "mlp.w1", D, 4 * D);
      init_zeros(p + "mlp.b1", 1, 4 * D);
      init_linear(p + "mlp.w2", 4 * D, D);
      init_zeros(p + "mlp.b2", 1, D);
    }
    init_ones("lnf.g", 1, D);
    init_zeros("lnf.b", 1, D);
    init_linear("w_out", D, kLayoutDim, 0.1);
    init_zeros("b_out", 1, kLayoutDim);
  }

  int pnode(autodiff::Tape<S>& tape, const std::string& name) {
    auto& e = params_.at(name);
    return tape.param(e.value, &e.grad);
  }

  int linear(autodiff::Tape<S>& tape, int x, const std::string& w,
             const std::string& b) {
    return tape.add_row_broadcast(tape.matmul(x, pnode(tape, w)), pnode(tape, b));
  }

  Mat<S> time_embedding(const BatchInput<S>& in, int T) const {
    const int half = cfg_.time_embed_dim / 2;
    Mat<S> emb(in.rows(), cfg_.time_embed_dim);
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      const double eta = in.eta_per_sample[static_cast<size_t>(
          in.sample_of_row[static_cast<size_t>(r)])];
      const double t = eta / std::max(1, T) * 1000.0;
      for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        emb(r, i) = static_cast<S>(std::sin(t * freq));
        emb(r, half + i) = static_cast<S>(std::cos(t * freq));
      }
    }
    return emb;
  }

  const Mat<S>* make_keep_mask(Scratch& scratch, Eigen::Index rows,
                               Eigen::Index cols, bool training,
                               std::uint64_t drop_seed, int site) const {
    Mat<S> keep = Mat<S>::Ones(rows, cols);
    if (training && cfg_.dropout > 0.0) {
      Rng rng = Rng::keyed({drop_seed, 0xd20ull, static_cast<std::uint64_t>(site)});
      for (Eigen::Index i = 0; i < keep.size(); ++i)
        if (rng.uniform() < cfg_.dropout) keep.data()[i] = S(0);
    }
    scratch.consts.push_back(std::move(keep));
    return &scratch.consts.back();
  }

  int forward(autodiff::Tape<S>& tape, const BatchInput<S>& in, int T,
              bool training, std::uint64_t drop_seed, Scratch& scratch) {
    const Eigen::Index R = in.rows();
    const int D = cfg_.width;
    const int dh = cfg_.head_dim();
    const S att_scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
    const S keep_prob = static_cast<S>(1.0 - (training ? cfg_.dropout : 0.0));

    // Constant input block: [noisy | features | src layout | missing | time].
    {
      Mat<S> cf(R, cfg_.const_input_dim());
      cf << in.noisy, in.features, in.src_layout, in.missing_flag,
          time_embedding(in, T);
      scratch.consts.push_back(std::move(cf));
    }
    const Mat<S>* const_feats = &scratch.consts.back();

    scratch.itypes.push_back(in.edge_type);
    const autodiff::IMat* edge_type = &scratch.itypes.back();

    // Cross-attention mask: row r may only see its own sample's tokens.
    {
      Mat<S> cm = Mat<S>::Constant(R, in.text_tokens.rows(),
                                   S(autodiff::kMaskedOut));
      for (Eigen::Index r = 0; r < R; ++r) {
        const int sample = in.sample_of_row[static_cast<size_t>(r)];
        for (int tkn = 0; tkn < kTextTokens; ++tkn)
          cm(r, sample * kTextTokens + tkn) = S(0);
      }
      scratch.consts.push_back(std::move(cm));
    }
    const Mat<S>* cross_mask = &scratch.consts.back();
    (void)cross_mask;
    // Gating matrix for cross attention: type 0 inside the owning sample.
    {
      autodiff::IMat ct = autodiff::IMat::Constant(R, in.text_tokens.rows(), -1);
      for (Eigen::Index r = 0; r < R; ++r) {
        const int sample = in.sample_of_row[static_cast<size_t>(r)];
        for (int tkn = 0; tkn < kTextTokens; ++tkn)
          ct(r, sample * kTextTokens + tkn) = 0;
      }
      scratch.itypes.push_back(std::move(ct));
    }
    const autodiff::IMat* cross_type = &scratch.itypes.back();

    const int tokens_in = tape.constant(in.text_tokens);
    const int tokens = tape.add_row_broadcast(
        tape.matmul(tokens_in, pnode(tape, "tok_w")), pnode(tape, "tok_b"));

    scratch.rows.push_back(in.cat_index);
    const std::vector<int>* cat_rows_ptr = &scratch.rows.back();

    const int cat = tape.gather_rows(pnode(tape, "cat_emb"), cat_rows_ptr);
    int x = tape.add_row_broadcast(
        tape.add(tape.matmul(cat, pnode(tape, "w_cat")),
                 tape.matmul(tape.constant(*const_feats), pnode(tape, "w_in"))),
        pnode(tape, "b_in"));

    int site = 0;
    for (int b = 0; b < cfg_.blocks; ++b) {
      const std::string p = "blk" + std::to_string(b) + ".";

      // Graph attention over typed edges.
      {
        const int h1 = tape.layernorm(x, pnode(tape, p + "ln1.g"),
                                      pnode(tape, p + "ln1.b"));
        int acc = -1;
        for (int h = 0; h < cfg_.heads; ++h) {
          const std::string q = p + "attn.h" + std::to_string(h) + ".";
          const int Q = tape.matmul(h1, pnode(tape, q + "wq"));
          const int K = tape.matmul(h1, pnode(tape, q + "wk"));
          const int V = tape.matmul(h1, pnode(tape, q + "wv"));
          const int att = tape.attention(Q, K, V, edge_type,
                                         pnode(tape, q + "edge"), att_scale);
          const int out = tape.matmul(att, pnode(tape, q + "wo"));
          acc = (acc < 0) ? out : tape.add(acc, out);
        }
        acc = tape.add_row_broadcast(acc, pnode(tape, p + "attn.bias"));
        acc = tape.dropout(acc, make_keep_mask(scratch, R, D, training, drop_seed, site++),
                           keep_prob);
        x = tape.add(x, acc);
      }

      // Cross-attention to the text tokens.
      {
        const int h2 = tape.layernorm(x, pnode(tape, p + "ln2.g"),
                                      pnode(tape, p + "ln2.b"));
        int acc = -1;
        for (int h = 0; h < cfg_.heads; ++h) {
          const std::string q = p + "cross.h" + std::to_string(h) + ".";
          const int Q = tape.matmul(h2, pnode(tape, q + "wq"));
          const int K = tape.matmul(tokens, pnode(tape, q + "wk"));
          const int V = tape.matmul(tokens, pnode(tape, q + "wv"));
          const int att = tape.attention(Q, K, V, cross_type, -1, att_scale);
          const int out = tape.matmul(att, pnode(tape, q + "wo"));
          acc = (acc < 0) ? out : tape.add(acc, out);
        }
        acc = tape.add_row_broadcast(acc, pnode(tape, p + "cross.bias"));
        acc = tape.dropout(acc, make_keep_mask(scratch, R, D, training, drop_seed, site++),
                           keep_prob);
        x = tape.add(x, acc);
      }

      // MLP.
      {
        const int h3 = tape.layernorm(x, pnode(tape, p + "ln3.g"),
                                      pnode(tape, p + "ln3.b"));
        int u = tape.gelu(linear(tape, h3, p + "mlp.w1", p + "mlp.b1"));
        u = tape.dropout(u, make_keep_mask(scratch, R, 4 * D, training, drop_seed, site++),
                         keep_prob);
        const int m = linear(tape, u, p + "mlp.w2", p + "mlp.b2");
        x = tape.add(x, m);
      }
    }

    const int xf = tape.layernorm(x, pnode(tape, "lnf.g"), pnode(tape, "lnf.b"));
    return linear(tape, xf, "w_out", "b_out");
  }

  DenoiserConfig cfg_;
  ParamStore<S> params_;
};

}  // namespace dentoforge::diffusion
