#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "dentoforge/errors.hpp"

namespace dentoforge::autodiff {

template <typename Scalar>
using Mat =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using IMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kMaskedOut = -1e30;

// Reverse-mode tape over dense matrices. Nodes are created in topological
// order; backward() sweeps them in reverse and finally flushes gradients of
// param nodes into their external accumulators. Constant payloads passed by
// pointer (masks, edge types) must outlive the tape.
template <typename Scalar>
class Tape {
 public:
  using M = Mat<Scalar>;

  struct Node {
    M value;
    M grad;
    std::function<void(Tape&, Node&)> backward;
    M* external_grad = nullptr;
  };

  int constant(M v) {
    return push(std::move(v), nullptr, nullptr);
  }

  int param(const M& value, M* external_grad) {
    return push(value, nullptr, external_grad);
  }

  const M& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  int matmul(int a, int b) {
    M v = val(a) * val(b);
    return push(std::move(v), [a, b](Tape& t, Node& n) {
      t.accum(a, n.grad * t.val(b).transpose());
      t.accum(b, t.val(a).transpose() * n.grad);
    });
  }

  // A * B^T
  int matmul_nt(int a, int b) {
    M v = val(a) * val(b).transpose();
    return push(std::move(v), [a, b](Tape& t, Node& n) {
      t.accum(a, n.grad * t.val(b));
      t.accum(b, n.grad.transpose() * t.val(a));
    });
  }

  int add(int a, int b) {
    M v = val(a);
    flat(v) += cflat(val(b));
    return push(std::move(v), [a, b](Tape& t, Node& n) {
      t.accum(a, n.grad);
      t.accum(b, n.grad);
    });
  }

  int scale(int a, Scalar s) {
    M v = val(a);
    flat(v) *= s;
    return push(std::move(v), [a, s](Tape& t, Node& n) {
      M g = n.grad;
      flat(g) *= s;
      t.accum(a, std::move(g));
    });
  }

  int add_const(int a, const M* c) {
    M v = val(a);
    flat(v) += cflat(*c);
    return push(std::move(v), [a](Tape& t, Node& n) { t.accum(a, n.grad); });
  }

  // bias: 1 x C node broadcast over rows.
  int add_row_broadcast(int a, int bias) {
    M v = val(a);
    v.rowwise() += val(bias).row(0);
    return push(std::move(v), [a, bias](Tape& t, Node& n) {
      t.accum(a, n.grad);
      t.accum(bias, n.grad.colwise().sum().eval());
    });
  }

  int hadamard(int a, int b) {
    M v = val(a);
    flat(v) *= cflat(val(b));
    return push(std::move(v), [a, b](Tape& t, Node& n) {
      M ga = n.grad;
      flat(ga) *= cflat(t.val(b));
      M gb = n.grad;
      flat(gb) *= cflat(t.val(a));
      t.accum(a, std::move(ga));
      t.accum(b, std::move(gb));
    });
  }

  // Tanh-form GELU; the backward differentiates the same approximation so
  // gradient checks are exact against it.
  int gelu(int a) {
    const M& x = val(a);
    const Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
    const Scalar k = Scalar(0.044715);
    M th(x.rows(), x.cols());
    flat(th) = (c * (cflat(x) + k * cflat(x).cube())).tanh();
    M v(x.rows(), x.cols());
    flat(v) = Scalar(0.5) * cflat(x) * (Scalar(1) + cflat(th));
    return push(std::move(v), [a, c, k, th](Tape& t, Node& n) {
      const M& x = t.val(a);
      M d(x.rows(), x.cols());
      flat(d) = Scalar(0.5) * (Scalar(1) + cflat(th)) +
                Scalar(0.5) * cflat(x) * (Scalar(1) - cflat(th).square()) *
                    (c * (Scalar(1) + Scalar(3) * k * cflat(x).square()));
      M g = n.grad;
      flat(g) *= cflat(d);
      t.accum(a, std::move(g));
    });
  }

  // Row-wise layer normalization with learned gain/offset (1 x C nodes).
  int layernorm(int a, int gamma, int beta) {
    const M& x = val(a);
    const Eigen::Index C = x.cols();
    M xhat(x.rows(), C);
    Mat<Scalar> inv_std(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Scalar mu = x.row(r).mean();
      const Scalar var = (x.row(r).array() - mu).square().mean();
      const Scalar is = Scalar(1) / std::sqrt(var + Scalar(1e-5));
      inv_std(r, 0) = is;
      xhat.row(r) = (x.row(r).array() - mu) * is;
    }
    M v = xhat;
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      v.row(r) = v.row(r).cwiseProduct(val(gamma).row(0)) + val(beta).row(0);
    return push(std::move(v),
                [a, gamma, beta, xhat, inv_std](Tape& t, Node& n) {
      const Eigen::Index C = xhat.cols();
      M dgamma = M::Zero(1, C);
      M dbeta = M::Zero(1, C);
      M dx(xhat.rows(), C);
      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const auto dy = n.grad.row(r);
        dgamma.row(0) += dy.cwiseProduct(xhat.row(r));
        dbeta.row(0) += dy;
        const M dxhat = dy.cwiseProduct(t.val(gamma).row(0));
        const Scalar m1 = dxhat.mean();
        const Scalar m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = inv_std(r, 0) *
                    (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
      }
      t.accum(a, std::move(dx));
      t.accum(gamma, std::move(dgamma));
      t.accum(beta, std::move(dbeta));
    });
  }

  // Row softmax of (A + *mask). Fully-masked rows are not allowed.
  int softmax_rows(int a, const M* mask) {
    M v = val(a);
    flat(v) += cflat(*mask);
    const Eigen::Index C = v.cols();
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      FlatArr row(v.data() + r * C, C);
      row -= row.maxCoeff();
      // Floor keeps exp results in the normal float range; the residual
      // weight exp(-30) ~ 1e-13 is far below every tolerance in use.
      row = row.max(Scalar(-30)).exp();
      row /= row.sum();
    }
    return push(std::move(v), [a](Tape& t, Node& n) {
      const M& s = n.value;
      const Eigen::Index C = s.cols();
      M dx = n.grad;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        CFlatArr srow(s.data() + r * C, C);
        FlatArr drow(dx.data() + r * C, C);
        const Scalar dot = (drow * srow).sum();
        drow = (drow - dot) * srow;
      }
      t.accum(a, std::move(dx));
    });
  }

  // B_ij = theta(0, type(i,j)) for type >= 0, else a large negative mask.
  // theta is a 1 x K param node.
  int edge_bias(int theta, const IMat* type) {
    const Eigen::Index R = type->rows(), C = type->cols();
    M v(R, C);
    for (Eigen::Index i = 0; i < R; ++i)
      for (Eigen::Index j = 0; j < C; ++j) {
        const int tt = (*type)(i, j);
        v(i, j) = tt >= 0 ? val(theta)(0, tt) : Scalar(kMaskedOut);
      }
    return push(std::move(v), [theta, type](Tape& t, Node& n) {
      M dtheta = M::Zero(1, t.val(theta).cols());
      for (Eigen::Index i = 0; i < type->rows(); ++i)
        for (Eigen::Index j = 0; j < type->cols(); ++j) {
          const int tt = (*type)(i, j);
          if (tt >= 0) dtheta(0, tt) += n.grad(i, j);
        }
      t.accum(theta, std::move(dtheta));
    });
  }

  // keep01 entries in {0,1}; scaling by 1/keep_prob preserves expectation.
  int dropout(int a, const M* keep01, Scalar keep_prob) {
    M v = val(a);
    flat(v) *= cflat(*keep01) / keep_prob;
    return push(std::move(v), [a, keep01, keep_prob](Tape& t, Node& n) {
      M g = n.grad;
      flat(g) *= cflat(*keep01) / keep_prob;
      t.accum(a, std::move(g));
    });
  }

  int gather_rows(int table, const std::vector<int>* rows) {
    const M& tab = val(table);
    M v(static_cast<Eigen::Index>(rows->size()), tab.cols());
    for (size_t i = 0; i < rows->size(); ++i)
      v.row(static_cast<Eigen::Index>(i)) = tab.row((*rows)[i]);
    return push(std::move(v), [table, rows](Tape& t, Node& n) {
      M dtab = M::Zero(t.val(table).rows(), t.val(table).cols());
      for (size_t i = 0; i < rows->size(); ++i)
        dtab.row((*rows)[i]) += n.grad.row(static_cast<Eigen::Index>(i));
      t.accum(table, std::move(dtab));
    });
  }

  // Mean of mask-weighted squared error; 1x1 node.
  int mse_masked(int pred, const M* target, const M* mask) {
    const Scalar denom = std::max(mask->sum(), Scalar(1));
    M v(1, 1);
    v(0, 0) = ((cflat(val(pred)) - cflat(*target)).square() * cflat(*mask)).sum() /
              denom;
    return push(std::move(v), [pred, target, mask, denom](Tape& t, Node& n) {
      const Scalar g = n.grad(0, 0);
      M dp(t.val(pred).rows(), t.val(pred).cols());
      flat(dp) = (cflat(t.val(pred)) - cflat(*target)) * cflat(*mask) *
                 (Scalar(2) * g / denom);
      t.accum(pred, std::move(dp));
    });
  }


  // Fused scaled attention: out = softmax(scale * Q K^T + B) V where
  // B_ij = theta(0, type_ij) for type_ij >= 0 and a -inf mask otherwise.
  // Pass theta = -1 for gating without a learned bias. One stored R x C
  // buffer (the softmax matrix) instead of a node per intermediate.
  int attention(int q, int k, int v, const IMat* type, int theta, Scalar scale) {
    const M& Q = val(q);
    const M& K = val(k);
    const M& V = val(v);
    M S = Q * K.transpose();
    flat(S) *= scale;
    const M* theta_val = theta >= 0 ? &val(theta) : nullptr;
    for (Eigen::Index i = 0; i < S.rows(); ++i)
      for (Eigen::Index j = 0; j < S.cols(); ++j) {
        const int tt = (*type)(i, j);
        if (tt < 0) S(i, j) = Scalar(kMaskedOut);
        else if (theta_val) S(i, j) += (*theta_val)(0, tt);
      }
    const Eigen::Index C = S.cols();
    for (Eigen::Index r = 0; r < S.rows(); ++r) {
      FlatArr row(S.data() + r * C, C);
      row -= row.maxCoeff();
      row = row.max(Scalar(-30)).exp();
      row /= row.sum();
    }
    M out = S * V;
    return push(std::move(out),
                [q, k, v, type, theta, scale, S = std::move(S)](Tape& t, Node& n) {
      const M& V = t.val(v);
      t.accum(v, S.transpose() * n.grad);
      M dP = n.grad * V.transpose();
      const Eigen::Index C = S.cols();
      for (Eigen::Index r = 0; r < S.rows(); ++r) {
        CFlatArr srow(S.data() + r * C, C);
        FlatArr drow(dP.data() + r * C, C);
        const Scalar dot = (drow * srow).sum();
        drow = (drow - dot) * srow;
      }
      if (theta >= 0) {
        M dtheta = M::Zero(1, t.val(theta).cols());
        for (Eigen::Index i = 0; i < type->rows(); ++i)
          for (Eigen::Index j = 0; j < type->cols(); ++j) {
            const int tt = (*type)(i, j);
            if (tt >= 0) dtheta(0, tt) += dP(i, j);
          }
        t.accum(theta, std::move(dtheta));
      }
      M dQ = dP * t.val(k);
      flat(dQ) *= scale;
      t.accum(q, std::move(dQ));
      M dK = dP.transpose() * t.val(q);
      flat(dK) *= scale;
      t.accum(k, std::move(dK));
    });
  }

  void backward(int loss_id) {
    for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
    nodes_[static_cast<size_t>(loss_id)].grad.setOnes(1, 1);
    for (size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() > 0) n.backward(*this, n);
      if (n.external_grad) *n.external_grad += n.grad;
    }
  }

 private:
  friend struct Node;

  const M& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  using FlatArr = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using CFlatArr = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  static FlatArr flat(M& m) { return FlatArr(m.data(), m.size()); }
  static CFlatArr cflat(const M& m) { return CFlatArr(m.data(), m.size()); }

  void accum(int id, M g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    flat(n.grad) += cflat(g);
  }

  int push(M value, std::function<void(Tape&, Node&)> bw,
           M* external_grad = nullptr) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(bw);
    n.external_grad = external_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::deque<Node> nodes_;
};

}  // namespace dentoforge::autodiff
