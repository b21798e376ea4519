#pragma once

// Reverse-mode differentiation over 2-D tensors.
//
// A Tape records every op in creation order, which is already a topological
// order, so backward() walks the node list once in reverse. Shapes are fixed
// per op (no general broadcasting); the op set is exactly what the scoring
// head and the projection finetuning need.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "slasd/error.hpp"
#include "slasd/kernels.hpp"
#include "slasd/matrix.hpp"

namespace slasd::ad {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

template <class T>
class Tape {
 public:
  Var constant(Matrix<T> value) { return push(std::move(value), false, {}); }
  Var parameter(Matrix<T> value) { return push(std::move(value), true, {}); }

  const Matrix<T>& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient of the last backward() target; zeros if the node was unreachable, empty before any backward().
  const Matrix<T>& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  void reset() { nodes_.clear(); }

  // a[m x k] * b[k x n]
  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols != B.rows) throw InvalidArgument("matmul: inner dimensions differ");
    Matrix<T> C(A.rows, B.cols);
    kernels::gemm(A.rows, A.cols, B.cols, A.data.data(), B.data.data(), C.data.data());
    return push(std::move(C), any_grad(a, b), [this, a, b](std::size_t self) {
      const auto& dC = nodes_[self].grad;
      auto& na = nodes_[a.id];
      auto& nb = nodes_[b.id];
      if (na.requires_grad)
        kernels::gemm_nt(dC.rows, dC.cols, nb.value.rows, dC.data.data(), nb.value.data.data(), na.grad.data.data());
      if (nb.requires_grad)
        kernels::gemm_tn(na.value.rows, na.value.cols, dC.cols, na.value.data.data(), dC.data.data(),
                         nb.grad.data.data());
    });
  }

  // a[m x k] * b[n x k]^T
  Var matmul_nt(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols != B.cols) throw InvalidArgument("matmul_nt: inner dimensions differ");
    Matrix<T> C(A.rows, B.rows);
    kernels::gemm_nt(A.rows, A.cols, B.rows, A.data.data(), B.data.data(), C.data.data());
    return push(std::move(C), any_grad(a, b), [this, a, b](std::size_t self) {
      const auto& dC = nodes_[self].grad;
      auto& na = nodes_[a.id];
      auto& nb = nodes_[b.id];
      if (na.requires_grad)
        kernels::gemm(dC.rows, dC.cols, nb.value.cols, dC.data.data(), nb.value.data.data(), na.grad.data.data());
      if (nb.requires_grad)
        kernels::gemm_tn(dC.rows, dC.cols, na.value.cols, dC.data.data(), na.value.data.data(), nb.grad.data.data());
    });
  }

  Var add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rows != B.rows || A.cols != B.cols) throw InvalidArgument("add: shape mismatch");
    Matrix<T> C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
    return push(std::move(C), any_grad(a, b), [this, a, b](std::size_t self) {
      accumulate(a, nodes_[self].grad);
      accumulate(b, nodes_[self].grad);
    });
  }

  Var mul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rows != B.rows || A.cols != B.cols) throw InvalidArgument("mul: shape mismatch");
    Matrix<T> C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= B.data[i];
    return push(std::move(C), any_grad(a, b), [this, a, b](std::size_t self) {
      const auto& dC = nodes_[self].grad;
      auto& na = nodes_[a.id];
      auto& nb = nodes_[b.id];
      if (na.requires_grad)
        for (std::size_t i = 0; i < dC.size(); ++i) na.grad.data[i] += dC.data[i] * nb.value.data[i];
      if (nb.requires_grad)
        for (std::size_t i = 0; i < dC.size(); ++i) nb.grad.data[i] += dC.data[i] * na.value.data[i];
    });
  }

  // a[m x n] + bias[1 x n] broadcast over rows
  Var add_row(Var a, Var bias) {
    const auto& A = value(a);
    const auto& B = value(bias);
    if (B.rows != 1 || B.cols != A.cols) throw InvalidArgument("add_row: bias must be 1 x cols");
    Matrix<T> C = A;
    for (std::size_t r = 0; r < C.rows; ++r)
      for (std::size_t c = 0; c < C.cols; ++c) C(r, c) += B.data[c];
    return push(std::move(C), any_grad(a, bias), [this, a, bias](std::size_t self) {
      const auto& dC = nodes_[self].grad;
      accumulate(a, dC);
      auto& nb = nodes_[bias.id];
      if (nb.requires_grad)
        for (std::size_t r = 0; r < dC.rows; ++r)
          for (std::size_t c = 0; c < dC.cols; ++c) nb.grad.data[c] += dC(r, c);
    });
  }

  // a + s, with s a 1 x 1 node broadcast to every element.
  Var add_scalar(Var a, Var s) {
    if (value(s).size() != 1) throw InvalidArgument("add_scalar: scalar must be 1 x 1");
    Matrix<T> C = value(a);
    const T sv = value(s).data[0];
    for (auto& x : C.data) x += sv;
    return push(std::move(C), any_grad(a, s), [this, a, s](std::size_t self) {
      const auto& dC = nodes_[self].grad;
      accumulate(a, dC);
      auto& ns = nodes_[s.id];
      if (ns.requires_grad)
        for (T g : dC.data) ns.grad.data[0] += g;
    });
  }

  Var scale(Var a, T s) {
    Matrix<T> C = value(a);
    for (auto& x : C.data) x *= s;
    return push(std::move(C), any_grad(a), [this, a, s](std::size_t self) {
      auto& na = nodes_[a.id];
      const auto& dC = nodes_[self].grad;
      for (std::size_t i = 0; i < dC.size(); ++i) na.grad.data[i] += s * dC.data[i];
    });
  }

  // Exact (erf) GELU; smooth everywhere, which keeps finite-difference checks clean.
  Var gelu(Var a) {
    Matrix<T> C = value(a);
    for (auto& x : C.data) x = T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    return push(std::move(C), any_grad(a), [this, a](std::size_t self) {
      auto& na = nodes_[a.id];
      const auto& dC = nodes_[self].grad;
      const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
      for (std::size_t i = 0; i < dC.size(); ++i) {
        const T x = na.value.data[i];
        const T d = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>)) + x * inv_sqrt_2pi * std::exp(-x * x / 2);
        na.grad.data[i] += d * dC.data[i];
      }
    });
  }

  // Row-wise softmax with max subtraction.
  Var softmax_rows(Var a) {
    Matrix<T> Y = value(a);
    for (std::size_t r = 0; r < Y.rows; ++r) {
      auto row = Y.row(r);
      const T mx = *std::max_element(row.begin(), row.end());
      T s = 0;
      for (auto& x : row) s += (x = std::exp(x - mx));
      for (auto& x : row) x /= s;
    }
    return push(std::move(Y), any_grad(a), [this, a](std::size_t self) {
      const auto& y = nodes_[self].value;
      const auto& dy = nodes_[self].grad;
      auto& na = nodes_[a.id];
      for (std::size_t r = 0; r < y.rows; ++r) {
        T inner = 0;
        for (std::size_t c = 0; c < y.cols; ++c) inner += dy(r, c) * y(r, c);
        for (std::size_t c = 0; c < y.cols; ++c) na.grad(r, c) += y(r, c) * (dy(r, c) - inner);
      }
    });
  }

  // Per-row normalization to zero mean / unit (biased) variance, then gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5)) {
    const auto& X = value(x);
    const auto& G = value(gain);
    const auto& B = value(bias);
    if (G.rows != 1 || B.rows != 1 || G.cols != X.cols || B.cols != X.cols)
      throw InvalidArgument("layer_norm: gain/bias width mismatch");
    const std::size_t n = X.cols;
    Matrix<T> Y(X.rows, n);
    Matrix<T> xhat(X.rows, n);
    std::vector<T> inv_std(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r) {
      T mean = 0;
      for (std::size_t c = 0; c < n; ++c) mean += X(r, c);
      mean /= T(n);
      T var = 0;
      for (std::size_t c = 0; c < n; ++c) var += (X(r, c) - mean) * (X(r, c) - mean);
      var /= T(n);
      inv_std[r] = T(1) / std::sqrt(var + eps);
      for (std::size_t c = 0; c < n; ++c) {
        xhat(r, c) = (X(r, c) - mean) * inv_std[r];
        Y(r, c) = xhat(r, c) * G.data[c] + B.data[c];
      }
    }
    return push(std::move(Y), any_grad(x, gain, bias),
                [this, x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::size_t self) {
                  const auto& dy = nodes_[self].grad;
                  auto& nx = nodes_[x.id];
                  auto& ng = nodes_[gain.id];
                  auto& nb = nodes_[bias.id];
                  const std::size_t n = dy.cols;
                  for (std::size_t r = 0; r < dy.rows; ++r) {
                    T mean_dxhat = 0, mean_dxhat_xhat = 0;
                    for (std::size_t c = 0; c < n; ++c) {
                      const T g = dy(r, c);
                      if (ng.requires_grad) ng.grad.data[c] += g * xhat(r, c);
                      if (nb.requires_grad) nb.grad.data[c] += g;
                      const T dxh = g * ng.value.data[c];
                      mean_dxhat += dxh;
                      mean_dxhat_xhat += dxh * xhat(r, c);
                    }
                    if (!nx.requires_grad) continue;
                    mean_dxhat /= T(n);
                    mean_dxhat_xhat /= T(n);
                    for (std::size_t c = 0; c < n; ++c) {
                      const T dxh = dy(r, c) * ng.value.data[c];
                      nx.grad(r, c) += inv_std[r] * (dxh - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
                    }
                  }
                });
  }

  // Mean over rows -> 1 x cols.
  Var mean_rows(Var a) {
    const auto& A = value(a);
    if (A.rows == 0) throw InvalidArgument("mean_rows: no rows");
    Matrix<T> C(1, A.cols);
    for (std::size_t r = 0; r < A.rows; ++r)
      for (std::size_t c = 0; c < A.cols; ++c) C.data[c] += A(r, c);
    for (auto& v : C.data) v /= T(A.rows);
    return push(std::move(C), any_grad(a), [this, a](std::size_t self) {
      auto& na = nodes_[a.id];
      const auto& dC = nodes_[self].grad;
      const T inv = T(1) / T(na.value.rows);
      for (std::size_t r = 0; r < na.value.rows; ++r)
        for (std::size_t c = 0; c < na.value.cols; ++c) na.grad(r, c) += dC.data[c] * inv;
    });
  }

  Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    const auto& A = value(a);
    if (begin + count > A.cols) throw InvalidArgument("slice_cols: range out of bounds");
    Matrix<T> C(A.rows, count);
    for (std::size_t r = 0; r < A.rows; ++r)
      for (std::size_t c = 0; c < count; ++c) C(r, c) = A(r, begin + c);
    return push(std::move(C), any_grad(a), [this, a, begin](std::size_t self) {
      auto& na = nodes_[a.id];
      const auto& dC = nodes_[self].grad;
      for (std::size_t r = 0; r < dC.rows; ++r)
        for (std::size_t c = 0; c < dC.cols; ++c) na.grad(r, begin + c) += dC(r, c);
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
    const std::size_t rows = value(parts[0]).rows;
    std::size_t cols = 0;
    for (auto p : parts) {
      if (value(p).rows != rows) throw InvalidArgument("concat_cols: row mismatch");
      cols += value(p).cols;
    }
    Matrix<T> C(rows, cols);
    std::size_t off = 0;
    bool rg = false;
    for (auto p : parts) {
      const auto& P = value(p);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < P.cols; ++c) C(r, off + c) = P(r, c);
      off += P.cols;
      rg = rg || requires_grad(p);
    }
    return push(std::move(C), rg, [this, parts](std::size_t self) {
      std::size_t off = 0;
      for (auto p : parts) {
        auto& np = nodes_[p.id];
        const auto& dC = nodes_[self].grad;
        if (np.requires_grad)
          for (std::size_t r = 0; r < np.value.rows; ++r)
            for (std::size_t c = 0; c < np.value.cols; ++c) np.grad(r, c) += dC(r, off + c);
        off += np.value.cols;
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_rows: no inputs");
    const std::size_t cols = value(parts[0]).cols;
    Matrix<T> C(0, cols);
    bool rg = false;
    for (auto p : parts) {
      const auto& P = value(p);
      if (P.cols != cols) throw InvalidArgument("concat_rows: column mismatch");
      C.data.insert(C.data.end(), P.data.begin(), P.data.end());
      C.rows += P.rows;
      rg = rg || requires_grad(p);
    }
    return push(std::move(C), rg, [this, parts](std::size_t self) {
      std::size_t off = 0;
      for (auto p : parts) {
        auto& np = nodes_[p.id];
        const auto& dC = nodes_[self].grad;
        if (np.requires_grad)
          for (std::size_t i = 0; i < np.value.size(); ++i) np.grad.data[i] += dC.data[off + i];
        off += np.value.size();
      }
    });
  }

  Var sum(Var a) {
    T s = 0;
    for (T v : value(a).data) s += v;
    return push(Matrix<T>(1, 1, s), any_grad(a), [this, a](std::size_t self) {
      const T g = nodes_[self].grad.data[0];
      for (auto& v : nodes_[a.id].grad.data) v += g;
    });
  }

  // Average of 1 x 1 nodes.
  Var mean_scalars(const std::vector<Var>& xs) {
    if (xs.empty()) throw InvalidArgument("mean_scalars: no inputs");
    T s = 0;
    bool rg = false;
    for (auto x : xs) {
      if (value(x).size() != 1) throw InvalidArgument("mean_scalars: inputs must be 1 x 1");
      s += value(x).data[0];
      rg = rg || requires_grad(x);
    }
    const T inv = T(1) / T(xs.size());
    return push(Matrix<T>(1, 1, s * inv), rg, [this, xs, inv](std::size_t self) {
      const T g = nodes_[self].grad.data[0] * inv;
      for (auto x : xs)
        if (nodes_[x.id].requires_grad) nodes_[x.id].grad.data[0] += g;
    });
  }

  // -log softmax(logits)[target] for a 1 x N logit row.
  Var cross_entropy(Var logits, std::size_t target) {
    const auto& z = value(logits);
    if (z.rows != 1 || target >= z.cols) throw InvalidArgument("cross_entropy: bad logits shape or target");
    const T mx = *std::max_element(z.data.begin(), z.data.end());
    T s = 0;
    for (T v : z.data) s += std::exp(v - mx);
    const T lse = mx + std::log(s);
    return push(Matrix<T>(1, 1, lse - z.data[target]), any_grad(logits), [this, logits, target, lse](std::size_t self) {
      auto& nz = nodes_[logits.id];
      const T g = nodes_[self].grad.data[0];
      for (std::size_t c = 0; c < nz.value.cols; ++c) {
        const T p = std::exp(nz.value.data[c] - lse);
        nz.grad.data[c] += g * (p - (c == target ? T(1) : T(0)));
      }
    });
  }

  Var l2_normalize_rows(Var a) {
    Matrix<T> Y = value(a);
    std::vector<T> norms(Y.rows);
    for (std::size_t r = 0; r < Y.rows; ++r) {
      T s = 0;
      for (T v : Y.row(r)) s += v * v;
      norms[r] = std::sqrt(s);
      if (norms[r] == T(0)) throw NumericError("l2_normalize_rows: zero row");
      for (auto& v : Y.row(r)) v /= norms[r];
    }
    return push(std::move(Y), any_grad(a), [this, a, norms = std::move(norms)](std::size_t self) {
      const auto& y = nodes_[self].value;
      const auto& dy = nodes_[self].grad;
      auto& na = nodes_[a.id];
      for (std::size_t r = 0; r < y.rows; ++r) {
        T inner = 0;
        for (std::size_t c = 0; c < y.cols; ++c) inner += y(r, c) * dy(r, c);
        for (std::size_t c = 0; c < y.cols; ++c) na.grad(r, c) += (dy(r, c) - y(r, c) * inner) / norms[r];
      }
    });
  }

  // Scalar node whose value and gradient w.r.t. `input` were computed externally.
  Var external_scalar(Var input, T loss, Matrix<T> dloss_dinput) {
    if (dloss_dinput.rows != value(input).rows || dloss_dinput.cols != value(input).cols)
      throw InvalidArgument("external_scalar: gradient shape mismatch");
    return push(Matrix<T>(1, 1, loss), any_grad(input),
                [this, input, g_in = std::move(dloss_dinput)](std::size_t self) {
                  const T g = nodes_[self].grad.data[0];
                  auto& ni = nodes_[input.id];
                  for (std::size_t i = 0; i < g_in.size(); ++i) ni.grad.data[i] += g * g_in.data[i];
                });
  }

  void backward(Var loss) {
    auto& nl = nodes_.at(loss.id);
    if (nl.value.size() != 1) throw InvalidArgument("backward: loss must be scalar");
    // Gradient buffers exist only once backward runs; forward-only tapes never allocate them.
    for (auto& n : nodes_) {
      if (n.grad.rows == n.value.rows && n.grad.cols == n.value.cols)
        std::fill(n.grad.data.begin(), n.grad.data.end(), T(0));
      else
        n.grad = Matrix<T>(n.value.rows, n.value.cols);
    }
    nl.grad.data[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward(i);
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;
    std::function<void(std::size_t)> backward;
  };

  bool any_grad(Var a) const { return nodes_.at(a.id).requires_grad; }
  template <class... Vs>
  bool any_grad(Var a, Vs... rest) const {
    return any_grad(a) || any_grad(rest...);
  }

  void accumulate(Var target, const Matrix<T>& g) {
    auto& n = nodes_[target.id];
    if (!n.requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
  }

  Var push(Matrix<T> value, bool requires_grad, std::function<void(std::size_t)> backward) {
    if (!value.all_finite()) throw NumericError("autodiff: non-finite value produced");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace slasd::ad
