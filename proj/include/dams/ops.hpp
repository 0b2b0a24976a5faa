#pragma once

// Differentiable primitives. Every op treats its input as a row-major matrix
// whose column count is the last dimension; leading dimensions flatten into
// rows.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "dams/tensor.hpp"

namespace dams {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using MapM = Eigen::Map<RowMat<T>>;

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorKind::usage, std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                               " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// (n×k)·(k×m) -> n×m
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k)
    fail(ErrorKind::usage, "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                               shape_str(b.shape()));
  std::vector<T> out(n * m);
  detail::MapM<T>(out.data(), n, m).noalias() =
      detail::MapC<T>(a.values().data(), n, k) * detail::MapC<T>(b.values().data(), k, m);
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>({n, m}, std::move(out), {ai, bi}, [=](detail::Storage<T>& self) {
    detail::MapC<T> g(self.grad.data(), n, m);
    if (auto ga = detail::grad_of(*ai); !ga.empty())
      detail::MapM<T>(ga.data(), n, k).noalias() +=
          g * detail::MapC<T>(bi->values.data(), k, m).transpose();
    if (auto gb = detail::grad_of(*bi); !gb.empty())
      detail::MapM<T>(gb.data(), k, m).noalias() +=
          detail::MapC<T>(ai->values.data(), n, k).transpose() * g;
  });
}

/// (n×k)·(m×k)ᵀ -> n×m
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k)
    fail(ErrorKind::usage, "matmul_nt: inner dimensions differ " + shape_str(a.shape()) +
                               " x " + shape_str(b.shape()) + "^T");
  std::vector<T> out(n * m);
  detail::MapM<T>(out.data(), n, m).noalias() =
      detail::MapC<T>(a.values().data(), n, k) *
      detail::MapC<T>(b.values().data(), m, k).transpose();
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>({n, m}, std::move(out), {ai, bi}, [=](detail::Storage<T>& self) {
    detail::MapC<T> g(self.grad.data(), n, m);
    if (auto ga = detail::grad_of(*ai); !ga.empty())
      detail::MapM<T>(ga.data(), n, k).noalias() += g * detail::MapC<T>(bi->values.data(), m, k);
    if (auto gb = detail::grad_of(*bi); !gb.empty())
      detail::MapM<T>(gb.data(), m, k).noalias() +=
          g.transpose() * detail::MapC<T>(ai->values.data(), n, k);
  });
}

// ---------------------------------------------------------------------------
// Element-wise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {ai, bi}, [=](detail::Storage<T>& self) {
    for (auto* in : {ai.get(), bi.get()})
      if (auto g = detail::grad_of(*in); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {ai, bi}, [=](detail::Storage<T>& self) {
    if (auto g = detail::grad_of(*ai); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    if (auto g = detail::grad_of(*bi); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

/// Hadamard product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {ai, bi}, [=](detail::Storage<T>& self) {
    if (auto g = detail::grad_of(*ai); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bi->values[i];
    if (auto g = detail::grad_of(*bi); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ai->values[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  auto ai = a.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {ai}, [=](detail::Storage<T>& self) {
    if (auto g = detail::grad_of(*ai); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

/// x + bias broadcast over rows; bias has x.cols() entries.
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = x.rows(), m = x.cols();
  if (bias.size() != m)
    fail(ErrorKind::usage, "add_bias: bias " + shape_str(bias.shape()) + " vs input " +
                               shape_str(x.shape()));
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] = x[r * m + c] + bias[c];
  auto xi = x.impl(), bi = bias.impl();
  return detail::make_result<T>(x.shape(), std::move(out), {xi, bi}, [=](detail::Storage<T>& self) {
    if (auto g = detail::grad_of(*xi); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    if (auto g = detail::grad_of(*bi); !g.empty())
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) g[c] += self.grad[r * m + c];
  });
}

namespace detail {

template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& x, F f, D df_from_xy) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  auto xi = x.impl();
  return make_result<T>(x.shape(), std::move(out), {xi}, [=](Storage<T>& self) {
    if (auto g = grad_of(*xi); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * df_from_xy(xi->values[i], self.values[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

/// tanh approximation of GELU
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  return detail::unary(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v))); },
      [](T v, T) {
        const T u = k * (v + c * v * v * v);
        const T t = std::tanh(u);
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * k * (T(1) + T(3) * c * v * v);
      });
}

/// Identity forward; negates the incoming gradient on the way back.
template <class T>
Tensor<T> grad_reverse(const Tensor<T>& x) {
  std::vector<T> out(x.values().begin(), x.values().end());
  auto xi = x.impl();
  return detail::make_result<T>(x.shape(), std::move(out), {xi}, [=](detail::Storage<T>& self) {
    if (auto g = detail::grad_of(*xi); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

/// Inverted dropout. No-op when rate is zero or rng is null.
template <class T, class Rng>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  std::vector<T> mask(x.size());
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (auto& m : mask) {
    const double u = std::generate_canonical<double, 53>(*rng);
    m = u < rate ? T(0) : keep_scale;
  }
  return mul(x, Tensor<T>::constant(x.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  auto xi = x.impl();
  return detail::make_result<T>({1}, {s}, {xi}, [=](detail::Storage<T>& self) {
    if (auto g = detail::grad_of(*xi); !g.empty())
      for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

/// Weighted sum of scalars: Σ wᵢ·xᵢ, each xᵢ a one-element tensor.
template <class T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& xs, const std::vector<T>& weights) {
  if (xs.size() != weights.size() || xs.empty())
    fail(ErrorKind::usage, "weighted_sum: need matching non-empty terms and weights");
  T s = 0;
  std::vector<std::shared_ptr<detail::Storage<T>>> ins;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s += weights[i] * xs[i].item();
    ins.push_back(xs[i].impl());
  }
  return detail::make_result<T>({1}, {s}, ins, [ins, weights](detail::Storage<T>& self) {
    for (std::size_t i = 0; i < ins.size(); ++i)
      if (auto g = detail::grad_of(*ins[i]); !g.empty()) g[0] += weights[i] * self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Shape and indexing

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size())
    fail(ErrorKind::usage, "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(x.values().begin(), x.values().end());
  auto xi = x.impl();
  return detail::make_result<T>(std::move(shape), std::move(out), {xi}, [=](detail::Storage<T>& self) {
    if (auto g = detail::grad_of(*xi); !g.empty())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Rows of x selected (with repetition) by index.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> index) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<T> out(index.size() * d);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n)
      fail(ErrorKind::usage, "gather_rows: index " + std::to_string(index[r]) + " out of " +
                                 std::to_string(n) + " rows");
    std::copy_n(x.values().begin() + index[r] * d, d, out.begin() + r * d);
  }
  auto xi = x.impl();
  const std::size_t m = index.size();
  return detail::make_result<T>({m, d}, std::move(out), {xi},
                                [=, index = std::move(index)](detail::Storage<T>& self) {
    if (auto g = detail::grad_of(*xi); !g.empty())
      for (std::size_t r = 0; r < index.size(); ++r)
        for (std::size_t c = 0; c < d; ++c) g[index[r] * d + c] += self.grad[r * d + c];
  });
}

/// Embedding lookup: rows of a V×d table.
template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  std::vector<std::size_t> index(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows())
      fail(ErrorKind::usage, "embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                 std::to_string(table.rows()));
    index[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, std::move(index));
}

/// Stacks matrices with equal column counts vertically.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) fail(ErrorKind::usage, "concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t n = 0;
  std::vector<std::shared_ptr<detail::Storage<T>>> ins;
  for (const auto& p : parts) {
    if (p.cols() != d) fail(ErrorKind::usage, "concat_rows: column mismatch");
    n += p.rows();
    ins.push_back(p.impl());
  }
  std::vector<T> out;
  out.reserve(n * d);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return detail::make_result<T>({n, d}, std::move(out), ins, [ins](detail::Storage<T>& self) {
    std::size_t off = 0;
    for (const auto& in : ins) {
      if (auto g = detail::grad_of(*in); !g.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
      off += in->values.size();
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisation and probabilities

/// Plain softmax over a vector; throws on non-finite input.
template <class T>
std::vector<T> softmax(std::span<const T> x) {
  if (x.empty()) fail(ErrorKind::numeric, "softmax: empty input");
  for (T v : x)
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "softmax: non-finite input");
  const T mx = *std::max_element(x.begin(), x.end());
  std::vector<T> out(x.size());
  T z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (out[i] = std::exp(x[i] - mx));
  for (auto& v : out) v /= z;
  return out;
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    auto p = softmax<T>(x.values().subspan(r * m, m));
    std::copy(p.begin(), p.end(), out.begin() + r * m);
  }
  auto xi = x.impl();
  return detail::make_result<T>(x.shape(), std::move(out), {xi}, [=](detail::Storage<T>& self) {
    auto g = detail::grad_of(*xi);
    if (g.empty()) return;
    for (std::size_t r = 0; r < n; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < m; ++c) dot += self.grad[r * m + c] * self.values[r * m + c];
      for (std::size_t c = 0; c < m; ++c)
        g[r * m + c] += self.values[r * m + c] * (self.grad[r * m + c] - dot);
    }
  });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  const std::size_t n = x.rows(), m = x.cols();
  if (gain.size() != m || bias.size() != m) fail(ErrorKind::usage, "layer_norm: parameter size mismatch");
  std::vector<T> out(x.size()), xhat(x.size()), inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = x.values().data() + r * m;
    T mu = 0;
    for (std::size_t c = 0; c < m; ++c) mu += row[c];
    mu /= T(m);
    T var = 0;
    for (std::size_t c = 0; c < m; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= T(m);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < m; ++c) {
      xhat[r * m + c] = (row[c] - mu) * inv_std[r];
      out[r * m + c] = xhat[r * m + c] * gain[c] + bias[c];
    }
  }
  auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  return detail::make_result<T>(
      x.shape(), std::move(out), {xi, gi, bi},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Storage<T>& self) {
        const auto& dy = self.grad;
        if (auto gg = detail::grad_of(*gi); !gg.empty())
          for (std::size_t i = 0; i < dy.size(); ++i) gg[i % m] += dy[i] * xhat[i];
        if (auto gb = detail::grad_of(*bi); !gb.empty())
          for (std::size_t i = 0; i < dy.size(); ++i) gb[i % m] += dy[i];
        auto gx = detail::grad_of(*xi);
        if (gx.empty()) return;
        for (std::size_t r = 0; r < n; ++r) {
          T s1 = 0, s2 = 0;
          for (std::size_t c = 0; c < m; ++c) {
            const T dxh = dy[r * m + c] * gi->values[c];
            s1 += dxh;
            s2 += dxh * xhat[r * m + c];
          }
          for (std::size_t c = 0; c < m; ++c) {
            const T dxh = dy[r * m + c] * gi->values[c];
            gx[r * m + c] += inv_std[r] * (dxh - s1 / T(m) - xhat[r * m + c] * s2 / T(m));
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Attention

/// One attention block: a run of query rows attending a run of key rows.
struct AttnSegment {
  std::size_t q_begin = 0, q_len = 0;
  std::size_t k_begin = 0, k_len = 0;
};

struct AttnLayout {
  std::vector<AttnSegment> segments;
  std::vector<std::uint8_t> key_valid;  // per key row; empty means all valid
  bool causal = false;                  // query i sees keys j <= i within its segment
};

/// Multi-head scaled dot-product attention over pre-projected q, k, v.
/// Query rows outside every segment, and rows with no visible key, output 0.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttnLayout& layout, std::size_t heads) {
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows() || heads == 0 || d % heads != 0)
    fail(ErrorKind::usage, "attention: incompatible q/k/v shapes or head count");
  if (!layout.key_valid.empty() && layout.key_valid.size() != k.rows())
    fail(ErrorKind::usage, "attention: key mask length mismatch");
  const std::size_t dh = d / heads;
  const T scl = T(1) / std::sqrt(T(dh));
  const std::size_t nq = q.rows();

  // Probabilities per segment and head, laid out [seg][head][i][j].
  std::vector<std::size_t> prob_off(layout.segments.size() + 1, 0);
  for (std::size_t s = 0; s < layout.segments.size(); ++s) {
    const auto& sg = layout.segments[s];
    if (sg.q_begin + sg.q_len > nq || sg.k_begin + sg.k_len > k.rows())
      fail(ErrorKind::usage, "attention: segment outside tensor bounds");
    if (layout.causal && sg.q_len > sg.k_len)
      fail(ErrorKind::usage, "attention: causal segment has more queries than keys");
    prob_off[s + 1] = prob_off[s] + heads * sg.q_len * sg.k_len;
  }
  std::vector<T> probs(prob_off.back(), T(0));
  std::vector<T> out(nq * d, T(0));
  const T* Q = q.values().data();
  const T* K = k.values().data();
  const T* V = v.values().data();
  std::vector<T> row;

  for (std::size_t s = 0; s < layout.segments.size(); ++s) {
    const auto& sg = layout.segments[s];
    row.resize(sg.k_len);
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs.data() + prob_off[s] + h * sg.q_len * sg.k_len;
      for (std::size_t i = 0; i < sg.q_len; ++i) {
        const T* qi = Q + (sg.q_begin + i) * d + h * dh;
        const std::size_t visible = layout.causal ? i + 1 : sg.k_len;
        T mx = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < visible; ++j) {
          const std::size_t kr = sg.k_begin + j;
          if (!layout.key_valid.empty() && !layout.key_valid[kr]) continue;
          const T* kj = K + kr * d + h * dh;
          T dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          row[j] = dot * scl;
          mx = std::max(mx, row[j]);
          any = true;
        }
        if (!any) continue;
        T z = 0;
        for (std::size_t j = 0; j < visible; ++j) {
          const std::size_t kr = sg.k_begin + j;
          if (!layout.key_valid.empty() && !layout.key_valid[kr]) continue;
          z += (P[i * sg.k_len + j] = std::exp(row[j] - mx));
        }
        T* oi = out.data() + (sg.q_begin + i) * d + h * dh;
        for (std::size_t j = 0; j < visible; ++j) {
          T& p = P[i * sg.k_len + j];
          if (p == T(0)) continue;
          p /= z;
          const T* vj = V + (sg.k_begin + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }

  auto qi = q.impl(), ki = k.impl(), vi = v.impl();
  return detail::make_result<T>(
      {nq, d}, std::move(out), {qi, ki, vi},
      [=, probs = std::move(probs), prob_off = std::move(prob_off)](detail::Storage<T>& self) {
        auto gq = detail::grad_of(*qi);
        auto gk = detail::grad_of(*ki);
        auto gv = detail::grad_of(*vi);
        const T* G = self.grad.data();
        const T* Qv = qi->values.data();
        const T* Kv = ki->values.data();
        const T* Vv = vi->values.data();
        std::vector<T> dp;
        for (std::size_t s = 0; s < layout.segments.size(); ++s) {
          const auto& sg = layout.segments[s];
          dp.resize(sg.k_len);
          for (std::size_t h = 0; h < heads; ++h) {
            const T* P = probs.data() + prob_off[s] + h * sg.q_len * sg.k_len;
            for (std::size_t i = 0; i < sg.q_len; ++i) {
              const std::size_t visible = layout.causal ? i + 1 : sg.k_len;
              const T* gi = G + (sg.q_begin + i) * d + h * dh;
              T dot = 0;
              for (std::size_t j = 0; j < visible; ++j) {
                const T p = P[i * sg.k_len + j];
                if (p == T(0)) {
                  dp[j] = 0;
                  continue;
                }
                const std::size_t kr = sg.k_begin + j;
                const T* vj = Vv + kr * d + h * dh;
                T acc = 0;
                for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vj[c];
                dp[j] = acc;
                dot += p * acc;
                if (!gv.empty()) {
                  T* gvj = gv.data() + kr * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += p * gi[c];
                }
              }
              const T* qrow = Qv + (sg.q_begin + i) * d + h * dh;
              for (std::size_t j = 0; j < visible; ++j) {
                const T p = P[i * sg.k_len + j];
                if (p == T(0)) continue;
                const T ds = p * (dp[j] - dot) * scl;
                const std::size_t kr = sg.k_begin + j;
                if (!gq.empty()) {
                  T* gqi = gq.data() + (sg.q_begin + i) * d + h * dh;
                  const T* kj = Kv + kr * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (!gk.empty()) {
                  T* gkj = gk.data() + kr * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qrow[c];
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses

/// Σ_t w_t · (−log softmax(logits_t)[target_t]). Rows with zero weight are skipped.
template <class T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                                 std::span<const T> weights) {
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n || weights.size() != n)
    fail(ErrorKind::usage, "cross_entropy: target/weight count does not match logits rows");
  std::vector<T> probs(logits.size(), T(0));
  T loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (weights[r] == T(0)) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v)
      fail(ErrorKind::usage, "cross_entropy: target id " + std::to_string(targets[r]) +
                                 " outside vocabulary of " + std::to_string(v));
    const T* row = logits.values().data() + r * v;
    const T mx = *std::max_element(row, row + v);
    T z = 0;
    for (std::size_t c = 0; c < v; ++c) z += (probs[r * v + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < v; ++c) probs[r * v + c] /= z;
    loss += weights[r] * (std::log(z) + mx - row[targets[r]]);
  }
  auto li = logits.impl();
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<T> w(weights.begin(), weights.end());
  return detail::make_result<T>(
      {1}, {loss}, {li},
      [=, probs = std::move(probs), tg = std::move(tg), w = std::move(w)](detail::Storage<T>& self) {
        auto g = detail::grad_of(*li);
        if (g.empty()) return;
        const T up = self.grad[0];
        for (std::size_t r = 0; r < n; ++r) {
          if (w[r] == T(0)) continue;
          const T wr = w[r] * up;
          for (std::size_t c = 0; c < v; ++c) g[r * v + c] += wr * probs[r * v + c];
          g[r * v + static_cast<std::size_t>(tg[r])] -= wr;
        }
      });
}

/// Mean negative log-likelihood over non-padded positions.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> pad_mask) {
  if (pad_mask.size() != targets.size())
    fail(ErrorKind::usage, "cross_entropy: pad mask length mismatch");
  std::size_t live = 0;
  for (auto p : pad_mask) live += p ? 0 : 1;
  if (live == 0) fail(ErrorKind::invalid_batch, "cross_entropy: every position is padded");
  std::vector<T> w(targets.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = pad_mask[i] ? T(0) : T(1) / T(live);
  return weighted_cross_entropy<T>(logits, targets, w);
}

/// Σ_i w_i · logistic loss of logit_i against label_i ∈ {0,1}.
template <class T>
Tensor<T> weighted_bce_with_logits(const Tensor<T>& logits, std::span<const int> labels,
                                   std::span<const T> weights) {
  const std::size_t n = logits.size();
  if (labels.size() != n || weights.size() != n)
    fail(ErrorKind::usage, "bce: label/weight count mismatch");
  std::vector<T> p(n);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits[i];
    // log(1 + e^{-|z|}) + max(z,0) - y·z
    loss += weights[i] * (std::log1p(std::exp(-std::abs(z))) + std::max(z, T(0)) - T(labels[i]) * z);
    p[i] = z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
  }
  auto li = logits.impl();
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<T> w(weights.begin(), weights.end());
  return detail::make_result<T>({1}, {loss}, {li},
                                [=, p = std::move(p), y = std::move(y), w = std::move(w)](detail::Storage<T>& self) {
    if (auto g = detail::grad_of(*li); !g.empty())
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0] * w[i] * (p[i] - T(y[i]));
  });
}

}  // namespace dams
