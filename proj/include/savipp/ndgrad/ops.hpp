#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "savipp/ndgrad/tensor.hpp"

// Forward primitives and their reverse-mode rules. Dense inner products go
// through Eigen; everything else is explicit loops. No broadcasting beyond
// trailing-axis bias addition.
namespace savipp::ndgrad {

namespace detail {

template <std::floating_point T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <std::floating_point T>
using MapM = Eigen::Map<MatRM<T>>;
template <std::floating_point T>
using MapC = Eigen::Map<const MatRM<T>>;

template <std::floating_point T>
inline MapC<T> as_mat(const std::vector<T>& v, std::int64_t r, std::int64_t c) {
  return MapC<T>(v.data(), r, c);
}
template <std::floating_point T>
inline MapM<T> as_mat(std::vector<T>& v, std::int64_t r, std::int64_t c) {
  return MapM<T>(v.data(), r, c);
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& y) {
    if (an->requires_grad) {
      ensure_grad(*an);
      detail::accumulate(an->grad, y.grad);
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      detail::accumulate(bn->grad, y.grad);
    }
  });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& y) {
    if (an->requires_grad) {
      ensure_grad(*an);
      detail::accumulate(an->grad, y.grad);
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (std::size_t i = 0; i < y.grad.size(); ++i) bn->grad[i] -= y.grad[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& y) {
    if (an->requires_grad) {
      ensure_grad(*an);
      for (std::size_t i = 0; i < y.grad.size(); ++i)
        an->grad[i] += y.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (std::size_t i = 0; i < y.grad.size(); ++i)
        bn->grad[i] += y.grad[i] * an->value[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.value());
  for (auto& v : out) v *= c;
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {an}, [an, c](Node<T>& y) {
    ensure_grad(*an);
    for (std::size_t i = 0; i < y.grad.size(); ++i) an->grad[i] += c * y.grad[i];
  });
}

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.value());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  auto an = a.node();
  return make_op<T>(a.shape(), std::move(out), {an}, [an](Node<T>& y) {
    ensure_grad(*an);
    for (std::size_t i = 0; i < y.grad.size(); ++i)
      if (an->value[i] > T(0)) an->grad[i] += y.grad[i];
  });
}

template <std::floating_point T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-a.value()[i]));
  auto an = a.node();
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_op<T>(a.shape(), std::move(out), {an}, [an, saved](Node<T>& y) {
    ensure_grad(*an);
    for (std::size_t i = 0; i < y.grad.size(); ++i) {
      const T s = (*saved)[i];
      an->grad[i] += y.grad[i] * s * (T(1) - s);
    }
  });
}

template <std::floating_point T>
Tensor<T> tanh_op(const Tensor<T>& a) {
  std::vector<T> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.value()[i]);
  auto an = a.node();
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_op<T>(a.shape(), std::move(out), {an}, [an, saved](Node<T>& y) {
    ensure_grad(*an);
    for (std::size_t i = 0; i < y.grad.size(); ++i) {
      const T t = (*saved)[i];
      an->grad[i] += y.grad[i] * (T(1) - t * t);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  auto an = a.node();
  return make_op<T>(std::move(shape), std::vector<T>(a.value()), {an},
                    [an](Node<T>& y) {
                      ensure_grad(*an);
                      detail::accumulate(an->grad, y.grad);
                    });
}

template <std::floating_point T>
Tensor<T> slice_rows(const Tensor<T>& a, std::int64_t r0, std::int64_t r1) {
  if (a.rank() != 2) throw DimensionError("slice_rows expects rank 2, got " + shape_str(a.shape()));
  const std::int64_t rows = a.dim(0), cols = a.dim(1);
  if (r0 < 0 || r1 > rows || r0 >= r1)
    throw ParameterError("slice_rows: bad range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") for " + shape_str(a.shape()));
  std::vector<T> out(static_cast<std::size_t>((r1 - r0) * cols));
  std::copy_n(a.value().data() + r0 * cols, (r1 - r0) * cols, out.data());
  auto an = a.node();
  return make_op<T>({r1 - r0, cols}, std::move(out), {an}, [an, r0, cols](Node<T>& y) {
    ensure_grad(*an);
    for (std::size_t i = 0; i < y.grad.size(); ++i)
      an->grad[static_cast<std::size_t>(r0 * cols) + i] += y.grad[i];
  });
}

template <std::floating_point T>
Tensor<T> slice_last(const Tensor<T>& a, std::int64_t c0, std::int64_t c1) {
  const std::int64_t C = a.shape().back();
  if (c0 < 0 || c1 > C || c0 >= c1)
    throw ParameterError("slice_last: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + shape_str(a.shape()));
  const std::int64_t L = a.size() / C, W = c1 - c0;
  Shape out_shape = a.shape();
  out_shape.back() = W;
  std::vector<T> out(static_cast<std::size_t>(L * W));
  for (std::int64_t l = 0; l < L; ++l)
    std::copy_n(a.value().data() + l * C + c0, W, out.data() + l * W);
  auto an = a.node();
  return make_op<T>(std::move(out_shape), std::move(out), {an},
                    [an, c0, C, L, W](Node<T>& y) {
                      ensure_grad(*an);
                      for (std::int64_t l = 0; l < L; ++l)
                        for (std::int64_t j = 0; j < W; ++j)
                          an->grad[static_cast<std::size_t>(l * C + c0 + j)] +=
                              y.grad[static_cast<std::size_t>(l * W + j)];
                    });
}

template <std::floating_point T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ParameterError("concat_rows: empty input");
  const std::int64_t cols = parts[0].rank() == 2 ? parts[0].dim(1) : parts[0].size();
  std::int64_t rows = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& p : parts) {
    const std::int64_t pc = p.rank() == 2 ? p.dim(1) : p.size();
    if (pc != cols)
      throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    rows += p.rank() == 2 ? p.dim(0) : 1;
    parents.push_back(p.node());
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(rows * cols));
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  auto saved = parents;
  return make_op<T>({rows, cols}, std::move(out), std::move(parents),
                    [saved](Node<T>& y) {
                      std::size_t off = 0;
                      for (const auto& p : saved) {
                        if (p->requires_grad) {
                          ensure_grad(*p);
                          for (std::size_t i = 0; i < p->value.size(); ++i)
                            p->grad[i] += y.grad[off + i];
                        }
                        off += p->value.size();
                      }
                    });
}

template <std::floating_point T>
Tensor<T> tile_rows(const Tensor<T>& a, std::int64_t n) {
  const std::int64_t d = a.size();
  std::vector<T> out(static_cast<std::size_t>(n * d));
  for (std::int64_t i = 0; i < n; ++i)
    std::copy_n(a.value().data(), d, out.data() + i * d);
  auto an = a.node();
  return make_op<T>({n, d}, std::move(out), {an}, [an, n, d](Node<T>& y) {
    ensure_grad(*an);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < d; ++j)
        an->grad[static_cast<std::size_t>(j)] += y.grad[static_cast<std::size_t>(i * d + j)];
  });
}

template <std::floating_point T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  return Tensor<T>::leaf(a.shape(), a.value(), false);
}

// ---------------------------------------------------------------------------
// Reductions / bias
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = 0;
  for (const T v : a.value()) s += v;
  auto an = a.node();
  return make_op<T>({1}, {s}, {an}, [an](Node<T>& y) {
    ensure_grad(*an);
    const T g = y.grad[0];
    for (auto& v : an->grad) v += g;
  });
}

template <std::floating_point T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

// b is added along the trailing axis; the one sanctioned broadcast.
template <std::floating_point T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const std::int64_t C = x.shape().back();
  if (b.size() != C)
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) +
                         " does not match trailing axis of " + shape_str(x.shape()));
  const std::int64_t L = x.size() / C;
  std::vector<T> out(x.value());
  for (std::int64_t l = 0; l < L; ++l)
    for (std::int64_t c = 0; c < C; ++c)
      out[static_cast<std::size_t>(l * C + c)] += b.value()[static_cast<std::size_t>(c)];
  auto xn = x.node(), bn = b.node();
  return make_op<T>(x.shape(), std::move(out), {xn, bn}, [xn, bn, L, C](Node<T>& y) {
    if (xn->requires_grad) {
      ensure_grad(*xn);
      detail::accumulate(xn->grad, y.grad);
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (std::int64_t l = 0; l < L; ++l)
        for (std::int64_t c = 0; c < C; ++c)
          bn->grad[static_cast<std::size_t>(c)] += y.grad[static_cast<std::size_t>(l * C + c)];
    }
  });
}

// y[cell, c] = x[cell, c] * s[cell]; s matches x's leading extents.
template <std::floating_point T>
Tensor<T> scale_cells(const Tensor<T>& x, const Tensor<T>& s) {
  const std::int64_t C = x.shape().back();
  const std::int64_t L = x.size() / C;
  if (s.size() != L)
    throw DimensionError("scale_cells: scale " + shape_str(s.shape()) +
                         " does not match leading extents of " + shape_str(x.shape()));
  std::vector<T> out(x.value());
  for (std::int64_t l = 0; l < L; ++l) {
    const T f = s.value()[static_cast<std::size_t>(l)];
    for (std::int64_t c = 0; c < C; ++c) out[static_cast<std::size_t>(l * C + c)] *= f;
  }
  auto xn = x.node(), sn = s.node();
  return make_op<T>(x.shape(), std::move(out), {xn, sn}, [xn, sn, L, C](Node<T>& y) {
    if (xn->requires_grad) {
      ensure_grad(*xn);
      for (std::int64_t l = 0; l < L; ++l) {
        const T f = sn->value[static_cast<std::size_t>(l)];
        for (std::int64_t c = 0; c < C; ++c)
          xn->grad[static_cast<std::size_t>(l * C + c)] +=
              f * y.grad[static_cast<std::size_t>(l * C + c)];
      }
    }
    if (sn->requires_grad) {
      ensure_grad(*sn);
      for (std::int64_t l = 0; l < L; ++l) {
        T acc = 0;
        for (std::int64_t c = 0; c < C; ++c)
          acc += y.grad[static_cast<std::size_t>(l * C + c)] *
                 xn->value[static_cast<std::size_t>(l * C + c)];
        sn->grad[static_cast<std::size_t>(l)] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::as_mat(out, m, n).noalias() =
      detail::as_mat(a.value(), m, k) * detail::as_mat(b.value(), k, n);
  auto an = a.node(), bn = b.node();
  return make_op<T>({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node<T>& y) {
    auto g = detail::as_mat(y.grad, m, n);
    if (an->requires_grad) {
      ensure_grad(*an);
      detail::as_mat(an->grad, m, k).noalias() +=
          g * detail::as_mat(bn->value, k, n).transpose();
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      detail::as_mat(bn->grad, k, n).noalias() +=
          detail::as_mat(an->value, m, k).transpose() * g;
    }
  });
}

// a[m x k] * b[n x k]^T -> [m x n]
template <std::floating_point T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::as_mat(out, m, n).noalias() =
      detail::as_mat(a.value(), m, k) * detail::as_mat(b.value(), n, k).transpose();
  auto an = a.node(), bn = b.node();
  return make_op<T>({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node<T>& y) {
    auto g = detail::as_mat(y.grad, m, n);
    if (an->requires_grad) {
      ensure_grad(*an);
      detail::as_mat(an->grad, m, k).noalias() += g * detail::as_mat(bn->value, n, k);
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      detail::as_mat(bn->grad, n, k).noalias() +=
          g.transpose() * detail::as_mat(an->value, m, k);
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax / normalization
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> softmax_axis(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank())
    throw ParameterError("softmax_axis: axis " + std::to_string(axis) +
                         " invalid for " + shape_str(x.shape()));
  const Shape& sh = x.shape();
  const std::int64_t n = sh[static_cast<std::size_t>(axis)];
  std::int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= sh[static_cast<std::size_t>(i)];
  for (int i = 0; i < axis; ++i) outer *= sh[static_cast<std::size_t>(i)];

  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  std::vector<T> out(x.value().size());
  // Each outer block is a contiguous n x inner matrix; the softmax axis runs
  // across its rows, so the normalization vectorizes over the inner stride.
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* src = x.value().data() + o * n * inner;
    T* dst = out.data() + o * n * inner;
    Arr mx = Eigen::Map<const Arr>(src, inner);
    for (std::int64_t j = 1; j < n; ++j)
      mx = mx.max(Eigen::Map<const Arr>(src + j * inner, inner));
    Arr sum = Arr::Zero(inner);
    for (std::int64_t j = 0; j < n; ++j) {
      Eigen::Map<Arr> row(dst + j * inner, inner);
      row = (Eigen::Map<const Arr>(src + j * inner, inner) - mx).exp();
      sum += row;
    }
    const Arr inv = sum.inverse();
    for (std::int64_t j = 0; j < n; ++j) {
      Eigen::Map<Arr> row(dst + j * inner, inner);
      row *= inv;
    }
  }
  auto xn = x.node();
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_op<T>(x.shape(), std::move(out), {xn},
                    [xn, saved, n, inner, outer](Node<T>& y) {
                      ensure_grad(*xn);
                      using Arr2 = Eigen::Array<T, Eigen::Dynamic, 1>;
                      for (std::int64_t o = 0; o < outer; ++o) {
                        const T* s = saved->data() + o * n * inner;
                        const T* g = y.grad.data() + o * n * inner;
                        T* dx = xn->grad.data() + o * n * inner;
                        Arr2 dot = Arr2::Zero(inner);
                        for (std::int64_t j = 0; j < n; ++j)
                          dot += Eigen::Map<const Arr2>(g + j * inner, inner) *
                                 Eigen::Map<const Arr2>(s + j * inner, inner);
                        for (std::int64_t j = 0; j < n; ++j)
                          Eigen::Map<Arr2>(dx + j * inner, inner) +=
                              Eigen::Map<const Arr2>(s + j * inner, inner) *
                              (Eigen::Map<const Arr2>(g + j * inner, inner) - dot);
                      }
                    });
}

// y[i,:] = x[i,:] / (sum_j x[i,j] + eps). Used to renormalize attention
// weights over the input axis.
template <std::floating_point T>
Tensor<T> normalize_rows(const Tensor<T>& x, T eps) {
  if (x.rank() != 2) throw DimensionError("normalize_rows expects rank 2");
  const std::int64_t R = x.dim(0), C = x.dim(1);
  std::vector<T> out(x.value().size());
  auto sums = std::make_shared<std::vector<T>>(static_cast<std::size_t>(R));
  for (std::int64_t r = 0; r < R; ++r) {
    T s = eps;
    for (std::int64_t c = 0; c < C; ++c) s += x.value()[static_cast<std::size_t>(r * C + c)];
    (*sums)[static_cast<std::size_t>(r)] = s;
    const T inv = T(1) / s;
    for (std::int64_t c = 0; c < C; ++c)
      out[static_cast<std::size_t>(r * C + c)] =
          x.value()[static_cast<std::size_t>(r * C + c)] * inv;
  }
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(out), {xn}, [xn, sums, R, C](Node<T>& y) {
    ensure_grad(*xn);
    for (std::int64_t r = 0; r < R; ++r) {
      const T s = (*sums)[static_cast<std::size_t>(r)];
      T dot = 0;
      for (std::int64_t c = 0; c < C; ++c)
        dot += y.grad[static_cast<std::size_t>(r * C + c)] *
               xn->value[static_cast<std::size_t>(r * C + c)];
      const T inv = T(1) / s, inv2 = dot / (s * s);
      for (std::int64_t c = 0; c < C; ++c)
        xn->grad[static_cast<std::size_t>(r * C + c)] +=
            y.grad[static_cast<std::size_t>(r * C + c)] * inv - inv2;
    }
  });
}

// Normalizes each cell (all leading axes) over the trailing axis.
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps) {
  const std::int64_t C = x.shape().back();
  if (gain.size() != C || bias.size() != C)
    throw DimensionError("layer_norm: gain/bias must have extent " + std::to_string(C));
  const std::int64_t L = x.size() / C;
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  std::vector<T> out(x.value().size());
  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(L));
  auto istd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(L));
  Eigen::Map<const Arr> gv(gain.value().data(), C);
  Eigen::Map<const Arr> bv(bias.value().data(), C);
  for (std::int64_t l = 0; l < L; ++l) {
    Eigen::Map<const Arr> row(x.value().data() + l * C, C);
    const T m = row.mean();
    const T var = (row - m).square().sum() / static_cast<T>(C);
    const T inv = T(1) / std::sqrt(var + eps);
    (*mean)[static_cast<std::size_t>(l)] = m;
    (*istd)[static_cast<std::size_t>(l)] = inv;
    Eigen::Map<Arr>(out.data() + l * C, C) = (row - m) * inv * gv + bv;
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_op<T>(x.shape(), std::move(out), {xn, gn, bn},
                    [xn, gn, bn, mean, istd, L, C](Node<T>& y) {
                      if (gn->requires_grad) ensure_grad(*gn);
                      if (bn->requires_grad) ensure_grad(*bn);
                      if (xn->requires_grad) ensure_grad(*xn);
                      using Arr2 = Eigen::Array<T, Eigen::Dynamic, 1>;
                      Eigen::Map<const Arr2> gainv(gn->value.data(), C);
                      for (std::int64_t l = 0; l < L; ++l) {
                        Eigen::Map<const Arr2> g(y.grad.data() + l * C, C);
                        Eigen::Map<const Arr2> row(xn->value.data() + l * C, C);
                        const T m = (*mean)[static_cast<std::size_t>(l)];
                        const T inv = (*istd)[static_cast<std::size_t>(l)];
                        const Arr2 h = (row - m) * inv;
                        if (gn->requires_grad)
                          Eigen::Map<Arr2>(gn->grad.data(), C) += g * h;
                        if (bn->requires_grad)
                          Eigen::Map<Arr2>(bn->grad.data(), C) += g;
                        if (xn->requires_grad) {
                          const Arr2 dh = g * gainv;
                          const T m1 = dh.sum() / static_cast<T>(C);
                          const T m2 = (dh * h).sum() / static_cast<T>(C);
                          Eigen::Map<Arr2>(xn->grad.data() + l * C, C) +=
                              inv * (dh - m1 - h * m2);
                        }
                      }
                    });
}

// Normalizes over (all leading axes x in-group channels). x is [..., C].
// Statistics accumulate per channel first so every pass vectorizes across
// the trailing axis.
template <std::floating_point T>
Tensor<T> group_norm(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  const std::int64_t C = x.shape().back();
  if (groups < 1 || C % groups != 0)
    throw ParameterError("group_norm: channels " + std::to_string(C) +
                         " not divisible by groups " + std::to_string(groups));
  if (gain.size() != C || bias.size() != C)
    throw DimensionError("group_norm: gain/bias must have extent " + std::to_string(C));
  const std::int64_t L = x.size() / C;
  const std::int64_t cg = C / groups;
  const std::int64_t n = L * cg;  // elements per group
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;

  Arr csum = Arr::Zero(C);
  for (std::int64_t l = 0; l < L; ++l)
    csum += Eigen::Map<const Arr>(x.value().data() + l * C, C);
  auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups));
  for (std::int64_t g = 0; g < groups; ++g)
    (*mean)[static_cast<std::size_t>(g)] =
        csum.segment(g * cg, cg).sum() / static_cast<T>(n);
  Arr mean_c(C);
  for (std::int64_t c = 0; c < C; ++c)
    mean_c[c] = (*mean)[static_cast<std::size_t>(c / cg)];
  Arr cvar = Arr::Zero(C);
  for (std::int64_t l = 0; l < L; ++l)
    cvar += (Eigen::Map<const Arr>(x.value().data() + l * C, C) - mean_c).square();
  auto istd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups));
  Arr inv_c(C);
  for (std::int64_t g = 0; g < groups; ++g) {
    const T var = cvar.segment(g * cg, cg).sum() / static_cast<T>(n);
    (*istd)[static_cast<std::size_t>(g)] = T(1) / std::sqrt(var + eps);
    inv_c.segment(g * cg, cg).setConstant((*istd)[static_cast<std::size_t>(g)]);
  }
  const Arr scale = Eigen::Map<const Arr>(gain.value().data(), C) * inv_c;
  const Arr shift =
      Eigen::Map<const Arr>(bias.value().data(), C) - scale * mean_c;
  std::vector<T> out(x.value().size());
  for (std::int64_t l = 0; l < L; ++l)
    Eigen::Map<Arr>(out.data() + l * C, C) =
        Eigen::Map<const Arr>(x.value().data() + l * C, C) * scale + shift;

  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_op<T>(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, mean, istd, L, C, cg, groups, n](Node<T>& y) {
        if (gn->requires_grad) ensure_grad(*gn);
        if (bn->requires_grad) ensure_grad(*bn);
        if (xn->requires_grad) ensure_grad(*xn);
        using Arr2 = Eigen::Array<T, Eigen::Dynamic, 1>;
        Arr2 mean_c(C), inv_c(C);
        for (std::int64_t c = 0; c < C; ++c) {
          mean_c[c] = (*mean)[static_cast<std::size_t>(c / cg)];
          inv_c[c] = (*istd)[static_cast<std::size_t>(c / cg)];
        }
        // Channel accumulators: db = sum g, dg = sum g * xhat.
        Arr2 db = Arr2::Zero(C), dg = Arr2::Zero(C);
        for (std::int64_t l = 0; l < L; ++l) {
          Eigen::Map<const Arr2> g(y.grad.data() + l * C, C);
          Eigen::Map<const Arr2> row(xn->value.data() + l * C, C);
          db += g;
          dg += g * (row - mean_c) * inv_c;
        }
        if (gn->requires_grad) Eigen::Map<Arr2>(gn->grad.data(), C) += dg;
        if (bn->requires_grad) Eigen::Map<Arr2>(bn->grad.data(), C) += db;
        if (!xn->requires_grad) return;
        Eigen::Map<const Arr2> gainv(gn->value.data(), C);
        // Per-group reductions follow from the channel accumulators.
        Arr2 a = gainv * inv_c, bcoef(C), ccoef(C);
        for (std::int64_t g = 0; g < groups; ++g) {
          const T m1 = (gainv.segment(g * cg, cg) * db.segment(g * cg, cg)).sum() /
                       static_cast<T>(n);
          const T m2 = (gainv.segment(g * cg, cg) * dg.segment(g * cg, cg)).sum() /
                       static_cast<T>(n);
          const T inv = (*istd)[static_cast<std::size_t>(g)];
          const T mu = (*mean)[static_cast<std::size_t>(g)];
          bcoef.segment(g * cg, cg).setConstant(-inv * inv * m2);
          ccoef.segment(g * cg, cg).setConstant(inv * inv * m2 * mu - inv * m1);
        }
        for (std::int64_t l = 0; l < L; ++l) {
          Eigen::Map<const Arr2> g(y.grad.data() + l * C, C);
          Eigen::Map<const Arr2> row(xn->value.data() + l * C, C);
          Eigen::Map<Arr2>(xn->grad.data() + l * C, C) += a * g + bcoef * row + ccoef;
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

// Patches of x [H,W,Cin] as rows [(oh*ow) x (kh*kw*Cin)], zero padding p.
template <std::floating_point T>
void im2col(const T* x, std::int64_t H, std::int64_t W, std::int64_t Cin,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
            std::int64_t oh, std::int64_t ow, T* cols) {
  const std::int64_t patch = kh * kw * Cin;
  for (std::int64_t oi = 0; oi < oh; ++oi)
    for (std::int64_t oj = 0; oj < ow; ++oj) {
      T* row = cols + (oi * ow + oj) * patch;
      for (std::int64_t ki = 0; ki < kh; ++ki) {
        const std::int64_t ii = oi * stride + ki - pad;
        for (std::int64_t kj = 0; kj < kw; ++kj) {
          const std::int64_t jj = oj * stride + kj - pad;
          T* dst = row + (ki * kw + kj) * Cin;
          if (ii < 0 || ii >= H || jj < 0 || jj >= W) {
            std::fill_n(dst, Cin, T(0));
          } else {
            std::copy_n(x + (ii * W + jj) * Cin, Cin, dst);
          }
        }
      }
    }
}

// Scatter-add of patch rows back onto the [H,W,Cin] image (adjoint of im2col).
template <std::floating_point T>
void col2im(const T* cols, std::int64_t H, std::int64_t W, std::int64_t Cin,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
            std::int64_t oh, std::int64_t ow, T* x) {
  const std::int64_t patch = kh * kw * Cin;
  for (std::int64_t oi = 0; oi < oh; ++oi)
    for (std::int64_t oj = 0; oj < ow; ++oj) {
      const T* row = cols + (oi * ow + oj) * patch;
      for (std::int64_t ki = 0; ki < kh; ++ki) {
        const std::int64_t ii = oi * stride + ki - pad;
        if (ii < 0 || ii >= H) continue;
        for (std::int64_t kj = 0; kj < kw; ++kj) {
          const std::int64_t jj = oj * stride + kj - pad;
          if (jj < 0 || jj >= W) continue;
          const T* src = row + (ki * kw + kj) * Cin;
          T* dst = x + (ii * W + jj) * Cin;
          for (std::int64_t c = 0; c < Cin; ++c) dst[c] += src[c];
        }
      }
    }
}

}  // namespace detail

// Cross-correlation of x [H,W,Cin] with kernel [kh,kw,Cin,Cout].
template <std::floating_point T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::int64_t stride,
                 std::int64_t pad) {
  if (x.rank() != 3 || kernel.rank() != 4)
    throw DimensionError("conv2d: need x rank 3 and kernel rank 4, got " +
                         shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  if (pad < 0) throw ParameterError("conv2d: padding must be >= 0");
  const std::int64_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const std::int64_t kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
  if (kernel.dim(2) != Cin)
    throw DimensionError("conv2d: kernel input channels " + std::to_string(kernel.dim(2)) +
                         " vs image channels " + std::to_string(Cin));
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw ParameterError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " exceeds padded input " + shape_str(x.shape()));
  const std::int64_t oh = (H + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (W + 2 * pad - kw) / stride + 1;
  const std::int64_t patch = kh * kw * Cin;

  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(oh * ow * patch));
  detail::im2col(x.value().data(), H, W, Cin, kh, kw, stride, pad, oh, ow, cols->data());
  std::vector<T> out(static_cast<std::size_t>(oh * ow * Cout));
  detail::as_mat(out, oh * ow, Cout).noalias() =
      detail::as_mat(*cols, oh * ow, patch) * detail::as_mat(kernel.value(), patch, Cout);

  auto xn = x.node(), kn = kernel.node();
  return make_op<T>({oh, ow, Cout}, std::move(out), {xn, kn},
                    [xn, kn, cols, H, W, Cin, kh, kw, stride, pad, oh, ow, patch,
                     Cout](Node<T>& y) {
                      auto g = detail::as_mat(y.grad, oh * ow, Cout);
                      if (kn->requires_grad) {
                        ensure_grad(*kn);
                        detail::as_mat(kn->grad, patch, Cout).noalias() +=
                            detail::as_mat(*cols, oh * ow, patch).transpose() * g;
                      }
                      if (xn->requires_grad) {
                        ensure_grad(*xn);
                        std::vector<T> dcols(static_cast<std::size_t>(oh * ow * patch));
                        detail::as_mat(dcols, oh * ow, patch).noalias() =
                            g * detail::as_mat(kn->value, patch, Cout).transpose();
                        detail::col2im(dcols.data(), H, W, Cin, kh, kw, stride, pad, oh, ow,
                                       xn->grad.data());
                      }
                    });
}

// Transposed convolution; output extent (H-1)*stride + kh per axis.
template <std::floating_point T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernel,
                           std::int64_t stride) {
  if (x.rank() != 3 || kernel.rank() != 4)
    throw DimensionError("conv_transpose2d: need x rank 3 and kernel rank 4, got " +
                         shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  if (stride < 1) throw ParameterError("conv_transpose2d: stride must be >= 1");
  const std::int64_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const std::int64_t kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
  if (kernel.dim(2) != Cin)
    throw DimensionError("conv_transpose2d: kernel input channels " +
                         std::to_string(kernel.dim(2)) + " vs image channels " +
                         std::to_string(Cin));
  const std::int64_t oh = (H - 1) * stride + kh;
  const std::int64_t ow = (W - 1) * stride + kw;
  const std::int64_t patch = kh * kw * Cout;

  // Kernel permuted to [Cin x (kh*kw*Cout)] so input rows map to patch rows.
  auto wperm = std::make_shared<std::vector<T>>(static_cast<std::size_t>(Cin * patch));
  for (std::int64_t ki = 0; ki < kh; ++ki)
    for (std::int64_t kj = 0; kj < kw; ++kj)
      for (std::int64_t ci = 0; ci < Cin; ++ci)
        for (std::int64_t co = 0; co < Cout; ++co)
          (*wperm)[static_cast<std::size_t>(ci * patch + (ki * kw + kj) * Cout + co)] =
              kernel.value()[static_cast<std::size_t>(((ki * kw + kj) * Cin + ci) * Cout + co)];

  std::vector<T> pat(static_cast<std::size_t>(H * W * patch));
  detail::as_mat(pat, H * W, patch).noalias() =
      detail::as_mat(x.value(), H * W, Cin) * detail::as_mat(*wperm, Cin, patch);
  std::vector<T> out(static_cast<std::size_t>(oh * ow * Cout), T(0));
  detail::col2im(pat.data(), oh, ow, Cout, kh, kw, stride, /*pad=*/0, H, W, out.data());

  auto xn = x.node(), kn = kernel.node();
  return make_op<T>(
      {oh, ow, Cout}, std::move(out), {xn, kn},
      [xn, kn, wperm, H, W, Cin, kh, kw, stride, oh, ow, patch, Cout](Node<T>& y) {
        // Gather the output gradient into patch rows once for both grads.
        std::vector<T> gpat(static_cast<std::size_t>(H * W * patch));
        detail::im2col(y.grad.data(), oh, ow, Cout, kh, kw, stride, /*pad=*/0, H, W,
                       gpat.data());
        if (xn->requires_grad) {
          ensure_grad(*xn);
          detail::as_mat(xn->grad, H * W, Cin).noalias() +=
              detail::as_mat(gpat, H * W, patch) *
              detail::as_mat(*wperm, Cin, patch).transpose();
        }
        if (kn->requires_grad) {
          ensure_grad(*kn);
          std::vector<T> dwperm(static_cast<std::size_t>(Cin * patch));
          detail::as_mat(dwperm, Cin, patch).noalias() =
              detail::as_mat(xn->value, H * W, Cin).transpose() *
              detail::as_mat(gpat, H * W, patch);
          for (std::int64_t ki = 0; ki < kh; ++ki)
            for (std::int64_t kj = 0; kj < kw; ++kj)
              for (std::int64_t ci = 0; ci < Cin; ++ci)
                for (std::int64_t co = 0; co < Cout; ++co)
                  kn->grad[static_cast<std::size_t>(((ki * kw + kj) * Cin + ci) * Cout +
                                                    co)] +=
                      dwperm[static_cast<std::size_t>(ci * patch + (ki * kw + kj) * Cout +
                                                      co)];
        }
      });
}

// ---------------------------------------------------------------------------
// Losses (fused: masking skips invalid cells entirely)
// ---------------------------------------------------------------------------

// Mean squared error over (valid cell, channel) pairs. pred is [..., C];
// valid has one flag per leading cell. Zero valid cells -> loss 0 with no
// gradient. Invalid cells never touch the sum, so the value is bit-invariant
// to whatever the prediction holds there.
template <std::floating_point T>
Tensor<T> masked_mse(const Tensor<T>& pred, const std::vector<T>& target,
                     const std::vector<std::uint8_t>& valid) {
  if (static_cast<std::int64_t>(target.size()) != pred.size())
    throw ContractError("masked_mse: target size " + std::to_string(target.size()) +
                        " vs prediction " + shape_str(pred.shape()));
  const std::int64_t C = pred.shape().back();
  const std::int64_t L = pred.size() / C;
  if (static_cast<std::int64_t>(valid.size()) != L)
    throw ContractError("masked_mse: validity size " + std::to_string(valid.size()) +
                        " vs " + std::to_string(L) + " cells");
  std::int64_t nvalid = 0;
  double acc = 0;
  for (std::int64_t l = 0; l < L; ++l) {
    if (!valid[static_cast<std::size_t>(l)]) continue;
    ++nvalid;
    for (std::int64_t c = 0; c < C; ++c) {
      const double d = static_cast<double>(pred.value()[static_cast<std::size_t>(l * C + c)]) -
                       static_cast<double>(target[static_cast<std::size_t>(l * C + c)]);
      acc += d * d;
    }
  }
  const T denom = nvalid > 0 ? static_cast<T>(nvalid * C) : T(1);
  const T lossv = nvalid > 0 ? static_cast<T>(acc / static_cast<double>(denom)) : T(0);
  auto pn = pred.node();
  auto tgt = std::make_shared<std::vector<T>>(target);
  auto msk = std::make_shared<std::vector<std::uint8_t>>(valid);
  return make_op<T>({1}, {lossv}, {pn}, [pn, tgt, msk, L, C, nvalid, denom](Node<T>& y) {
    if (nvalid == 0) return;
    ensure_grad(*pn);
    const T g2 = T(2) * y.grad[0] / denom;
    for (std::int64_t l = 0; l < L; ++l) {
      if (!(*msk)[static_cast<std::size_t>(l)]) continue;
      for (std::int64_t c = 0; c < C; ++c) {
        const std::size_t idx = static_cast<std::size_t>(l * C + c);
        pn->grad[idx] += g2 * (pn->value[idx] - (*tgt)[idx]);
      }
    }
  });
}

// Huber (delta = 1): 0.5 x^2 inside [-1,1], |x| - 0.5 outside; mean over all
// elements.
template <std::floating_point T>
Tensor<T> huber_mean(const Tensor<T>& pred, const std::vector<T>& target) {
  if (static_cast<std::int64_t>(target.size()) != pred.size())
    throw ContractError("huber_mean: target size mismatch");
  const std::int64_t n = pred.size();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.value()[static_cast<std::size_t>(i)]) -
                     static_cast<double>(target[static_cast<std::size_t>(i)]);
    acc += std::abs(d) <= 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  }
  const T lossv = static_cast<T>(acc / static_cast<double>(n));
  auto pn = pred.node();
  auto tgt = std::make_shared<std::vector<T>>(target);
  return make_op<T>({1}, {lossv}, {pn}, [pn, tgt, n](Node<T>& y) {
    ensure_grad(*pn);
    const T g = y.grad[0] / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const std::size_t idx = static_cast<std::size_t>(i);
      const T d = pn->value[idx] - (*tgt)[idx];
      pn->grad[idx] += g * std::clamp(d, T(-1), T(1));
    }
  });
}

// ---------------------------------------------------------------------------
// Gated recurrent cell (composition of primitives)
// ---------------------------------------------------------------------------

template <std::floating_point T>
struct GruParams {
  Tensor<T> wxz, whz, bz;  // update gate
  Tensor<T> wxr, whr, br;  // reset gate
  Tensor<T> wxh, whh, bh;  // candidate
};

// h [K x D], x [K x Din]. z,r sigmoid gates; candidate tanh;
// h' = (1-z) .* h + z .* cand.
template <std::floating_point T>
Tensor<T> gru_cell(const Tensor<T>& h, const Tensor<T>& x, const GruParams<T>& p) {
  auto z = sigmoid(add_bias(add(matmul(x, p.wxz), matmul(h, p.whz)), p.bz));
  auto r = sigmoid(add_bias(add(matmul(x, p.wxr), matmul(h, p.whr)), p.br));
  auto cand = tanh_op(add_bias(add(matmul(x, p.wxh), matmul(mul(r, h), p.whh)), p.bh));
  auto ones = Tensor<T>::full(z.shape(), T(1));
  return add(mul(sub(ones, z), h), mul(z, cand));
}

}  // namespace savipp::ndgrad
