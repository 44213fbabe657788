#pragma once

// Differentiable primitives. Shapes are checked eagerly; the only broadcasting
// supported is a rank-2 right operand shared across matmul batch dimensions and
// a bias vector over the last axis.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gghm/numgrad/tensor.hpp"

namespace gghm::numgrad {

namespace detail {

// Gradient buffer of input `i` of `out`, or nullptr when that input is constant.
template <Real T>
T* input_grad(Node<T>& out, std::size_t i) {
  auto& in = out.inputs[i];
  return in->requires_grad ? in->grad_buffer() : nullptr;
}

template <Real T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  const long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

template <Real T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <Real T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <Real T>
using MutMap = Eigen::Map<RowMatrix<T>>;

template <Real T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, const char* op, F f, DF df) {
  std::vector<T> y(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs[i]);
  return make_result<T>(x.shape(), std::move(y), op, {x}, [df](Node<T>& out) {
    T* gx = input_grad(out, 0);
    if (!gx) return;
    const auto& xv = out.inputs[0]->value;
    for (std::size_t i = 0; i < out.value.size(); ++i) gx[i] += out.grad[i] * df(xv[i], out.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <Real T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(y), "add", {a, b}, [](Node<T>& out) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (T* g = detail::input_grad(out, k)) {
        for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
      }
    }
  });
}

template <Real T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(y), "sub", {a, b}, [](Node<T>& out) {
    if (T* g = detail::input_grad(out, 0)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
    }
    if (T* g = detail::input_grad(out, 1)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

template <Real T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(y), "mul", {a, b}, [](Node<T>& out) {
    const auto& av = out.inputs[0]->value;
    const auto& bv = out.inputs[1]->value;
    if (T* g = detail::input_grad(out, 0)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] * bv[i];
    }
    if (T* g = detail::input_grad(out, 1)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] * av[i];
    }
  });
}

template <Real T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] / b.data()[i];
  return make_result<T>(a.shape(), std::move(y), "div", {a, b}, [](Node<T>& out) {
    const auto& bv = out.inputs[1]->value;
    if (T* g = detail::input_grad(out, 0)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] / bv[i];
    }
    if (T* g = detail::input_grad(out, 1)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] -= out.grad[i] * out.value[i] / bv[i];
    }
  });
}

template <Real T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(x, "scale", [s](T v) { return s * v; }, [s](T, T) { return s; });
}

/// w*a + (1-w)*b, elementwise, evaluated in exactly that order.
template <Real T>
Tensor<T> blend(const Tensor<T>& a, const Tensor<T>& b, T w) {
  detail::require_same_shape(a, b, "blend");
  const T wb = T{1} - w;
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = w * a.data()[i] + wb * b.data()[i];
  return make_result<T>(a.shape(), std::move(y), "blend", {a, b}, [w, wb](Node<T>& out) {
    if (T* g = detail::input_grad(out, 0)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += w * out.grad[i];
    }
    if (T* g = detail::input_grad(out, 1)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += wb * out.grad[i];
    }
  });
}

/// Elementwise max(x, 0). The subgradient at exactly 0 is 0.
template <Real T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, "relu", [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <Real T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.01)) {
  return detail::unary(
      x, "leaky_relu", [slope](T v) { return v > T{0} ? v : slope * v; },
      [slope](T v, T) { return v > T{0} ? T{1} : slope; });
}

template <Real T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, "sigmoid",
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <Real T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <Real T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> y(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(y), "reshape", {x}, [](Node<T>& out) {
    if (T* g = detail::input_grad(out, 0)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
    }
  });
}

/// out[k] = x[indices[k]] over flat storage; gradients scatter-add back.
template <Real T>
Tensor<T> gather(const Tensor<T>& x, Shape shape, std::vector<std::size_t> indices, const char* op = "gather") {
  if (numel(shape) != indices.size()) {
    throw DimensionError(std::string(op) + ": index count does not fill " + to_string(shape));
  }
  std::vector<T> y(indices.size());
  const auto xs = x.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= xs.size()) throw IndexError(std::string(op) + ": flat index out of range");
    y[k] = xs[indices[k]];
  }
  return make_result<T>(std::move(shape), std::move(y), op, {x},
                        [idx = std::move(indices)](Node<T>& out) {
                          T* g = detail::input_grad(out, 0);
                          if (!g) return;
                          for (std::size_t k = 0; k < idx.size(); ++k) g[idx[k]] += out.grad[k];
                        });
}

template <Real T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const auto& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  if (axes.size() != r) throw DimensionError("permute: axes do not match rank of " + to_string(in_shape));
  std::vector<bool> used(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || used[axes[i]]) throw DimensionError("permute: invalid axis permutation");
    used[axes[i]] = true;
    out_shape[i] = in_shape[axes[i]];
  }
  const auto in_strides = detail::strides_of(in_shape);
  std::vector<std::size_t> idx(x.numel());
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::size_t flat = 0;
    for (std::size_t i = 0; i < r; ++i) flat += counter[i] * in_strides[axes[i]];
    idx[k] = flat;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return gather(x, std::move(out_shape), std::move(idx), "permute");
}

/// Swaps the last two axes.
template <Real T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank < 2 for " + to_string(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

/// Picks `indices` along `axis` (duplicates allowed).
template <Real T>
Tensor<T> index_select(const Tensor<T>& x, long axis_in, const std::vector<std::size_t>& indices) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank(), "index_select");
  const auto& in_shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in_shape[i];
  for (std::size_t i = axis + 1; i < in_shape.size(); ++i) inner *= in_shape[i];
  const std::size_t n = in_shape[axis];
  for (const auto i : indices) {
    if (i >= n) {
      throw IndexError("index_select: index " + std::to_string(i) + " out of range for axis of size " +
                       std::to_string(n));
    }
  }
  Shape out_shape = in_shape;
  out_shape[axis] = indices.size();
  std::vector<std::size_t> idx;
  idx.reserve(outer * indices.size() * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (const auto i : indices) {
      for (std::size_t in = 0; in < inner; ++in) idx.push_back((o * n + i) * inner + in);
    }
  }
  return gather(x, std::move(out_shape), std::move(idx), "index_select");
}

template <Real T>
Tensor<T> narrow(const Tensor<T>& x, long axis_in, std::size_t start, std::size_t length) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank(), "narrow");
  if (start + length > x.dim(axis)) throw IndexError("narrow: range exceeds axis of " + to_string(x.shape()));
  std::vector<std::size_t> indices(length);
  std::iota(indices.begin(), indices.end(), start);
  return index_select(x, static_cast<long>(axis), indices);
}

/// Inserts a new axis at `axis` holding `count` copies.
template <Real T>
Tensor<T> expand(const Tensor<T>& x, long axis_in, std::size_t count) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank() + 1, "expand");
  const auto& in_shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in_shape[i];
  for (std::size_t i = axis; i < in_shape.size(); ++i) inner *= in_shape[i];
  Shape out_shape = in_shape;
  out_shape.insert(out_shape.begin() + static_cast<long>(axis), count);
  std::vector<std::size_t> idx;
  idx.reserve(outer * count * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < count; ++c) {
      for (std::size_t in = 0; in < inner; ++in) idx.push_back(o * inner + in);
    }
  }
  return gather(x, std::move(out_shape), std::move(idx), "expand");
}

template <Real T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis_in) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t axis = detail::normalize_axis(axis_in, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw DimensionError("concat: rank mismatch at " + to_string(s));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != out_shape[i]) {
        throw DimensionError("concat: " + to_string(parts[0].shape()) + " vs " + to_string(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t row = out_shape[axis] * inner;

  std::vector<T> y(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto src = parts[k].data().subspan(o * widths[k], widths[k]);
      std::copy(src.begin(), src.end(), y.begin() + static_cast<long>(offset));
      offset += widths[k];
    }
  }
  return make_result<T>(std::move(out_shape), std::move(y), "concat", parts,
                        [outer, row, widths](Node<T>& out) {
                          std::size_t col = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            if (T* g = detail::input_grad(out, k)) {
                              for (std::size_t o = 0; o < outer; ++o) {
                                for (std::size_t i = 0; i < widths[k]; ++i) {
                                  g[o * widths[k] + i] += out.grad[o * row + col + i];
                                }
                              }
                            }
                            col += widths[k];
                          }
                        });
}

template <Real T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts, long axis) {
  std::vector<Tensor<T>> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) expanded.push_back(expand(p, axis, 1));
  return concat(expanded, axis);
}

// ---------------------------------------------------------------------------
// Reductions

/// Sums out `axis`.
template <Real T>
Tensor<T> sum(const Tensor<T>& x, long axis_in) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank(), "sum");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  std::vector<T> y(outer * inner, T{0});
  const auto xs = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t in = 0; in < inner; ++in) y[o * inner + in] += xs[(o * n + k) * inner + in];
    }
  }
  return make_result<T>(std::move(out_shape), std::move(y), "sum", {x}, [outer, n, inner](Node<T>& out) {
    T* g = detail::input_grad(out, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t in = 0; in < inner; ++in) g[(o * n + k) * inner + in] += out.grad[o * inner + in];
      }
    }
  });
}

template <Real T>
Tensor<T> mean(const Tensor<T>& x, long axis) {
  const std::size_t a = detail::normalize_axis(axis, x.rank(), "mean");
  return scale(sum(x, static_cast<long>(a)), T{1} / static_cast<T>(x.dim(a)));
}

template <Real T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc{0};
  for (const T v : x.data()) acc += v;
  return make_result<T>({}, {acc}, "sum_all", {x}, [](Node<T>& out) {
    T* g = detail::input_grad(out, 0);
    if (!g) return;
    const std::size_t n = out.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += out.grad[0];
  });
}

template <Real T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T{1} / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product: a [..., m, k] x b [..., k, n]. `b` may instead be a
/// plain [k, n] matrix shared by every batch entry.
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const bool shared_b = b_batch.empty();
  if (k != kb || (!shared_b && a_batch != b_batch)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t batch = numel(a_batch);
  Shape out_shape = a_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  using detail::ConstMap;
  using detail::MutMap;
  std::vector<T> y(batch * m * n);
  if (shared_b) {
    // Fold the batch into rows: one large GEMM.
    MutMap<T>(y.data(), batch * m, n).noalias() =
        ConstMap<T>(a.data().data(), batch * m, k) * ConstMap<T>(b.data().data(), k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MutMap<T>(y.data() + i * m * n, m, n).noalias() =
          ConstMap<T>(a.data().data() + i * m * k, m, k) * ConstMap<T>(b.data().data() + i * k * n, k, n);
    }
  }
  return make_result<T>(std::move(out_shape), std::move(y), "matmul", {a, b},
                        [batch, m, k, n, shared_b](Node<T>& out) {
                          const T* av = out.inputs[0]->value.data();
                          const T* bv = out.inputs[1]->value.data();
                          T* ga = detail::input_grad(out, 0);
                          T* gb = detail::input_grad(out, 1);
                          if (shared_b) {
                            ConstMap<T> go(out.grad.data(), batch * m, n);
                            if (ga) MutMap<T>(ga, batch * m, k).noalias() += go * ConstMap<T>(bv, k, n).transpose();
                            if (gb) {
                              MutMap<T>(gb, k, n).noalias() += ConstMap<T>(av, batch * m, k).transpose() * go;
                            }
                            return;
                          }
                          for (std::size_t i = 0; i < batch; ++i) {
                            ConstMap<T> go(out.grad.data() + i * m * n, m, n);
                            if (ga) {
                              MutMap<T>(ga + i * m * k, m, k).noalias() +=
                                  go * ConstMap<T>(bv + i * k * n, k, n).transpose();
                            }
                            if (gb) {
                              MutMap<T>(gb + i * k * n, k, n).noalias() +=
                                  ConstMap<T>(av + i * m * k, m, k).transpose() * go;
                            }
                          }
                        });
}

/// x [..., n] + bias [n].
template <Real T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.dim(x.rank() - 1) != bias.dim(0)) {
    throw DimensionError("add_bias: " + to_string(x.shape()) + " + " + to_string(bias.shape()));
  }
  const std::size_t n = bias.dim(0);
  std::vector<T> y(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias.data()[i % n];
  return make_result<T>(x.shape(), std::move(y), "add_bias", {x, bias}, [n](Node<T>& out) {
    if (T* g = detail::input_grad(out, 0)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
    }
    if (T* g = detail::input_grad(out, 1)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i % n] += out.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisation and nonlinear maps over the last axis

/// Softmax over the last axis.
template <Real T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("softmax: scalar input");
  const std::size_t n = x.dim(x.rank() - 1);
  const std::size_t rows = n ? x.numel() / n : 0;
  std::vector<T> y(x.numel());
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xs.data() + r * n;
    T* o = y.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T z{0};
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return make_result<T>(x.shape(), std::move(y), "softmax", {x}, [rows, n](Node<T>& out) {
    T* g = detail::input_grad(out, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = out.value.data() + r * n;
      const T* go = out.grad.data() + r * n;
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += go[j] * p[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += p[j] * (go[j] - dot);
    }
  });
}

/// Mean over the batch of -log softmax(logits)[target].
template <Real T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + to_string(logits.shape()) + " for " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t b = logits.dim(0), n = logits.dim(1);
  for (const int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= n) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside [0," + std::to_string(n) +
                       ")");
    }
  }
  std::vector<T> probs(b * n);
  T loss{0};
  const auto xs = logits.data();
  for (std::size_t r = 0; r < b; ++r) {
    const T* in = xs.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T z{0};
    for (std::size_t j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const T log_z = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] = std::exp(in[j] - log_z);
    loss += log_z - in[targets[r]];
  }
  loss /= static_cast<T>(b);
  return make_result<T>({}, {loss}, "softmax_cross_entropy", {logits},
                        [probs = std::move(probs), targets, b, n](Node<T>& out) {
                          T* g = detail::input_grad(out, 0);
                          if (!g) return;
                          const T s = out.grad[0] / static_cast<T>(b);
                          for (std::size_t r = 0; r < b; ++r) {
                            for (std::size_t j = 0; j < n; ++j) {
                              const T onehot = static_cast<int>(j) == targets[r] ? T{1} : T{0};
                              g[r * n + j] += s * (probs[r * n + j] - onehot);
                            }
                          }
                        });
}

/// Batch normalisation of x [rows, features] with statistics of this batch.
template <Real T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.rank() != 2 || gamma.shape() != Shape{x.dim(1)} || beta.shape() != Shape{x.dim(1)}) {
    throw DimensionError("batch_norm: input " + to_string(x.shape()) + " with gamma " + to_string(gamma.shape()));
  }
  const std::size_t rows = x.dim(0), f = x.dim(1);
  const auto xs = x.data();
  std::vector<T> xhat(x.numel()), inv_std(f), y(x.numel());
  for (std::size_t c = 0; c < f; ++c) {
    T mu{0};
    for (std::size_t r = 0; r < rows; ++r) mu += xs[r * f + c];
    mu /= static_cast<T>(rows);
    T var{0};
    for (std::size_t r = 0; r < rows; ++r) {
      const T d = xs[r * f + c] - mu;
      var += d * d;
    }
    var /= static_cast<T>(rows);
    inv_std[c] = T{1} / std::sqrt(var + eps);
    for (std::size_t r = 0; r < rows; ++r) {
      xhat[r * f + c] = (xs[r * f + c] - mu) * inv_std[c];
      y[r * f + c] = gamma.data()[c] * xhat[r * f + c] + beta.data()[c];
    }
  }
  return make_result<T>(
      x.shape(), std::move(y), "batch_norm", {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, f](Node<T>& out) {
        const auto& gam = out.inputs[1]->value;
        T* gx = detail::input_grad(out, 0);
        T* gg = detail::input_grad(out, 1);
        T* gbeta = detail::input_grad(out, 2);
        for (std::size_t c = 0; c < f; ++c) {
          T sum_g{0}, sum_gx{0};
          for (std::size_t r = 0; r < rows; ++r) {
            sum_g += out.grad[r * f + c];
            sum_gx += out.grad[r * f + c] * xhat[r * f + c];
          }
          if (gg) gg[c] += sum_gx;
          if (gbeta) gbeta[c] += sum_g;
          if (gx) {
            const T k = gam[c] * inv_std[c] / static_cast<T>(rows);
            for (std::size_t r = 0; r < rows; ++r) {
              gx[r * f + c] +=
                  k * (static_cast<T>(rows) * out.grad[r * f + c] - sum_g - xhat[r * f + c] * sum_gx);
            }
          }
        }
      });
}

/// Per-channel temporal convolution of x [b, c, t] with kernels [c, k]:
/// out[t] = sum_i kernel[i] * in[t + i - (k-1)/2], zero padded.
template <Real T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& kernels) {
  if (kernels.rank() != 2) throw DimensionError("depthwise_conv1d: kernels must be [c,k], got " + to_string(kernels.shape()));
  const std::size_t ks = kernels.dim(1);
  if (ks % 2 == 0) throw ConfigError("depthwise_conv1d: kernel size must be odd, got " + std::to_string(ks));
  if (x.rank() != 3 || x.dim(1) != kernels.dim(0)) {
    throw DimensionError("depthwise_conv1d: input " + to_string(x.shape()) + " vs kernels " +
                         to_string(kernels.shape()));
  }
  const std::size_t b = x.dim(0), c = x.dim(1), t = x.dim(2);
  if (t == 0) throw DimensionError("depthwise_conv1d: empty temporal axis");
  const long half = static_cast<long>(ks / 2);
  const auto xs = x.data();
  const auto kv = kernels.data();
  std::vector<T> y(x.numel(), T{0});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T* in = xs.data() + (bi * c + ci) * t;
      T* o = y.data() + (bi * c + ci) * t;
      for (long ti = 0; ti < static_cast<long>(t); ++ti) {
        T acc{0};
        for (long i = 0; i < static_cast<long>(ks); ++i) {
          const long src = ti + i - half;
          if (src >= 0 && src < static_cast<long>(t)) acc += kv[ci * ks + static_cast<std::size_t>(i)] * in[src];
        }
        o[ti] = acc;
      }
    }
  }
  return make_result<T>(x.shape(), std::move(y), "depthwise_conv1d", {x, kernels}, [b, c, t, ks, half](Node<T>& out) {
    const auto& xv = out.inputs[0]->value;
    const auto& kv = out.inputs[1]->value;
    T* gx = detail::input_grad(out, 0);
    T* gk = detail::input_grad(out, 1);
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        const std::size_t base = (bi * c + ci) * t;
        for (long ti = 0; ti < static_cast<long>(t); ++ti) {
          const T go = out.grad[base + static_cast<std::size_t>(ti)];
          for (long i = 0; i < static_cast<long>(ks); ++i) {
            const long src = ti + i - half;
            if (src < 0 || src >= static_cast<long>(t)) continue;
            const std::size_t ki = ci * ks + static_cast<std::size_t>(i);
            if (gx) gx[base + static_cast<std::size_t>(src)] += kv[ki] * go;
            if (gk) gk[ki] += xv[base + static_cast<std::size_t>(src)] * go;
          }
        }
      }
    }
  });
}

}  // namespace gghm::numgrad
