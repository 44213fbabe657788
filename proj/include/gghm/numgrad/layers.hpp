#pragma once

#include <cmath>
#include <random>
#include <string>

#include "gghm/numgrad/ops.hpp"
#include "gghm/numgrad/parameters.hpp"

namespace gghm::numgrad {

/// y = x W + b over the last axis; W is [in, out].
template <Real T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear create(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                       std::mt19937_64& rng) {
    Linear l;
    l.weight = params.add(name + ".weight", {in, out}, init::fan_in_uniform<T>(in * out, in, rng));
    l.bias = params.add(name + ".bias", {out}, init::fan_in_uniform<T>(out, in, rng));
    return l;
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() == 0 || x.dim(x.rank() - 1) != in_features()) {
      throw DimensionError("linear: input " + to_string(x.shape()) + " for weight " + to_string(weight.shape()));
    }
    Shape rows_shape{x.numel() / in_features(), in_features()};
    Tensor<T> y = add_bias(matmul(reshape(x, rows_shape), weight), bias);
    Shape out_shape = x.shape();
    out_shape.back() = out_features();
    return reshape(y, out_shape);
  }
};

/// Single-head scaled dot-product self-attention over x [b, n, c] with learned
/// query/key/value/output projections.
template <Real T>
struct SelfAttention {
  Linear<T> query, key, value, output;

  static SelfAttention create(ParameterSet<T>& params, const std::string& name, std::size_t channels,
                              std::mt19937_64& rng) {
    SelfAttention a;
    a.query = Linear<T>::create(params, name + ".query", channels, channels, rng);
    a.key = Linear<T>::create(params, name + ".key", channels, channels, rng);
    a.value = Linear<T>::create(params, name + ".value", channels, channels, rng);
    a.output = Linear<T>::create(params, name + ".output", channels, channels, rng);
    return a;
  }

  std::size_t channels() const { return query.in_features(); }

  /// softmax(Q K^T / sqrt(c)) for inspection; rows sum to one.
  Tensor<T> weights(const Tensor<T>& x) const {
    check(x);
    const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(channels()));
    return softmax(scale(matmul(query(x), transpose(key(x))), inv_sqrt));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return output(matmul(weights(x), value(x))); }

 private:
  void check(const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(2) != channels()) {
      throw DimensionError("self-attention: input " + to_string(x.shape()) + " for width " +
                           std::to_string(channels()));
    }
  }
};

template <Real T>
Tensor<T> scaled_dot_attention(const Tensor<T>& x, const SelfAttention<T>& params) {
  return params(x);
}

}  // namespace gghm::numgrad
