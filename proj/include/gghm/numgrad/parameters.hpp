#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gghm/numgrad/tensor.hpp"

namespace gghm::numgrad {

template <Real T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered registry of a model's learnable tensors. Names are unique.
template <Real T>
class ParameterSet {
 public:
  Tensor<T> add(std::string name, Shape shape, std::vector<T> values) {
    for (const auto& p : params_) {
      if (p.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
    }
    auto t = Tensor<T>::from_data(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    params_.push_back({std::move(name), t});
    return t;
  }

  std::size_t size() const { return params_.size(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }

  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Flat copy of all values in registration order.
  std::vector<T> snapshot() const {
    std::vector<T> out;
    out.reserve(scalar_count());
    for (const auto& p : params_) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
  }

  void restore(const std::vector<T>& flat) {
    if (flat.size() != scalar_count()) throw DimensionError("restore: snapshot size mismatch");
    std::size_t off = 0;
    for (auto& p : params_) {
      auto dst = p.tensor.mutable_data();
      std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + dst.size()), dst.begin());
      off += dst.size();
    }
  }

 private:
  std::vector<Parameter<T>> params_;
};

/// Initialisers. All draw from a caller-owned engine so model construction is
/// reproducible from one seed.
namespace init {

template <Real T>
std::vector<T> uniform(std::size_t n, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return v;
}

/// Uniform in +-sqrt(1/fan_in).
template <Real T>
std::vector<T> fan_in_uniform(std::size_t n, std::size_t fan_in, std::mt19937_64& rng) {
  return uniform<T>(n, std::sqrt(1.0 / static_cast<double>(fan_in)), rng);
}

/// Identity plus N(0, sigma^2) noise.
template <Real T>
std::vector<T> near_identity(std::size_t n, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<T> v(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = static_cast<T>((i == j ? 1.0 : 0.0) + dist(rng));
  }
  return v;
}

/// Per-row unit impulse at the kernel centre: [0,...,1,...,0].
template <Real T>
std::vector<T> impulse(std::size_t rows, std::size_t k) {
  std::vector<T> v(rows * k, T{0});
  for (std::size_t r = 0; r < rows; ++r) v[r * k + k / 2] = T{1};
  return v;
}

}  // namespace init

}  // namespace gghm::numgrad
