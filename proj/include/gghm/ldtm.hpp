#pragma once

// Learnable dense temporal modeling: a patch-temporal block (temporal MLP plus
// learnable patch shift, fused with spatial-only attention) and a
// channel-temporal block (depthwise temporal convolution then attention),
// blended and pooled to per-frame vectors.

#include <random>
#include <string>

#include "gghm/numgrad/layers.hpp"
#include "gghm/numgrad/ops.hpp"

namespace gghm::ldtm {

using numgrad::Real;
using numgrad::Shape;
using numgrad::Tensor;

struct LdtmConfig {
  std::size_t gap = 2;
  double gamma = 0.1;
  double beta = 0.9;
  std::size_t kernel_size = 3;
  std::size_t channels = 64;
  std::size_t frames = 8;
  std::size_t height = 7;
  std::size_t width = 7;

  void validate() const {
    if (gap < 1) throw ConfigError("ldtm.gap must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("ldtm.gamma must lie in [0,1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("ldtm.beta must lie in [0,1]");
    if (kernel_size % 2 == 0) throw ConfigError("ldtm.kernel_size must be odd");
    if (channels == 0 || frames == 0 || height == 0 || width == 0) throw ConfigError("ldtm dims must be positive");
  }
};

template <Real T>
struct LdtmParams {
  Tensor<T> w_t1, w_t2;                 // [T, T]
  numgrad::SelfAttention<T> ptrm_attn;  // shared by both branches of the patch block
  Tensor<T> ctrm_kernels;               // [C, k]
  numgrad::SelfAttention<T> ctrm_attn;

  static LdtmParams create(numgrad::ParameterSet<T>& params, const LdtmConfig& cfg, std::mt19937_64& rng) {
    namespace init = numgrad::init;
    LdtmParams p;
    p.w_t1 = params.add("ldtm.ptrm.w_t1", {cfg.frames, cfg.frames}, init::near_identity<T>(cfg.frames, 0.01, rng));
    p.w_t2 = params.add("ldtm.ptrm.w_t2", {cfg.frames, cfg.frames}, init::near_identity<T>(cfg.frames, 0.01, rng));
    p.ptrm_attn = numgrad::SelfAttention<T>::create(params, "ldtm.ptrm.attn", cfg.channels, rng);
    p.ctrm_kernels = params.add("ldtm.ctrm.kernels", {cfg.channels, cfg.kernel_size},
                                init::impulse<T>(cfg.channels, cfg.kernel_size));
    p.ctrm_attn = numgrad::SelfAttention<T>::create(params, "ldtm.ctrm.attn", cfg.channels, rng);
    return p;
  }
};

template <Real T>
struct EnhancedFeatures {
  Tensor<T> per_frame;  // [B, T, C]
  Tensor<T> node_seed;  // [B, C]
};

/// relu(x W_t1) W_t2 + x along the last (temporal) axis of f_seq [B, HW, C, T].
template <Real T>
Tensor<T> temporal_mlp(const Tensor<T>& f_seq, const Tensor<T>& w_t1, const Tensor<T>& w_t2) {
  const std::size_t t = f_seq.rank() ? f_seq.dim(f_seq.rank() - 1) : 0;
  if (w_t1.shape() != Shape{t, t} || w_t2.shape() != Shape{t, t}) {
    throw DimensionError("temporal_mlp: sequence length " + std::to_string(t) + " vs weights " +
                         numgrad::to_string(w_t1.shape()) + ", " + numgrad::to_string(w_t2.shape()));
  }
  return numgrad::add(numgrad::matmul(numgrad::relu(numgrad::matmul(f_seq, w_t1)), w_t2), f_seq);
}

/// Patch rows n with n % gap == 0 keep f_seq; the rest take h_t. Axis 1 indexes patches.
template <Real T>
Tensor<T> patch_shift(const Tensor<T>& f_seq, const Tensor<T>& h_t, std::size_t gap) {
  if (f_seq.shape() != h_t.shape() || f_seq.rank() < 2) {
    throw DimensionError("patch_shift: " + numgrad::to_string(f_seq.shape()) + " vs " +
                         numgrad::to_string(h_t.shape()));
  }
  if (gap == 0) throw ConfigError("patch_shift: gap must be positive");
  const std::size_t b = f_seq.dim(0), patches = f_seq.dim(1);
  const std::size_t inner = f_seq.numel() / (b * patches);
  // Both inputs concatenated on axis 0, then gathered row by row.
  Tensor<T> both = numgrad::concat<T>({f_seq, h_t}, 0);
  const std::size_t h_offset = f_seq.numel();
  std::vector<std::size_t> idx(f_seq.numel());
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t n = 0; n < patches; ++n) {
      const std::size_t base = (bi * patches + n) * inner;
      const std::size_t src = (n % gap == 0) ? base : h_offset + base;
      for (std::size_t i = 0; i < inner; ++i) idx[base + i] = src + i;
    }
  }
  return numgrad::gather(both, f_seq.shape(), std::move(idx), "patch_shift");
}

namespace detail {

template <Real T>
void check_input(const Tensor<T>& f, const LdtmConfig& cfg) {
  if (f.rank() != 5 || f.dim(1) != cfg.frames || f.dim(2) != cfg.channels || f.dim(3) != cfg.height ||
      f.dim(4) != cfg.width) {
    throw DimensionError("ldtm: input " + numgrad::to_string(f.shape()) + " does not match configured [B," +
                         std::to_string(cfg.frames) + "," + std::to_string(cfg.channels) + "," +
                         std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "]");
  }
}

// [B, T, C, H, W] -> [B*T, HW, C]
template <Real T>
Tensor<T> to_tokens(const Tensor<T>& f) {
  const std::size_t b = f.dim(0), t = f.dim(1), c = f.dim(2), hw = f.dim(3) * f.dim(4);
  auto x = numgrad::permute(numgrad::reshape(f, {b, t, c, hw}), {0, 1, 3, 2});
  return numgrad::reshape(x, {b * t, hw, c});
}

// [B, HW, C, T] -> [B*T, HW, C]
template <Real T>
Tensor<T> seq_to_tokens(const Tensor<T>& s) {
  const std::size_t b = s.dim(0), hw = s.dim(1), c = s.dim(2), t = s.dim(3);
  return numgrad::reshape(numgrad::permute(s, {0, 3, 1, 2}), {b * t, hw, c});
}

}  // namespace detail

/// gamma * SA(shifted) + (1 - gamma) * SA(unshifted), at [B*T, HW, C].
template <Real T>
Tensor<T> ptrm(const Tensor<T>& f, const LdtmConfig& cfg, const LdtmParams<T>& p) {
  detail::check_input(f, cfg);
  const std::size_t b = f.dim(0), t = f.dim(1), c = f.dim(2), hw = f.dim(3) * f.dim(4);
  const T gamma = static_cast<T>(cfg.gamma);
  Tensor<T> spatial, shifted;
  if (gamma != T{1}) spatial = p.ptrm_attn(detail::to_tokens(f));
  if (gamma != T{0}) {
    // [B, T, C, HW] -> [B, HW, C, T]
    auto f_seq = numgrad::permute(numgrad::reshape(f, {b, t, c, hw}), {0, 3, 2, 1});
    auto h_t = temporal_mlp(f_seq, p.w_t1, p.w_t2);
    shifted = p.ptrm_attn(detail::seq_to_tokens(patch_shift(f_seq, h_t, cfg.gap)));
  }
  if (gamma == T{0}) return spatial;
  if (gamma == T{1}) return shifted;
  return numgrad::blend(shifted, spatial, gamma);
}

/// Depthwise temporal convolution per channel, then spatial attention, at [B*T, HW, C].
template <Real T>
Tensor<T> ctrm(const Tensor<T>& f, const LdtmConfig& cfg, const LdtmParams<T>& p) {
  detail::check_input(f, cfg);
  const std::size_t b = f.dim(0), t = f.dim(1), c = f.dim(2), hw = f.dim(3) * f.dim(4);
  auto f_seq = numgrad::permute(numgrad::reshape(f, {b, t, c, hw}), {0, 3, 2, 1});  // [B, HW, C, T]
  auto conv = numgrad::depthwise_conv1d(numgrad::reshape(f_seq, {b * hw, c, t}), p.ctrm_kernels);
  return p.ctrm_attn(detail::seq_to_tokens(numgrad::reshape(conv, {b, hw, c, t})));
}

/// beta * PTRM + (1 - beta) * CTRM, averaged over patches to [B, T, C]; the
/// node seed is the temporal mean.
template <Real T>
EnhancedFeatures<T> ldtm_forward(const Tensor<T>& f, const LdtmConfig& cfg, const LdtmParams<T>& p) {
  detail::check_input(f, cfg);
  const std::size_t b = f.dim(0), t = f.dim(1), c = f.dim(2);
  const T beta = static_cast<T>(cfg.beta);
  Tensor<T> fused;
  if (beta == T{1}) {
    fused = ptrm(f, cfg, p);
  } else if (beta == T{0}) {
    fused = ctrm(f, cfg, p);
  } else {
    fused = numgrad::blend(ptrm(f, cfg, p), ctrm(f, cfg, p), beta);
  }
  auto per_frame = numgrad::reshape(numgrad::mean(fused, 1), {b, t, c});
  return {per_frame, numgrad::mean(per_frame, 1)};
}

}  // namespace gghm::ldtm
