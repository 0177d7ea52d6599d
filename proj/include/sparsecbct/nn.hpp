#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sparsecbct/rng.hpp"
#include "sparsecbct/tensor.hpp"

namespace sparsecbct::nn {

// Layer modules with hand-written reverse passes. Parameters live in a flat
// vector owned by the caller; each module stores offsets into it. A module
// caches what its backward pass needs during a recording forward call, so
// every instance may be used once per forward/backward pair.
//
// Backward calls accumulate (+=) into the gradient vector `G`.

enum class NormKind { Batch, Group };

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Largest divisor of `channels` not above 8.
std::size_t group_count(std::size_t channels);

/// Uniform(-b, b) with b = sqrt(3 / fan_in).
template <typename T>
void init_uniform(T* values, std::size_t count, double fan_in, Rng& rng);

template <typename T>
struct Conv3d {
  std::size_t cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
  std::size_t w_off = 0, b_off = 0;
  bool zero_init = false;
  Tensor<T> input;

  void declare(ParameterLayout& layout, const std::string& name);
  void init(T* P, Rng& rng) const;
  Dims3 out_dims(Dims3 in) const;
  Tensor<T> forward(const T* P, const Tensor<T>& x, bool record);
  Tensor<T> backward(const T* P, T* G, const Tensor<T>& dy);
};

/// Transposed convolution: the adjoint of Conv3d with the same (k, stride,
/// pad), weight laid out [cin, cout, k, k, k].
template <typename T>
struct ConvTranspose3d {
  std::size_t cin = 0, cout = 0, k = 4, stride = 2, pad = 1;
  std::size_t w_off = 0, b_off = 0;
  Tensor<T> input;

  void declare(ParameterLayout& layout, const std::string& name);
  void init(T* P, Rng& rng) const;
  Dims3 out_dims(Dims3 in) const;
  Tensor<T> forward(const T* P, const Tensor<T>& x, bool record);
  Tensor<T> backward(const T* P, T* G, const Tensor<T>& dy);
};

/// Batch norm (per channel over batch and space) or group norm (per sample and
/// channel group). Batch norm keeps running mean/variance in a separate buffer
/// vector; in inference mode it normalizes with them.
template <typename T>
struct Norm {
  NormKind kind = NormKind::Batch;
  std::size_t channels = 0;
  std::size_t groups = 1;
  std::size_t gamma_off = 0, beta_off = 0;
  std::size_t mean_buf = 0, var_buf = 0;  // offsets into the buffer vector
  Tensor<T> xhat;
  std::vector<double> inv_std;
  bool batch_stats = true;

  void declare(ParameterLayout& layout, ParameterLayout& buffers, const std::string& name);
  void init(T* P, T* B) const;
  /// `train`: normalize with statistics of `x` (and update running stats in
  /// `B` when non-null). Otherwise batch norm uses the running stats.
  Tensor<T> forward(const T* P, T* B, const Tensor<T>& x, bool train, bool record);
  Tensor<T> backward(const T* P, T* G, const Tensor<T>& dy);
};

template <typename T>
struct SiLU {
  Tensor<T> input;
  Tensor<T> forward(const Tensor<T>& x, bool record);
  Tensor<T> backward(const Tensor<T>& dy) const;
};

/// Row-vector input [n, in] stored as a Tensor with c = in and unit spatial dims.
template <typename T>
struct Linear {
  std::size_t in = 0, out = 0;
  std::size_t w_off = 0, b_off = 0;
  Tensor<T> input;

  void declare(ParameterLayout& layout, const std::string& name);
  void init(T* P, Rng& rng) const;
  Tensor<T> forward(const T* P, const Tensor<T>& x, bool record);
  Tensor<T> backward(const T* P, T* G, const Tensor<T>& dy);
};

/// Single-head spatial self-attention with residual connection:
/// y = x + Wo * V softmax(Q^T K / sqrt(C))^T, with Q, K, V 1x1x1 projections of
/// GroupNorm(x). The output projection starts at zero.
template <typename T>
struct Attention {
  std::size_t channels = 0;
  Norm<T> norm;
  Conv3d<T> q, k, v, o;
  Tensor<T> qt, kt, vt;            // cached projections
  std::vector<AlignedVector<T>> probs;  // per sample, S x S row-stochastic

  void declare(ParameterLayout& layout, ParameterLayout& buffers, const std::string& name);
  void init(T* P, T* B, Rng& rng) const;
  Tensor<T> forward(const T* P, T* B, const Tensor<T>& x, bool train, bool record);
  Tensor<T> backward(const T* P, T* G, const Tensor<T>& dy);
};

/// x -> skip(x) + conv3(SiLU(Norm(x)) + proj(g)); skip is identity or a 1x1
/// convolution when the channel count changes. The 3x3x3 conv starts at zero.
template <typename T>
struct ResBlock {
  std::size_t cin = 0, cout = 0;
  bool with_time = true;
  Norm<T> norm;
  SiLU<T> act;
  Linear<T> tproj;
  Conv3d<T> conv;
  bool has_shortcut = false;
  Conv3d<T> shortcut;

  void declare(ParameterLayout& layout, ParameterLayout& buffers, const std::string& name,
               std::size_t time_dim, NormKind kind);
  void init(T* P, T* B, Rng& rng) const;
  Tensor<T> forward(const T* P, T* B, const Tensor<T>& x, const Tensor<T>* g, bool train, bool record);
  /// Returns dx; accumulates the time-feature gradient into `dg` when present.
  Tensor<T> backward(const T* P, T* G, const Tensor<T>& dy, Tensor<T>* dg);
};

/// Sinusoidal embedding of tau = 1000 t: component 2i = sin(tau / 10000^(2i/dim)),
/// component 2i+1 = cos of the same argument.
std::vector<double> sinusoidal_time_embedding(double t, std::size_t dim);

/// g = SiLU(W2 SiLU(W1 emb(t) + b1) + b2), one row per batch item.
template <typename T>
struct TimeMlp {
  std::size_t dim = 0;
  Linear<T> l1, l2;
  SiLU<T> a1, a2;

  void declare(ParameterLayout& layout, const std::string& name, std::size_t time_dim);
  void init(T* P, Rng& rng) const;
  Tensor<T> forward(const T* P, const std::vector<double>& t, bool record);
  void backward(const T* P, T* G, const Tensor<T>& dg);
};

/// Channel concatenation and its adjoint.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void split_channels(const Tensor<T>& d, std::size_t ca, Tensor<T>& da, Tensor<T>& db);

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

}  // namespace sparsecbct::nn
