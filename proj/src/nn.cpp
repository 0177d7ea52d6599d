#include "sparsecbct/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "sparsecbct/errors.hpp"

namespace sparsecbct {

std::size_t ParameterLayout::add(const std::string& name, std::vector<std::size_t> shape) {
  std::size_t size = 1;
  for (std::size_t s : shape) size *= s;
  ParamInfo info{name, std::move(shape), total_, size};
  entries_.push_back(info);
  total_ += size;
  return info.offset;
}

const ParamInfo& ParameterLayout::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  fail(ErrorKind::Validation, "parameter '" + name + "' not found");
}

namespace nn {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;
using Stride = Eigen::OuterStride<>;
template <typename T>
using SMapM = Eigen::Map<Mat<T>, 0, Stride>;
template <typename T>
using CSMapM = Eigen::Map<const Mat<T>, 0, Stride>;

// im2col working-set cap (elements).
constexpr std::size_t kColBudget = std::size_t{1} << 18;

// Geometry shared by a convolution and its transpose: `big` is the conv input
// (transpose output), `small` the conv output (transpose input).
struct ConvShape {
  std::size_t k, s, p;
  Dims3 big, small;
};

std::size_t lines_per_chunk(std::size_t rows, const ConvShape& sh) {
  return std::max<std::size_t>(1, kColBudget / (rows * sh.small.nx));
}

// Output columns [lo, hi) whose input column ox * s - p + kx lies inside [0, bx).
inline void valid_range(long kx, long s, long p, long bx, long n_out, long& lo, long& hi) {
  const long shift = kx - p;
  lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
  hi = bx - 1 - shift < 0 ? 0 : (bx - 1 - shift) / s + 1;
  lo = std::min(lo, n_out);
  hi = std::clamp(hi, lo, n_out);
}

template <typename T>
void im2col(const T* big, std::size_t channels, const ConvShape& sh, std::size_t l0, std::size_t l1,
            T* col) {
  const std::size_t ncols = (l1 - l0) * sh.small.nx;
  const long bx = static_cast<long>(sh.big.nx);
  const long by = static_cast<long>(sh.big.ny);
  const long bz = static_cast<long>(sh.big.nz);
  const long sx = static_cast<long>(sh.small.nx);
  const long s = static_cast<long>(sh.s);
  const long p = static_cast<long>(sh.p);
  const long k = static_cast<long>(sh.k);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = big + c * sh.big.count();
    for (long kz = 0; kz < k; ++kz) {
      for (long ky = 0; ky < k; ++ky) {
        for (long kx = 0; kx < k; ++kx, ++row) {
          long lo, hi;
          valid_range(kx, s, p, bx, sx, lo, hi);
          T* dst_row = col + row * ncols;
          for (std::size_t line = l0; line < l1; ++line) {
            const long oz = static_cast<long>(line / sh.small.ny);
            const long oy = static_cast<long>(line % sh.small.ny);
            const long iz = oz * s - p + kz;
            const long iy = oy * s - p + ky;
            T* dst = dst_row + (line - l0) * sh.small.nx;
            if (iz < 0 || iz >= bz || iy < 0 || iy >= by) {
              std::fill(dst, dst + sx, T(0));
              continue;
            }
            const T* src = plane + (iz * by + iy) * bx + (kx - p);
            std::fill(dst, dst + lo, T(0));
            if (s == 1) {
              std::copy(src + lo, src + hi, dst + lo);
            } else {
              for (long ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s];
            }
            std::fill(dst + hi, dst + sx, T(0));
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t channels, const ConvShape& sh, std::size_t l0, std::size_t l1,
            T* big) {
  const std::size_t ncols = (l1 - l0) * sh.small.nx;
  const long bx = static_cast<long>(sh.big.nx);
  const long by = static_cast<long>(sh.big.ny);
  const long bz = static_cast<long>(sh.big.nz);
  const long sx = static_cast<long>(sh.small.nx);
  const long s = static_cast<long>(sh.s);
  const long p = static_cast<long>(sh.p);
  const long k = static_cast<long>(sh.k);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = big + c * sh.big.count();
    for (long kz = 0; kz < k; ++kz) {
      for (long ky = 0; ky < k; ++ky) {
        for (long kx = 0; kx < k; ++kx, ++row) {
          long lo, hi;
          valid_range(kx, s, p, bx, sx, lo, hi);
          const T* src_row = col + row * ncols;
          for (std::size_t line = l0; line < l1; ++line) {
            const long oz = static_cast<long>(line / sh.small.ny);
            const long oy = static_cast<long>(line % sh.small.ny);
            const long iz = oz * s - p + kz;
            const long iy = oy * s - p + ky;
            if (iz < 0 || iz >= bz || iy < 0 || iy >= by) continue;
            const T* src = src_row + (line - l0) * sh.small.nx;
            T* dst = plane + (iz * by + iy) * bx + (kx - p);
            if (s == 1) {
              for (long ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
            } else {
              for (long ox = lo; ox < hi; ++ox) dst[ox * s] += src[ox];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void add_bias(Tensor<T>& y, const T* bias) {
  for (std::size_t n = 0; n < y.n; ++n) {
    for (std::size_t c = 0; c < y.c; ++c) {
      T* ch = y.channel(n, c);
      const T b = bias[c];
      for (std::size_t i = 0; i < y.spatial(); ++i) ch[i] += b;
    }
  }
}

template <typename T>
void accumulate_bias_grad(const Tensor<T>& dy, T* g) {
  for (std::size_t c = 0; c < dy.c; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < dy.n; ++n) {
      const T* ch = dy.channel(n, c);
      for (std::size_t i = 0; i < dy.spatial(); ++i) sum += ch[i];
    }
    g[c] += static_cast<T>(sum);
  }
}

std::size_t cube(std::size_t k) { return k * k * k; }

}  // namespace

std::size_t group_count(std::size_t channels) {
  for (std::size_t g = std::min<std::size_t>(8, channels); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

template <typename T>
void init_uniform(T* values, std::size_t count, double fan_in, Rng& rng) {
  const double bound = std::sqrt(3.0 / fan_in);
  for (std::size_t i = 0; i < count; ++i) values[i] = static_cast<T>(rng.uniform(-bound, bound));
}

// ---- Conv3d ---------------------------------------------------------------

template <typename T>
void Conv3d<T>::declare(ParameterLayout& layout, const std::string& name) {
  w_off = layout.add(name + ".weight", {cout, cin, k, k, k});
  b_off = layout.add(name + ".bias", {cout});
}

template <typename T>
void Conv3d<T>::init(T* P, Rng& rng) const {
  const std::size_t count = cout * cin * cube(k);
  if (zero_init) {
    std::fill(P + w_off, P + w_off + count, T(0));
  } else {
    init_uniform(P + w_off, count, static_cast<double>(cin * cube(k)), rng);
  }
  std::fill(P + b_off, P + b_off + cout, T(0));
}

template <typename T>
Dims3 Conv3d<T>::out_dims(Dims3 in) const {
  auto f = [&](std::size_t n) { return (n + 2 * pad - k) / stride + 1; };
  return {f(in.nx), f(in.ny), f(in.nz)};
}

template <typename T>
Tensor<T> Conv3d<T>::forward(const T* P, const Tensor<T>& x, bool record) {
  require(x.c == cin, "conv3d: input channel mismatch");
  const Dims3 od = out_dims(x.dims);
  Tensor<T> y(x.n, cout, od);
  const std::size_t K = cin * cube(k);
  CMapM<T> W(P + w_off, static_cast<long>(cout), static_cast<long>(K));
  if (k == 1 && stride == 1 && pad == 0) {
    for (std::size_t n = 0; n < x.n; ++n) {
      CMapM<T> X(x.sample(n), static_cast<long>(cin), static_cast<long>(x.spatial()));
      MapM<T> Y(y.sample(n), static_cast<long>(cout), static_cast<long>(od.count()));
      Y.noalias() = W * X;
    }
  } else {
    const ConvShape sh{k, stride, pad, x.dims, od};
    const std::size_t lines = od.nz * od.ny;
    const std::size_t lpc = lines_per_chunk(K, sh);
    AlignedVector<T> col(K * std::min(lpc, lines) * od.nx);
    for (std::size_t n = 0; n < x.n; ++n) {
      for (std::size_t l0 = 0; l0 < lines; l0 += lpc) {
        const std::size_t l1 = std::min(lines, l0 + lpc);
        const long ncols = static_cast<long>((l1 - l0) * od.nx);
        im2col(x.sample(n), cin, sh, l0, l1, col.data());
        CMapM<T> C(col.data(), static_cast<long>(K), ncols);
        SMapM<T> Y(y.sample(n) + l0 * od.nx, static_cast<long>(cout), ncols,
                   Stride(static_cast<long>(od.count())));
        Y.noalias() = W * C;
      }
    }
  }
  add_bias(y, P + b_off);
  if (record) input = x;
  return y;
}

template <typename T>
Tensor<T> Conv3d<T>::backward(const T* P, T* G, const Tensor<T>& dy) {
  const Tensor<T>& x = input;
  require(x.n == dy.n && dy.c == cout, "conv3d backward: no matching forward record");
  Tensor<T> dx(x.n, cin, x.dims);
  const Dims3 od = dy.dims;
  const std::size_t K = cin * cube(k);
  CMapM<T> W(P + w_off, static_cast<long>(cout), static_cast<long>(K));
  MapM<T> GW(G + w_off, static_cast<long>(cout), static_cast<long>(K));
  accumulate_bias_grad(dy, G + b_off);
  if (k == 1 && stride == 1 && pad == 0) {
    for (std::size_t n = 0; n < x.n; ++n) {
      CMapM<T> X(x.sample(n), static_cast<long>(cin), static_cast<long>(x.spatial()));
      CMapM<T> DY(dy.sample(n), static_cast<long>(cout), static_cast<long>(od.count()));
      MapM<T> DX(dx.sample(n), static_cast<long>(cin), static_cast<long>(x.spatial()));
      GW.noalias() += DY * X.transpose();
      DX.noalias() = W.transpose() * DY;
    }
    return dx;
  }
  const ConvShape sh{k, stride, pad, x.dims, od};
  const std::size_t lines = od.nz * od.ny;
  const std::size_t lpc = lines_per_chunk(K, sh);
  AlignedVector<T> col(K * std::min(lpc, lines) * od.nx);
  AlignedVector<T> dcol(col.size());
  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t l0 = 0; l0 < lines; l0 += lpc) {
      const std::size_t l1 = std::min(lines, l0 + lpc);
      const long ncols = static_cast<long>((l1 - l0) * od.nx);
      im2col(x.sample(n), cin, sh, l0, l1, col.data());
      CMapM<T> C(col.data(), static_cast<long>(K), ncols);
      CSMapM<T> DY(dy.sample(n) + l0 * od.nx, static_cast<long>(cout), ncols,
                   Stride(static_cast<long>(od.count())));
      GW.noalias() += DY * C.transpose();
      MapM<T> DC(dcol.data(), static_cast<long>(K), ncols);
      DC.noalias() = W.transpose() * DY;
      col2im(dcol.data(), cin, sh, l0, l1, dx.sample(n));
    }
  }
  return dx;
}

// ---- ConvTranspose3d ------------------------------------------------------

template <typename T>
void ConvTranspose3d<T>::declare(ParameterLayout& layout, const std::string& name) {
  w_off = layout.add(name + ".weight", {cin, cout, k, k, k});
  b_off = layout.add(name + ".bias", {cout});
}

template <typename T>
void ConvTranspose3d<T>::init(T* P, Rng& rng) const {
  // Each output voxel sees cin * (k / stride)^3 inputs.
  const double fan_in = static_cast<double>(cin * cube(k)) / static_cast<double>(cube(stride));
  init_uniform(P + w_off, cin * cout * cube(k), fan_in, rng);
  std::fill(P + b_off, P + b_off + cout, T(0));
}

template <typename T>
Dims3 ConvTranspose3d<T>::out_dims(Dims3 in) const {
  auto f = [&](std::size_t n) { return (n - 1) * stride + k - 2 * pad; };
  return {f(in.nx), f(in.ny), f(in.nz)};
}

template <typename T>
Tensor<T> ConvTranspose3d<T>::forward(const T* P, const Tensor<T>& x, bool record) {
  require(x.c == cin, "conv_transpose3d: input channel mismatch");
  const Dims3 od = out_dims(x.dims);
  Tensor<T> y(x.n, cout, od);
  const std::size_t K = cout * cube(k);
  CMapM<T> W(P + w_off, static_cast<long>(cin), static_cast<long>(K));
  const ConvShape sh{k, stride, pad, od, x.dims};
  const std::size_t lines = x.dims.nz * x.dims.ny;
  const std::size_t lpc = lines_per_chunk(K, sh);
  AlignedVector<T> col(K * std::min(lpc, lines) * x.dims.nx);
  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t l0 = 0; l0 < lines; l0 += lpc) {
      const std::size_t l1 = std::min(lines, l0 + lpc);
      const long ncols = static_cast<long>((l1 - l0) * x.dims.nx);
      CSMapM<T> X(x.sample(n) + l0 * x.dims.nx, static_cast<long>(cin), ncols,
                  Stride(static_cast<long>(x.spatial())));
      MapM<T> C(col.data(), static_cast<long>(K), ncols);
      C.noalias() = W.transpose() * X;
      col2im(col.data(), cout, sh, l0, l1, y.sample(n));
    }
  }
  add_bias(y, P + b_off);
  if (record) input = x;
  return y;
}

template <typename T>
Tensor<T> ConvTranspose3d<T>::backward(const T* P, T* G, const Tensor<T>& dy) {
  const Tensor<T>& x = input;
  require(x.n == dy.n && dy.c == cout, "conv_transpose3d backward: no matching forward record");
  Tensor<T> dx(x.n, cin, x.dims);
  const std::size_t K = cout * cube(k);
  CMapM<T> W(P + w_off, static_cast<long>(cin), static_cast<long>(K));
  MapM<T> GW(G + w_off, static_cast<long>(cin), static_cast<long>(K));
  accumulate_bias_grad(dy, G + b_off);
  const ConvShape sh{k, stride, pad, dy.dims, x.dims};
  const std::size_t lines = x.dims.nz * x.dims.ny;
  const std::size_t lpc = lines_per_chunk(K, sh);
  AlignedVector<T> col(K * std::min(lpc, lines) * x.dims.nx);
  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t l0 = 0; l0 < lines; l0 += lpc) {
      const std::size_t l1 = std::min(lines, l0 + lpc);
      const long ncols = static_cast<long>((l1 - l0) * x.dims.nx);
      im2col(dy.sample(n), cout, sh, l0, l1, col.data());
      CMapM<T> C(col.data(), static_cast<long>(K), ncols);
      CSMapM<T> X(x.sample(n) + l0 * x.dims.nx, static_cast<long>(cin), ncols,
                  Stride(static_cast<long>(x.spatial())));
      SMapM<T> DX(dx.sample(n) + l0 * x.dims.nx, static_cast<long>(cin), ncols,
                  Stride(static_cast<long>(x.spatial())));
      DX.noalias() = W * C;
      GW.noalias() += X * C.transpose();
    }
  }
  return dx;
}

// ---- Norm -----------------------------------------------------------------

template <typename T>
void Norm<T>::declare(ParameterLayout& layout, ParameterLayout& buffers, const std::string& name) {
  groups = kind == NormKind::Group ? group_count(channels) : 1;
  gamma_off = layout.add(name + ".gamma", {channels});
  beta_off = layout.add(name + ".beta", {channels});
  if (kind == NormKind::Batch) {
    mean_buf = buffers.add(name + ".running_mean", {channels});
    var_buf = buffers.add(name + ".running_var", {channels});
  }
}

template <typename T>
void Norm<T>::init(T* P, T* B) const {
  std::fill(P + gamma_off, P + gamma_off + channels, T(1));
  std::fill(P + beta_off, P + beta_off + channels, T(0));
  if (kind == NormKind::Batch && B != nullptr) {
    std::fill(B + mean_buf, B + mean_buf + channels, T(0));
    std::fill(B + var_buf, B + var_buf + channels, T(1));
  }
}

template <typename T>
Tensor<T> Norm<T>::forward(const T* P, T* B, const Tensor<T>& x, bool train, bool record) {
  require(x.c == channels, "norm: channel mismatch");
  const std::size_t S = x.spatial();
  const bool own_stats = kind == NormKind::Group || train;
  const std::size_t cpg = channels / groups;
  const std::size_t n_sets = kind == NormKind::Batch ? channels : x.n * groups;
  std::vector<double> mean(n_sets, 0.0), var(n_sets, 0.0);
  auto set_of = [&](std::size_t n, std::size_t c) {
    return kind == NormKind::Batch ? c : n * groups + c / cpg;
  };

  if (own_stats) {
    std::vector<double> count(n_sets, 0.0);
    for (std::size_t n = 0; n < x.n; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const T* ch = x.channel(n, c);
        double s = 0.0;
        for (std::size_t i = 0; i < S; ++i) s += ch[i];
        mean[set_of(n, c)] += s;
        count[set_of(n, c)] += static_cast<double>(S);
      }
    }
    for (std::size_t s = 0; s < n_sets; ++s) mean[s] /= count[s];
    for (std::size_t n = 0; n < x.n; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const T* ch = x.channel(n, c);
        const double m = mean[set_of(n, c)];
        double s = 0.0;
        for (std::size_t i = 0; i < S; ++i) {
          const double d = ch[i] - m;
          s += d * d;
        }
        var[set_of(n, c)] += s;
      }
    }
    for (std::size_t s = 0; s < n_sets; ++s) var[s] /= count[s];
    if (kind == NormKind::Batch && B != nullptr) {
      const double m = static_cast<double>(x.n * S);
      const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
      for (std::size_t c = 0; c < channels; ++c) {
        B[mean_buf + c] = static_cast<T>((1.0 - kBatchNormMomentum) * B[mean_buf + c] +
                                         kBatchNormMomentum * mean[c]);
        B[var_buf + c] = static_cast<T>((1.0 - kBatchNormMomentum) * B[var_buf + c] +
                                        kBatchNormMomentum * var[c] * unbias);
      }
    }
  } else {
    require(B != nullptr, "batch norm inference needs running statistics");
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = B[mean_buf + c];
      var[c] = B[var_buf + c];
    }
  }

  std::vector<double> istd(n_sets);
  for (std::size_t s = 0; s < n_sets; ++s) istd[s] = 1.0 / std::sqrt(var[s] + kNormEps);

  Tensor<T> y(x.n, channels, x.dims);
  if (record) xhat = Tensor<T>(x.n, channels, x.dims);
  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t s = set_of(n, c);
      const T m = static_cast<T>(mean[s]);
      const T is = static_cast<T>(istd[s]);
      const T g = P[gamma_off + c];
      const T b = P[beta_off + c];
      const T* src = x.channel(n, c);
      T* dst = y.channel(n, c);
      T* xh = record ? xhat.channel(n, c) : nullptr;
      for (std::size_t i = 0; i < S; ++i) {
        const T h = (src[i] - m) * is;
        if (xh) xh[i] = h;
        dst[i] = g * h + b;
      }
    }
  }
  if (record) {
    inv_std = std::move(istd);
    batch_stats = own_stats;
  }
  return y;
}

template <typename T>
Tensor<T> Norm<T>::backward(const T* P, T* G, const Tensor<T>& dy) {
  require(xhat.same_shape(dy), "norm backward: no matching forward record");
  const std::size_t S = dy.spatial();
  const std::size_t cpg = channels / groups;
  auto set_of = [&](std::size_t n, std::size_t c) {
    return kind == NormKind::Batch ? c : n * groups + c / cpg;
  };

  for (std::size_t c = 0; c < channels; ++c) {
    double dg = 0.0, db = 0.0;
    for (std::size_t n = 0; n < dy.n; ++n) {
      const T* d = dy.channel(n, c);
      const T* h = xhat.channel(n, c);
      for (std::size_t i = 0; i < S; ++i) {
        dg += static_cast<double>(d[i]) * h[i];
        db += d[i];
      }
    }
    G[gamma_off + c] += static_cast<T>(dg);
    G[beta_off + c] += static_cast<T>(db);
  }

  Tensor<T> dx(dy.n, channels, dy.dims);
  if (!batch_stats) {
    for (std::size_t n = 0; n < dy.n; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const T scale = static_cast<T>(P[gamma_off + c] * inv_std[c]);
        const T* d = dy.channel(n, c);
        T* o = dx.channel(n, c);
        for (std::size_t i = 0; i < S; ++i) o[i] = d[i] * scale;
      }
    }
    return dx;
  }

  const std::size_t n_sets = inv_std.size();
  std::vector<double> m1(n_sets, 0.0), m2(n_sets, 0.0), count(n_sets, 0.0);
  for (std::size_t n = 0; n < dy.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double g = P[gamma_off + c];
      const T* d = dy.channel(n, c);
      const T* h = xhat.channel(n, c);
      double a = 0.0, b = 0.0;
      for (std::size_t i = 0; i < S; ++i) {
        a += d[i];
        b += static_cast<double>(d[i]) * h[i];
      }
      const std::size_t s = set_of(n, c);
      m1[s] += g * a;
      m2[s] += g * b;
      count[s] += static_cast<double>(S);
    }
  }
  for (std::size_t s = 0; s < n_sets; ++s) {
    m1[s] /= count[s];
    m2[s] /= count[s];
  }
  for (std::size_t n = 0; n < dy.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t s = set_of(n, c);
      const T g = P[gamma_off + c];
      const T is = static_cast<T>(inv_std[s]);
      const T a = static_cast<T>(m1[s]);
      const T b = static_cast<T>(m2[s]);
      const T* d = dy.channel(n, c);
      const T* h = xhat.channel(n, c);
      T* o = dx.channel(n, c);
      for (std::size_t i = 0; i < S; ++i) o[i] = is * (g * d[i] - a - h[i] * b);
    }
  }
  return dx;
}

// ---- SiLU -----------------------------------------------------------------

template <typename T>
Tensor<T> SiLU<T>::forward(const Tensor<T>& x, bool record) {
  Tensor<T> y = x;
  for (T& v : y.data) v = v / (T(1) + std::exp(-v));
  if (record) input = x;
  return y;
}

template <typename T>
Tensor<T> SiLU<T>::backward(const Tensor<T>& dy) const {
  require(input.same_shape(dy), "silu backward: no matching forward record");
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const T x = input.data[i];
    const T s = T(1) / (T(1) + std::exp(-x));
    dx.data[i] *= s * (T(1) + x * (T(1) - s));
  }
  return dx;
}

// ---- Linear ---------------------------------------------------------------

template <typename T>
void Linear<T>::declare(ParameterLayout& layout, const std::string& name) {
  w_off = layout.add(name + ".weight", {out, in});
  b_off = layout.add(name + ".bias", {out});
}

template <typename T>
void Linear<T>::init(T* P, Rng& rng) const {
  init_uniform(P + w_off, in * out, static_cast<double>(in), rng);
  std::fill(P + b_off, P + b_off + out, T(0));
}

template <typename T>
Tensor<T> Linear<T>::forward(const T* P, const Tensor<T>& x, bool record) {
  require(x.c == in && x.spatial() == 1, "linear: input shape mismatch");
  Tensor<T> y(x.n, out, Dims3{1, 1, 1});
  CMapM<T> X(x.data.data(), static_cast<long>(x.n), static_cast<long>(in));
  CMapM<T> W(P + w_off, static_cast<long>(out), static_cast<long>(in));
  MapM<T> Y(y.data.data(), static_cast<long>(x.n), static_cast<long>(out));
  Y.noalias() = X * W.transpose();
  for (std::size_t n = 0; n < x.n; ++n) {
    for (std::size_t o = 0; o < out; ++o) y.data[n * out + o] += P[b_off + o];
  }
  if (record) input = x;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const T* P, T* G, const Tensor<T>& dy) {
  require(dy.n == input.n && dy.c == out, "linear backward: no matching forward record");
  CMapM<T> X(input.data.data(), static_cast<long>(input.n), static_cast<long>(in));
  CMapM<T> W(P + w_off, static_cast<long>(out), static_cast<long>(in));
  CMapM<T> DY(dy.data.data(), static_cast<long>(dy.n), static_cast<long>(out));
  MapM<T> GW(G + w_off, static_cast<long>(out), static_cast<long>(in));
  GW.noalias() += DY.transpose() * X;
  for (std::size_t o = 0; o < out; ++o) {
    double s = 0.0;
    for (std::size_t n = 0; n < dy.n; ++n) s += dy.data[n * out + o];
    G[b_off + o] += static_cast<T>(s);
  }
  Tensor<T> dx(dy.n, in, Dims3{1, 1, 1});
  MapM<T> DX(dx.data.data(), static_cast<long>(dy.n), static_cast<long>(in));
  DX.noalias() = DY * W;
  return dx;
}

// ---- Attention ------------------------------------------------------------

template <typename T>
void Attention<T>::declare(ParameterLayout& layout, ParameterLayout& buffers, const std::string& name) {
  norm.kind = NormKind::Group;
  norm.channels = channels;
  norm.declare(layout, buffers, name + ".norm");
  for (auto* conv : {&q, &k, &v, &o}) {
    conv->cin = channels;
    conv->cout = channels;
    conv->k = 1;
    conv->stride = 1;
    conv->pad = 0;
  }
  o.zero_init = true;
  q.declare(layout, name + ".q");
  k.declare(layout, name + ".k");
  v.declare(layout, name + ".v");
  o.declare(layout, name + ".out");
}

template <typename T>
void Attention<T>::init(T* P, T* B, Rng& rng) const {
  norm.init(P, B);
  q.init(P, rng);
  k.init(P, rng);
  v.init(P, rng);
  o.init(P, rng);
}

template <typename T>
Tensor<T> Attention<T>::forward(const T* P, T* B, const Tensor<T>& x, bool train, bool record) {
  const Tensor<T> h = norm.forward(P, B, x, train, record);
  Tensor<T> qq = q.forward(P, h, record);
  Tensor<T> kk = k.forward(P, h, record);
  Tensor<T> vv = v.forward(P, h, record);
  const long C = static_cast<long>(channels);
  const long S = static_cast<long>(x.spatial());
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(channels)));
  Tensor<T> att(x.n, channels, x.dims);
  if (record) probs.assign(x.n, {});
  AlignedVector<T> prob(static_cast<std::size_t>(S * S));
  for (std::size_t n = 0; n < x.n; ++n) {
    CMapM<T> Q(qq.sample(n), C, S);
    CMapM<T> K(kk.sample(n), C, S);
    CMapM<T> V(vv.sample(n), C, S);
    MapM<T> A(prob.data(), S, S);
    A.noalias() = (Q.transpose() * K) * scale;
    for (long i = 0; i < S; ++i) {
      const T mx = A.row(i).maxCoeff();
      A.row(i) = (A.row(i).array() - mx).exp();
      A.row(i) /= A.row(i).sum();
    }
    MapM<T> O(att.sample(n), C, S);
    O.noalias() = V * A.transpose();
    if (record) probs[n] = prob;
  }
  if (record) {
    qt = std::move(qq);
    kt = std::move(kk);
    vt = std::move(vv);
  }
  Tensor<T> y = o.forward(P, att, record);
  add_inplace(y, x);
  return y;
}

template <typename T>
Tensor<T> Attention<T>::backward(const T* P, T* G, const Tensor<T>& dy) {
  require(probs.size() == dy.n, "attention backward: no matching forward record");
  const Tensor<T> datt = o.backward(P, G, dy);
  const long C = static_cast<long>(channels);
  const long S = static_cast<long>(dy.spatial());
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(channels)));
  Tensor<T> dq(dy.n, channels, dy.dims), dk(dy.n, channels, dy.dims), dv(dy.n, channels, dy.dims);
  Mat<T> dP(S, S);
  for (std::size_t n = 0; n < dy.n; ++n) {
    CMapM<T> A(probs[n].data(), S, S);
    CMapM<T> Q(qt.sample(n), C, S);
    CMapM<T> K(kt.sample(n), C, S);
    CMapM<T> V(vt.sample(n), C, S);
    CMapM<T> DO(datt.sample(n), C, S);
    MapM<T>(dv.sample(n), C, S).noalias() = DO * A;
    dP.noalias() = DO.transpose() * V;
    for (long i = 0; i < S; ++i) {
      const T dot = A.row(i).dot(dP.row(i));
      dP.row(i) = A.row(i).array() * (dP.row(i).array() - dot);
    }
    MapM<T>(dq.sample(n), C, S).noalias() = (K * dP.transpose()) * scale;
    MapM<T>(dk.sample(n), C, S).noalias() = (Q * dP) * scale;
  }
  Tensor<T> dh = q.backward(P, G, dq);
  add_inplace(dh, k.backward(P, G, dk));
  add_inplace(dh, v.backward(P, G, dv));
  Tensor<T> dx = norm.backward(P, G, dh);
  add_inplace(dx, dy);
  return dx;
}

// ---- ResBlock -------------------------------------------------------------

template <typename T>
void ResBlock<T>::declare(ParameterLayout& layout, ParameterLayout& buffers, const std::string& name,
                          std::size_t time_dim, NormKind kind) {
  norm.kind = kind;
  norm.channels = cin;
  norm.declare(layout, buffers, name + ".norm");
  if (with_time) {
    tproj.in = time_dim;
    tproj.out = cin;
    tproj.declare(layout, name + ".time");
  }
  conv.cin = cin;
  conv.cout = cout;
  conv.zero_init = true;
  conv.declare(layout, name + ".conv");
  has_shortcut = cin != cout;
  if (has_shortcut) {
    shortcut.cin = cin;
    shortcut.cout = cout;
    shortcut.k = 1;
    shortcut.pad = 0;
    shortcut.declare(layout, name + ".skip");
  }
}

template <typename T>
void ResBlock<T>::init(T* P, T* B, Rng& rng) const {
  norm.init(P, B);
  if (with_time) tproj.init(P, rng);
  conv.init(P, rng);
  if (has_shortcut) shortcut.init(P, rng);
}

template <typename T>
Tensor<T> ResBlock<T>::forward(const T* P, T* B, const Tensor<T>& x, const Tensor<T>* g, bool train,
                               bool record) {
  Tensor<T> h = act.forward(norm.forward(P, B, x, train, record), record);
  if (with_time) {
    require(g != nullptr && g->n == x.n, "resblock: missing time features");
    const Tensor<T> tb = tproj.forward(P, *g, record);
    for (std::size_t n = 0; n < h.n; ++n) {
      for (std::size_t c = 0; c < cin; ++c) {
        T* ch = h.channel(n, c);
        const T b = tb.data[n * cin + c];
        for (std::size_t i = 0; i < h.spatial(); ++i) ch[i] += b;
      }
    }
  }
  Tensor<T> y = conv.forward(P, h, record);
  if (has_shortcut) {
    add_inplace(y, shortcut.forward(P, x, record));
  } else {
    add_inplace(y, x);
  }
  return y;
}

template <typename T>
Tensor<T> ResBlock<T>::backward(const T* P, T* G, const Tensor<T>& dy, Tensor<T>* dg) {
  Tensor<T> dh = conv.backward(P, G, dy);
  if (with_time) {
    Tensor<T> dtb(dh.n, cin, Dims3{1, 1, 1});
    for (std::size_t n = 0; n < dh.n; ++n) {
      for (std::size_t c = 0; c < cin; ++c) {
        const T* ch = dh.channel(n, c);
        double s = 0.0;
        for (std::size_t i = 0; i < dh.spatial(); ++i) s += ch[i];
        dtb.data[n * cin + c] = static_cast<T>(s);
      }
    }
    const Tensor<T> d = tproj.backward(P, G, dtb);
    if (dg != nullptr) add_inplace(*dg, d);
  }
  Tensor<T> dx = norm.backward(P, G, act.backward(dh));
  if (has_shortcut) {
    add_inplace(dx, shortcut.backward(P, G, dy));
  } else {
    add_inplace(dx, dy);
  }
  return dx;
}

// ---- Time embedding -------------------------------------------------------

std::vector<double> sinusoidal_time_embedding(double t, std::size_t dim) {
  require(dim >= 2 && dim % 2 == 0, "time embedding: dim must be even and >= 2");
  const double tau = 1000.0 * t;
  std::vector<double> e(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq =
        std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(dim));
    e[2 * i] = std::sin(tau * freq);
    e[2 * i + 1] = std::cos(tau * freq);
  }
  return e;
}

template <typename T>
void TimeMlp<T>::declare(ParameterLayout& layout, const std::string& name, std::size_t time_dim) {
  dim = time_dim;
  l1.in = l1.out = l2.in = l2.out = time_dim;
  l1.declare(layout, name + ".fc1");
  l2.declare(layout, name + ".fc2");
}

template <typename T>
void TimeMlp<T>::init(T* P, Rng& rng) const {
  l1.init(P, rng);
  l2.init(P, rng);
}

template <typename T>
Tensor<T> TimeMlp<T>::forward(const T* P, const std::vector<double>& t, bool record) {
  Tensor<T> emb(t.size(), dim, Dims3{1, 1, 1});
  for (std::size_t n = 0; n < t.size(); ++n) {
    const auto e = sinusoidal_time_embedding(t[n], dim);
    for (std::size_t i = 0; i < dim; ++i) emb.data[n * dim + i] = static_cast<T>(e[i]);
  }
  Tensor<T> h = a1.forward(l1.forward(P, emb, record), record);
  return a2.forward(l2.forward(P, h, record), record);
}

template <typename T>
void TimeMlp<T>::backward(const T* P, T* G, const Tensor<T>& dg) {
  const Tensor<T> d = l2.backward(P, G, a2.backward(dg));
  l1.backward(P, G, a1.backward(d));
}

// ---- Tensor helpers -------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.n == b.n && a.dims == b.dims, "concat: shape mismatch");
  Tensor<T> out(a.n, a.c + b.c, a.dims);
  for (std::size_t n = 0; n < a.n; ++n) {
    std::copy(a.sample(n), a.sample(n) + a.sample_size(), out.sample(n));
    std::copy(b.sample(n), b.sample(n) + b.sample_size(), out.sample(n) + a.sample_size());
  }
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& d, std::size_t ca, Tensor<T>& da, Tensor<T>& db) {
  da = Tensor<T>(d.n, ca, d.dims);
  db = Tensor<T>(d.n, d.c - ca, d.dims);
  for (std::size_t n = 0; n < d.n; ++n) {
    std::copy(d.sample(n), d.sample(n) + da.sample_size(), da.sample(n));
    std::copy(d.sample(n) + da.sample_size(), d.sample(n) + d.sample_size(), db.sample(n));
  }
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require(a.size() == b.size(), "add: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

#define SPARSECBCT_NN_INSTANTIATE(T)                                                        \
  template void init_uniform<T>(T*, std::size_t, double, Rng&);                             \
  template struct Conv3d<T>;                                                                \
  template struct ConvTranspose3d<T>;                                                       \
  template struct Norm<T>;                                                                  \
  template struct SiLU<T>;                                                                  \
  template struct Linear<T>;                                                                \
  template struct Attention<T>;                                                             \
  template struct ResBlock<T>;                                                              \
  template struct TimeMlp<T>;                                                               \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                \
  template void split_channels<T>(const Tensor<T>&, std::size_t, Tensor<T>&, Tensor<T>&);   \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);

SPARSECBCT_NN_INSTANTIATE(float)
SPARSECBCT_NN_INSTANTIATE(double)

}  // namespace nn
}  // namespace sparsecbct
