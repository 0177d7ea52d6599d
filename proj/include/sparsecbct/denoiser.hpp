#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sparsecbct/io.hpp"
#include "sparsecbct/nn.hpp"
#include "sparsecbct/tensor.hpp"

namespace sparsecbct {

/// Architecture of the time-conditioned residual U-Net. `levels` counts
/// resolutions (levels - 1 downsampling stages); channels double per level.
struct DenoiserConfig {
  std::size_t levels = 3;
  std::size_t base_channels = 8;
  std::set<std::size_t> attention_levels{2};
  std::size_t time_embed_dim = 64;
  bool with_time_embedding = true;
  nn::NormKind norm = nn::NormKind::Batch;

  void validate() const;
  std::size_t channels(std::size_t level) const { return base_channels << level; }
  /// Throws unless every axis of `dims` is divisible by 2^(levels-1) and the
  /// attention levels keep at least 2 voxels per axis.
  void check_input(Dims3 dims) const;

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

DenoiserConfig desk_denoiser_config();
/// Five resolutions, 32 -> 512 channels, attention on the two deepest levels,
/// 1024-dimensional time embedding.
DenoiserConfig full_denoiser_config();

json to_json(const DenoiserConfig& config);
DenoiserConfig denoiser_config_from_json(const json& j);

/// Parameter count as a closed-form function of the config.
std::size_t parameter_count(const DenoiserConfig& config);

enum class Mode { Train, Eval };

template <typename T>
struct LossResult {
  double loss = 0.0;
  AlignedVector<T> grads;    // same layout as Denoiser::params()
  AlignedVector<T> buffers;  // running statistics after this batch
};

/// F(x_t, t): predicts the clean normalized volume. Output = x_t + head(...),
/// with every residual tail zero-initialized, so a fresh network is the identity.
template <typename T>
class Denoiser {
 public:
  explicit Denoiser(const DenoiserConfig& config);

  const DenoiserConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  const ParameterLayout& buffer_layout() const { return buffer_layout_; }
  AlignedVector<T>& params() { return params_; }
  const AlignedVector<T>& params() const { return params_; }
  AlignedVector<T>& buffers() { return buffers_; }
  const AlignedVector<T>& buffers() const { return buffers_; }

  void init_params(std::uint64_t seed);

  /// Train mode normalizes with batch statistics and updates `buffers()`;
  /// Eval mode uses running statistics and is a pure function of its inputs.
  Tensor<T> forward(const Tensor<T>& x, const std::vector<double>& t, Mode mode = Mode::Eval);

  /// Recording forward in train mode followed by the reverse pass for
  /// `sum(dout * F(x, t))`. Parameter gradients are returned in layout order.
  Tensor<T> forward_record(const Tensor<T>& x, const std::vector<double>& t, T* buffers);
  AlignedVector<T> backward(const Tensor<T>& dout);

  /// mean |F(x_t, t) - x| over batch and voxels, with exact reverse-mode
  /// gradients (sign(0) = 0). Running statistics are returned, not applied.
  LossResult<T> loss_and_gradients(const Tensor<T>& x_t, const std::vector<double>& t,
                                   const Tensor<T>& target);

  /// Same network with parameters converted to another scalar type.
  template <typename U>
  Denoiser<U> cast() const {
    Denoiser<U> out(config_);
    out.params().assign(params_.begin(), params_.end());
    out.buffers().assign(buffers_.begin(), buffers_.end());
    return out;
  }

 private:
  struct EncoderLevel {
    nn::ResBlock<T> rb1, rb2;
    bool attend = false;
    nn::Attention<T> attn;
  };
  struct DecoderLevel {
    nn::ConvTranspose3d<T> up;
    nn::ResBlock<T> rb;
    bool attend = false;
    nn::Attention<T> attn;
  };

  Tensor<T> run(const Tensor<T>& x, const std::vector<double>& t, bool train, bool record, T* buffers);

  DenoiserConfig config_;
  ParameterLayout layout_;
  ParameterLayout buffer_layout_;
  AlignedVector<T> params_;
  AlignedVector<T> buffers_;

  nn::TimeMlp<T> time_mlp_;
  nn::Conv3d<T> in_conv_;
  std::vector<EncoderLevel> enc_;
  std::vector<nn::Conv3d<T>> down_;
  nn::ResBlock<T> mid_;
  bool mid_attend_ = false;
  nn::Attention<T> mid_attn_;
  std::vector<DecoderLevel> dec_;  // index = level, last level unused
  nn::Norm<T> head_norm_;
  nn::SiLU<T> head_act_;
  nn::Conv3d<T> head_conv_;
  std::vector<std::size_t> skip_channels_;
};

extern template class Denoiser<float>;
extern template class Denoiser<double>;

inline constexpr const char* kCheckpointKind = "sparsecbct-checkpoint";

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  json extra = json::object();
};

/// JSON header (config, seed, step, epoch, key list) + f32le payload holding
/// the parameters in layout order followed by the normalization buffers.
void save_checkpoint(const std::filesystem::path& path, const Denoiser<float>& net,
                     const CheckpointMeta& meta);
struct LoadedCheckpoint {
  std::unique_ptr<Denoiser<float>> net;
  CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Volume <-> single-sample, single-channel tensor.
template <typename T>
Tensor<T> to_tensor(const VoxelVolume& vol);
VoxelVolume from_tensor(const Tensor<float>& t, const VoxelVolume& like, std::size_t sample = 0);

}  // namespace sparsecbct
