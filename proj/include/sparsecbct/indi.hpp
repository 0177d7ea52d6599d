#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sparsecbct/dataset.hpp"
#include "sparsecbct/denoiser.hpp"
#include "sparsecbct/io.hpp"
#include "sparsecbct/rng.hpp"
#include "sparsecbct/volume.hpp"

namespace sparsecbct {

/// x_t = (1 - t) x + t y, evaluated in double per voxel. t = 0 returns x and
/// t = 1 returns y bit-exactly.
VoxelVolume degrade(const VoxelVolume& x, const VoxelVolume& y, double t);
template <typename T>
Tensor<T> degrade(const Tensor<T>& x, const Tensor<T>& y, const std::vector<double>& t);

/// Times 1, 1 - 1/N, ..., 1/N, 0.
struct RestorationSchedule {
  std::size_t n_steps = 2;

  explicit RestorationSchedule(std::size_t n = 2);
  std::vector<double> times() const;
};

using DenoiseFn = std::function<VoxelVolume(const VoxelVolume& x_t, double t)>;
using StepObserver = std::function<void(std::size_t step, double t_next, const VoxelVolume& x_next)>;

/// Starting from x_1 = y, applies
///   x_{t - 1/N} = c F(x_t, t) + (1 - c) x_t,  c = 1 / (N t),
/// for t = 1, 1 - 1/N, ..., 1/N and returns x_0. F is called exactly N times.
VoxelVolume sample(const VoxelVolume& y, const RestorationSchedule& schedule, const DenoiseFn& F,
                   const StepObserver& observer = {});

inline constexpr std::size_t kTimeGrid = 100;

/// Uniform on {1/100, 2/100, ..., 1}.
double sample_t(Rng& rng);

struct TrainingConfig {
  double lr = 1e-4;
  std::size_t lr_step_epochs = 10;
  double lr_decay = 0.95;
  std::size_t batch = 4;
  std::size_t grad_accum_every = 2;
  std::size_t epochs = 60;
  std::uint64_t seed = 7;
  std::string t_sampling = "uniform-grid-100";
  std::size_t val_steps = 2;
  /// Validate after every k-th epoch and after the last one; other rows log NaN.
  std::size_t val_every_epochs = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  /// Learning rate in effect during 0-based epoch `epoch`.
  double lr_at_epoch(std::size_t epoch) const;
};

json to_json(const TrainingConfig& config);
TrainingConfig training_config_from_json(const json& j);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_mae = 0.0;
  double val_psnr_masked = 0.0;     // at val_steps (NaN without validation data)
  double val_psnr_masked_n1 = 0.0;  // at N = 1
};

std::string training_log_csv(const std::vector<EpochLog>& log);

/// Network-ready pair: normalized sparse input, normalized dense target and the
/// HU target used for validation metrics.
struct TrainingPair {
  VoxelVolume input;   // normalized
  VoxelVolume target;  // normalized
  VoxelVolume target_hu;
};

TrainingPair make_training_pair(const PairedSample& sample);

class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t n, double beta1, double beta2, double eps);
  void step(std::span<float> params, const std::vector<double>& grads, double lr);
  std::uint64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<double> m_, v_;
};

struct TrainingResult {
  std::vector<EpochLog> log;
  std::uint64_t optimizer_steps = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains `net` in place: each step draws a batch (shuffled per epoch), one t per
/// item, and minimizes mean |F(x_t, t) - x|. Gradients are averaged over
/// `grad_accum_every` consecutive steps before one Adam update.
TrainingResult train(Denoiser<float>& net, const std::vector<TrainingPair>& train_set,
                     const std::vector<TrainingPair>& val_set, const TrainingConfig& config,
                     const EpochCallback& on_epoch = {});

/// HU in -> HU out: normalize, run the sampler with the network in inference
/// mode, denormalize.
VoxelVolume restore(Denoiser<float>& net, const VoxelVolume& input_hu, std::size_t n_steps,
                    const StepObserver& observer = {});

/// Mean masked PSNR of restored inputs against their targets.
double mean_restored_psnr(Denoiser<float>& net, const std::vector<TrainingPair>& set,
                          std::size_t n_steps);

}  // namespace sparsecbct
