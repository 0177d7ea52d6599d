#include "sparsecbct/indi.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <type_traits>

#include "sparsecbct/errors.hpp"
#include "sparsecbct/metrics.hpp"

namespace sparsecbct {

VoxelVolume degrade(const VoxelVolume& x, const VoxelVolume& y, double t) {
  require(x.dims() == y.dims(), "degrade: volume dims do not match");
  require(t >= 0.0 && t <= 1.0, "degrade: t must lie in [0, 1]");
  const auto vx = x.values();
  const auto vy = y.values();
  std::vector<float> out(vx.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>((1.0 - t) * vx[i] + t * vy[i]);
  }
  return x.with_values(std::move(out), x.unit());
}

template <typename T>
Tensor<T> degrade(const Tensor<T>& x, const Tensor<T>& y, const std::vector<double>& t) {
  require(x.same_shape(y), "degrade: tensor shapes do not match");
  require(t.size() == x.n, "degrade: need one t per batch item");
  Tensor<T> out(x.n, x.c, x.dims);
  for (std::size_t n = 0; n < x.n; ++n) {
    require(t[n] >= 0.0 && t[n] <= 1.0, "degrade: t must lie in [0, 1]");
    const T* a = x.sample(n);
    const T* b = y.sample(n);
    T* o = out.sample(n);
    for (std::size_t i = 0; i < x.sample_size(); ++i) {
      o[i] = static_cast<T>((1.0 - t[n]) * a[i] + t[n] * b[i]);
    }
  }
  return out;
}

template Tensor<float> degrade<float>(const Tensor<float>&, const Tensor<float>&, const std::vector<double>&);
template Tensor<double> degrade<double>(const Tensor<double>&, const Tensor<double>&,
                                        const std::vector<double>&);

RestorationSchedule::RestorationSchedule(std::size_t n) : n_steps(n) {
  require(n >= 1, "schedule: n_steps must be >= 1");
}

std::vector<double> RestorationSchedule::times() const {
  std::vector<double> t(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k) {
    t[k] = static_cast<double>(n_steps - k) / static_cast<double>(n_steps);
  }
  return t;
}

VoxelVolume sample(const VoxelVolume& y, const RestorationSchedule& schedule, const DenoiseFn& F,
                   const StepObserver& observer) {
  require(schedule.n_steps >= 1, "sample: n_steps must be >= 1");
  const std::size_t N = schedule.n_steps;
  const auto times = schedule.times();
  VoxelVolume x = y;
  for (std::size_t k = 0; k < N; ++k) {
    const double t = times[k];
    // N t = N - k exactly.
    const double c = 1.0 / static_cast<double>(N - k);
    const VoxelVolume f = F(x, t);
    require(f.dims() == x.dims(), "sample: denoiser changed the volume dims");
    const auto vf = f.values();
    auto vx = x.values();
    for (std::size_t i = 0; i < vx.size(); ++i) {
      const double next = c * vf[i] + (1.0 - c) * vx[i];
      if (!std::isfinite(next)) {
        fail(ErrorKind::NonFinite, "sample: non-finite value at step " + std::to_string(k + 1) +
                                       " of " + std::to_string(N) + " (t = " + std::to_string(t) + ")");
      }
      vx[i] = static_cast<float>(next);
    }
    if (observer) observer(k + 1, times[k + 1], x);
  }
  return x;
}

double sample_t(Rng& rng) {
  return static_cast<double>(rng.below(kTimeGrid) + 1) / static_cast<double>(kTimeGrid);
}

// ---- Training config ------------------------------------------------------

void TrainingConfig::validate() const {
  require(lr > 0.0 && std::isfinite(lr), "training.lr: must be > 0");
  require(lr_step_epochs >= 1, "training.lr_step_epochs: must be >= 1");
  require(lr_decay > 0.0 && lr_decay <= 1.0, "training.lr_decay: must lie in (0, 1]");
  require(batch >= 1, "training.batch: must be >= 1");
  require(grad_accum_every >= 1, "training.grad_accum_every: must be >= 1");
  require(epochs >= 1, "training.epochs: must be >= 1");
  require(t_sampling == "uniform-grid-100", "training.t_sampling: only 'uniform-grid-100' is supported");
  require(val_steps >= 1, "training.val_steps: must be >= 1");
  require(val_every_epochs >= 1, "training.val_every_epochs: must be >= 1");
  require(beta1 >= 0.0 && beta1 < 1.0, "training.beta1: must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "training.beta2: must lie in [0, 1)");
  require(adam_eps > 0.0, "training.adam_eps: must be > 0");
}

double TrainingConfig::lr_at_epoch(std::size_t epoch) const {
  return lr * std::pow(lr_decay, static_cast<double>(epoch / lr_step_epochs));
}

json to_json(const TrainingConfig& c) {
  return {{"lr", c.lr},
          {"lr_step_epochs", c.lr_step_epochs},
          {"lr_decay", c.lr_decay},
          {"batch", c.batch},
          {"grad_accum_every", c.grad_accum_every},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"t_sampling", c.t_sampling},
          {"val_steps", c.val_steps},
          {"val_every_epochs", c.val_every_epochs},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps}};
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      out = v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      require(v.is_number_integer() && v.get<long long>() >= 0,
              std::string("training.") + key + ": must be a non-negative integer");
      out = v.get<T>();
    } else {
      require(v.is_number(), std::string("training.") + key + ": must be a number");
      out = v.get<T>();
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, std::string("training.") + key + ": " + e.what());
  }
}

}  // namespace

TrainingConfig training_config_from_json(const json& j) {
  require(j.is_object(), "training: config must be an object");
  TrainingConfig c;
  read_field(j, "lr", c.lr);
  read_field(j, "lr_step_epochs", c.lr_step_epochs);
  read_field(j, "lr_decay", c.lr_decay);
  read_field(j, "batch", c.batch);
  read_field(j, "grad_accum_every", c.grad_accum_every);
  read_field(j, "epochs", c.epochs);
  read_field(j, "seed", c.seed);
  read_field(j, "t_sampling", c.t_sampling);
  read_field(j, "val_steps", c.val_steps);
  read_field(j, "val_every_epochs", c.val_every_epochs);
  read_field(j, "beta1", c.beta1);
  read_field(j, "beta2", c.beta2);
  read_field(j, "adam_eps", c.adam_eps);
  c.validate();
  return c;
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,lr,train_mae,val_psnr_masked,val_psnr_masked_n1\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << format_metric(r.lr) << ',' << format_metric(r.train_mae) << ','
        << format_metric(r.val_psnr_masked) << ',' << format_metric(r.val_psnr_masked_n1) << '\n';
  }
  return out.str();
}

TrainingPair make_training_pair(const PairedSample& sample) {
  return {normalize_hu(sample.input), normalize_hu(sample.target), sample.target};
}

// ---- Adam -----------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void AdamOptimizer::step(std::span<float> params, const std::vector<double>& grads, double lr) {
  require(params.size() == m_.size() && grads.size() == m_.size(), "adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] = static_cast<float>(params[i] - lr * mhat / (std::sqrt(vhat) + eps_));
  }
}

// ---- Training -------------------------------------------------------------

namespace {

Tensor<float> stack_batch(const std::vector<TrainingPair>& set, const std::vector<std::size_t>& order,
                          std::size_t begin, std::size_t end, bool inputs) {
  const Dims3 dims = set[order[begin]].input.dims();
  Tensor<float> t(end - begin, 1, dims);
  for (std::size_t i = begin; i < end; ++i) {
    const auto& v = inputs ? set[order[i]].input : set[order[i]].target;
    require(v.dims() == dims, "train: all pairs must share the same dims");
    const auto vals = v.values();
    std::copy(vals.begin(), vals.end(), t.sample(i - begin));
  }
  return t;
}

VoxelVolume restore_normalized(Denoiser<float>& net, const VoxelVolume& y, std::size_t n_steps,
                               const StepObserver& observer) {
  const DenoiseFn F = [&net](const VoxelVolume& x_t, double t) {
    const Tensor<float> out = net.forward(to_tensor<float>(x_t), {t}, Mode::Eval);
    return from_tensor(out, x_t);
  };
  return sample(y, RestorationSchedule(n_steps), F, observer);
}

}  // namespace

double mean_restored_psnr(Denoiser<float>& net, const std::vector<TrainingPair>& set,
                          std::size_t n_steps) {
  if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& pair : set) {
    const VoxelVolume restored = denormalize(restore_normalized(net, pair.input, n_steps, {}));
    const BodyMask mask = body_mask(pair.target_hu);
    sum += psnr(restored, pair.target_hu, &mask.mask);
  }
  return sum / static_cast<double>(set.size());
}

TrainingResult train(Denoiser<float>& net, const std::vector<TrainingPair>& train_set,
                     const std::vector<TrainingPair>& val_set, const TrainingConfig& config,
                     const EpochCallback& on_epoch) {
  config.validate();
  require(!train_set.empty(), "train: dataset is empty");
  for (const auto& p : train_set) {
    require(p.input.unit() == Unit::Normalized && p.target.unit() == Unit::Normalized,
            "train: pairs must be normalized");
  }
  net.config().check_input(train_set.front().input.dims());

  Rng rng(config.seed);
  AdamOptimizer adam(net.params().size(), config.beta1, config.beta2, config.adam_eps);
  std::vector<double> accum(net.params().size(), 0.0);
  std::size_t pending = 0;
  std::uint64_t step = 0;
  TrainingResult result;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto apply_update = [&](double lr) {
    const double scale = 1.0 / static_cast<double>(pending);
    for (double& g : accum) g *= scale;
    adam.step(net.params(), accum, lr);
    std::fill(accum.begin(), accum.end(), 0.0);
    pending = 0;
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at_epoch(epoch);
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch) {
      const std::size_t end = std::min(order.size(), begin + config.batch);
      const Tensor<float> y = stack_batch(train_set, order, begin, end, true);
      const Tensor<float> x = stack_batch(train_set, order, begin, end, false);
      std::vector<double> t(end - begin);
      for (double& v : t) v = sample_t(rng);
      const Tensor<float> x_t = degrade(x, y, t);
      LossResult<float> r = net.loss_and_gradients(x_t, t, x);
      ++step;
      if (!std::isfinite(r.loss)) {
        fail(ErrorKind::NonFinite, "train: non-finite loss at step " + std::to_string(step) +
                                       " (epoch " + std::to_string(epoch) + ")");
      }
      for (std::size_t i = 0; i < accum.size(); ++i) accum[i] += r.grads[i];
      net.buffers() = std::move(r.buffers);
      ++pending;
      if (pending == config.grad_accum_every) apply_update(lr);
      loss_sum += r.loss;
      ++batches;
    }
    if (epoch + 1 == config.epochs && pending > 0) apply_update(lr);

    EpochLog row;
    row.epoch = epoch + 1;
    row.lr = lr;
    row.train_mae = loss_sum / static_cast<double>(batches);
    const bool validate = (epoch + 1) % config.val_every_epochs == 0 || epoch + 1 == config.epochs;
    row.val_psnr_masked = std::numeric_limits<double>::quiet_NaN();
    row.val_psnr_masked_n1 = row.val_psnr_masked;
    if (validate) {
      row.val_psnr_masked = mean_restored_psnr(net, val_set, config.val_steps);
      row.val_psnr_masked_n1 = mean_restored_psnr(net, val_set, 1);
    }
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  result.optimizer_steps = adam.steps();
  return result;
}

VoxelVolume restore(Denoiser<float>& net, const VoxelVolume& input_hu, std::size_t n_steps,
                    const StepObserver& observer) {
  require(input_hu.unit() == Unit::HU, "restore: input must be in HU");
  net.config().check_input(input_hu.dims());
  const VoxelVolume y = normalize_hu(input_hu);
  return denormalize(restore_normalized(net, y, n_steps, observer));
}

}  // namespace sparsecbct
