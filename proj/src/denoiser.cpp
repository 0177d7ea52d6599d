#include "sparsecbct/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "sparsecbct/errors.hpp"
#include "sparsecbct/version.hpp"

namespace sparsecbct {

// ---- Config ---------------------------------------------------------------

void DenoiserConfig::validate() const {
  require(levels >= 2, "denoiser.levels: must be >= 2");
  require(base_channels >= 4, "denoiser.base_channels: must be >= 4");
  for (std::size_t l : attention_levels) {
    require(l < levels, "denoiser.attention_levels: level " + std::to_string(l) + " out of range");
  }
  if (with_time_embedding) {
    require(time_embed_dim >= 2 && time_embed_dim % 2 == 0,
            "denoiser.time_embed_dim: must be even and >= 2");
  }
}

void DenoiserConfig::check_input(Dims3 dims) const {
  const std::size_t f = std::size_t{1} << (levels - 1);
  if (dims.nx % f != 0 || dims.ny % f != 0 || dims.nz % f != 0) {
    fail(ErrorKind::Validation, "denoiser: input dims must be divisible by " + std::to_string(f));
  }
  for (std::size_t l : attention_levels) {
    const std::size_t s = std::size_t{1} << l;
    if (dims.nx / s < 2 || dims.ny / s < 2 || dims.nz / s < 2) {
      fail(ErrorKind::Validation,
           "denoiser: attention level " + std::to_string(l) + " has fewer than 2 voxels per axis");
    }
  }
}

DenoiserConfig desk_denoiser_config() { return {}; }

DenoiserConfig full_denoiser_config() {
  DenoiserConfig c;
  c.levels = 5;
  c.base_channels = 32;
  c.attention_levels = {3, 4};
  c.time_embed_dim = 1024;
  return c;
}

json to_json(const DenoiserConfig& c) {
  return {{"levels", c.levels},
          {"base_channels", c.base_channels},
          {"attention_levels", std::vector<std::size_t>(c.attention_levels.begin(), c.attention_levels.end())},
          {"time_embed_dim", c.time_embed_dim},
          {"with_time_embedding", c.with_time_embedding},
          {"norm", c.norm == nn::NormKind::Batch ? "batch" : "group"}};
}

DenoiserConfig denoiser_config_from_json(const json& j) {
  require(j.is_object(), "denoiser: config must be an object");
  DenoiserConfig c;
  try {
    if (j.contains("levels")) c.levels = j.at("levels").get<std::size_t>();
    if (j.contains("base_channels")) c.base_channels = j.at("base_channels").get<std::size_t>();
    if (j.contains("attention_levels")) {
      const auto v = j.at("attention_levels").get<std::vector<std::size_t>>();
      c.attention_levels = std::set<std::size_t>(v.begin(), v.end());
    }
    if (j.contains("time_embed_dim")) c.time_embed_dim = j.at("time_embed_dim").get<std::size_t>();
    if (j.contains("with_time_embedding")) c.with_time_embedding = j.at("with_time_embedding").get<bool>();
    if (j.contains("norm")) {
      const auto n = j.at("norm").get<std::string>();
      require(n == "batch" || n == "group", "denoiser.norm: expected 'batch' or 'group'");
      c.norm = n == "batch" ? nn::NormKind::Batch : nn::NormKind::Group;
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, std::string("denoiser config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t parameter_count(const DenoiserConfig& c) {
  c.validate();
  const std::size_t E = c.time_embed_dim;
  auto conv = [](std::size_t ci, std::size_t co, std::size_t k) { return ci * co * k * k * k + co; };
  auto norm = [](std::size_t ch) { return 2 * ch; };
  auto linear = [](std::size_t i, std::size_t o) { return i * o + o; };
  auto res = [&](std::size_t ci, std::size_t co) {
    return norm(ci) + (c.with_time_embedding ? linear(E, ci) : 0) + conv(ci, co, 3) +
           (ci != co ? conv(ci, co, 1) : 0);
  };
  auto attn = [&](std::size_t ch) { return norm(ch) + 4 * conv(ch, ch, 1); };
  const std::size_t L = c.levels;
  std::size_t total = c.with_time_embedding ? 2 * linear(E, E) : 0;
  total += conv(1, c.channels(0), 3);
  for (std::size_t l = 0; l < L; ++l) {
    const bool a = c.attention_levels.count(l) != 0;
    total += 2 * res(c.channels(l), c.channels(l)) + (a ? attn(c.channels(l)) : 0);
    if (l + 1 < L) total += conv(c.channels(l), c.channels(l + 1), 3);
  }
  total += res(c.channels(L - 1), c.channels(L - 1));
  if (c.attention_levels.count(L - 1)) total += attn(c.channels(L - 1));
  for (std::size_t l = 0; l + 1 < L; ++l) {
    const bool a = c.attention_levels.count(l) != 0;
    total += conv(c.channels(l + 1), c.channels(l), 4) + res(2 * c.channels(l), c.channels(l)) +
             (a ? attn(c.channels(l)) : 0);
  }
  total += norm(c.channels(0)) + conv(c.channels(0), 1, 3);
  return total;
}

// ---- Network --------------------------------------------------------------

template <typename T>
Denoiser<T>::Denoiser(const DenoiserConfig& config) : config_(config) {
  config_.validate();
  const std::size_t L = config_.levels;
  const std::size_t E = config_.time_embed_dim;
  const bool with_time = config_.with_time_embedding;
  auto make_res = [&](nn::ResBlock<T>& rb, std::size_t ci, std::size_t co, const std::string& name) {
    rb.cin = ci;
    rb.cout = co;
    rb.with_time = with_time;
    rb.declare(layout_, buffer_layout_, name, E, config_.norm);
  };
  auto make_attn = [&](nn::Attention<T>& a, std::size_t ch, const std::string& name) {
    a.channels = ch;
    a.declare(layout_, buffer_layout_, name);
  };

  if (with_time) time_mlp_.declare(layout_, "time_mlp", E);
  in_conv_.cin = 1;
  in_conv_.cout = config_.channels(0);
  in_conv_.declare(layout_, "in_conv");

  enc_.resize(L);
  down_.resize(L - 1);
  for (std::size_t l = 0; l < L; ++l) {
    const std::string p = "enc." + std::to_string(l);
    const std::size_t ch = config_.channels(l);
    make_res(enc_[l].rb1, ch, ch, p + ".res1");
    make_res(enc_[l].rb2, ch, ch, p + ".res2");
    enc_[l].attend = config_.attention_levels.count(l) != 0;
    if (enc_[l].attend) make_attn(enc_[l].attn, ch, p + ".attn");
    if (l + 1 < L) {
      down_[l].cin = ch;
      down_[l].cout = config_.channels(l + 1);
      down_[l].stride = 2;
      down_[l].declare(layout_, p + ".down");
    }
  }

  make_res(mid_, config_.channels(L - 1), config_.channels(L - 1), "mid.res");
  mid_attend_ = config_.attention_levels.count(L - 1) != 0;
  if (mid_attend_) make_attn(mid_attn_, config_.channels(L - 1), "mid.attn");

  dec_.resize(L);
  for (std::size_t r = 0; r + 1 < L; ++r) {
    const std::size_t l = L - 2 - r;
    const std::string p = "dec." + std::to_string(l);
    const std::size_t ch = config_.channels(l);
    dec_[l].up.cin = config_.channels(l + 1);
    dec_[l].up.cout = ch;
    dec_[l].up.declare(layout_, p + ".up");
    make_res(dec_[l].rb, 2 * ch, ch, p + ".res");
    dec_[l].attend = config_.attention_levels.count(l) != 0;
    if (dec_[l].attend) make_attn(dec_[l].attn, ch, p + ".attn");
  }

  head_norm_.kind = config_.norm;
  head_norm_.channels = config_.channels(0);
  head_norm_.declare(layout_, buffer_layout_, "head.norm");
  head_conv_.cin = config_.channels(0);
  head_conv_.cout = 1;
  head_conv_.zero_init = true;
  head_conv_.declare(layout_, "head.conv");

  params_.assign(layout_.total(), T(0));
  buffers_.assign(buffer_layout_.total(), T(0));
  init_params(0);
}

template <typename T>
void Denoiser<T>::init_params(std::uint64_t seed) {
  Rng rng(seed);
  T* P = params_.data();
  T* B = buffers_.data();
  if (config_.with_time_embedding) time_mlp_.init(P, rng);
  in_conv_.init(P, rng);
  for (std::size_t l = 0; l < config_.levels; ++l) {
    enc_[l].rb1.init(P, B, rng);
    enc_[l].rb2.init(P, B, rng);
    if (enc_[l].attend) enc_[l].attn.init(P, B, rng);
    if (l + 1 < config_.levels) down_[l].init(P, rng);
  }
  mid_.init(P, B, rng);
  if (mid_attend_) mid_attn_.init(P, B, rng);
  for (std::size_t r = 0; r + 1 < config_.levels; ++r) {
    const std::size_t l = config_.levels - 2 - r;
    dec_[l].up.init(P, rng);
    dec_[l].rb.init(P, B, rng);
    if (dec_[l].attend) dec_[l].attn.init(P, B, rng);
  }
  head_norm_.init(P, B);
  head_conv_.init(P, rng);
}

template <typename T>
Tensor<T> Denoiser<T>::run(const Tensor<T>& x, const std::vector<double>& t, bool train, bool record,
                           T* B) {
  require(x.c == 1, "denoiser: input must have one channel");
  require(t.size() == x.n, "denoiser: need one time value per batch item");
  for (double v : t) require(v >= 0.0 && v <= 1.0, "denoiser: t must lie in [0, 1]");
  config_.check_input(x.dims);
  const T* P = params_.data();
  const std::size_t L = config_.levels;

  Tensor<T> g;
  const Tensor<T>* gp = nullptr;
  if (config_.with_time_embedding) {
    g = time_mlp_.forward(P, t, record);
    gp = &g;
  }

  Tensor<T> h = in_conv_.forward(P, x, record);
  std::vector<Tensor<T>> skips(L);
  skip_channels_.assign(L, 0);
  for (std::size_t l = 0; l < L; ++l) {
    h = enc_[l].rb1.forward(P, B, h, gp, train, record);
    h = enc_[l].rb2.forward(P, B, h, gp, train, record);
    if (enc_[l].attend) h = enc_[l].attn.forward(P, B, h, train, record);
    if (l + 1 < L) {
      skips[l] = h;
      h = down_[l].forward(P, h, record);
    }
  }
  h = mid_.forward(P, B, h, gp, train, record);
  if (mid_attend_) h = mid_attn_.forward(P, B, h, train, record);
  for (std::size_t r = 0; r + 1 < L; ++r) {
    const std::size_t l = L - 2 - r;
    h = dec_[l].up.forward(P, h, record);
    skip_channels_[l] = h.c;
    h = nn::concat_channels(h, skips[l]);
    skips[l] = Tensor<T>();
    h = dec_[l].rb.forward(P, B, h, gp, train, record);
    if (dec_[l].attend) h = dec_[l].attn.forward(P, B, h, train, record);
  }
  h = head_act_.forward(head_norm_.forward(P, B, h, train, record), record);
  Tensor<T> out = head_conv_.forward(P, h, record);
  nn::add_inplace(out, x);
  return out;
}

template <typename T>
Tensor<T> Denoiser<T>::forward(const Tensor<T>& x, const std::vector<double>& t, Mode mode) {
  return run(x, t, mode == Mode::Train, false, buffers_.data());
}

template <typename T>
Tensor<T> Denoiser<T>::forward_record(const Tensor<T>& x, const std::vector<double>& t, T* B) {
  return run(x, t, true, true, B);
}

template <typename T>
AlignedVector<T> Denoiser<T>::backward(const Tensor<T>& dout) {
  const T* P = params_.data();
  AlignedVector<T> grads(params_.size(), T(0));
  T* G = grads.data();
  const std::size_t L = config_.levels;

  Tensor<T> dg;
  Tensor<T>* dgp = nullptr;
  if (config_.with_time_embedding) {
    dg = Tensor<T>(dout.n, config_.time_embed_dim, Dims3{1, 1, 1});
    dgp = &dg;
  }

  Tensor<T> d = head_conv_.backward(P, G, dout);
  d = head_norm_.backward(P, G, head_act_.backward(d));
  std::vector<Tensor<T>> dskips(L);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    if (dec_[l].attend) d = dec_[l].attn.backward(P, G, d);
    d = dec_[l].rb.backward(P, G, d, dgp);
    Tensor<T> dup;
    nn::split_channels(d, skip_channels_[l], dup, dskips[l]);
    d = dec_[l].up.backward(P, G, dup);
  }
  if (mid_attend_) d = mid_attn_.backward(P, G, d);
  d = mid_.backward(P, G, d, dgp);
  for (std::size_t r = 0; r < L; ++r) {
    const std::size_t l = L - 1 - r;
    if (l + 1 < L) {
      d = down_[l].backward(P, G, d);
      nn::add_inplace(d, dskips[l]);
      dskips[l] = Tensor<T>();
    }
    if (enc_[l].attend) d = enc_[l].attn.backward(P, G, d);
    d = enc_[l].rb2.backward(P, G, d, dgp);
    d = enc_[l].rb1.backward(P, G, d, dgp);
  }
  in_conv_.backward(P, G, d);
  if (config_.with_time_embedding) time_mlp_.backward(P, G, dg);
  return grads;
}

template <typename T>
LossResult<T> Denoiser<T>::loss_and_gradients(const Tensor<T>& x_t, const std::vector<double>& t,
                                              const Tensor<T>& target) {
  require(x_t.n > 0, "loss: empty batch");
  require(x_t.same_shape(target), "loss: input and target shapes differ");
  LossResult<T> result;
  result.buffers = buffers_;
  const Tensor<T> y = forward_record(x_t, t, result.buffers.data());
  Tensor<T> dout(y.n, y.c, y.dims);
  const double inv = 1.0 / static_cast<double>(y.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double diff = static_cast<double>(y.data[i]) - static_cast<double>(target.data[i]);
    if (!std::isfinite(diff)) {
      fail(ErrorKind::NonFinite, "loss: non-finite network output at element " + std::to_string(i));
    }
    sum += std::abs(diff);
    dout.data[i] = static_cast<T>(diff > 0.0 ? inv : (diff < 0.0 ? -inv : 0.0));
  }
  result.loss = sum * inv;
  result.grads = backward(dout);
  return result;
}

template class Denoiser<float>;
template class Denoiser<double>;

// ---- Tensors <-> volumes --------------------------------------------------

template <typename T>
Tensor<T> to_tensor(const VoxelVolume& vol) {
  Tensor<T> t(1, 1, vol.dims());
  const auto v = vol.values();
  std::copy(v.begin(), v.end(), t.data.begin());
  return t;
}

template Tensor<float> to_tensor<float>(const VoxelVolume&);
template Tensor<double> to_tensor<double>(const VoxelVolume&);

VoxelVolume from_tensor(const Tensor<float>& t, const VoxelVolume& like, std::size_t sample) {
  require(t.c == 1 && t.dims == like.dims() && sample < t.n, "from_tensor: shape mismatch");
  std::vector<float> values(t.sample(sample), t.sample(sample) + t.spatial());
  return like.with_values(std::move(values), Unit::Normalized);
}

// ---- Checkpoints ----------------------------------------------------------

namespace {

json describe(const ParameterLayout& layout) {
  json arr = json::array();
  for (const auto& e : layout.entries()) arr.push_back({{"name", e.name}, {"shape", e.shape}});
  return arr;
}

void check_layout(const json& j, const ParameterLayout& layout, const std::string& what) {
  if (!j.is_array() || j.size() != layout.entries().size()) {
    fail(ErrorKind::MalformedHeader, "checkpoint: " + what + " list does not match the config");
  }
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = layout.entries()[i];
    if (j[i].value("name", "") != e.name ||
        j[i].value("shape", std::vector<std::size_t>{}) != e.shape) {
      fail(ErrorKind::MalformedHeader, "checkpoint: unexpected " + what + " entry " + std::to_string(i));
    }
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Denoiser<float>& net,
                     const CheckpointMeta& meta) {
  const auto files = file_pair(path);
  json h;
  h["kind"] = kCheckpointKind;
  h["toolkit_version"] = kToolkitVersion;
  h["config"] = to_json(net.config());
  h["seed"] = meta.seed;
  h["step"] = meta.step;
  h["epoch"] = meta.epoch;
  h["extra"] = meta.extra;
  h["dtype"] = "f32le";
  h["parameters"] = describe(net.layout());
  h["buffers"] = describe(net.buffer_layout());
  h["payload_count"] = net.params().size() + net.buffers().size();
  std::vector<float> payload(net.params().begin(), net.params().end());
  payload.insert(payload.end(), net.buffers().begin(), net.buffers().end());
  write_json(files.header, h);
  write_f32le(files.payload, payload);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto files = file_pair(path);
  if (!std::filesystem::exists(files.header)) {
    fail(ErrorKind::Io, "checkpoint not found: " + files.header.string());
  }
  json h;
  try {
    h = read_json(files.header);
  } catch (const Error& e) {
    fail(ErrorKind::MalformedHeader, std::string("checkpoint header: ") + e.what());
  }
  if (h.value("kind", "") != kCheckpointKind || h.value("dtype", "") != "f32le" ||
      !h.contains("config")) {
    fail(ErrorKind::MalformedHeader, "not a checkpoint header: " + files.header.string());
  }
  LoadedCheckpoint out;
  DenoiserConfig config;
  try {
    config = denoiser_config_from_json(h.at("config"));
    out.meta.seed = h.at("seed").get<std::uint64_t>();
    out.meta.step = h.at("step").get<std::uint64_t>();
    out.meta.epoch = h.at("epoch").get<std::size_t>();
    out.meta.extra = h.value("extra", json::object());
  } catch (const json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("checkpoint header: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::MalformedHeader, std::string("checkpoint header: ") + e.what());
  }
  out.net = std::make_unique<Denoiser<float>>(config);
  check_layout(h.value("parameters", json()), out.net->layout(), "parameter");
  check_layout(h.value("buffers", json()), out.net->buffer_layout(), "buffer");
  const std::size_t np = out.net->params().size();
  const std::size_t nb = out.net->buffers().size();
  const auto payload = read_f32le(files.payload, np + nb);
  std::copy(payload.begin(), payload.begin() + static_cast<long>(np), out.net->params().begin());
  std::copy(payload.begin() + static_cast<long>(np), payload.end(), out.net->buffers().begin());
  for (float v : payload) {
    if (!std::isfinite(v)) fail(ErrorKind::NonFinite, "checkpoint contains non-finite values");
  }
  return out;
}

}  // namespace sparsecbct
