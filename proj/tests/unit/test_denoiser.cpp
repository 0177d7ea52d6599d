#include <algorithm>
#include <cmath>
#include <functional>

#include "doctest.h"
#include "../common/gradcheck.hpp"
#include "helpers.hpp"
#include "sparsecbct/denoiser.hpp"
#include "sparsecbct/errors.hpp"
#include "sparsecbct/nn.hpp"
#include "sparsecbct/rng.hpp"

using namespace sparsecbct;

using namespace sparsecbct::gradcheck;

TEST_SUITE("denoiser") {

TEST_CASE("time embedding") {
  const auto zero = nn::sinusoidal_time_embedding(0.0, 16);
  for (std::size_t i = 0; i < 16; i += 2) {
    CHECK(zero[i] == 0.0);
    CHECK(zero[i + 1] == 1.0);
  }
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    for (double v : nn::sinusoidal_time_embedding(rng.uniform(), 64)) CHECK(std::abs(v) <= 1.0);
  }
  const auto half = nn::sinusoidal_time_embedding(0.5, 4);
  CHECK(half[0] == doctest::Approx(std::sin(500.0)).epsilon(1e-12));
  CHECK(half[1] == doctest::Approx(std::cos(500.0)).epsilon(1e-12));
  CHECK(half[2] == doctest::Approx(std::sin(500.0 / 100.0)).epsilon(1e-12));
}

TEST_CASE("group count") {
  CHECK(nn::group_count(8) == 8);
  CHECK(nn::group_count(32) == 8);
  CHECK(nn::group_count(12) == 6);
  CHECK(nn::group_count(7) == 7);
  CHECK(nn::group_count(11) == 1);
}

TEST_CASE("conv3d gradients") {
  CHECK(conv3d_error(1, 10) <= kTol);
  CHECK(conv3d_error(2, 10) <= kTol);
}


TEST_CASE("transposed conv gradients and output shape") {
  CHECK(conv_transpose_error(11) <= kTol);
  Rng rng(11);
  ParameterLayout layout;
  nn::ConvTranspose3d<double> up;
  up.cin = 3;
  up.cout = 2;
  up.declare(layout, "u");
  auto P = perturbed(layout.total(), rng);
  const TD y = up.forward(P.data(), random_tensor(1, 3, {3, 3, 2}, rng), false);
  CHECK(y.dims == Dims3{6, 6, 4});
  CHECK(y.c == 2);
}


TEST_CASE("batch norm and group norm gradients") {
  CHECK(norm_error(nn::NormKind::Batch, 12) <= kTol);
  CHECK(norm_error(nn::NormKind::Group, 12) <= kTol);
}


TEST_CASE("batch norm running statistics") {
  ParameterLayout layout, buffers;
  nn::Norm<double> norm;
  norm.channels = 1;
  norm.declare(layout, buffers, "n");
  std::vector<double> P(layout.total()), B(buffers.total());
  norm.init(P.data(), B.data());
  TD x(2, 1, {2, 1, 1});
  x.data = {1.0, 2.0, 3.0, 6.0};
  norm.forward(P.data(), B.data(), x, true, false);
  // mean 3, unbiased variance 14 / 3
  CHECK(B[norm.mean_buf] == doctest::Approx(0.1 * 3.0));
  CHECK(B[norm.var_buf] == doctest::Approx(0.9 * 1.0 + 0.1 * 14.0 / 3.0));
  const TD y = norm.forward(P.data(), B.data(), x, false, false);
  CHECK(y.data[0] == doctest::Approx((1.0 - 0.3) / std::sqrt(B[norm.var_buf] + nn::kNormEps)));
}

TEST_CASE("silu and linear gradients") {
  CHECK(silu_error(13) <= kTol);
  CHECK(linear_error(13) <= kTol);
}


TEST_CASE("attention gradients") { CHECK(attention_error(14) <= kTol); }


TEST_CASE("attention on a constant map equals its value path") {
  Rng rng(15);
  ParameterLayout layout, buffers;
  nn::Attention<double> attn;
  attn.channels = 4;
  attn.declare(layout, buffers, "a");
  auto P = perturbed(layout.total(), rng, 0.5);
  std::vector<double> B(buffers.total());
  TD x(1, 4, {3, 3, 2});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t s = 0; s < x.spatial(); ++s) x.channel(0, c)[s] = 0.2 * double(c) - 0.3;
  const TD y = attn.forward(P.data(), B.data(), x, false, false);
  // Oracle: identical keys make the softmax uniform, so the mix of V over
  // positions is V itself; y = x + Wo (Wv n + bv) + bo with n = GroupNorm(x).
  const TD n = attn.norm.forward(P.data(), B.data(), x, false, false);
  const TD v = attn.v.forward(P.data(), n, false);
  const TD o = attn.o.forward(P.data(), v, false);
  double worst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y.data[i] - x.data[i] - o.data[i]));
  CHECK(worst <= 1e-5);
}

TEST_CASE("residual block gradients including the time input") {
  CHECK(resblock_error(3, 16) <= kTol);
  CHECK(resblock_error(5, 16) <= kTol);
}


TEST_CASE("time mlp gradients") { CHECK(time_mlp_error(17) <= kTol); }


TEST_CASE("whole-network mae gradients on the micro config") { CHECK(network_mae_error(5) <= kTol); }


TEST_CASE("loss is invariant under batch permutation") {
  Denoiser<double> net(micro_config());
  Rng rng(6);
  for (double& p : net.params()) p += rng.uniform(-0.3, 0.3);
  const TD x = random_tensor(2, 1, {8, 8, 8}, rng);
  const TD y = random_tensor(2, 1, {8, 8, 8}, rng);
  auto swap = [](const TD& a) {
    TD b = a;
    std::copy(a.sample(0), a.sample(0) + a.sample_size(), b.sample(1));
    std::copy(a.sample(1), a.sample(1) + a.sample_size(), b.sample(0));
    return b;
  };
  const double l1 = net.loss_and_gradients(x, {0.3, 0.8}, y).loss;
  const double l2 = net.loss_and_gradients(swap(x), {0.8, 0.3}, swap(y)).loss;
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
}

TEST_CASE("perfect prediction gives zero loss and zero head gradients") {
  Denoiser<double> net(micro_config());
  Rng rng(7);
  const TD x = random_tensor(2, 1, {8, 8, 8}, rng);
  // A fresh network is the identity, so target = input is a perfect fit.
  const auto r = net.loss_and_gradients(x, {0.5, 0.5}, x);
  CHECK(r.loss == 0.0);
  for (const auto& e : net.layout().entries()) {
    if (e.name.rfind("head.", 0) != 0) continue;
    for (std::size_t i = 0; i < e.size; ++i) CHECK(r.grads[e.offset + i] == 0.0);
  }
}

TEST_CASE("parameter count") {
  const auto desk = desk_denoiser_config();
  Denoiser<float> net(desk);
  std::size_t enumerated = 0;
  for (const auto& e : net.layout().entries()) {
    std::size_t n = 1;
    for (std::size_t s : e.shape) n *= s;
    CHECK(n == e.size);
    enumerated += n;
  }
  CHECK(enumerated == net.params().size());
  CHECK(parameter_count(desk) == enumerated);
  CHECK(enumerated == 206865);
  auto baseline = desk;
  baseline.with_time_embedding = false;
  CHECK(parameter_count(baseline) == Denoiser<float>(baseline).params().size());
  const auto full = full_denoiser_config();
  CHECK(full.levels == 5);
  CHECK(full.channels(4) == 512);
  CHECK(full.time_embed_dim == 1024);
}

TEST_CASE("initialization, shapes and determinism") {
  auto c = desk_denoiser_config();
  Denoiser<float> a(c), b(c);
  a.init_params(3);
  b.init_params(3);
  CHECK(a.params() == b.params());
  b.init_params(4);
  CHECK_FALSE(a.params() == b.params());

  Rng rng(8);
  Tensor<float> x(1, 1, {16, 16, 8});
  for (float& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  const auto y1 = a.forward(x, {0.4});
  const auto y2 = a.forward(x, {0.4});
  CHECK(y1.same_shape(x));
  CHECK(y1.data == y2.data);
  // Zero-initialized residual tails: a fresh network reproduces its input.
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff += std::pow(double(y1.data[i]) - x.data[i], 2);
    ref += std::pow(double(x.data[i]), 2);
  }
  CHECK(std::sqrt(diff) <= 1e-6 * std::sqrt(ref));
  CHECK_THROWS_AS(a.forward(Tensor<float>(1, 1, {10, 16, 8}), {0.4}), Error);
}

TEST_CASE("baseline network ignores t") {
  auto c = desk_denoiser_config();
  c.with_time_embedding = false;
  Denoiser<float> net(c);
  Rng rng(9);
  for (float& p : net.params()) p += static_cast<float>(rng.uniform(-0.1, 0.1));
  Tensor<float> x(1, 1, {16, 16, 8});
  for (float& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  const auto a = net.forward(x, {0.1});
  CHECK(net.forward(x, {0.5}).data == a.data);
  CHECK(net.forward(x, {1.0}).data == a.data);
}

TEST_CASE("config json round trip and validation") {
  const auto c = desk_denoiser_config();
  CHECK(denoiser_config_from_json(to_json(c)) == c);
  auto bad = c;
  bad.levels = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.attention_levels = {7};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.time_embed_dim = 7;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto dir = testing::scratch_dir("ckpt");
  Denoiser<float> net(desk_denoiser_config());
  net.init_params(21);
  Rng rng(2);
  for (float& b : net.buffers()) b = static_cast<float>(rng.uniform(0.5, 1.5));
  CheckpointMeta meta;
  meta.seed = 21;
  meta.step = 5;
  meta.epoch = 2;
  save_checkpoint(dir / "m.ckpt", net, meta);
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.net->params() == net.params());
  CHECK(loaded.net->buffers() == net.buffers());
  CHECK(loaded.net->config() == net.config());
  CHECK(loaded.meta.step == 5);
  save_checkpoint(dir / "n.ckpt", *loaded.net, loaded.meta);
  CHECK(sha256_file(dir / "m.raw") == sha256_file(dir / "n.raw"));
  CHECK(sha256_file(dir / "m.json") == sha256_file(dir / "n.json"));

  std::filesystem::resize_file(dir / "m.raw", 40);
  try {
    load_checkpoint(dir / "m.ckpt");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::PayloadLength);
  }
}

}
