#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "sparsecbct/errors.hpp"
#include "sparsecbct/indi.hpp"

using namespace sparsecbct;

namespace {

double max_rel(const VoxelVolume& a, const VoxelVolume& b) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(double(a.values()[i]) - b.values()[i]));
    ref = std::max(ref, std::abs(double(b.values()[i])));
  }
  return diff / ref;
}

}  // namespace

TEST_SUITE("indi") {

TEST_CASE("degradation endpoints are exact and the midpoint is linear") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = testing::random_volume({6, 5, 4}, seed, -2.0, 2.0, Unit::Normalized);
    const auto y = testing::random_volume({6, 5, 4}, seed + 100, -2.0, 2.0, Unit::Normalized);
    CHECK(degrade(x, y, 0.0) == x);
    CHECK(degrade(x, y, 1.0) == y);
  }
  const auto zero = VoxelVolume::centered({3, 3, 3}, {1, 1, 1}, Unit::Normalized, 0.0f);
  const auto two = zero.filled(2.0f, Unit::Normalized);
  const auto mid = degrade(zero, two, 0.5);
  for (float v : mid.values()) CHECK(v == 1.0f);
  CHECK_THROWS_AS(degrade(zero, two, 1.5), Error);
}

TEST_CASE("schedule times") {
  const auto t = RestorationSchedule(4).times();
  CHECK(t == std::vector<double>{1.0, 0.75, 0.5, 0.25, 0.0});
  CHECK_THROWS_AS(RestorationSchedule(0), Error);
}

TEST_CASE("oracle denoiser recovers x and every intermediate is on the degradation path") {
  const auto x = testing::random_volume({8, 8, 4}, 1, -1.0, 1.0, Unit::Normalized);
  const auto y = testing::random_volume({8, 8, 4}, 2, -1.0, 1.0, Unit::Normalized);
  for (std::size_t N : {1u, 2u, 5u, 10u, 30u}) {
    std::size_t calls = 0;
    double worst_path = 0.0;
    const DenoiseFn oracle = [&](const VoxelVolume&, double) {
      ++calls;
      return x;
    };
    const auto out = sample(y, RestorationSchedule(N), oracle, [&](std::size_t, double t, const VoxelVolume& v) {
      worst_path = std::max(worst_path, max_rel(v, degrade(x, y, t)));
    });
    CHECK(calls == N);
    CHECK(max_rel(out, x) <= 1e-6);
    CHECK(worst_path <= 1e-6);
  }
}

TEST_CASE("one step equals direct regression and the identity denoiser is a no-op") {
  const auto y = testing::random_volume({5, 5, 5}, 3, -1.0, 1.0, Unit::Normalized);
  const DenoiseFn shift = [](const VoxelVolume& v, double t) {
    auto out = v;
    for (float& a : out.values()) a = a * 0.5f + static_cast<float>(t);
    return out;
  };
  CHECK(sample(y, RestorationSchedule(1), shift) == shift(y, 1.0));
  const DenoiseFn identity = [](const VoxelVolume& v, double) { return v; };
  for (std::size_t N : {1u, 3u, 7u}) CHECK(max_rel(sample(y, RestorationSchedule(N), identity), y) <= 1e-6);
  const auto c = y.filled(0.25f, Unit::Normalized);
  const auto kept = sample(c, RestorationSchedule(6), identity);
  for (float v : kept.values()) CHECK(v == 0.25f);
}

TEST_CASE("non-finite denoiser output names the step") {
  const auto y = testing::random_volume({4, 4, 4}, 4, -1.0, 1.0, Unit::Normalized);
  const DenoiseFn bad = [](const VoxelVolume& v, double t) {
    auto out = v;
    if (t < 0.6) out.values()[0] = std::nanf("");
    return out;
  };
  try {
    sample(y, RestorationSchedule(4), bad);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFinite);
    CHECK(std::string(e.what()).find("step 3") != std::string::npos);
  }
}

TEST_CASE("t sampling support, determinism and uniformity") {
  Rng rng(99);
  std::vector<std::size_t> counts(kTimeGrid, 0);
  double lo = 2.0, hi = -1.0;
  const std::size_t draws = 10000;
  for (std::size_t i = 0; i < draws; ++i) {
    const double t = sample_t(rng);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
    const long bin = std::lround(t * kTimeGrid) - 1;
    REQUIRE(std::abs(t * kTimeGrid - double(bin + 1)) < 1e-9);
    ++counts[std::size_t(bin)];
  }
  CHECK(lo >= 0.01);
  CHECK(hi == 1.0);
  const double expected = double(draws) / kTimeGrid;
  double chi2 = 0.0;
  for (std::size_t c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Upper 1% point of chi-square with 99 degrees of freedom.
  CHECK(chi2 < 134.642);
  Rng a(5), b(5);
  for (int i = 0; i < 50; ++i) CHECK(sample_t(a) == sample_t(b));
}

TEST_CASE("learning rate schedule") {
  TrainingConfig c;
  CHECK(c.lr_at_epoch(0) == 1e-4);
  CHECK(c.lr_at_epoch(9) == 1e-4);
  CHECK(c.lr_at_epoch(10) == doctest::Approx(0.95e-4));
  CHECK(c.lr_at_epoch(20) == doctest::Approx(9.025e-5).epsilon(1e-12));
}

TEST_CASE("training config json") {
  TrainingConfig c;
  c.epochs = 3;
  c.lr = 2e-4;
  const auto back = training_config_from_json(to_json(c));
  CHECK(back.epochs == 3);
  CHECK(back.lr == 2e-4);
  CHECK_THROWS_AS(training_config_from_json(json{{"batch", 0}}), Error);
  CHECK_THROWS_AS(training_config_from_json(json{{"epochs", -1}}), Error);
  CHECK_THROWS_AS(training_config_from_json(json{{"t_sampling", "continuous"}}), Error);
}

TEST_CASE("adam first step moves each parameter by lr against the gradient sign") {
  AdamOptimizer adam(3, 0.9, 0.999, 1e-8);
  std::vector<float> p{1.0f, 1.0f, 1.0f};
  adam.step(p, {2.0, -0.5, 0.0}, 0.1);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(p[2] == 1.0f);
  CHECK(adam.steps() == 1);
}

TEST_CASE("validation runs on the configured cadence and after the last epoch") {
  DenoiserConfig c;
  c.levels = 2;
  c.base_channels = 4;
  c.attention_levels = {1};
  c.time_embed_dim = 8;
  std::vector<TrainingPair> pairs;
  for (std::uint64_t s = 0; s < 2; ++s) {
    auto target = testing::random_volume({8, 8, 8}, s, -1000.0, 500.0);
    pairs.push_back({normalize_hu(target), normalize_hu(target), target});
  }
  TrainingConfig tc;
  tc.epochs = 5;
  tc.batch = 2;
  tc.val_every_epochs = 2;
  Denoiser<float> net(c);
  const auto r = train(net, pairs, pairs, tc);
  REQUIRE(r.log.size() == 5);
  CHECK(std::isnan(r.log[0].val_psnr_masked));
  CHECK_FALSE(std::isnan(r.log[1].val_psnr_masked));
  CHECK(std::isnan(r.log[2].val_psnr_masked_n1));
  CHECK_FALSE(std::isnan(r.log[3].val_psnr_masked_n1));
  CHECK_FALSE(std::isnan(r.log[4].val_psnr_masked));
  tc.val_every_epochs = 0;
  CHECK_THROWS_AS(tc.validate(), Error);
}

TEST_CASE("short training runs are deterministic and log every epoch") {
  DenoiserConfig c;
  c.levels = 2;
  c.base_channels = 4;
  c.attention_levels = {1};
  c.time_embed_dim = 8;
  std::vector<TrainingPair> pairs;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto target = testing::random_volume({8, 8, 8}, s, -1000.0, 500.0);
    auto input = target;
    Rng rng(s + 50);
    for (float& v : input.values()) v += static_cast<float>(rng.uniform(-100.0, 100.0));
    pairs.push_back({normalize_hu(input), normalize_hu(target), target});
  }
  TrainingConfig tc;
  tc.epochs = 2;
  tc.batch = 2;
  tc.lr = 1e-3;
  auto run = [&] {
    Denoiser<float> net(c);
    net.init_params(tc.seed);
    const auto r = train(net, pairs, {}, tc);
    return std::make_pair(net.params(), r);
  };
  const auto [p1, r1] = run();
  const auto [p2, r2] = run();
  std::size_t differ = 0, nonfinite = 0;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    differ += p1[i] != p2[i];
    nonfinite += !std::isfinite(p1[i]);
  }
  CHECK(differ == 0);
  CHECK(nonfinite == 0);
  REQUIRE(r1.log.size() == 2);
  CHECK(r1.log[0].train_mae == r2.log[0].train_mae);
  CHECK(std::isnan(r1.log[0].val_psnr_masked));
  // 3 batches per epoch, updates every 2 batches, leftover applied at the end.
  CHECK(r1.optimizer_steps == 3);
  const auto csv = training_log_csv(r1.log);
  CHECK(csv.rfind("epoch,lr,train_mae,val_psnr_masked,val_psnr_masked_n1\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("restore works in HU and rejects wrong units") {
  Denoiser<float> net(desk_denoiser_config());
  const auto y = testing::random_volume({16, 16, 8}, 6, -1000.0, 1000.0);
  const auto out = restore(net, y, 2);
  CHECK(out.unit() == Unit::HU);
  // A fresh network is the identity, so restoration returns the input.
  CHECK(max_rel(out, y) <= 1e-5);
  CHECK_THROWS_AS(restore(net, normalize_hu(y), 2), Error);
}

}
