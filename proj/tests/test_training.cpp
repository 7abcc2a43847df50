#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "pgvae/binary_io.hpp"
#include "pgvae/training.hpp"
#include "test_support.hpp"

using namespace pgvae;
using testing::Gen;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.model = testing::tiny_model();
  c.batch_size = 4;
  c.epochs = 2;
  c.warmup_epochs = 0;
  return c;
}

std::vector<PatchPair> small_pool(int n, std::uint64_t seed = 5) {
  Gen g(seed);
  std::vector<PatchPair> pool;
  for (int i = 0; i < n; ++i) pool.push_back(g.patch(16, i));
  return pool;
}

template <typename Model>
std::vector<unsigned char> bytes_of(const Model& m) {
  return parameter_bytes(m.parameters());
}

bool records_equal(const LossRecord& a, const LossRecord& b, double tol) {
  const auto close = [&](double x, double y) { return std::abs(x - y) <= tol * std::max(1.0, std::abs(y)); };
  return a.step == b.step && close(a.recon, b.recon) && close(a.perceptual, b.perceptual) && close(a.kl, b.kl) &&
         close(a.seg, b.seg) && close(a.adv_g, b.adv_g) && close(a.adv_d, b.adv_d) && close(a.total_g, b.total_g);
}

const ToyPerceptualExtractor<float>& extractor() {
  static const ToyPerceptualExtractor<float> ext;
  return ext;
}

}  // namespace

TEST_CASE("steps per epoch rounds up") {
  CHECK(steps_per_epoch(8, 4) == 2u);
  CHECK(steps_per_epoch(9, 4) == 3u);
  CHECK(steps_per_epoch(3, 8) == 1u);
}

TEST_CASE("critic and generator steps touch only their own networks") {
  TrainState state(small_config());
  const auto pool = small_pool(4);
  Gen g(1);
  const auto eps = g.tensor<float>({4, 8, 1, 1});
  const auto pass = generator_forward(state, pool, eps);

  const auto gen_before = bytes_of(state.generator);
  const auto disc_before = bytes_of(state.discriminator);
  discriminator_step(state, pass.images, pass.trace.out.recon);
  CHECK(bytes_of(state.generator) == gen_before);
  CHECK(bytes_of(state.discriminator) != disc_before);

  const auto disc_mid = bytes_of(state.discriminator);
  generator_step(state, pass, extractor());
  CHECK(bytes_of(state.discriminator) == disc_mid);
  CHECK(bytes_of(state.generator) != gen_before);
}

TEST_CASE("same seeds give the same loss records") {
  const auto pool = small_pool(4);
  TrainState a(small_config()), b(small_config());
  const auto ra = train_step(pool, a, extractor());
  const auto rb = train_step(pool, b, extractor());
  CHECK(records_equal(ra, rb, 0.0));
  CHECK(ra.step == 0u);
  CHECK(a.step == 1u);
  CHECK(bytes_of(a.generator) == bytes_of(b.generator));
}

TEST_CASE("a short run logs one finite row per step") {
  testing::TempDir dir("train");
  RunConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.eval_every = 1;
  TrainState state(cfg);
  const auto pool = small_pool(8);
  TrainOptions opts;
  opts.out_dir = dir.path();
  opts.eval_patches = pool;
  const auto res = train(state, pool, extractor(), opts);
  REQUIRE(res.log.size() == 2u);
  for (std::size_t i = 0; i < res.log.size(); ++i) {
    const auto& r = res.log[i];
    CHECK(r.step == i);
    for (double v : {r.recon, r.perceptual, r.kl, r.seg, r.adv_g, r.adv_d, r.total_g}) CHECK(std::isfinite(v));
    CHECK(r.total_g == doctest::Approx(total_generator_loss({r.recon, r.perceptual, r.kl, r.seg, r.adv_g}, cfg.weights)));
  }
  std::ifstream is(dir / "losses.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4u);
  CHECK(lines[0] == "# mode=single-threaded deterministic");
  CHECK(lines[1] == kLossCsvHeader);
  CHECK(std::filesystem::exists(dir / "metrics.csv"));
  CHECK(std::filesystem::exists(dir / "checkpoints" / "step-2.ckpt"));
  REQUIRE(res.evaluations.size() == 1u);
  CHECK(res.evaluations[0].second.patch_count() == 8u);
}

TEST_CASE("ratio zero never calls the generator, a positive ratio does") {
  const auto pool = small_pool(8);
  RunConfig cfg = small_config();
  TrainState zero(cfg);
  CHECK(train(zero, pool, extractor()).synthetic_calls == 0u);
  cfg.ratio = 0.5;
  TrainState half(cfg);
  // 4 steps, 2 synthetic members each.
  CHECK(train(half, pool, extractor()).synthetic_calls == 8u);
  cfg.warmup_epochs = 1;
  TrainState warm(cfg);
  CHECK(train(warm, pool, extractor()).synthetic_calls == 4u);
}

TEST_CASE("frozen bank mode generates once per pool patch") {
  const auto pool = small_pool(8);
  RunConfig cfg = small_config();
  cfg.ratio = 1.0;
  cfg.synthetic_mode = SyntheticMode::FrozenBank;
  TrainState state(cfg);
  const auto res = train(state, pool, extractor());
  CHECK(res.synthetic_calls == 8u);
  CHECK(state.synthetic_bank.size() == 8u);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  const auto pool = small_pool(8);
  RunConfig cfg = small_config();
  cfg.epochs = 3;
  cfg.ratio = 0.5;
  cfg.synthetic_mode = SyntheticMode::FrozenBank;
  TrainState full(cfg);
  const auto reference = train(full, pool, extractor());
  REQUIRE(reference.log.size() == 6u);

  testing::TempDir dir("resume");
  TrainState first(cfg);
  TrainOptions opts;
  opts.out_dir = dir.path();
  opts.stop_at_step = 3;
  train(first, pool, extractor(), opts);
  auto resumed = load_checkpoint(dir / "checkpoints" / "step-3.ckpt", cfg, extractor());
  CHECK(resumed.step == 3u);
  CHECK(resumed.synthetic_bank == first.synthetic_bank);
  const auto rest = train(resumed, pool, extractor());
  REQUIRE(rest.log.size() == 3u);
  for (std::size_t i = 0; i < 3; ++i) CHECK(records_equal(rest.log[i], reference.log[i + 3], 1e-6));
  CHECK(bytes_of(resumed.generator) == bytes_of(full.generator));
}

TEST_CASE("checkpoints round-trip bit-exactly and refuse mismatches") {
  testing::TempDir dir("ckpt");
  const auto pool = small_pool(4);
  TrainState state(small_config());
  train_step(pool, state, extractor());
  save_checkpoint(state, extractor(), dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt", state.config, extractor());
  CHECK(bytes_of(back.generator) == bytes_of(state.generator));
  CHECK(bytes_of(back.discriminator) == bytes_of(state.discriminator));
  CHECK(back.gen_opt.steps() == state.gen_opt.steps());
  CHECK(back.gen_opt.first_moments()[0].storage() == state.gen_opt.first_moments()[0].storage());
  CHECK(back.data_rng == state.data_rng);
  CHECK(back.noise_rng == state.noise_rng);

  RunConfig other = state.config;
  other.model.latent_dim = 4;
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", other, extractor()), FormatError);

  std::ifstream is(dir / "a.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt", state.config, extractor()), FormatError);
  std::ofstream(dir / "long.ckpt", std::ios::binary) << bytes << 'x';
  CHECK_THROWS_AS(load_checkpoint(dir / "long.ckpt", state.config, extractor()), FormatError);
}

TEST_CASE("non-finite losses abort the step with the component named") {
  TrainState state(small_config());
  state.generator.parameters()[0].value->values()[0] = NAN;
  const auto pool = small_pool(4);
  const auto disc_before = bytes_of(state.discriminator);
  CHECK_THROWS_AS(train_step(pool, state, extractor()), nn::NonFiniteError);
  CHECK(state.step == 0u);
  CHECK(bytes_of(state.discriminator) == disc_before);
}

TEST_CASE("evaluation of an identity predictor") {
  const auto pool = small_pool(5);
  const Predictor identity = [](const Tensor<float>& x) {
    Tensor<float> seg(x.shape());
    return std::pair{x, seg};
  };
  const auto r = evaluate(identity, pool);
  CHECK(r.patch_count() == 5u);
  CHECK(r.mean.mse == 0.0);
  CHECK(r.mean.ssim == doctest::Approx(1.0));
  CHECK(r.psnr_excluded == 5u);

  // Confident everywhere: the mask becomes all ones.
  std::vector<PatchPair> full = pool;
  for (auto& p : full) std::fill(p.mask.begin(), p.mask.end(), 1);
  const Predictor sure = [](const Tensor<float>& x) { return std::pair{x, Tensor<float>(x.shape(), 0.9f)}; };
  std::vector<PanelSample> samples;
  const auto s = evaluate(sure, full, 0.25, 2, &samples);
  CHECK(s.mean.dice == 1.0);
  CHECK(s.ratio == 0.25);
  CHECK(samples.size() == 2u);
  CHECK(samples[0].input.image == full[0].image);
  CHECK_THROWS(evaluate(identity, std::span<const PatchPair>{}));
}

TEST_CASE("report means equal the means of the per-patch rows") {
  const UNetVAE<float> model(testing::tiny_model());
  const auto pool = small_pool(20);
  const auto r = evaluate(model, pool);
  double dice = 0, mse = 0;
  for (const auto& row : r.rows) {
    dice += row.dice;
    mse += row.mse;
  }
  CHECK(r.mean.dice == doctest::Approx(dice / 20));
  CHECK(r.mean.mse == doctest::Approx(mse / 20));
  // Chunked batching does not change per-patch scores.
  const auto single = evaluate(model, std::span<const PatchPair>(pool).subspan(17, 1));
  CHECK(single.rows[0].mse == doctest::Approx(r.rows[17].mse).epsilon(1e-6));
}
