#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "pgvae/config.hpp"
#include "pgvae/injection.hpp"
#include "pgvae/losses.hpp"
#include "pgvae/metrics.hpp"
#include "pgvae/models.hpp"
#include "pgvae/nn.hpp"

namespace pgvae {

/// Everything a run mutates. Owned by exactly one training loop.
struct TrainState {
  explicit TrainState(const RunConfig& cfg);

  RunConfig config;
  UNetVAE<float> generator;
  PatchDiscriminator<float> discriminator;
  nn::Adam gen_opt;
  nn::Adam disc_opt;
  std::uint64_t step = 0;
  std::mt19937_64 data_rng;
  std::mt19937_64 noise_rng;
  std::vector<PatchPair> synthetic_bank;  // FrozenBank mode only
};

/// Activations of one stochastic generator forward over a batch.
struct GeneratorPass {
  Tensor<float> images;
  Tensor<float> masks;
  ForwardTrace<float> trace;
};

GeneratorPass generator_forward(const TrainState& state, std::span<const PatchPair> batch, const Tensor<float>& eps);

/// One critic update on real images vs detached reconstructions. Only the
/// discriminator and its optimizer change. Returns the critic loss.
double discriminator_step(TrainState& state, const Tensor<float>& real, const Tensor<float>& fake);

/// One generator update on the weighted objective for `pass`. Only the
/// UNet-VAE and its optimizer change. adv_d of the result is left at 0.
LossRecord generator_step(TrainState& state, const GeneratorPass& pass, const FeatureExtractor<float>& extractor);

/// Critic step then generator step on one batch; advances state.step.
/// Throws nn::NonFiniteError naming the offending loss component.
LossRecord train_step(std::span<const PatchPair> batch, TrainState& state, const FeatureExtractor<float>& extractor);

/// Eval-mode model outputs for a batch of images: (recon, seg_prob).
using Predictor = std::function<std::pair<Tensor<float>, Tensor<float>>(const Tensor<float>& images)>;

/// A scored patch kept for qualitative panels.
struct PanelSample {
  PatchPair input;       // ground-truth image and mask
  PatchPair prediction;  // reconstruction and thresholded mask that were scored
};

/// Scores every patch (segmentation thresholded at kMaskThreshold) and keeps
/// the first `keep_samples` predictions. Throws on an empty set.
metrics::MetricReport evaluate(const Predictor& predict, std::span<const PatchPair> patches, double ratio = 0.0,
                               std::size_t keep_samples = 0, std::vector<PanelSample>* samples = nullptr);
metrics::MetricReport evaluate(const UNetVAE<float>& model, std::span<const PatchPair> patches, double ratio = 0.0,
                               std::size_t keep_samples = 0, std::vector<PanelSample>* samples = nullptr);
metrics::MetricReport evaluate(const TrainState& state, std::span<const PatchPair> patches);

struct TrainOptions {
  std::filesystem::path out_dir;   // empty: no files written
  std::uint64_t stop_at_step = 0;  // 0: run every configured epoch
  std::span<const PatchPair> eval_patches;
  std::size_t keep_samples = 0;
};

struct TrainResult {
  std::vector<LossRecord> log;
  std::vector<std::pair<int, metrics::MetricReport>> evaluations;  // (epoch, report)
  std::vector<PanelSample> samples;                                // from the final evaluation
  std::uint64_t synthetic_calls = 0;
};

std::uint64_t steps_per_epoch(std::size_t pool_size, int batch_size);

/// Continues `state` until epochs * steps_per_epoch steps (or stop_at_step).
/// Writes losses.csv, checkpoints/step-*.ckpt and metrics.csv under out_dir.
TrainResult train(TrainState& state, std::span<const PatchPair> dataset, const FeatureExtractor<float>& extractor,
                  const TrainOptions& opts = {});

// Checkpoint file, little-endian:
//   "PGCK" | u32 version | str config_json | u64 step | str data_rng | str noise_rng
//   | u64 gen_adam_t | u64 disc_adam_t | u32 count | count x (str name | 4 x u32 dims | f32 payload)
//   | u32 bank_size | bank_size x (u32 ps | u8 provenance | 4 x i32 source | f32 image | u8 mask)
// where str is u32 length + bytes. Tensor names are prefixed gen/, gen.m/,
// gen.v/, disc/, disc.m/, disc.v/ and perceptual/.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const FeatureExtractor<float>& extractor,
                     const std::filesystem::path& path);
/// Restores a state saved with a compatible config. Throws FormatError if the
/// model config differs or the stored perceptual weights differ from `extractor`.
TrainState load_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                           const FeatureExtractor<float>& extractor);

}  // namespace pgvae
