#include "pgvae/training.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace pgvae {

namespace {

nn::Adam::Settings adam_settings(const OptimizerSettings& o, double lr) { return {lr, o.beta1, o.beta2, o.eps}; }

void require_finite(double v, const char* component, std::uint64_t step) {
  if (!std::isfinite(v))
    throw nn::NonFiniteError(std::string("non-finite ") + component + " loss at step " + std::to_string(step));
}

Tensor<float> draw_eps(std::mt19937_64& rng, int n, int dz) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<float> eps({n, dz, 1, 1});
  for (auto& v : eps.values()) v = static_cast<float>(normal(rng));
  return eps;
}

void scale_inplace(Tensor<float>& t, float s) {
  for (auto& v : t.values()) v *= s;
}

void add_scaled(Tensor<float>& acc, const Tensor<float>& x, float s) {
  require_same_shape(acc.shape(), x.shape(), "add_scaled");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s * x[i];
}

}  // namespace

TrainState::TrainState(const RunConfig& cfg)
    : config(cfg),
      generator(cfg.model),
      discriminator(cfg.model),
      data_rng(cfg.seeds.data),
      noise_rng(cfg.seeds.noise) {
  config.validate();
  gen_opt = nn::Adam(adam_settings(cfg.optimizer, cfg.optimizer.lr_g), generator.parameters());
  disc_opt = nn::Adam(adam_settings(cfg.optimizer, cfg.optimizer.lr_d), discriminator.parameters());
}

GeneratorPass generator_forward(const TrainState& state, std::span<const PatchPair> batch, const Tensor<float>& eps) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  GeneratorPass pass;
  pass.images = stack_images<float>(batch);
  pass.masks = stack_masks<float>(batch);
  state.generator.forward(pass.images, eps, pass.trace);
  return pass;
}

double discriminator_step(TrainState& state, const Tensor<float>& real, const Tensor<float>& fake) {
  auto& disc = state.discriminator;
  disc.zero_grad();
  DiscTrace<float> real_trace, fake_trace;
  const Tensor<float> real_logits = disc.forward(real, real_trace);
  const Tensor<float> fake_logits = disc.forward(fake, fake_trace);
  Tensor<float> d_real, d_fake;
  const double loss = adversarial_d_loss(real_logits, fake_logits, &d_real, &d_fake);
  require_finite(loss, "adv_d", state.step);
  disc.backward(real_trace, d_real);
  disc.backward(fake_trace, d_fake);
  auto params = disc.parameters();
  if (state.config.optimizer.grad_clip > 0.0) nn::clip_gradients(params, state.config.optimizer.grad_clip);
  state.disc_opt.step(params);
  return loss;
}

LossRecord generator_step(TrainState& state, const GeneratorPass& pass, const FeatureExtractor<float>& extractor) {
  const LossWeights& w = state.config.weights;
  const auto& out = pass.trace.out;
  LossRecord rec;
  rec.step = state.step;

  Tensor<float> g_mse, g_perc, g_seg, d_logits, dmu, dlogvar;
  rec.recon = mse_loss(out.recon, pass.images, &g_mse);
  rec.perceptual = perceptual_loss(out.recon, pass.images, extractor, &g_perc);
  rec.kl = kl_loss(out.latent, &dmu, &dlogvar);
  rec.seg = focal_tversky_loss(out.seg_prob, pass.masks, state.config.ftl, &g_seg);
  DiscTrace<float> trace;
  const Tensor<float> logits = state.discriminator.forward(out.recon, trace);
  rec.adv_g = adversarial_g_loss(logits, &d_logits);

  require_finite(rec.recon, "recon", rec.step);
  require_finite(rec.perceptual, "perceptual", rec.step);
  require_finite(rec.kl, "kl", rec.step);
  require_finite(rec.seg, "seg", rec.step);
  require_finite(rec.adv_g, "adv_g", rec.step);
  rec.total_g = total_generator_loss({rec.recon, rec.perceptual, rec.kl, rec.seg, rec.adv_g}, w);

  OutputGrads<float> grads;
  grads.recon = Tensor<float>(out.recon.shape());
  add_scaled(grads.recon, g_mse, static_cast<float>(w.rec));
  add_scaled(grads.recon, g_perc, static_cast<float>(w.perc));
  if (w.adv > 0.0) add_scaled(grads.recon, state.discriminator.input_gradient(trace, d_logits), static_cast<float>(w.adv));
  scale_inplace(g_seg, static_cast<float>(w.seg));
  grads.seg_prob = std::move(g_seg);
  scale_inplace(dmu, static_cast<float>(w.kl));
  scale_inplace(dlogvar, static_cast<float>(w.kl));
  grads.mu = std::move(dmu);
  grads.logvar = std::move(dlogvar);

  state.generator.zero_grad();
  state.generator.backward(pass.trace, grads);
  auto params = state.generator.parameters();
  if (state.config.optimizer.grad_clip > 0.0) nn::clip_gradients(params, state.config.optimizer.grad_clip);
  state.gen_opt.step(params);
  return rec;
}

LossRecord train_step(std::span<const PatchPair> batch, TrainState& state, const FeatureExtractor<float>& extractor) {
  const Tensor<float> eps =
      draw_eps(state.noise_rng, static_cast<int>(batch.size()), state.config.model.latent_dim);
  const GeneratorPass pass = generator_forward(state, batch, eps);
  const double adv_d = discriminator_step(state, pass.images, pass.trace.out.recon);
  LossRecord rec = generator_step(state, pass, extractor);
  rec.adv_d = adv_d;
  ++state.step;
  return rec;
}

// ---------------------------------------------------------------------------

namespace {
constexpr int kEvalChunk = 16;
}

metrics::MetricReport evaluate(const Predictor& predict, std::span<const PatchPair> patches, double ratio,
                               std::size_t keep_samples, std::vector<PanelSample>* samples) {
  if (patches.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  metrics::MetricReport report;
  report.ratio = ratio;
  if (samples) samples->clear();
  for (std::size_t start = 0; start < patches.size(); start += kEvalChunk) {
    const auto chunk = patches.subspan(start, std::min<std::size_t>(kEvalChunk, patches.size() - start));
    const auto [recon, seg] = predict(stack_images<float>(chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const PatchPair& truth = chunk[i];
      const auto r = recon.sample(static_cast<int>(i));
      const auto s = seg.sample(static_cast<int>(i));
      std::vector<std::uint8_t> pred_mask(s.size());
      for (std::size_t k = 0; k < s.size(); ++k) pred_mask[k] = s[k] >= kMaskThreshold ? 1 : 0;
      report.rows.push_back(metrics::score_patch(truth.image, r, pred_mask, truth.mask, truth.size));
      if (samples && samples->size() < keep_samples) {
        PatchPair pred;
        pred.size = truth.size;
        pred.source = truth.source;
        pred.provenance = Provenance::Synthetic;
        pred.image.assign(r.begin(), r.end());
        pred.mask = std::move(pred_mask);
        samples->push_back({truth, std::move(pred)});
      }
    }
  }
  metrics::aggregate(report);
  return report;
}

metrics::MetricReport evaluate(const UNetVAE<float>& model, std::span<const PatchPair> patches, double ratio,
                               std::size_t keep_samples, std::vector<PanelSample>* samples) {
  const Predictor predict = [&model](const Tensor<float>& images) {
    auto out = model.forward(images);
    return std::make_pair(std::move(out.recon), std::move(out.seg_prob));
  };
  return evaluate(predict, patches, ratio, keep_samples, samples);
}

metrics::MetricReport evaluate(const TrainState& state, std::span<const PatchPair> patches) {
  return evaluate(state.generator, patches, state.config.ratio);
}

std::uint64_t steps_per_epoch(std::size_t pool_size, int batch_size) {
  if (pool_size == 0) throw std::invalid_argument("dataset is empty");
  return (pool_size + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
}

TrainResult train(TrainState& state, std::span<const PatchPair> dataset, const FeatureExtractor<float>& extractor,
                  const TrainOptions& opts) {
  const RunConfig& cfg = state.config;
  const std::uint64_t spe = steps_per_epoch(dataset.size(), cfg.batch_size);
  const std::uint64_t total = spe * static_cast<std::uint64_t>(cfg.epochs);
  const std::uint64_t stop = opts.stop_at_step > 0 ? std::min(opts.stop_at_step, total) : total;
  const int batch = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), dataset.size()));

  TrainResult result;
  std::ofstream loss_csv;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir / "checkpoints");
    const auto path = opts.out_dir / "losses.csv";
    if (state.step == 0 || !std::filesystem::exists(path)) {
      loss_csv.open(path, std::ios::trunc);
      loss_csv << "# mode=single-threaded deterministic\n" << kLossCsvHeader << '\n';
    } else {
      loss_csv.open(path, std::ios::app);
    }
  }

  const SyntheticGenerator live = [&](const PatchPair& src, std::uint64_t seed) {
    ++result.synthetic_calls;
    return generate_synthetic(state.generator, src, cfg.synth_tau, seed);
  };
  const SyntheticGenerator from_bank = [&](const PatchPair&, std::uint64_t seed) {
    return state.synthetic_bank[seed % state.synthetic_bank.size()];
  };

  auto run_eval = [&](int epoch, bool final) {
    if (opts.eval_patches.empty()) return;
    std::vector<PanelSample>* keep = final ? &result.samples : nullptr;
    auto report = evaluate(state.generator, opts.eval_patches, cfg.ratio, final ? opts.keep_samples : 0, keep);
    if (!opts.out_dir.empty()) {
      const auto name = final ? std::string("metrics.csv") : "metrics-epoch-" + std::to_string(epoch) + ".csv";
      std::ofstream os(opts.out_dir / name);
      metrics::write_metric_csv(os, report);
    }
    result.evaluations.emplace_back(epoch, std::move(report));
  };

  while (state.step < stop) {
    const int epoch = static_cast<int>(state.step / spe);
    const double ratio = epoch < cfg.warmup_epochs ? 0.0 : cfg.ratio;
    const MixPlan plan = plan_batch(batch, ratio);
    if (plan.n_synth > 0 && cfg.synthetic_mode == SyntheticMode::FrozenBank && state.synthetic_bank.empty()) {
      for (const auto& src : dataset) state.synthetic_bank.push_back(live(src, state.data_rng()));
    }
    const std::uint64_t mix_seed = state.data_rng();
    const auto& gen = cfg.synthetic_mode == SyntheticMode::Live ? live : from_bank;
    // The whole batch is generated before the optimizer touches the weights.
    const std::vector<PatchPair> mixed = mix_batch(dataset, gen, plan, mix_seed);
    const LossRecord rec = train_step(mixed, state, extractor);
    result.log.push_back(rec);
    if (loss_csv.is_open()) {
      write_loss_row(loss_csv, rec);
      loss_csv.flush();
    }
    if (!opts.out_dir.empty() && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0)
      save_checkpoint(state, extractor, opts.out_dir / "checkpoints" / ("step-" + std::to_string(state.step) + ".ckpt"));
    if (cfg.eval_every > 0 && state.step % spe == 0 && state.step < total) {
      const int done = static_cast<int>(state.step / spe);
      if (done % cfg.eval_every == 0) run_eval(done, false);
    }
  }
  if (state.step == total) run_eval(cfg.epochs, true);
  // A stopped run always leaves a checkpoint to resume from.
  if (!opts.out_dir.empty() && state.step == stop)
    save_checkpoint(state, extractor, opts.out_dir / "checkpoints" / ("step-" + std::to_string(state.step) + ".ckpt"));
  return result;
}

}  // namespace pgvae
