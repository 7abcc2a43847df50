#pragma once

// Training objectives. Every loss reduces by mean and can optionally write
// its gradient with respect to the network output it scores.

#include <cstdint>
#include <ostream>
#include <string>

#include "pgvae/models.hpp"
#include "pgvae/tensor.hpp"

namespace pgvae {

struct LossWeights {
  double rec = 1.0;
  double perc = 0.1;
  double kl = 0.001;
  double seg = 1.0;
  double adv = 0.01;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Focal Tversky parameters. alpha weighs false negatives, beta false positives.
struct FTLParams {
  double alpha = 0.7;
  double beta = 0.3;
  double gamma = 0.75;
  double smooth = 1.0;

  void validate() const;
  bool operator==(const FTLParams&) const = default;
};

struct LossComponents {
  double recon = 0, perceptual = 0, kl = 0, seg = 0, adv_g = 0;
};

struct LossRecord {
  std::uint64_t step = 0;
  double recon = 0, perceptual = 0, kl = 0, seg = 0, adv_g = 0, adv_d = 0, total_g = 0;
};

template <typename T>
T mse_loss(const Tensor<T>& recon, const Tensor<T>& target, Tensor<T>* grad = nullptr);

/// Mean over levels of the per-level feature MSE.
template <typename T>
T perceptual_loss(const Tensor<T>& recon, const Tensor<T>& target, const FeatureExtractor<T>& extractor,
                  Tensor<T>* grad = nullptr);

/// Mean over the batch of (1/d_z) * sum 0.5 (mu^2 + e^logvar - 1 - logvar).
template <typename T>
T kl_loss(const LatentStats<T>& latent, Tensor<T>* dmu = nullptr, Tensor<T>* dlogvar = nullptr);

/// (1 - TI)^gamma per sample, averaged over the batch.
template <typename T>
T focal_tversky_loss(const Tensor<T>& probs, const Tensor<T>& target, const FTLParams& p,
                     Tensor<T>* grad = nullptr);

/// BCE-with-logits: real cells against 1 plus fake cells against 0, each term a mean.
template <typename T>
T adversarial_d_loss(const Tensor<T>& real_logits, const Tensor<T>& fake_logits, Tensor<T>* d_real = nullptr,
                     Tensor<T>* d_fake = nullptr);

/// Non-saturating generator loss: BCE-with-logits of fake cells against 1.
template <typename T>
T adversarial_g_loss(const Tensor<T>& fake_logits, Tensor<T>* grad = nullptr);

/// Throws std::domain_error naming the first non-finite component.
double total_generator_loss(const LossComponents& c, const LossWeights& w);

/// Fixed column order: step,recon,perceptual,kl,seg,adv_g,adv_d,total_g
inline constexpr const char* kLossCsvHeader = "step,recon,perceptual,kl,seg,adv_g,adv_d,total_g";
void write_loss_row(std::ostream& os, const LossRecord& r);

}  // namespace pgvae
