#include "pgvae/losses.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace pgvae {

void LossWeights::validate() const {
  for (double v : {rec, perc, kl, seg, adv})
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
  if (rec + perc + kl + seg + adv <= 0.0) throw std::invalid_argument("at least one loss weight must be > 0");
}

void FTLParams::validate() const {
  if (!(alpha >= 0.0 && beta >= 0.0) || std::abs(alpha + beta - 1.0) > 1e-9)
    throw std::invalid_argument("FTL alpha + beta must equal 1");
  if (!(gamma > 0.0)) throw std::invalid_argument("FTL gamma must be > 0");
  if (!(smooth > 0.0)) throw std::invalid_argument("FTL smooth must be > 0");
}

namespace {

// log(1 + e^x) without overflow.
template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
T mse_loss(const Tensor<T>& recon, const Tensor<T>& target, Tensor<T>* grad) {
  require_same_shape(recon.shape(), target.shape(), "mse_loss");
  const std::size_t n = recon.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(recon[i]) - target[i];
    acc += d * d;
  }
  if (grad) {
    *grad = Tensor<T>(recon.shape());
    const T scale = T(2) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) (*grad)[i] = scale * (recon[i] - target[i]);
  }
  return static_cast<T>(acc / static_cast<double>(n));
}

template <typename T>
T perceptual_loss(const Tensor<T>& recon, const Tensor<T>& target, const FeatureExtractor<T>& extractor,
                  Tensor<T>* grad) {
  require_same_shape(recon.shape(), target.shape(), "perceptual_loss");
  const auto fr = extractor.features(recon);
  const auto ft = extractor.features(target);
  const double levels = static_cast<double>(fr.size());
  double total = 0.0;
  std::vector<Tensor<T>> dfeat;
  for (std::size_t l = 0; l < fr.size(); ++l) {
    Tensor<T> g;
    total += static_cast<double>(mse_loss(fr[l], ft[l], grad ? &g : nullptr));
    if (grad) {
      for (auto& v : g.values()) v /= static_cast<T>(levels);
      dfeat.push_back(std::move(g));
    }
  }
  if (grad) *grad = extractor.input_gradient(recon, dfeat);
  return static_cast<T>(total / levels);
}

template <typename T>
T kl_loss(const LatentStats<T>& latent, Tensor<T>* dmu, Tensor<T>* dlogvar) {
  require_same_shape(latent.mu.shape(), latent.logvar.shape(), "kl_loss");
  const Shape& s = latent.mu.shape();
  const double dz = static_cast<double>(s.sample_size());
  const double denom = dz * s.n;
  double acc = 0.0;
  for (std::size_t i = 0; i < latent.mu.size(); ++i) {
    const double mu = latent.mu[i];
    const double lv = latent.logvar[i];
    acc += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
  }
  if (dmu) {
    *dmu = Tensor<T>(s);
    for (std::size_t i = 0; i < dmu->size(); ++i) (*dmu)[i] = static_cast<T>(latent.mu[i] / denom);
  }
  if (dlogvar) {
    *dlogvar = Tensor<T>(s);
    for (std::size_t i = 0; i < dlogvar->size(); ++i)
      (*dlogvar)[i] = static_cast<T>(0.5 * (std::exp(static_cast<double>(latent.logvar[i])) - 1.0) / denom);
  }
  return static_cast<T>(acc / denom);
}

template <typename T>
T focal_tversky_loss(const Tensor<T>& probs, const Tensor<T>& target, const FTLParams& p, Tensor<T>* grad) {
  require_same_shape(probs.shape(), target.shape(), "focal_tversky_loss");
  const int batch = probs.shape().n;
  const std::size_t per = probs.shape().sample_size();
  if (grad) *grad = Tensor<T>(probs.shape());
  double total = 0.0;
  for (int n = 0; n < batch; ++n) {
    auto pr = probs.sample(n);
    auto tg = target.sample(n);
    double tp = 0.0, sum_p = 0.0, sum_t = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      tp += static_cast<double>(pr[i]) * tg[i];
      sum_p += pr[i];
      sum_t += tg[i];
    }
    const double fn = sum_t - tp;
    const double fp = sum_p - tp;
    const double num = tp + p.smooth;
    const double den = tp + p.alpha * fn + p.beta * fp + p.smooth;
    const double ti = num / den;
    const double gap = std::max(0.0, 1.0 - ti);
    total += std::pow(gap, p.gamma);
    if (grad) {
      auto g = grad->sample(n);
      // d loss / d TI; zero at the perfect-overlap limit where gamma < 1 diverges.
      const double dl_dti = gap > 0.0 ? -p.gamma * std::pow(gap, p.gamma - 1.0) / batch : 0.0;
      for (std::size_t i = 0; i < per; ++i) {
        const double t = tg[i];
        const double dden = t - p.alpha * t + p.beta * (1.0 - t);
        const double dti = (t * den - num * dden) / (den * den);
        g[i] = static_cast<T>(dl_dti * dti);
      }
    }
  }
  return static_cast<T>(total / batch);
}

template <typename T>
T adversarial_d_loss(const Tensor<T>& real_logits, const Tensor<T>& fake_logits, Tensor<T>* d_real,
                     Tensor<T>* d_fake) {
  require_same_shape(real_logits.shape(), fake_logits.shape(), "adversarial_d_loss");
  const std::size_t n = real_logits.size();
  double real = 0.0, fake = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    real += static_cast<double>(softplus(-real_logits[i]));
    fake += static_cast<double>(softplus(fake_logits[i]));
  }
  if (d_real) {
    *d_real = Tensor<T>(real_logits.shape());
    for (std::size_t i = 0; i < n; ++i) (*d_real)[i] = (sigmoid(real_logits[i]) - T(1)) / static_cast<T>(n);
  }
  if (d_fake) {
    *d_fake = Tensor<T>(fake_logits.shape());
    for (std::size_t i = 0; i < n; ++i) (*d_fake)[i] = sigmoid(fake_logits[i]) / static_cast<T>(n);
  }
  return static_cast<T>((real + fake) / static_cast<double>(n));
}

template <typename T>
T adversarial_g_loss(const Tensor<T>& fake_logits, Tensor<T>* grad) {
  const std::size_t n = fake_logits.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(softplus(-fake_logits[i]));
  if (grad) {
    *grad = Tensor<T>(fake_logits.shape());
    for (std::size_t i = 0; i < n; ++i) (*grad)[i] = (sigmoid(fake_logits[i]) - T(1)) / static_cast<T>(n);
  }
  return static_cast<T>(acc / static_cast<double>(n));
}

double total_generator_loss(const LossComponents& c, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {
      {"recon", c.recon}, {"perceptual", c.perceptual}, {"kl", c.kl}, {"seg", c.seg}, {"adv_g", c.adv_g}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite loss component: ") + name);
  return w.rec * c.recon + w.perc * c.perceptual + w.kl * c.kl + w.seg * c.seg + w.adv * c.adv_g;
}

void write_loss_row(std::ostream& os, const LossRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                static_cast<unsigned long long>(r.step), r.recon, r.perceptual, r.kl, r.seg, r.adv_g,
                r.adv_d, r.total_g);
  os << buf;
}

#define PGVAE_LOSS_INSTANTIATE(T)                                                                  \
  template T mse_loss(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                             \
  template T perceptual_loss(const Tensor<T>&, const Tensor<T>&, const FeatureExtractor<T>&,       \
                             Tensor<T>*);                                                          \
  template T kl_loss(const LatentStats<T>&, Tensor<T>*, Tensor<T>*);                               \
  template T focal_tversky_loss(const Tensor<T>&, const Tensor<T>&, const FTLParams&, Tensor<T>*); \
  template T adversarial_d_loss(const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*);       \
  template T adversarial_g_loss(const Tensor<T>&, Tensor<T>*);

PGVAE_LOSS_INSTANTIATE(float)
PGVAE_LOSS_INSTANTIATE(double)

}  // namespace pgvae
