#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pgvae/nn.hpp"
#include "pgvae/patch.hpp"
#include "pgvae/tensor.hpp"

namespace pgvae {

struct ModelConfig {
  int patch_size = 64;
  std::vector<int> channels{32, 64, 128};
  int latent_dim = 128;
  std::vector<int> disc_channels{32, 64, 128};
  std::uint64_t seed = 1;

  int levels() const { return static_cast<int>(channels.size()); }
  int bottleneck_size() const { return patch_size >> levels(); }
  /// Throws std::invalid_argument on a config the networks cannot be built from.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

/// Per-sample latent statistics, shaped (N, d_z, 1, 1).
template <typename T>
struct LatentStats {
  Tensor<T> mu;
  Tensor<T> logvar;
};

template <typename T>
struct ModelOutput {
  Tensor<T> recon;     // (N,1,ps,ps), tanh range
  Tensor<T> seg_prob;  // (N,1,ps,ps), sigmoid range
  LatentStats<T> latent;
};

/// Pre-downsample encoder features, shallowest first.
template <typename T>
using SkipStack = std::vector<Tensor<T>>;

template <typename T>
struct Encoded {
  LatentStats<T> latent;
  SkipStack<T> skips;
};

/// Activations kept by a training forward pass for the matching backward.
template <typename T>
struct ForwardTrace {
  struct EncoderLevel {
    Tensor<T> input, pre, pre_down;
  };
  struct DecoderLevel {
    Tensor<T> cat, pre;
  };
  std::vector<EncoderLevel> enc;
  SkipStack<T> skips;
  Tensor<T> flat, logvar_raw, eps, z, fc_pre;
  std::vector<DecoderLevel> dec;  // indexed by encoder level
  Tensor<T> trunk;
  ModelOutput<T> out;
};

/// Gradients of a scalar loss with respect to the model outputs.
template <typename T>
struct OutputGrads {
  Tensor<T> recon;
  Tensor<T> seg_prob;
  Tensor<T> mu;      // direct terms (e.g. KL); may be empty
  Tensor<T> logvar;  // direct terms; may be empty
};

/// z = mu + exp(logvar / 2) * eps, elementwise.
template <typename T>
Tensor<T> reparameterize(const LatentStats<T>& latent, const Tensor<T>& eps);

/// UNet-style VAE: strided-conv encoder with skips, linear mu/logvar heads,
/// mirrored nearest-upsampling decoder, Tanh reconstruction and Sigmoid
/// segmentation heads on a shared trunk.
template <typename T>
class UNetVAE {
 public:
  explicit UNetVAE(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  Encoded<T> encode(const Tensor<T>& patch) const;
  /// skips == nullptr selects the zero-skip sentinel (pure generation).
  std::pair<Tensor<T>, Tensor<T>> decode(const Tensor<T>& z, const SkipStack<T>* skips) const;

  /// eps == nullptr is eval mode (z = mu).
  ModelOutput<T> forward(const Tensor<T>& patch, const Tensor<T>* eps = nullptr) const;
  ModelOutput<T> forward(const Tensor<T>& patch, const Tensor<T>& eps, ForwardTrace<T>& trace) const;

  /// Accumulates parameter gradients for a trace produced by forward().
  void backward(const ForwardTrace<T>& trace, const OutputGrads<T>& grads);

  void zero_grad();
  std::vector<nn::ParamRef<T>> parameters();
  std::vector<nn::ConstParamRef<T>> parameters() const;

  /// Direct access to the logvar head (tests force pre-clamp values).
  nn::Linear<T>& logvar_head() { return fc_logvar_; }

 private:
  Encoded<T> encode_impl(const Tensor<T>& x, ForwardTrace<T>* trace) const;
  std::pair<Tensor<T>, Tensor<T>> decode_impl(const Tensor<T>& z, const SkipStack<T>* skips,
                                              ForwardTrace<T>* trace) const;
  void check_input(const Tensor<T>& x) const;

  ModelConfig cfg_;
  std::vector<nn::Conv2d<T>> enc_conv_, enc_down_, dec_conv_;
  nn::Linear<T> fc_mu_, fc_logvar_, fc_dec_;
  nn::Conv2d<T> head_recon_, head_seg_;
};

template <typename T>
struct DiscTrace {
  std::vector<Tensor<T>> inputs, pre;
};

/// PatchGAN critic: strided convs then a 3x3 conv to one raw-logit channel.
template <typename T>
class PatchDiscriminator {
 public:
  explicit PatchDiscriminator(const ModelConfig& cfg);

  Tensor<T> forward(const Tensor<T>& image) const;
  Tensor<T> forward(const Tensor<T>& image, DiscTrace<T>& trace) const;
  /// Accumulates parameter gradients and returns dL/dimage.
  Tensor<T> backward(const DiscTrace<T>& trace, const Tensor<T>& dlogits);
  /// dL/dimage only; weights and gradients untouched.
  Tensor<T> input_gradient(const DiscTrace<T>& trace, const Tensor<T>& dlogits) const;

  void zero_grad();
  std::vector<nn::ParamRef<T>> parameters();
  std::vector<nn::ConstParamRef<T>> parameters() const;

 private:
  Tensor<T> run(const Tensor<T>& x, DiscTrace<T>* trace) const;

  int patch_size_;
  std::vector<nn::Conv2d<T>> convs_;  // last entry is the logit conv
};

/// Frozen feature extractor used by the perceptual loss. Implementations
/// never update their weights.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Tensor<T>> features(const Tensor<T>& image) const = 0;
  /// Gradient of sum_l <dfeatures[l], F_l(image)> with respect to image.
  virtual Tensor<T> input_gradient(const Tensor<T>& image,
                                   const std::vector<Tensor<T>>& dfeatures) const = 0;
  virtual std::vector<nn::ConstParamRef<T>> parameters() const = 0;
};

/// Three-level conv pyramid with weights drawn once from a fixed seed.
template <typename T>
class ToyPerceptualExtractor final : public FeatureExtractor<T> {
 public:
  static constexpr std::uint64_t kSeed = 0x9e3779b97f4a7c15ULL;

  ToyPerceptualExtractor();

  std::vector<Tensor<T>> features(const Tensor<T>& image) const override;
  Tensor<T> input_gradient(const Tensor<T>& image,
                           const std::vector<Tensor<T>>& dfeatures) const override;
  std::vector<nn::ConstParamRef<T>> parameters() const override;

 private:
  std::vector<nn::Conv2d<T>> convs_;
};

inline constexpr float kMaskThreshold = 0.5f;

/// Draws a synthetic pair from the latent neighbourhood of `source`:
/// z = mu + tau * sigma * eps with eps seeded by `seed`, decoded with the
/// source's own skips. The mask is the segmentation head at kMaskThreshold.
PatchPair generate_synthetic(const UNetVAE<float>& model, const PatchPair& source, double tau,
                             std::uint64_t seed);

/// Concatenated raw bytes of every parameter, for frozen-weight checks.
template <typename T>
std::vector<unsigned char> parameter_bytes(const std::vector<nn::ConstParamRef<T>>& params);

}  // namespace pgvae
