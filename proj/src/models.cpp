#include "pgvae/models.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

namespace pgvae {

void ModelConfig::validate() const {
  if (channels.empty() || disc_channels.empty())
    throw std::invalid_argument("model needs at least one encoder and discriminator level");
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("encoder channel count must be >= 1");
  for (int c : disc_channels)
    if (c < 1) throw std::invalid_argument("discriminator channel count must be >= 1");
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (patch_size < 2 || patch_size % (1 << levels()) != 0)
    throw std::invalid_argument("patch_size must be divisible by 2^levels");
  if (patch_size % (1 << disc_channels.size()) != 0)
    throw std::invalid_argument("patch_size must be divisible by 2^discriminator levels");
}

template <typename T>
Tensor<T> reparameterize(const LatentStats<T>& latent, const Tensor<T>& eps) {
  require_same_shape(latent.mu.shape(), latent.logvar.shape(), "reparameterize");
  require_same_shape(latent.mu.shape(), eps.shape(), "reparameterize");
  Tensor<T> z(latent.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = latent.mu[i] + std::exp(latent.logvar[i] / T(2)) * eps[i];
  return z;
}

// ---------------------------------------------------------------------------
// UNetVAE

template <typename T>
UNetVAE<T>::UNetVAE(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int levels = cfg_.levels();
  const auto& ch = cfg_.channels;
  const int s = cfg_.bottleneck_size();
  const int flat = ch.back() * s * s;

  for (int i = 0; i < levels; ++i) {
    const int in = i == 0 ? 1 : ch[i - 1];
    enc_conv_.emplace_back("enc." + std::to_string(i) + ".conv", in, ch[i], 3, 1, 1);
    enc_down_.emplace_back("enc." + std::to_string(i) + ".down", ch[i], ch[i], 3, 2, 1);
  }
  fc_mu_ = nn::Linear<T>("latent.mu", flat, cfg_.latent_dim);
  fc_logvar_ = nn::Linear<T>("latent.logvar", flat, cfg_.latent_dim);
  fc_dec_ = nn::Linear<T>("dec.fc", cfg_.latent_dim, flat);
  for (int i = 0; i < levels; ++i) {
    const int up = i == levels - 1 ? ch.back() : ch[i + 1];
    dec_conv_.emplace_back("dec." + std::to_string(i) + ".conv", up + ch[i], ch[i], 3, 1, 1);
  }
  head_recon_ = nn::Conv2d<T>("head.recon", ch[0], 1, 1, 1, 0);
  head_seg_ = nn::Conv2d<T>("head.seg", ch[0], 1, 1, 1, 0);

  std::mt19937_64 rng(cfg_.seed);
  for (auto& c : enc_conv_) c.init(rng);
  for (auto& c : enc_down_) c.init(rng);
  fc_mu_.init(rng);
  fc_logvar_.init(rng);
  fc_dec_.init(rng);
  for (auto& c : dec_conv_) c.init(rng);
  head_recon_.init(rng);
  head_seg_.init(rng);
}

template <typename T>
void UNetVAE<T>::check_input(const Tensor<T>& x) const {
  const Shape& s = x.shape();
  if (s.c != 1 || s.h != cfg_.patch_size || s.w != cfg_.patch_size || s.n < 1)
    throw ShapeError("UNetVAE expects (N,1," + std::to_string(cfg_.patch_size) + "," +
                     std::to_string(cfg_.patch_size) + "), got " + s.str());
}

template <typename T>
Encoded<T> UNetVAE<T>::encode_impl(const Tensor<T>& x, ForwardTrace<T>* trace) const {
  check_input(x);
  const int levels = cfg_.levels();
  Encoded<T> out;
  Tensor<T> h = x;
  if (trace) trace->enc.resize(levels);
  for (int i = 0; i < levels; ++i) {
    Tensor<T> pre = enc_conv_[i].forward(h);
    Tensor<T> act = nn::leaky_relu(pre);
    Tensor<T> pre_down = enc_down_[i].forward(act);
    if (trace) {
      trace->enc[i].input = std::move(h);
      trace->enc[i].pre = std::move(pre);
    }
    h = nn::leaky_relu(pre_down);
    if (trace) trace->enc[i].pre_down = std::move(pre_down);
    out.skips.push_back(std::move(act));
  }
  const int n = x.shape().n;
  Tensor<T> flat = h.reshaped({n, static_cast<int>(h.shape().sample_size()), 1, 1});
  out.latent.mu = fc_mu_.forward(flat);
  Tensor<T> raw = fc_logvar_.forward(flat);
  out.latent.logvar = Tensor<T>(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out.latent.logvar[i] = std::clamp(raw[i], T(kLogvarMin), T(kLogvarMax));
  if (trace) {
    trace->flat = std::move(flat);
    trace->logvar_raw = std::move(raw);
    trace->skips = out.skips;
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> UNetVAE<T>::decode_impl(const Tensor<T>& z, const SkipStack<T>* skips,
                                                        ForwardTrace<T>* trace) const {
  const int levels = cfg_.levels();
  const auto& ch = cfg_.channels;
  const Shape& zs = z.shape();
  if (static_cast<int>(zs.sample_size()) != cfg_.latent_dim)
    throw ShapeError("decode: latent has " + std::to_string(zs.sample_size()) + " dims, expected " +
                     std::to_string(cfg_.latent_dim));
  const int n = zs.n;
  if (skips && static_cast<int>(skips->size()) != levels)
    throw ShapeError("decode: skip stack depth mismatch");

  const int s = cfg_.bottleneck_size();
  Tensor<T> fc_pre = fc_dec_.forward(z);
  Tensor<T> d = nn::leaky_relu(fc_pre).reshaped({n, ch.back(), s, s});
  if (trace) {
    trace->z = z;
    trace->fc_pre = std::move(fc_pre);
    trace->dec.resize(levels);
  }
  for (int i = levels - 1; i >= 0; --i) {
    Tensor<T> up = nn::upsample2x(d);
    const int res = up.shape().h;
    Tensor<T> cat;
    if (skips) {
      const Tensor<T>& sk = (*skips)[i];
      if (!(sk.shape() == Shape{n, ch[i], res, res}))
        throw ShapeError("decode: skip " + std::to_string(i) + " has shape " + sk.shape().str());
      cat = nn::concat_channels(up, sk);
    } else {
      cat = nn::concat_channels(up, Tensor<T>({n, ch[i], res, res}));
    }
    Tensor<T> pre = dec_conv_[i].forward(cat);
    d = nn::leaky_relu(pre);
    if (trace) {
      trace->dec[i].cat = std::move(cat);
      trace->dec[i].pre = std::move(pre);
    }
  }
  Tensor<T> recon = nn::tanh(head_recon_.forward(d));
  Tensor<T> seg = nn::sigmoid(head_seg_.forward(d));
  if (trace) trace->trunk = std::move(d);
  return {std::move(recon), std::move(seg)};
}

template <typename T>
Encoded<T> UNetVAE<T>::encode(const Tensor<T>& patch) const {
  return encode_impl(patch, nullptr);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> UNetVAE<T>::decode(const Tensor<T>& z, const SkipStack<T>* skips) const {
  return decode_impl(z, skips, nullptr);
}

template <typename T>
ModelOutput<T> UNetVAE<T>::forward(const Tensor<T>& patch, const Tensor<T>* eps) const {
  Encoded<T> enc = encode_impl(patch, nullptr);
  Tensor<T> z = eps ? reparameterize(enc.latent, *eps) : enc.latent.mu;
  auto [recon, seg] = decode_impl(z, &enc.skips, nullptr);
  return {std::move(recon), std::move(seg), std::move(enc.latent)};
}

template <typename T>
ModelOutput<T> UNetVAE<T>::forward(const Tensor<T>& patch, const Tensor<T>& eps,
                                   ForwardTrace<T>& trace) const {
  trace = ForwardTrace<T>{};
  Encoded<T> enc = encode_impl(patch, &trace);
  trace.eps = eps;
  Tensor<T> z = reparameterize(enc.latent, eps);
  auto [recon, seg] = decode_impl(z, &enc.skips, &trace);
  trace.out = {recon, seg, enc.latent};
  return {std::move(recon), std::move(seg), std::move(enc.latent)};
}

template <typename T>
void UNetVAE<T>::backward(const ForwardTrace<T>& tr, const OutputGrads<T>& g) {
  const int levels = cfg_.levels();
  const auto& ch = cfg_.channels;
  const int n = tr.out.recon.shape().n;

  Tensor<T> d_trunk = head_recon_.backward(tr.trunk, nn::tanh_backward(tr.out.recon, g.recon));
  nn::add_inplace(d_trunk, head_seg_.backward(tr.trunk, nn::sigmoid_backward(tr.out.seg_prob, g.seg_prob)));

  std::vector<Tensor<T>> d_skip(levels);
  Tensor<T> d = std::move(d_trunk);
  for (int i = 0; i < levels; ++i) {
    Tensor<T> d_cat = dec_conv_[i].backward(tr.dec[i].cat, nn::leaky_relu_backward(tr.dec[i].pre, d));
    const int up_ch = i == levels - 1 ? ch.back() : ch[i + 1];
    auto [d_up, d_sk] = nn::split_channels(d_cat, up_ch);
    d_skip[i] = std::move(d_sk);
    d = nn::upsample2x_backward(d_up);
  }
  d.reshape(tr.fc_pre.shape());
  Tensor<T> dz = fc_dec_.backward(tr.z, nn::leaky_relu_backward(tr.fc_pre, d));

  const auto& lat = tr.out.latent;
  Tensor<T> dmu = dz;
  if (!g.mu.empty()) nn::add_inplace(dmu, g.mu);
  Tensor<T> dlv(lat.logvar.shape());
  for (std::size_t i = 0; i < dlv.size(); ++i) {
    T v = dz[i] * tr.eps[i] * T(0.5) * std::exp(lat.logvar[i] / T(2));
    if (!g.logvar.empty()) v += g.logvar[i];
    const T raw = tr.logvar_raw[i];
    dlv[i] = (raw >= T(kLogvarMin) && raw <= T(kLogvarMax)) ? v : T(0);
  }
  Tensor<T> d_flat = fc_mu_.backward(tr.flat, dmu);
  nn::add_inplace(d_flat, fc_logvar_.backward(tr.flat, dlv));

  const int s = cfg_.bottleneck_size();
  Tensor<T> dh = d_flat.reshaped({n, ch.back(), s, s});
  for (int i = levels - 1; i >= 0; --i) {
    const auto& e = tr.enc[i];
    Tensor<T> d_act = enc_down_[i].backward(tr.skips[i], nn::leaky_relu_backward(e.pre_down, dh));
    nn::add_inplace(d_act, d_skip[i]);
    dh = enc_conv_[i].backward(e.input, nn::leaky_relu_backward(e.pre, d_act));
  }
}

template <typename T>
void UNetVAE<T>::zero_grad() {
  for (auto& p : parameters()) p.grad->fill(T(0));
}

template <typename T>
std::vector<nn::ParamRef<T>> UNetVAE<T>::parameters() {
  std::vector<nn::ParamRef<T>> out;
  for (auto& c : enc_conv_) c.collect(out);
  for (auto& c : enc_down_) c.collect(out);
  fc_mu_.collect(out);
  fc_logvar_.collect(out);
  fc_dec_.collect(out);
  for (auto& c : dec_conv_) c.collect(out);
  head_recon_.collect(out);
  head_seg_.collect(out);
  return out;
}

template <typename T>
std::vector<nn::ConstParamRef<T>> UNetVAE<T>::parameters() const {
  std::vector<nn::ConstParamRef<T>> out;
  for (const auto& c : enc_conv_) c.collect(out);
  for (const auto& c : enc_down_) c.collect(out);
  fc_mu_.collect(out);
  fc_logvar_.collect(out);
  fc_dec_.collect(out);
  for (const auto& c : dec_conv_) c.collect(out);
  head_recon_.collect(out);
  head_seg_.collect(out);
  return out;
}

// ---------------------------------------------------------------------------
// PatchDiscriminator

template <typename T>
PatchDiscriminator<T>::PatchDiscriminator(const ModelConfig& cfg) : patch_size_(cfg.patch_size) {
  cfg.validate();
  int in = 1;
  for (std::size_t i = 0; i < cfg.disc_channels.size(); ++i) {
    convs_.emplace_back("disc." + std::to_string(i), in, cfg.disc_channels[i], 3, 2, 1);
    in = cfg.disc_channels[i];
  }
  convs_.emplace_back("disc.logit", in, 1, 3, 1, 1);
  // Offset keeps the critic's stream disjoint from the generator's.
  std::mt19937_64 rng(cfg.seed ^ 0xd15c0000d15cULL);
  for (auto& c : convs_) c.init(rng);
}

template <typename T>
Tensor<T> PatchDiscriminator<T>::run(const Tensor<T>& x, DiscTrace<T>* trace) const {
  const Shape& s = x.shape();
  if (s.c != 1 || s.h != patch_size_ || s.w != patch_size_)
    throw ShapeError("discriminator expects (N,1," + std::to_string(patch_size_) + "," +
                     std::to_string(patch_size_) + "), got " + s.str());
  if (trace) *trace = DiscTrace<T>{};
  Tensor<T> h = x;
  for (std::size_t i = 0; i + 1 < convs_.size(); ++i) {
    Tensor<T> pre = convs_[i].forward(h);
    Tensor<T> act = nn::leaky_relu(pre);
    if (trace) {
      trace->inputs.push_back(std::move(h));
      trace->pre.push_back(std::move(pre));
    }
    h = std::move(act);
  }
  Tensor<T> logits = convs_.back().forward(h);
  if (trace) trace->inputs.push_back(std::move(h));
  return logits;
}

template <typename T>
Tensor<T> PatchDiscriminator<T>::forward(const Tensor<T>& image) const {
  return run(image, nullptr);
}

template <typename T>
Tensor<T> PatchDiscriminator<T>::forward(const Tensor<T>& image, DiscTrace<T>& trace) const {
  return run(image, &trace);
}

template <typename T>
Tensor<T> PatchDiscriminator<T>::backward(const DiscTrace<T>& tr, const Tensor<T>& dlogits) {
  const std::size_t last = convs_.size() - 1;
  Tensor<T> d = convs_[last].backward(tr.inputs[last], dlogits);
  for (std::size_t i = last; i-- > 0;)
    d = convs_[i].backward(tr.inputs[i], nn::leaky_relu_backward(tr.pre[i], d));
  return d;
}

template <typename T>
Tensor<T> PatchDiscriminator<T>::input_gradient(const DiscTrace<T>& tr, const Tensor<T>& dlogits) const {
  const std::size_t last = convs_.size() - 1;
  Tensor<T> d = convs_[last].backward_input(tr.inputs[last], dlogits);
  for (std::size_t i = last; i-- > 0;)
    d = convs_[i].backward_input(tr.inputs[i], nn::leaky_relu_backward(tr.pre[i], d));
  return d;
}

template <typename T>
void PatchDiscriminator<T>::zero_grad() {
  for (auto& c : convs_) c.zero_grad();
}

template <typename T>
std::vector<nn::ParamRef<T>> PatchDiscriminator<T>::parameters() {
  std::vector<nn::ParamRef<T>> out;
  for (auto& c : convs_) c.collect(out);
  return out;
}

template <typename T>
std::vector<nn::ConstParamRef<T>> PatchDiscriminator<T>::parameters() const {
  std::vector<nn::ConstParamRef<T>> out;
  for (const auto& c : convs_) c.collect(out);
  return out;
}

// ---------------------------------------------------------------------------
// ToyPerceptualExtractor

template <typename T>
ToyPerceptualExtractor<T>::ToyPerceptualExtractor() {
  convs_.emplace_back("perceptual.0", 1, 8, 3, 1, 1);
  convs_.emplace_back("perceptual.1", 8, 16, 3, 2, 1);
  convs_.emplace_back("perceptual.2", 16, 32, 3, 2, 1);
  std::mt19937_64 rng(kSeed);
  for (auto& c : convs_) c.init(rng);
}

template <typename T>
std::vector<Tensor<T>> ToyPerceptualExtractor<T>::features(const Tensor<T>& image) const {
  std::vector<Tensor<T>> out;
  const Tensor<T>* h = &image;
  for (const auto& c : convs_) {
    out.push_back(nn::leaky_relu(c.forward(*h)));
    h = &out.back();
  }
  return out;
}

template <typename T>
Tensor<T> ToyPerceptualExtractor<T>::input_gradient(const Tensor<T>& image,
                                                    const std::vector<Tensor<T>>& dfeatures) const {
  if (dfeatures.size() != convs_.size()) throw ShapeError("perceptual: expected one gradient per level");
  std::vector<Tensor<T>> inputs{image}, pre;
  for (const auto& c : convs_) {
    pre.push_back(c.forward(inputs.back()));
    inputs.push_back(nn::leaky_relu(pre.back()));
  }
  Tensor<T> d = dfeatures.back();
  for (std::size_t i = convs_.size(); i-- > 0;) {
    d = convs_[i].backward_input(inputs[i], nn::leaky_relu_backward(pre[i], d));
    if (i > 0) nn::add_inplace(d, dfeatures[i - 1]);
  }
  return d;
}

template <typename T>
std::vector<nn::ConstParamRef<T>> ToyPerceptualExtractor<T>::parameters() const {
  std::vector<nn::ConstParamRef<T>> out;
  for (const auto& c : convs_) c.collect(out);
  return out;
}

// ---------------------------------------------------------------------------

PatchPair generate_synthetic(const UNetVAE<float>& model, const PatchPair& source, double tau,
                             std::uint64_t seed) {
  if (!(tau > 0.0)) throw std::invalid_argument("generate_synthetic: tau must be > 0");
  const PatchPair* src = &source;
  Tensor<float> x = stack_images<float>(std::span<const PatchPair>(src, 1));
  Encoded<float> enc = model.encode(x);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<float> z(enc.latent.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double sigma = std::exp(static_cast<double>(enc.latent.logvar[i]) / 2.0);
    z[i] = static_cast<float>(enc.latent.mu[i] + tau * sigma * normal(rng));
  }
  auto [recon, seg] = model.decode(z, &enc.skips);

  PatchPair out;
  out.size = source.size;
  out.source = source.source;
  out.provenance = Provenance::Synthetic;
  out.image.assign(recon.values().begin(), recon.values().end());
  out.mask.resize(seg.size());
  for (std::size_t i = 0; i < seg.size(); ++i) out.mask[i] = seg[i] >= kMaskThreshold ? 1 : 0;
  return out;
}

template <typename T>
std::vector<unsigned char> parameter_bytes(const std::vector<nn::ConstParamRef<T>>& params) {
  std::vector<unsigned char> out;
  for (const auto& p : params) {
    const auto* b = reinterpret_cast<const unsigned char*>(p.value->data());
    out.insert(out.end(), b, b + p.value->size() * sizeof(T));
  }
  return out;
}

template Tensor<float> reparameterize(const LatentStats<float>&, const Tensor<float>&);
template Tensor<double> reparameterize(const LatentStats<double>&, const Tensor<double>&);
template class UNetVAE<float>;
template class UNetVAE<double>;
template class PatchDiscriminator<float>;
template class PatchDiscriminator<double>;
template class ToyPerceptualExtractor<float>;
template class ToyPerceptualExtractor<double>;
template std::vector<unsigned char> parameter_bytes(const std::vector<nn::ConstParamRef<float>>&);
template std::vector<unsigned char> parameter_bytes(const std::vector<nn::ConstParamRef<double>>&);

}  // namespace pgvae
