#pragma once

// Minimal layer toolkit for the UNet-VAE, PatchGAN and perceptual networks.
//
// Layers hold parameters and accumulated gradients but never cache
// activations: forward() is const and the caller keeps whatever inputs the
// matching backward() needs. This keeps eval-mode inference free of mutable
// state so one set of weights can be shared across threads.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pgvae/tensor.hpp"

namespace pgvae::nn {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
struct ConstParamRef {
  std::string name;
  const Tensor<T>* value;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad);

  /// He-uniform weights, zero bias.
  void init(std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  /// Accumulates weight/bias gradients and returns dL/dx.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy);
  /// dL/dx only; parameters untouched.
  Tensor<T> backward_input(const Tensor<T>& x, const Tensor<T>& dy) const;

  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  void zero_grad();
  void collect(std::vector<ParamRef<T>>& out);
  void collect(std::vector<ConstParamRef<T>>& out) const;

 private:
  Tensor<T> backward_impl(const Tensor<T>& x, const Tensor<T>& dy, bool accumulate);
  void im2col(std::span<const T> img, int h, int w, std::vector<T>& col) const;
  void col2im(const std::vector<T>& col, int h, int w, std::span<T> img) const;

  std::string name_;
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Tensor<T> weight_, bias_, weight_grad_, bias_grad_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features);

  void init(std::mt19937_64& rng);

  /// x: (N, in, 1, 1) or any shape with sample_size == in.
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy);

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  void zero_grad();
  void collect(std::vector<ParamRef<T>>& out);
  void collect(std::vector<ConstParamRef<T>>& out) const;

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  std::string name_;
  int in_ = 0, out_ = 0;
  Tensor<T> weight_, bias_, weight_grad_, bias_grad_;
};

inline constexpr double kLeakySlope = 0.2;

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x);
/// Gradient through LeakyReLU given its pre-activation input.
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& pre, const Tensor<T>& dy);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dy);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy);

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Splits a gradient of concat_channels(a, b) back into (da, db).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int channels_a);

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x);

/// Adam with bias correction. State tensors mirror the parameter list order.
class Adam {
 public:
  struct Settings {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(Settings s, const std::vector<ParamRef<float>>& params);

  /// Applies one update. Throws NonFiniteError if any gradient is not finite;
  /// no parameter is modified in that case.
  void step(std::vector<ParamRef<float>>& params);

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  std::vector<Tensor<float>>& first_moments() { return m_; }
  std::vector<Tensor<float>>& second_moments() { return v_; }
  const std::vector<Tensor<float>>& first_moments() const { return m_; }
  const std::vector<Tensor<float>>& second_moments() const { return v_; }

 private:
  Settings s_{};
  std::uint64_t t_ = 0;
  std::vector<Tensor<float>> m_, v_;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rescales all gradients so their global L2 norm is at most max_norm.
void clip_gradients(std::vector<ParamRef<float>>& params, double max_norm);

}  // namespace pgvae::nn
