#include "pgvae/nn.hpp"

#include <Eigen/Core>

#include <cmath>

namespace pgvae::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void he_uniform(Tensor<T>& w, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
                  int pad)
    : name_(std::move(name)),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_({out_channels, in_channels, kernel, kernel}),
      bias_({1, out_channels, 1, 1}),
      weight_grad_({out_channels, in_channels, kernel, kernel}),
      bias_grad_({1, out_channels, 1, 1}) {}

template <typename T>
void Conv2d<T>::init(std::mt19937_64& rng) {
  he_uniform(weight_, in_ * kernel_ * kernel_, rng);
  bias_.fill(T(0));
}

template <typename T>
void Conv2d<T>::im2col(std::span<const T> img, int h, int w, std::vector<T>& col) const {
  const int ho = out_size(h), wo = out_size(w);
  const std::size_t cols = static_cast<std::size_t>(ho) * wo;
  col.assign(static_cast<std::size_t>(in_) * kernel_ * kernel_ * cols, T(0));
  std::size_t row = 0;
  for (int c = 0; c < in_; ++c) {
    const T* plane = img.data() + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx, ++row) {
        T* dst = col.data() + row * cols;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          T* d = dst + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < w) d[ox] = src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const std::vector<T>& col, int h, int w, std::span<T> img) const {
  const int ho = out_size(h), wo = out_size(w);
  const std::size_t cols = static_cast<std::size_t>(ho) * wo;
  std::fill(img.begin(), img.end(), T(0));
  std::size_t row = 0;
  for (int c = 0; c < in_; ++c) {
    T* plane = img.data() + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx, ++row) {
        const T* src = col.data() + row * cols;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          const T* s = src + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < w) dst[ix] += s[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
  const Shape& s = x.shape();
  if (s.c != in_) throw ShapeError(name_ + ": expected " + std::to_string(in_) + " channels, got " + s.str());
  const int ho = out_size(s.h), wo = out_size(s.w);
  Tensor<T> y({s.n, out_, ho, wo});
  const int kk = in_ * kernel_ * kernel_;
  const int cols = ho * wo;
  ConstMapMat<T> wmat(weight_.data(), out_, kk);
  std::vector<T> col;
  for (int n = 0; n < s.n; ++n) {
    im2col(x.sample(n), s.h, s.w, col);
    ConstMapMat<T> cmat(col.data(), kk, cols);
    MapMat<T> ymat(y.sample(n).data(), out_, cols);
    ymat.noalias() = wmat * cmat;
    for (int o = 0; o < out_; ++o) ymat.row(o).array() += bias_[o];
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward_impl(const Tensor<T>& x, const Tensor<T>& dy, bool accumulate) {
  const Shape& s = x.shape();
  const int ho = out_size(s.h), wo = out_size(s.w);
  require_same_shape(dy.shape(), Shape{s.n, out_, ho, wo}, name_.c_str());
  const int kk = in_ * kernel_ * kernel_;
  const int cols = ho * wo;
  ConstMapMat<T> wmat(weight_.data(), out_, kk);
  MapMat<T> gw(weight_grad_.data(), out_, kk);
  Tensor<T> dx(s);
  std::vector<T> col, dcol(static_cast<std::size_t>(kk) * cols);
  for (int n = 0; n < s.n; ++n) {
    ConstMapMat<T> dymat(dy.sample(n).data(), out_, cols);
    if (accumulate) {
      im2col(x.sample(n), s.h, s.w, col);
      ConstMapMat<T> cmat(col.data(), kk, cols);
      gw.noalias() += dymat * cmat.transpose();
      // Plain loop: Eigen's vectorized sum reorders by buffer alignment.
      const T* d = dy.sample(n).data();
      for (int o = 0; o < out_; ++o) {
        T acc = T(0);
        for (int c = 0; c < cols; ++c) acc += d[static_cast<std::size_t>(o) * cols + c];
        bias_grad_[o] += acc;
      }
    }
    MapMat<T> dcmat(dcol.data(), kk, cols);
    dcmat.noalias() = wmat.transpose() * dymat;
    col2im(dcol, s.h, s.w, dx.sample(n));
  }
  return dx;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& x, const Tensor<T>& dy) {
  return backward_impl(x, dy, true);
}

template <typename T>
Tensor<T> Conv2d<T>::backward_input(const Tensor<T>& x, const Tensor<T>& dy) const {
  return const_cast<Conv2d*>(this)->backward_impl(x, dy, false);
}

template <typename T>
void Conv2d<T>::zero_grad() {
  weight_grad_.fill(T(0));
  bias_grad_.fill(T(0));
}

template <typename T>
void Conv2d<T>::collect(std::vector<ParamRef<T>>& out) {
  out.push_back({name_ + ".weight", &weight_, &weight_grad_});
  out.push_back({name_ + ".bias", &bias_, &bias_grad_});
}

template <typename T>
void Conv2d<T>::collect(std::vector<ConstParamRef<T>>& out) const {
  out.push_back({name_ + ".weight", &weight_});
  out.push_back({name_ + ".bias", &bias_});
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(std::string name, int in_features, int out_features)
    : name_(std::move(name)),
      in_(in_features),
      out_(out_features),
      weight_({out_features, in_features, 1, 1}),
      bias_({1, out_features, 1, 1}),
      weight_grad_({out_features, in_features, 1, 1}),
      bias_grad_({1, out_features, 1, 1}) {}

template <typename T>
void Linear<T>::init(std::mt19937_64& rng) {
  he_uniform(weight_, in_, rng);
  bias_.fill(T(0));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  const int n = x.shape().n;
  if (static_cast<int>(x.shape().sample_size()) != in_)
    throw ShapeError(name_ + ": expected " + std::to_string(in_) + " features, got " + x.shape().str());
  Tensor<T> y({n, out_, 1, 1});
  ConstMapMat<T> xm(x.data(), n, in_);
  ConstMapMat<T> wm(weight_.data(), out_, in_);
  MapMat<T> ym(y.data(), n, out_);
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out_; ++o) ym(i, o) += bias_[o];
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& x, const Tensor<T>& dy) {
  const int n = x.shape().n;
  require_same_shape(dy.shape(), Shape{n, out_, 1, 1}, name_.c_str());
  ConstMapMat<T> xm(x.data(), n, in_);
  ConstMapMat<T> wm(weight_.data(), out_, in_);
  ConstMapMat<T> dym(dy.data(), n, out_);
  MapMat<T> gw(weight_grad_.data(), out_, in_);
  gw.noalias() += dym.transpose() * xm;
  for (int o = 0; o < out_; ++o) {
    T acc = T(0);
    for (int i = 0; i < n; ++i) acc += dy[static_cast<std::size_t>(i) * out_ + o];
    bias_grad_[o] += acc;
  }
  Tensor<T> dx(x.shape());
  MapMat<T> dxm(dx.data(), n, in_);
  dxm.noalias() = dym * wm;
  return dx;
}

template <typename T>
void Linear<T>::zero_grad() {
  weight_grad_.fill(T(0));
  bias_grad_.fill(T(0));
}

template <typename T>
void Linear<T>::collect(std::vector<ParamRef<T>>& out) {
  out.push_back({name_ + ".weight", &weight_, &weight_grad_});
  out.push_back({name_ + ".bias", &bias_, &bias_grad_});
}

template <typename T>
void Linear<T>::collect(std::vector<ConstParamRef<T>>& out) const {
  out.push_back({name_ + ".weight", &weight_});
  out.push_back({name_ + ".bias", &bias_});
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T slope = static_cast<T>(kLeakySlope);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
  return y;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& pre, const Tensor<T>& dy) {
  require_same_shape(pre.shape(), dy.shape(), "leaky_relu_backward");
  Tensor<T> dx(pre.shape());
  const T slope = static_cast<T>(kLeakySlope);
  for (std::size_t i = 0; i < pre.size(); ++i) dx[i] = pre[i] > T(0) ? dy[i] : slope * dy[i];
  return dx;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * (T(1) - y[i] * y[i]);
  return dx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
  return dx;
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> y({s.n, s.c, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int yy = 0; yy < s.h * 2; ++yy)
        for (int xx = 0; xx < s.w * 2; ++xx) y.at(n, c, yy, xx) = x.at(n, c, yy / 2, xx / 2);
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  const Shape& s = dy.shape();
  Tensor<T> dx({s.n, s.c, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int yy = 0; yy < s.h; ++yy)
        for (int xx = 0; xx < s.w; ++xx) dx.at(n, c, yy / 2, xx / 2) += dy.at(n, c, yy, xx);
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
  Tensor<T> y({sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    auto dst = y.sample(n);
    auto pa = a.sample(n);
    auto pb = b.sample(n);
    std::copy(pa.begin(), pa.end(), dst.begin());
    std::copy(pb.begin(), pb.end(), dst.begin() + static_cast<std::ptrdiff_t>(pa.size()));
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& dy, int channels_a) {
  const Shape& s = dy.shape();
  Tensor<T> da({s.n, channels_a, s.h, s.w});
  Tensor<T> db({s.n, s.c - channels_a, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    auto src = dy.sample(n);
    auto pa = da.sample(n);
    auto pb = db.sample(n);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(pa.size()), pa.begin());
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(pa.size()), src.end(), pb.begin());
  }
  return {std::move(da), std::move(db)};
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
  require_same_shape(acc.shape(), x.shape(), "add_inplace");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(Settings s, const std::vector<ParamRef<float>>& params) : s_(s) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.value->shape());
    v_.emplace_back(p.value->shape());
  }
}

void Adam::step(std::vector<ParamRef<float>>& params) {
  if (params.size() != m_.size()) throw std::logic_error("Adam: parameter list changed");
  for (const auto& p : params) {
    if (!p.grad->all_finite()) throw NonFiniteError("non-finite gradient in " + p.name);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(s_.beta1);
  const float b2 = static_cast<float>(s_.beta2);
  const float step = static_cast<float>(s_.lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(s_.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = *params[k].value;
    const auto& g = *params[k].grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
}

void clip_gradients(std::vector<ParamRef<float>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (float g : p.grad->values()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const float scale = static_cast<float>(max_norm / norm);
  for (auto& p : params)
    for (float& g : p.grad->values()) g *= scale;
}

#define PGVAE_NN_INSTANTIATE(T)                                                        \
  template class Conv2d<T>;                                                            \
  template class Linear<T>;                                                            \
  template Tensor<T> leaky_relu(const Tensor<T>&);                                     \
  template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> tanh(const Tensor<T>&);                                           \
  template Tensor<T> tanh_backward(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> sigmoid(const Tensor<T>&);                                        \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> upsample2x(const Tensor<T>&);                                     \
  template Tensor<T> upsample2x_backward(const Tensor<T>&);                            \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);              \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, int);      \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);

PGVAE_NN_INSTANTIATE(float)
PGVAE_NN_INSTANTIATE(double)

}  // namespace pgvae::nn
