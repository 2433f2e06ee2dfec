#include "octpad/cnn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "octpad/error.hpp"
#include "octpad/parallel.hpp"

namespace octpad {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- architecture

Architecture::Architecture(Shape input, std::vector<LayerSpec> layers) : input_(input), layers_(std::move(layers)) {
  if (input_.channels < 1 || input_.height < 1 || input_.width < 1)
    fail(ErrorKind::InvalidArgument, "input shape must be positive");
  if (layers_.empty() || layers_.back().kind != LayerKind::Softmax)
    fail(ErrorKind::InvalidArgument, "architecture must end in a softmax layer");

  shapes_.push_back(input_);
  param_offsets_.push_back(0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& L = layers_[i];
    const Shape in = shapes_.back();
    Shape out = in;
    std::size_t params = 0;
    const std::string where = "layer " + std::to_string(i) + ": ";
    switch (L.kind) {
      case LayerKind::Conv: {
        if (L.out_channels < 1 || L.kernel < 1 || L.stride < 1 || L.padding < 0)
          fail(ErrorKind::InvalidArgument, where + "bad conv parameters");
        const int span_h = in.height + 2 * L.padding - L.kernel;
        const int span_w = in.width + 2 * L.padding - L.kernel;
        if (span_h < 0 || span_w < 0) fail(ErrorKind::InvalidArgument, where + "conv kernel larger than input");
        out = Shape{L.out_channels, span_h / L.stride + 1, span_w / L.stride + 1};
        params = static_cast<std::size_t>(L.out_channels) * in.channels * L.kernel * L.kernel + L.out_channels;
        break;
      }
      case LayerKind::MaxPool:
        if (L.kernel < 1 || L.stride < 1) fail(ErrorKind::InvalidArgument, where + "bad pooling parameters");
        if (in.height < L.kernel || in.width < L.kernel)
          fail(ErrorKind::InvalidArgument, where + "pooling window larger than input");
        out = Shape{in.channels, (in.height - L.kernel) / L.stride + 1, (in.width - L.kernel) / L.stride + 1};
        break;
      case LayerKind::Flatten:
        out = Shape{static_cast<int>(in.size()), 1, 1};
        break;
      case LayerKind::FullyConnected:
        if (L.out_units < 1) fail(ErrorKind::InvalidArgument, where + "fully connected layer needs units");
        out = Shape{L.out_units, 1, 1};
        params = static_cast<std::size_t>(L.out_units) * in.size() + L.out_units;
        break;
      case LayerKind::ReLU:
        break;
      case LayerKind::Softmax:
        if (i + 1 != layers_.size()) fail(ErrorKind::InvalidArgument, where + "softmax must be the final layer");
        if (in.size() != 2) fail(ErrorKind::InvalidArgument, "final softmax must have exactly 2 units");
        break;
    }
    shapes_.push_back(out);
    param_offsets_.push_back(param_offsets_.back() + params);
  }
}

std::size_t Architecture::fan_in(std::size_t i) const {
  const LayerSpec& L = layers_[i];
  if (L.kind == LayerKind::Conv) return static_cast<std::size_t>(in_shape(i).channels) * L.kernel * L.kernel;
  if (L.kind == LayerKind::FullyConnected) return in_shape(i).size();
  return 0;
}

Architecture reference_architecture(int patch_h, int patch_w) {
  return Architecture(Shape{1, patch_h, patch_w},
                      {LayerSpec::conv(8, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                       LayerSpec::conv(16, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                       LayerSpec::conv(32, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                       LayerSpec::flatten(), LayerSpec::fc(64), LayerSpec::relu(), LayerSpec::fc(2),
                       LayerSpec::softmax()});
}

// ---------------------------------------------------------------- kernels

namespace {

// Fixed 8-lane accumulation: vectorizable, and the summation order does not
// depend on the compiler.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T lane[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) lane[k] += a[i + k] * b[i + k];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7])) + tail;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Output columns ox with 0 <= ox*stride - pad + k < in_w, as [lo, hi].
inline std::pair<int, int> valid_range(int out_w, int in_w, int stride, int pad, int k) {
  const int lo_num = pad - k;
  const int lo = lo_num <= 0 ? 0 : (lo_num + stride - 1) / stride;
  const int hi_num = in_w - 1 + pad - k;
  const int hi = hi_num < 0 ? -1 : std::min(out_w - 1, hi_num / stride);
  return {lo, hi};
}

template <typename T>
void conv_forward(const T* in, const Shape& is, const LayerSpec& L, const T* w, const T* b, T* out, const Shape& os) {
  const int K = L.kernel, S = L.stride, P = L.padding;
  const std::size_t in_plane = static_cast<std::size_t>(is.height) * is.width;
  const std::size_t out_plane = static_cast<std::size_t>(os.height) * os.width;
  for (int o = 0; o < os.channels; ++o) {
    T* oc = out + o * out_plane;
    std::fill(oc, oc + out_plane, b[o]);
    for (int c = 0; c < is.channels; ++c) {
      const T* ic = in + c * in_plane;
      for (int ky = 0; ky < K; ++ky) {
        for (int kx = 0; kx < K; ++kx) {
          const T wv = w[((static_cast<std::size_t>(o) * is.channels + c) * K + ky) * K + kx];
          const auto [lo, hi] = valid_range(os.width, is.width, S, P, kx);
          if (lo > hi) continue;
          for (int oy = 0; oy < os.height; ++oy) {
            const int iy = oy * S - P + ky;
            if (iy < 0 || iy >= is.height) continue;
            T* orow = oc + static_cast<std::size_t>(oy) * os.width;
            const T* irow = ic + static_cast<std::size_t>(iy) * is.width;
            if (S == 1) {
              const T* src = irow - P + kx;
              for (int ox = lo; ox <= hi; ++ox) orow[ox] += wv * src[ox];
            } else {
              for (int ox = lo; ox <= hi; ++ox) orow[ox] += wv * irow[ox * S - P + kx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const T* in, const Shape& is, const LayerSpec& L, const T* w, const T* gout, const Shape& os,
                   T* gw, T* gb, T* gin) {
  const int K = L.kernel, S = L.stride, P = L.padding;
  const std::size_t in_plane = static_cast<std::size_t>(is.height) * is.width;
  const std::size_t out_plane = static_cast<std::size_t>(os.height) * os.width;
  for (int o = 0; o < os.channels; ++o) {
    const T* go = gout + o * out_plane;
    T bias_acc = 0;
    for (std::size_t k = 0; k < out_plane; ++k) bias_acc += go[k];
    gb[o] += bias_acc;
    for (int c = 0; c < is.channels; ++c) {
      const T* ic = in + c * in_plane;
      T* gic = gin ? gin + c * in_plane : nullptr;
      for (int ky = 0; ky < K; ++ky) {
        for (int kx = 0; kx < K; ++kx) {
          const std::size_t widx = ((static_cast<std::size_t>(o) * is.channels + c) * K + ky) * K + kx;
          const T wv = w[widx];
          const auto [lo, hi] = valid_range(os.width, is.width, S, P, kx);
          if (lo > hi) continue;
          T acc = 0;
          for (int oy = 0; oy < os.height; ++oy) {
            const int iy = oy * S - P + ky;
            if (iy < 0 || iy >= is.height) continue;
            const T* grow = go + static_cast<std::size_t>(oy) * os.width;
            const std::size_t irow_off = static_cast<std::size_t>(iy) * is.width;
            if (S == 1) {
              const std::size_t n = static_cast<std::size_t>(hi - lo + 1);
              acc += dot(grow + lo, ic + irow_off - P + kx + lo, n);
              if (gic) axpy(wv, grow + lo, gic + irow_off - P + kx + lo, n);
            } else {
              for (int ox = lo; ox <= hi; ++ox) {
                const std::size_t ix = irow_off + static_cast<std::size_t>(ox * S - P + kx);
                acc += grow[ox] * ic[ix];
                if (gic) gic[ix] += wv * grow[ox];
              }
            }
          }
          gw[widx] += acc;
        }
      }
    }
  }
}

template <typename T>
void maxpool_forward(const T* in, const Shape& is, const LayerSpec& L, T* out, const Shape& os,
                     std::uint32_t* argmax) {
  const int K = L.kernel, S = L.stride;
  for (int c = 0; c < os.channels; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * is.height * is.width;
    for (int oy = 0; oy < os.height; ++oy) {
      for (int ox = 0; ox < os.width; ++ox) {
        std::size_t best = base + static_cast<std::size_t>(oy * S) * is.width + ox * S;
        for (int ky = 0; ky < K; ++ky) {
          for (int kx = 0; kx < K; ++kx) {
            const std::size_t idx = base + static_cast<std::size_t>(oy * S + ky) * is.width + (ox * S + kx);
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * os.height + oy) * os.width + ox;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

template <typename T>
void softmax(const T* z, T* p, std::size_t n) {
  const T m = *std::max_element(z, z + n);
  T sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (std::size_t i = 0; i < n; ++i) p[i] /= sum;
}

template <typename T>
T cross_entropy(std::span<const T> logits, int label) {
  const T m = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (T z : logits) sum += std::exp(z - m);
  return m + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

}  // namespace

// ---------------------------------------------------------------- network

template <typename T>
Network<T>::Network(Architecture arch, std::vector<T> params, std::uint64_t seed)
    : arch_(std::move(arch)), params_(std::move(params)), seed_(seed) {
  if (params_.size() != arch_.param_count())
    fail(ErrorKind::InvalidArgument, "parameter count does not match the architecture");
  for (T v : params_)
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "non-finite weight");
}

template <typename T>
Network<T> Network<T>::initialized(Architecture arch, std::uint64_t seed) {
  std::vector<T> params(arch.param_count(), T(0));
  Rng rng(mix_seed(seed, 0x1417));
  for (std::size_t i = 0; i < arch.layers().size(); ++i) {
    const LayerSpec& L = arch.layers()[i];
    if (L.kind != LayerKind::Conv && L.kind != LayerKind::FullyConnected) continue;
    const double a = std::sqrt(6.0 / static_cast<double>(arch.fan_in(i)));
    const std::size_t n_bias = L.kind == LayerKind::Conv ? L.out_channels : L.out_units;
    const std::size_t begin = arch.param_offset(i);
    const std::size_t end = arch.param_offset(i + 1) - n_bias;
    for (std::size_t k = begin; k < end; ++k) params[k] = static_cast<T>(rng.uniform(-a, a));
  }
  return Network(std::move(arch), std::move(params), seed);
}

template <typename T>
void Network<T>::forward(std::span<const T> input, ForwardTrace<T>& trace) const {
  if (input.size() != arch_.input().size()) fail(ErrorKind::InvalidArgument, "input does not match the model input shape");
  const auto& layers = arch_.layers();
  trace.activations.resize(layers.size() + 1);
  trace.argmax.resize(layers.size());
  trace.activations[0].assign(input.begin(), input.end());

  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& L = layers[i];
    const Shape& is = arch_.in_shape(i);
    const Shape& os = arch_.out_shape(i);
    const std::vector<T>& x = trace.activations[i];
    std::vector<T>& y = trace.activations[i + 1];
    y.resize(os.size());
    const T* p = params_.data() + arch_.param_offset(i);
    switch (L.kind) {
      case LayerKind::Conv: {
        const std::size_t nw = static_cast<std::size_t>(L.out_channels) * is.channels * L.kernel * L.kernel;
        conv_forward(x.data(), is, L, p, p + nw, y.data(), os);
        break;
      }
      case LayerKind::ReLU:
        for (std::size_t k = 0; k < y.size(); ++k) y[k] = x[k] > T(0) ? x[k] : T(0);
        break;
      case LayerKind::MaxPool:
        trace.argmax[i].resize(os.size());
        maxpool_forward(x.data(), is, L, y.data(), os, trace.argmax[i].data());
        break;
      case LayerKind::Flatten:
        std::copy(x.begin(), x.end(), y.begin());
        break;
      case LayerKind::FullyConnected: {
        const std::size_t n = is.size();
        const T* bias = p + static_cast<std::size_t>(L.out_units) * n;
        for (int u = 0; u < L.out_units; ++u) y[u] = bias[u] + dot(p + static_cast<std::size_t>(u) * n, x.data(), n);
        break;
      }
      case LayerKind::Softmax:
        softmax(x.data(), y.data(), y.size());
        break;
    }
  }
}

template <typename T>
T Network<T>::backward(const ForwardTrace<T>& trace, int label, std::span<T> grad) const {
  const auto& layers = arch_.layers();
  if (trace.activations.size() != layers.size() + 1) fail(ErrorKind::InvalidArgument, "trace does not match model");
  if (grad.size() != params_.size()) fail(ErrorKind::InvalidArgument, "gradient buffer has the wrong size");

  // Softmax + cross-entropy: dL/dlogits = p - onehot.
  const auto probs = trace.probabilities();
  std::vector<T> g(probs.begin(), probs.end());
  g[static_cast<std::size_t>(label)] -= T(1);
  std::vector<T> g_in;

  for (std::size_t ii = layers.size() - 1; ii-- > 0;) {
    const LayerSpec& L = layers[ii];
    const Shape& is = arch_.in_shape(ii);
    const Shape& os = arch_.out_shape(ii);
    const std::vector<T>& x = trace.activations[ii];
    const std::vector<T>& y = trace.activations[ii + 1];
    const T* p = params_.data() + arch_.param_offset(ii);
    T* gp = grad.data() + arch_.param_offset(ii);
    const bool need_input_grad = ii > 0;
    g_in.assign(need_input_grad ? is.size() : 0, T(0));

    switch (L.kind) {
      case LayerKind::Conv: {
        const std::size_t nw = static_cast<std::size_t>(L.out_channels) * is.channels * L.kernel * L.kernel;
        conv_backward(x.data(), is, L, p, g.data(), os, gp, gp + nw, need_input_grad ? g_in.data() : nullptr);
        break;
      }
      case LayerKind::ReLU:
        if (need_input_grad)
          for (std::size_t k = 0; k < g.size(); ++k) g_in[k] = y[k] > T(0) ? g[k] : T(0);
        break;
      case LayerKind::MaxPool:
        if (need_input_grad)
          for (std::size_t k = 0; k < g.size(); ++k) g_in[trace.argmax[ii][k]] += g[k];
        break;
      case LayerKind::Flatten:
        if (need_input_grad) g_in = g;
        break;
      case LayerKind::FullyConnected: {
        const std::size_t n = is.size();
        T* gbias = gp + static_cast<std::size_t>(L.out_units) * n;
        for (int u = 0; u < L.out_units; ++u) {
          const T gu = g[static_cast<std::size_t>(u)];
          gbias[u] += gu;
          if (gu == T(0)) continue;
          axpy(gu, x.data(), gp + static_cast<std::size_t>(u) * n, n);
          if (need_input_grad) axpy(gu, p + static_cast<std::size_t>(u) * n, g_in.data(), n);
        }
        break;
      }
      case LayerKind::Softmax:
        fail(ErrorKind::InvalidArgument, "softmax must be the final layer");
    }
    g.swap(g_in);
  }
  return cross_entropy(trace.logits(), label);
}

template <typename T>
T Network<T>::loss(std::span<const T> input, int label) const {
  ForwardTrace<T> trace;
  forward(input, trace);
  return cross_entropy(trace.logits(), label);
}

template class Network<float>;
template class Network<double>;

// ---------------------------------------------------------------- inference

std::vector<float> normalize_patch(const Image& pixels) {
  std::vector<float> out(pixels.size());
  std::transform(pixels.pixels().begin(), pixels.pixels().end(), out.begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return out;
}

namespace {

void check_patch_shape(const CnnModel& model, const Image& patch) {
  const Shape& in = model.arch().input();
  if (in.channels != 1 || in.height != patch.height() || in.width != patch.width())
    fail(ErrorKind::InvalidArgument, "patch " + std::to_string(patch.height()) + "x" + std::to_string(patch.width()) +
                                         " does not match the model input shape");
}

}  // namespace

std::array<double, 2> forward(const CnnModel& model, const Image& patch) {
  check_patch_shape(model, patch);
  ForwardTrace<float> trace;
  model.forward(normalize_patch(patch), trace);
  const auto p = trace.probabilities();
  return {static_cast<double>(p[0]), static_cast<double>(p[1])};
}

double spoofness(const CnnModel& model, const Image& patch) { return spoofness_of(forward(model, patch)); }

std::vector<double> spoofness_batch(const CnnModel& model, const std::vector<Patch>& patches) {
  std::vector<double> out(patches.size());
  parallel_for(patches.size(), [&](std::size_t i) { out[i] = spoofness(model, patches[i].pixels); });
  return out;
}

// ---------------------------------------------------------------- optimization

double lr_schedule(std::int64_t step, std::int64_t total, double lr_start, double lr_end) {
  if (total < 1) fail(ErrorKind::InvalidArgument, "lr_schedule: total steps must be >= 1");
  if (step < 0 || step > total) fail(ErrorKind::InvalidArgument, "lr_schedule: step outside [0, total]");
  if (!(lr_start > 0.0) || !(lr_end > 0.0)) fail(ErrorKind::InvalidArgument, "learning rates must be positive");
  if (step == total) return lr_end;
  return lr_start * std::pow(lr_end / lr_start, static_cast<double>(step) / static_cast<double>(total));
}

template <typename T>
void rmsprop_step(std::span<T> params, std::span<const T> grads, std::span<T> state, double lr, double rho,
                  double eps) {
  if (params.size() != grads.size() || params.size() != state.size())
    fail(ErrorKind::InvalidArgument, "rmsprop_step: shape mismatch");
  for (T g : grads)
    if (!std::isfinite(g)) fail(ErrorKind::Numeric, "divergence: non-finite gradient");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    const double v = rho * static_cast<double>(state[i]) + (1.0 - rho) * g * g;
    state[i] = static_cast<T>(v);
    params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * g / (std::sqrt(v) + eps));
  }
}

template void rmsprop_step<float>(std::span<float>, std::span<const float>, std::span<float>, double, double, double);
template void rmsprop_step<double>(std::span<double>, std::span<const double>, std::span<double>, double, double,
                                   double);

// ---------------------------------------------------------------- augmentation

AugmentParams draw_augment(Rng& rng, int height, int width) {
  AugmentParams a;
  a.hflip = rng.coin();
  a.vflip = rng.coin();
  a.crop_h = static_cast<int>(std::lround(0.9 * height));
  a.crop_w = static_cast<int>(std::lround(0.9 * width));
  a.crop_row = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - a.crop_h + 1)));
  a.crop_col = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - a.crop_w + 1)));
  a.brightness = rng.uniform(0.8, 1.2);
  return a;
}

std::vector<float> hflip(std::span<const float> patch, int height, int width) {
  std::vector<float> out(patch.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out[static_cast<std::size_t>(y) * width + x] = patch[static_cast<std::size_t>(y) * width + (width - 1 - x)];
  return out;
}

std::vector<float> vflip(std::span<const float> patch, int height, int width) {
  std::vector<float> out(patch.size());
  for (int y = 0; y < height; ++y)
    std::copy_n(patch.begin() + static_cast<std::ptrdiff_t>(height - 1 - y) * width, width,
                out.begin() + static_cast<std::ptrdiff_t>(y) * width);
  return out;
}

std::vector<float> apply_augment(std::span<const float> patch, int height, int width, const AugmentParams& a) {
  if (patch.size() != static_cast<std::size_t>(height) * width)
    fail(ErrorKind::InvalidArgument, "augment: patch size mismatch");
  const int ch = a.crop_h > 0 ? a.crop_h : height;
  const int cw = a.crop_w > 0 ? a.crop_w : width;
  if (a.crop_row < 0 || a.crop_col < 0 || a.crop_row + ch > height || a.crop_col + cw > width)
    fail(ErrorKind::InvalidArgument, "augment: crop outside the patch");

  std::vector<float> src(patch.begin(), patch.end());
  if (a.hflip) src = hflip(src, height, width);
  if (a.vflip) src = vflip(src, height, width);

  std::vector<float> out(src.size());
  const double sy = static_cast<double>(ch) / height;
  const double sx = static_cast<double>(cw) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(ch - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, ch - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(cw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, cw - 1);
      const double wx = fx - x0;
      auto at = [&](int r, int c) {
        return static_cast<double>(src[static_cast<std::size_t>(a.crop_row + r) * width + (a.crop_col + c)]);
      };
      const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) + wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
      out[static_cast<std::size_t>(y) * width + x] = static_cast<float>(std::clamp(v * a.brightness, 0.0, 1.0));
    }
  }
  return out;
}

std::vector<float> augment(std::span<const float> patch, int height, int width, Rng& rng) {
  return apply_augment(patch, height, width, draw_augment(rng, height, width));
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (batch_size < 1) fail(ErrorKind::InvalidArgument, "batch_size must be >= 1");
  if (epochs < 1) fail(ErrorKind::InvalidArgument, "epochs must be >= 1");
  if (!(lr_end > 0.0) || !(lr_end <= lr_start)) fail(ErrorKind::InvalidArgument, "need 0 < lr_end <= lr_start");
  if (!(rmsprop_decay > 0.0 && rmsprop_decay < 1.0)) fail(ErrorKind::InvalidArgument, "rmsprop decay must be in (0, 1)");
  if (!(rmsprop_epsilon > 0.0)) fail(ErrorKind::InvalidArgument, "rmsprop epsilon must be > 0");
}

namespace {

// Fixed number of gradient partial sums per batch, independent of the thread
// count, so the reduction order never changes.
constexpr std::size_t kGradChunks = 8;

int predicted_class(std::span<const float> probs) { return probs[kPaClass] > probs[kBonafideClass] ? kPaClass : kBonafideClass; }

int class_index(Label l) { return l == Label::PA ? kPaClass : kBonafideClass; }

}  // namespace

TrainResult train(const std::vector<LabeledPatch>& data, const TrainConfig& cfg) {
  if (data.empty()) fail(ErrorKind::Data, "empty training set");
  return train(data, cfg, reference_architecture(data.front().pixels.height(), data.front().pixels.width()));
}

TrainResult train(const std::vector<LabeledPatch>& data, const TrainConfig& cfg, const Architecture& arch,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) fail(ErrorKind::Data, "empty training set");
  bool has_bonafide = false;
  bool has_pa = false;
  const Shape& in = arch.input();
  for (const auto& s : data) {
    (s.label == Label::PA ? has_pa : has_bonafide) = true;
    if (in.channels != 1 || s.pixels.height() != in.height || s.pixels.width() != in.width)
      fail(ErrorKind::Data, "training patch does not match the model input shape");
  }
  if (!has_bonafide || !has_pa) fail(ErrorKind::Data, "single-class dataset");

  CnnModel model = CnnModel::initialized(arch, cfg.seed);
  const std::size_t P = arch.param_count();
  const std::size_t N = data.size();
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (N + B - 1) / B;
  const auto total_steps = static_cast<std::int64_t>(steps_per_epoch * static_cast<std::size_t>(cfg.epochs));

  std::vector<float> state(P, 0.0f);
  std::vector<float> grad(P);
  std::vector<std::vector<float>> chunk_grad(kGradChunks, std::vector<float>(P));
  std::vector<double> chunk_loss(kGradChunks);
  std::vector<std::size_t> chunk_correct(kGradChunks);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{model, {}};
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng(mix_seed(cfg.seed, 0xE0000000ULL + static_cast<std::uint64_t>(epoch))).shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t epoch_correct = 0;

    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t begin = b * B;
      const std::size_t count = std::min(N, begin + B) - begin;
      parallel_for(kGradChunks, [&](std::size_t c) {
        std::fill(chunk_grad[c].begin(), chunk_grad[c].end(), 0.0f);
        chunk_loss[c] = 0.0;
        chunk_correct[c] = 0;
        const std::size_t lo = begin + count * c / kGradChunks;
        const std::size_t hi = begin + count * (c + 1) / kGradChunks;
        ForwardTrace<float> trace;
        for (std::size_t k = lo; k < hi; ++k) {
          const LabeledPatch& sample = data[order[k]];
          std::vector<float> input = normalize_patch(sample.pixels);
          if (cfg.augment) {
            Rng rng(mix_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) + k));
            input = augment(input, in.height, in.width, rng);
          }
          model.forward(input, trace);
          const int label = class_index(sample.label);
          if (predicted_class(trace.probabilities()) == label) ++chunk_correct[c];
          chunk_loss[c] += static_cast<double>(model.backward(trace, label, chunk_grad[c]));
        }
      });

      double batch_loss = 0.0;
      std::fill(grad.begin(), grad.end(), 0.0f);
      for (std::size_t c = 0; c < kGradChunks; ++c) {
        batch_loss += chunk_loss[c];
        epoch_correct += chunk_correct[c];
        for (std::size_t k = 0; k < P; ++k) grad[k] += chunk_grad[c][k];
      }
      if (!std::isfinite(batch_loss)) fail(ErrorKind::Numeric, "divergence: non-finite loss");
      const float inv = 1.0f / static_cast<float>(count);
      for (float& g : grad) g *= inv;
      epoch_loss += batch_loss;

      const double lr = lr_schedule(step, total_steps, cfg.lr_start, cfg.lr_end);
      rmsprop_step<float>(model.params(), grad, state, lr, cfg.rmsprop_decay, cfg.rmsprop_epsilon);
      ++step;
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = epoch_loss / static_cast<double>(N);
    stats.train_accuracy = static_cast<double>(epoch_correct) / static_cast<double>(N);
    stats.eval_loss = std::numeric_limits<double>::quiet_NaN();
    stats.eval_accuracy = std::numeric_limits<double>::quiet_NaN();
    if (cfg.evaluate_each_epoch) {
      std::vector<double> losses(N);
      std::vector<char> correct(N);
      parallel_for(N, [&](std::size_t i) {
        ForwardTrace<float> trace;
        model.forward(normalize_patch(data[i].pixels), trace);
        const int label = class_index(data[i].label);
        correct[i] = predicted_class(trace.probabilities()) == label;
        losses[i] = static_cast<double>(cross_entropy(trace.logits(), label));
      });
      stats.eval_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(N);
      stats.eval_accuracy = static_cast<double>(std::count(correct.begin(), correct.end(), 1)) / static_cast<double>(N);
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[4] = {'O', 'P', 'A', 'D'};
constexpr std::uint32_t kVersion = 1;

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

LayerKind kind_from_name(const std::string& s) {
  for (LayerKind k : {LayerKind::Conv, LayerKind::ReLU, LayerKind::MaxPool, LayerKind::Flatten,
                      LayerKind::FullyConnected, LayerKind::Softmax})
    if (s == kind_name(k)) return k;
  fail(ErrorKind::Format, "unknown layer type \"" + s + "\" in checkpoint");
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::string architecture_json(const CnnModel& model) {
  const Architecture& arch = model.arch();
  json layers = json::array();
  for (std::size_t i = 0; i < arch.layers().size(); ++i) {
    const LayerSpec& L = arch.layers()[i];
    const Shape& os = arch.out_shape(i);
    json l{{"type", kind_name(L.kind)}, {"output_shape", {os.channels, os.height, os.width}}};
    if (L.kind == LayerKind::Conv) {
      l["out_channels"] = L.out_channels;
      l["kernel"] = L.kernel;
      l["stride"] = L.stride;
      l["padding"] = L.padding;
    } else if (L.kind == LayerKind::MaxPool) {
      l["kernel"] = L.kernel;
      l["stride"] = L.stride;
    } else if (L.kind == LayerKind::FullyConnected) {
      l["out_units"] = L.out_units;
    }
    layers.push_back(std::move(l));
  }
  const Shape& in = arch.input();
  json desc{{"input_shape", {in.channels, in.height, in.width}},
            {"layers", layers},
            {"param_count", arch.param_count()},
            {"seed", model.seed()},
            {"normalization", "divide_by_255"},
            {"classes", {"bonafide", "pa"}}};
  return desc.dump();
}

void save_checkpoint(const CnnModel& model, const fs::path& path) {
  const std::string header = architecture_json(model);
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  const auto params = model.params();
  for (float v : params) put_u32(out, std::bit_cast<std::uint32_t>(v));

  std::ofstream file(path, std::ios::binary);
  if (!file) fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
}

CnnModel load_checkpoint(const fs::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()};
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::Format, "not a checkpoint: " + path.string());
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kVersion) fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t header_len = get_u32(bytes.data() + 8);
  if (bytes.size() < 12ull + header_len) fail(ErrorKind::Format, "truncated checkpoint");

  json desc;
  try {
    desc = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    const auto shape = desc.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) fail(ErrorKind::Format, "bad input_shape in checkpoint");
    std::vector<LayerSpec> layers;
    for (const auto& l : desc.at("layers")) {
      LayerSpec L;
      L.kind = kind_from_name(l.at("type").get<std::string>());
      L.out_channels = l.value("out_channels", 0);
      L.kernel = l.value("kernel", 0);
      L.stride = l.value("stride", 1);
      L.padding = l.value("padding", 0);
      L.out_units = l.value("out_units", 0);
      layers.push_back(L);
    }
    Architecture arch(Shape{shape[0], shape[1], shape[2]}, std::move(layers));
    const std::size_t n = arch.param_count();
    if (desc.at("param_count").get<std::size_t>() != n) fail(ErrorKind::Format, "checkpoint parameter count mismatch");
    const std::size_t body = 12ull + header_len;
    if (bytes.size() != body + 4 * n) fail(ErrorKind::Format, "truncated checkpoint");
    std::vector<float> params(n);
    for (std::size_t i = 0; i < n; ++i) params[i] = std::bit_cast<float>(get_u32(bytes.data() + body + 4 * i));
    return CnnModel(std::move(arch), std::move(params), desc.value("seed", std::uint64_t{0}));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed checkpoint header: ") + e.what());
  }
}

}  // namespace octpad
