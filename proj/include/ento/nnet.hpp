#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ento/errors.hpp"
#include "ento/rng.hpp"

namespace ento::nnet {

struct BadMagicError : ParseError {
  using ParseError::ParseError;
};
struct BadVersionError : ParseError {
  using ParseError::ParseError;
};
struct TruncatedError : ParseError {
  using ParseError::ParseError;
};

template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), T{0});
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
};

using Tensor = TensorT<float>;

enum class LayerKind { Conv, Relu, MaxPool, Flatten, Dense, Softmax };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int filters = 0;  // conv
  int kernel = 0;   // conv, maxpool
  int stride = 1;   // conv, maxpool
  int padding = 0;  // conv
  int units = 0;    // dense
};

struct NetSpec {
  std::vector<int> input;  // {channels, height, width}
  int classes = 0;
  std::vector<LayerSpec> layers;
};

NetSpec netspec_from_json(const nlohmann::json& j);
nlohmann::json netspec_to_json(const NetSpec& spec);
NetSpec load_netspec(const std::string& path);

// Output shape after every layer. Throws ShapeError when the chain is
// inconsistent or the final output is not {classes}.
std::vector<std::vector<int>> chain_shapes(const NetSpec& spec);

std::size_t param_count(const NetSpec& spec);

// Weight then bias for each parametered layer, in layer order.
template <typename T>
using ParamsT = std::vector<TensorT<T>>;
using Params = ParamsT<float>;

Params init_params(const NetSpec& spec, std::uint64_t seed);

ParamsT<double> widen(const Params& p);

enum class ConvPath { Direct, Im2col };

// ReLU sign pattern and pool argmax choices of one evaluation. Finite
// differences are only trusted where this stays constant across the probe
// points, since crossing a kink breaks the central-difference error bound.
struct ActivationSignature {
  std::vector<std::int32_t> marks;
  bool operator==(const ActivationSignature&) const = default;
};

namespace detail {

// s[j] accumulates the terms with index = j (mod 4); both conv paths combine
// them the same way, which keeps their outputs bit-identical while breaking
// the add-latency chain.
inline double combine4(const double s[4]) {
  return (s[0] + s[1]) + (s[2] + s[3]);
}

template <typename T>
double dot4(const T* a, const T* b, int n) {
  double s[4] = {0, 0, 0, 0};
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s[0] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    s[1] += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    s[2] += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    s[3] += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
  }
  for (; i < n; ++i)
    s[i % 4] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return combine4(s);
}

template <typename T>
void conv_forward(const T* in, int C, int H, int W, const T* wgt,
                  const T* bias, int F, int K, int S, int P, int OH, int OW,
                  T* out, ConvPath path, std::vector<T>& colbuf) {
  int ckk = C * K * K;
  if (path == ConvPath::Im2col) {
    colbuf.assign(static_cast<std::size_t>(OH) * OW * ckk, T{0});
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        T* row = colbuf.data() + (static_cast<std::size_t>(oy) * OW + ox) * ckk;
        for (int ic = 0; ic < C; ++ic)
          for (int ky = 0; ky < K; ++ky) {
            int iy = oy * S - P + ky;
            if (iy < 0 || iy >= H) continue;
            const T* src = in + (static_cast<std::size_t>(ic) * H + iy) * W;
            T* dst = row + (ic * K + ky) * K;
            for (int kx = 0; kx < K; ++kx) {
              int ix = ox * S - P + kx;
              if (ix >= 0 && ix < W) dst[kx] = src[ix];
            }
          }
      }
    for (int f = 0; f < F; ++f) {
      const T* wrow = wgt + static_cast<std::size_t>(f) * ckk;
      for (int o = 0; o < OH * OW; ++o) {
        double acc = static_cast<double>(bias[f]) +
                     dot4(wrow, colbuf.data() + static_cast<std::size_t>(o) * ckk, ckk);
        out[static_cast<std::size_t>(f) * OH * OW + o] = static_cast<T>(acc);
      }
    }
    return;
  }
  for (int f = 0; f < F; ++f) {
    const T* wrow = wgt + static_cast<std::size_t>(f) * ckk;
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        double s[4] = {0, 0, 0, 0};
        int kk = 0;
        for (int ic = 0; ic < C; ++ic)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx, ++kk) {
              int iy = oy * S - P + ky;
              int ix = ox * S - P + kx;
              T v = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                        ? in[(static_cast<std::size_t>(ic) * H + iy) * W + ix]
                        : T{0};
              s[kk % 4] += static_cast<double>(wrow[kk]) * static_cast<double>(v);
            }
        out[(static_cast<std::size_t>(f) * OH + oy) * OW + ox] =
            static_cast<T>(static_cast<double>(bias[f]) + combine4(s));
      }
  }
}

// dwgt/dbias accumulate in double across samples; dx is per sample.
template <typename T>
void conv_backward(const T* in, int C, int H, int W, const T* wgt, int F,
                   int K, int S, int P, int OH, int OW, const T* dy,
                   double* dwgt, double* dbias, T* dx) {
  for (int f = 0; f < F; ++f) {
    const T* dyf = dy + static_cast<std::size_t>(f) * OH * OW;
    double acc = 0;
    for (int o = 0; o < OH * OW; ++o) acc += static_cast<double>(dyf[o]);
    dbias[f] += acc;
    for (int ic = 0; ic < C; ++ic)
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) {
          double sum = 0;
          for (int oy = 0; oy < OH; ++oy) {
            int iy = oy * S - P + ky;
            if (iy < 0 || iy >= H) continue;
            const T* row = in + (static_cast<std::size_t>(ic) * H + iy) * W;
            const T* dyrow = dyf + static_cast<std::size_t>(oy) * OW;
            for (int ox = 0; ox < OW; ++ox) {
              int ix = ox * S - P + kx;
              if (ix >= 0 && ix < W)
                sum += static_cast<double>(dyrow[ox]) * static_cast<double>(row[ix]);
            }
          }
          dwgt[((static_cast<std::size_t>(f) * C + ic) * K + ky) * K + kx] += sum;
        }
  }
  if (!dx) return;
  for (int ic = 0; ic < C; ++ic)
    for (int iy = 0; iy < H; ++iy)
      for (int ix = 0; ix < W; ++ix) {
        double sum = 0;
        for (int f = 0; f < F; ++f)
          for (int ky = 0; ky < K; ++ky) {
            int ny = iy + P - ky;
            if (ny < 0 || ny % S != 0) continue;
            int oy = ny / S;
            if (oy >= OH) continue;
            for (int kx = 0; kx < K; ++kx) {
              int nx = ix + P - kx;
              if (nx < 0 || nx % S != 0) continue;
              int ox = nx / S;
              if (ox >= OW) continue;
              sum += static_cast<double>(
                         wgt[((static_cast<std::size_t>(f) * C + ic) * K + ky) * K + kx]) *
                     static_cast<double>(
                         dy[(static_cast<std::size_t>(f) * OH + oy) * OW + ox]);
            }
          }
        dx[(static_cast<std::size_t>(ic) * H + iy) * W + ix] = static_cast<T>(sum);
      }
}

}  // namespace detail

// batch shape {N, C, H, W} (or {N, n} for flat inputs) -> {N, K}. When the
// spec ends in Softmax the rows are probabilities, otherwise logits.
template <typename T>
TensorT<T> forward(const NetSpec& spec, const ParamsT<T>& params,
                   const TensorT<T>& batch, ConvPath path = ConvPath::Im2col);

// Mean cross-entropy of the batch against integer labels. A trailing Softmax
// layer is folded into the loss. Signature capture is optional.
template <typename T>
double batch_loss(const NetSpec& spec, const ParamsT<T>& params,
                  const TensorT<T>& batch, const std::vector<int>& labels,
                  ConvPath path = ConvPath::Im2col,
                  ActivationSignature* sig = nullptr);

// Loss plus exact reverse-mode gradients, averaged over the batch. grads is
// resized and overwritten.
template <typename T>
double loss_and_grads(const NetSpec& spec, const ParamsT<T>& params,
                      const TensorT<T>& batch, const std::vector<int>& labels,
                      ParamsT<T>& grads, ConvPath path = ConvPath::Im2col);

// Central finite differences (f(t+e)-f(t-e))/2e against analytic gradients on
// at least 200 seed-chosen parameter coordinates, in double precision.
// Returns max over coordinates of |a-n|/max(|a|,|n|,1e-8). Coordinates whose
// probe evaluations disagree on a ReLU sign or pool argmax are replaced by
// the next candidates: the difference quotient does not approximate the
// derivative across a kink.
double grad_check(const NetSpec& spec, std::uint64_t seed, double epsilon,
                  ConvPath path = ConvPath::Im2col);

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 32;
  int epochs = 10;
  std::uint64_t seed = 1;
  ConvPath conv_path = ConvPath::Im2col;
};

void validate(const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double val_accuracy = 0;  // 0 when no validation set is given
};

// SGD with momentum (v = m*v - lr*g; w += v) over seed-keyed shuffles, one
// independent shuffle stream per epoch. Deterministic given the seed.
std::vector<EpochStats> train(const NetSpec& spec, Params& params,
                              const std::vector<Tensor>& train_images,
                              const std::vector<int>& train_labels,
                              const std::vector<Tensor>& val_images,
                              const std::vector<int>& val_labels,
                              const TrainConfig& cfg);

// Softmax probabilities for one image, index-aligned with the class order.
std::vector<double> predict(const NetSpec& spec, const Params& params,
                            const Tensor& image,
                            ConvPath path = ConvPath::Im2col);

// Argmax class per image, forwarded in batches.
std::vector<int> predict_classes(const NetSpec& spec, const Params& params,
                                 const std::vector<Tensor>& images,
                                 ConvPath path = ConvPath::Im2col);

void save_params(const std::string& path, const Params& params);
Params load_params(const std::string& path, const NetSpec& spec);

// ---- template implementations ----

namespace detail {

template <typename T>
struct SampleTrace {
  std::vector<std::vector<T>> acts;         // acts[i] = input of layer i
  std::vector<std::vector<int>> pool_arg;   // per layer, flat argmax indices
};

inline int conv_out_dim(int in, int k, int s, int p) {
  return (in + 2 * p - k) / s + 1;
}

// Evaluates all layers up to layer_end; acts.back() is that prefix's output.
template <typename T>
void eval_sample(const NetSpec& spec,
                 const std::vector<std::vector<int>>& shapes,
                 const ParamsT<T>& params, ConvPath path, const T* input,
                 std::size_t input_len, std::size_t layer_end,
                 SampleTrace<T>& tr, std::vector<T>& colbuf,
                 ActivationSignature* sig) {
  tr.acts.assign(layer_end + 1, {});
  tr.pool_arg.assign(layer_end, {});
  tr.acts[0].assign(input, input + input_len);

  int pi = 0;
  for (std::size_t li = 0; li < layer_end; ++li) {
    const LayerSpec& L = spec.layers[li];
    const std::vector<int>& in_s = li == 0 ? spec.input : shapes[li - 1];
    const std::vector<int>& out_s = shapes[li];
    const std::vector<T>& x = tr.acts[li];
    std::vector<T>& y = tr.acts[li + 1];
    y.assign(TensorT<T>::numel_of(out_s), T{0});

    switch (L.kind) {
      case LayerKind::Conv: {
        conv_forward(x.data(), in_s[0], in_s[1], in_s[2],
                     params[pi].data.data(), params[pi + 1].data.data(),
                     L.filters, L.kernel, L.stride, L.padding, out_s[1],
                     out_s[2], y.data(), path, colbuf);
        pi += 2;
        break;
      }
      case LayerKind::Relu: {
        for (std::size_t i = 0; i < x.size(); ++i)
          y[i] = x[i] > T{0} ? x[i] : T{0};
        if (sig)
          for (T v : x) sig->marks.push_back(v > T{0} ? 1 : 0);
        break;
      }
      case LayerKind::MaxPool: {
        int C = in_s[0], H = in_s[1], W = in_s[2];
        int OH = out_s[1], OW = out_s[2];
        tr.pool_arg[li].resize(y.size());
        for (int c = 0; c < C; ++c)
          for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
              int best = -1;
              T bv{};
              for (int ky = 0; ky < L.kernel; ++ky)
                for (int kx = 0; kx < L.kernel; ++kx) {
                  int iy = oy * L.stride + ky;
                  int ix = ox * L.stride + kx;
                  if (iy >= H || ix >= W) continue;
                  int idx = (c * H + iy) * W + ix;
                  if (best < 0 || x[static_cast<std::size_t>(idx)] > bv) {
                    best = idx;
                    bv = x[static_cast<std::size_t>(idx)];
                  }
                }
              std::size_t o = static_cast<std::size_t>((c * OH + oy) * OW + ox);
              y[o] = bv;
              tr.pool_arg[li][o] = best;
              if (sig) sig->marks.push_back(best);
            }
        break;
      }
      case LayerKind::Flatten: {
        y = x;
        break;
      }
      case LayerKind::Dense: {
        int n = in_s[0];
        const T* wgt = params[pi].data.data();
        const T* bias = params[pi + 1].data.data();
        for (int u = 0; u < L.units; ++u)
          y[static_cast<std::size_t>(u)] = static_cast<T>(
              static_cast<double>(bias[u]) +
              dot4(wgt + static_cast<std::size_t>(u) * n, x.data(), n));
        pi += 2;
        break;
      }
      case LayerKind::Softmax: {
        double m = -std::numeric_limits<double>::infinity();
        for (T v : x) m = std::max(m, static_cast<double>(v));
        double sum = 0;
        std::vector<double> e(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          e[i] = std::exp(static_cast<double>(x[i]) - m);
          sum += e[i];
        }
        for (std::size_t i = 0; i < x.size(); ++i)
          y[i] = static_cast<T>(e[i] / sum);
        break;
      }
    }
  }
}

template <typename T>
int param_layer_cursor(const NetSpec& spec, std::size_t li) {
  int pi = 0;
  for (std::size_t i = 0; i < li; ++i)
    if (spec.layers[i].kind == LayerKind::Conv ||
        spec.layers[i].kind == LayerKind::Dense)
      pi += 2;
  return pi;
}

inline std::size_t effective_layers(const NetSpec& spec) {
  std::size_t n = spec.layers.size();
  if (n && spec.layers[n - 1].kind == LayerKind::Softmax) return n - 1;
  return n;
}

// log-softmax cross entropy on one logit row; fills dlogits with
// (p - onehot) * scale when requested.
template <typename T>
double ce_row(const T* z, int k, int label, double scale, T* dlogits) {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) m = std::max(m, static_cast<double>(z[i]));
  double sum = 0;
  for (int i = 0; i < k; ++i) sum += std::exp(static_cast<double>(z[i]) - m);
  double lse = m + std::log(sum);
  if (dlogits) {
    for (int i = 0; i < k; ++i) {
      double p = std::exp(static_cast<double>(z[i]) - lse);
      dlogits[i] = static_cast<T>((p - (i == label ? 1.0 : 0.0)) * scale);
    }
  }
  return lse - static_cast<double>(z[label]);
}

}  // namespace detail

template <typename T>
TensorT<T> forward(const NetSpec& spec, const ParamsT<T>& params,
                   const TensorT<T>& batch, ConvPath path) {
  auto shapes = chain_shapes(spec);
  if (batch.shape.empty() || batch.shape[0] <= 0)
    throw ShapeError("batch must have a leading sample dimension");
  std::vector<int> sample_shape(batch.shape.begin() + 1, batch.shape.end());
  if (sample_shape != spec.input)
    throw ShapeError("batch does not match the spec input shape");
  int n = batch.shape[0];
  std::size_t in_len = TensorT<T>::numel_of(spec.input);

  TensorT<T> out({n, spec.classes});
  detail::SampleTrace<T> tr;
  std::vector<T> colbuf;
  for (int i = 0; i < n; ++i) {
    detail::eval_sample(spec, shapes, params, path,
                        batch.data.data() + static_cast<std::size_t>(i) * in_len,
                        in_len, spec.layers.size(), tr, colbuf, nullptr);
    std::copy(tr.acts.back().begin(), tr.acts.back().end(),
              out.data.begin() + static_cast<std::size_t>(i) * spec.classes);
  }
  return out;
}

template <typename T>
double batch_loss(const NetSpec& spec, const ParamsT<T>& params,
                  const TensorT<T>& batch, const std::vector<int>& labels,
                  ConvPath path, ActivationSignature* sig) {
  auto shapes = chain_shapes(spec);
  std::vector<int> sample_shape(batch.shape.begin() + 1, batch.shape.end());
  if (batch.shape.empty() || sample_shape != spec.input)
    throw ShapeError("batch does not match the spec input shape");
  int n = batch.shape[0];
  if (static_cast<std::size_t>(n) != labels.size())
    throw ShapeError("labels do not match batch size");
  std::size_t in_len = TensorT<T>::numel_of(spec.input);
  std::size_t eff = detail::effective_layers(spec);

  double total = 0;
  detail::SampleTrace<T> tr;
  std::vector<T> colbuf;
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0 ||
        labels[static_cast<std::size_t>(i)] >= spec.classes)
      throw DomainError("label out of range");
    detail::eval_sample(spec, shapes, params, path,
                        batch.data.data() + static_cast<std::size_t>(i) * in_len,
                        in_len, eff, tr, colbuf, sig);
    total += detail::ce_row<T>(tr.acts.back().data(), spec.classes,
                               labels[static_cast<std::size_t>(i)], 0.0,
                               nullptr);
  }
  return total / n;
}

template <typename T>
double loss_and_grads(const NetSpec& spec, const ParamsT<T>& params,
                      const TensorT<T>& batch, const std::vector<int>& labels,
                      ParamsT<T>& grads, ConvPath path) {
  auto shapes = chain_shapes(spec);
  std::vector<int> sample_shape(batch.shape.begin() + 1, batch.shape.end());
  if (batch.shape.empty() || sample_shape != spec.input)
    throw ShapeError("batch does not match the spec input shape");
  int n = batch.shape[0];
  if (static_cast<std::size_t>(n) != labels.size())
    throw ShapeError("labels do not match batch size");
  for (int l : labels)
    if (l < 0 || l >= spec.classes) throw DomainError("label out of range");

  std::size_t in_len = TensorT<T>::numel_of(spec.input);
  std::size_t eff = detail::effective_layers(spec);

  // batch accumulation in double, written back to T at the end
  std::vector<std::vector<double>> acc(params.size());
  for (std::size_t t = 0; t < params.size(); ++t)
    acc[t].assign(params[t].numel(), 0.0);

  double total = 0;
  detail::SampleTrace<T> tr;
  std::vector<T> colbuf;
  std::vector<T> dy, dx;
  for (int s = 0; s < n; ++s) {
    detail::eval_sample(spec, shapes, params, path,
                        batch.data.data() + static_cast<std::size_t>(s) * in_len,
                        in_len, eff, tr, colbuf, nullptr);
    dy.assign(static_cast<std::size_t>(spec.classes), T{0});
    total += detail::ce_row<T>(tr.acts.back().data(), spec.classes,
                               labels[static_cast<std::size_t>(s)], 1.0 / n,
                               dy.data());

    int pi = detail::param_layer_cursor<T>(spec, eff);
    for (std::size_t li = eff; li-- > 0;) {
      const LayerSpec& L = spec.layers[li];
      const std::vector<int>& in_s = li == 0 ? spec.input : shapes[li - 1];
      const std::vector<T>& x = tr.acts[li];
      dx.assign(x.size(), T{0});
      switch (L.kind) {
        case LayerKind::Conv: {
          pi -= 2;
          detail::conv_backward(x.data(), in_s[0], in_s[1], in_s[2],
                                params[static_cast<std::size_t>(pi)].data.data(),
                                L.filters, L.kernel, L.stride, L.padding,
                                shapes[li][1], shapes[li][2], dy.data(),
                                acc[static_cast<std::size_t>(pi)].data(),
                                acc[static_cast<std::size_t>(pi) + 1].data(),
                                li > 0 ? dx.data() : nullptr);
          break;
        }
        case LayerKind::Relu: {
          for (std::size_t i = 0; i < x.size(); ++i)
            dx[i] = x[i] > T{0} ? dy[i] : T{0};
          break;
        }
        case LayerKind::MaxPool: {
          const std::vector<int>& arg = tr.pool_arg[li];
          for (std::size_t o = 0; o < dy.size(); ++o)
            dx[static_cast<std::size_t>(arg[o])] += dy[o];
          break;
        }
        case LayerKind::Flatten: {
          dx = dy;
          break;
        }
        case LayerKind::Dense: {
          pi -= 2;
          int in_n = in_s[0];
          const T* wgt = params[static_cast<std::size_t>(pi)].data.data();
          double* dw = acc[static_cast<std::size_t>(pi)].data();
          double* db = acc[static_cast<std::size_t>(pi) + 1].data();
          for (int u = 0; u < L.units; ++u) {
            double g = static_cast<double>(dy[static_cast<std::size_t>(u)]);
            db[u] += g;
            double* dwrow = dw + static_cast<std::size_t>(u) * in_n;
            for (int i = 0; i < in_n; ++i)
              dwrow[i] += g * static_cast<double>(x[static_cast<std::size_t>(i)]);
          }
          if (li > 0) {
            for (int i = 0; i < in_n; ++i) {
              double sum = 0;
              for (int u = 0; u < L.units; ++u)
                sum += static_cast<double>(wgt[static_cast<std::size_t>(u) * in_n + i]) *
                       static_cast<double>(dy[static_cast<std::size_t>(u)]);
              dx[static_cast<std::size_t>(i)] = static_cast<T>(sum);
            }
          }
          break;
        }
        case LayerKind::Softmax:
          throw ConfigError("softmax may only appear as the final layer");
      }
      dy.swap(dx);
    }
  }

  grads.resize(params.size());
  for (std::size_t t = 0; t < params.size(); ++t) {
    grads[t].shape = params[t].shape;
    grads[t].data.resize(params[t].numel());
    for (std::size_t i = 0; i < acc[t].size(); ++i)
      grads[t].data[i] = static_cast<T>(acc[t][i]);
  }
  return total / n;
}

}  // namespace ento::nnet
