// Copyright 2026 The chanprune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "chanprune/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "chanprune/error.hpp"

namespace chanprune {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Geometry of a sliding-window op on a single sample.
struct Window {
  std::int64_t C, H, W;     // input
  std::int64_t Ho, Wo;      // output
  std::int64_t kh, kw, sh, sw, ph, pw;

  std::int64_t patch() const { return C * kh * kw; }
  std::int64_t positions() const { return Ho * Wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0; }
};

Window window_of(const LayerSpec& l, const LayerGeometry& g) {
  return {g.in_channels, g.in_height, g.in_width, g.out_height, g.out_width,
          l.kernel.h,    l.kernel.w,  l.stride.h, l.stride.w,   l.padding.h, l.padding.w};
}

void im2col(const float* x, const Window& g, float* col) {
  const std::int64_t P = g.positions();
  for (std::int64_t c = 0; c < g.C; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        float* row = col + ((c * g.kh + i) * g.kw + j) * P;
        for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
          const std::int64_t h = oh * g.sh - g.ph + i;
          for (std::int64_t ow = 0; ow < g.Wo; ++ow) {
            const std::int64_t w = ow * g.sw - g.pw + j;
            row[oh * g.Wo + ow] = (h >= 0 && h < g.H && w >= 0 && w < g.W) ? x[(c * g.H + h) * g.W + w] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const Window& g, float* dx) {
  const std::int64_t P = g.positions();
  for (std::int64_t c = 0; c < g.C; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const float* row = col + ((c * g.kh + i) * g.kw + j) * P;
        for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
          const std::int64_t h = oh * g.sh - g.ph + i;
          if (h < 0 || h >= g.H) continue;
          for (std::int64_t ow = 0; ow < g.Wo; ++ow) {
            const std::int64_t w = ow * g.sw - g.pw + j;
            if (w >= 0 && w < g.W) dx[(c * g.H + h) * g.W + w] += row[oh * g.Wo + ow];
          }
        }
      }
    }
  }
}

Tensor& param(const ModelSnapshot& s, const LayerSpec& l, std::string_view suffix, const Shape& expected) {
  auto it = s.tensors.find(tensor_name(l.id, suffix));
  if (it == s.tensors.end()) {
    throw ShapeError("layer '" + l.id + "' is missing tensor '" + tensor_name(l.id, suffix) + "'");
  }
  if (it->second.shape() != expected) {
    throw ShapeError("layer '" + l.id + "': tensor '" + it->first + "' has shape " +
                     shape_to_string(it->second.shape()) + ", expected " + shape_to_string(expected));
  }
  return const_cast<Tensor&>(it->second);
}

// ---------------------------------------------------------------------------
// Forward kernels. All activations are N x C x H x W.

void conv_forward(const Tensor& x, const Tensor& w, const Tensor* bias, const Window& g, std::int64_t cout,
                  Tensor& y) {
  const std::int64_t N = x.dim(0), K = g.patch(), P = g.positions();
  const ConstMatMap wm(w.data(), cout, K);
  std::vector<float> col(g.pointwise() ? 0 : static_cast<std::size_t>(K * P));
  for (std::int64_t n = 0; n < N; ++n) {
    const float* xn = x.data() + n * g.C * g.H * g.W;
    MatMap out(y.data() + n * cout * P, cout, P);
    if (g.pointwise()) {
      out.noalias() = wm * ConstMatMap(xn, K, P);
    } else {
      im2col(xn, g, col.data());
      out.noalias() = wm * ConstMatMap(col.data(), K, P);
    }
    if (bias) {
      for (std::int64_t o = 0; o < cout; ++o) out.row(o).array() += (*bias)[o];
    }
  }
}

void conv_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const Window& g, std::int64_t cout,
                   Tensor* dx, Tensor& dw, Tensor* db) {
  const std::int64_t N = x.dim(0), K = g.patch(), P = g.positions();
  const ConstMatMap wm(w.data(), cout, K);
  MatMap dwm(dw.data(), cout, K);
  std::vector<float> col(static_cast<std::size_t>(K * P));
  RowMat dcol(K, P);
  for (std::int64_t n = 0; n < N; ++n) {
    const float* xn = x.data() + n * g.C * g.H * g.W;
    const ConstMatMap dyn(dy.data() + n * cout * P, cout, P);
    if (g.pointwise()) {
      dwm.noalias() += dyn * ConstMatMap(xn, K, P).transpose();
    } else {
      im2col(xn, g, col.data());
      dwm.noalias() += dyn * ConstMatMap(col.data(), K, P).transpose();
    }
    if (db) {
      for (std::int64_t o = 0; o < cout; ++o) (*db)[o] += dyn.row(o).sum();
    }
    if (dx) {
      float* dxn = dx->data() + n * g.C * g.H * g.W;
      if (g.pointwise()) {
        MatMap(dxn, K, P).noalias() += wm.transpose() * dyn;
      } else {
        dcol.noalias() = wm.transpose() * dyn;
        col2im_add(dcol.data(), g, dxn);
      }
    }
  }
}

void depthwise_forward(const Tensor& x, const Tensor& w, const Tensor* bias, const Window& g, Tensor& y) {
  const std::int64_t N = x.dim(0);
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < g.C; ++c) {
      const float* xp = x.data() + (n * g.C + c) * g.H * g.W;
      const float* k = w.data() + c * g.kh * g.kw;
      float* yp = y.data() + (n * g.C + c) * g.Ho * g.Wo;
      const float b = bias ? (*bias)[c] : 0.0f;
      for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
        for (std::int64_t ow = 0; ow < g.Wo; ++ow) {
          float acc = 0.0f;
          for (std::int64_t i = 0; i < g.kh; ++i) {
            const std::int64_t h = oh * g.sh - g.ph + i;
            if (h < 0 || h >= g.H) continue;
            for (std::int64_t j = 0; j < g.kw; ++j) {
              const std::int64_t ww = ow * g.sw - g.pw + j;
              if (ww >= 0 && ww < g.W) acc += k[i * g.kw + j] * xp[h * g.W + ww];
            }
          }
          yp[oh * g.Wo + ow] = acc + b;
        }
      }
    }
  }
}

void depthwise_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const Window& g, Tensor* dx,
                        Tensor& dw, Tensor* db) {
  const std::int64_t N = x.dim(0);
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < g.C; ++c) {
      const float* xp = x.data() + (n * g.C + c) * g.H * g.W;
      const float* k = w.data() + c * g.kh * g.kw;
      float* dk = dw.data() + c * g.kh * g.kw;
      const float* dyp = dy.data() + (n * g.C + c) * g.Ho * g.Wo;
      float* dxp = dx ? dx->data() + (n * g.C + c) * g.H * g.W : nullptr;
      for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
        for (std::int64_t ow = 0; ow < g.Wo; ++ow) {
          const float d = dyp[oh * g.Wo + ow];
          if (db) (*db)[c] += d;
          for (std::int64_t i = 0; i < g.kh; ++i) {
            const std::int64_t h = oh * g.sh - g.ph + i;
            if (h < 0 || h >= g.H) continue;
            for (std::int64_t j = 0; j < g.kw; ++j) {
              const std::int64_t ww = ow * g.sw - g.pw + j;
              if (ww < 0 || ww >= g.W) continue;
              dk[i * g.kw + j] += d * xp[h * g.W + ww];
              if (dxp) dxp[h * g.W + ww] += d * k[i * g.kw + j];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

class Executor {
 public:
  explicit Executor(const ModelSnapshot& s)
      : s_(s), topo_(resolve_topology(s)), geo_(infer_geometry(s)), last_use_(s.layers.size(), -1) {
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
      if (topo_.input[i] >= 0) last_use_[static_cast<std::size_t>(topo_.input[i])] = static_cast<int>(i);
      if (topo_.skip[i] >= 0) last_use_[static_cast<std::size_t>(topo_.skip[i])] = static_cast<int>(i);
    }
  }

  const Topology& topology() const { return topo_; }
  const std::vector<LayerGeometry>& geometry() const { return geo_; }

  /// Runs layers [0, stop). In eval mode outputs are released after their
  /// last consumer unless keep_all is set.
  void run(const Tensor& batch, const ForwardOptions& options, ForwardCache& cache, std::size_t stop,
           bool keep_all) const {
    const auto& in = s_.input_shape;
    if (batch.rank() != 4 || batch.dim(1) != in.channels || batch.dim(2) != in.height ||
        batch.dim(3) != in.width) {
      throw ShapeError("input batch shape " + shape_to_string(batch.shape()) + " does not match (N," +
                       std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                       std::to_string(in.width) + ")");
    }
    const std::size_t L = s_.layers.size();
    cache.mode = options.mode;
    cache.snapshot = &s_;
    cache.consumed = false;
    cache.input = batch;
    cache.outputs.assign(L, Tensor());
    cache.normalized.assign(L, Tensor());
    cache.inv_std.assign(L, {});
    cache.argmax.assign(L, {});
    cache.bn_stats.clear();
    const bool train = options.mode == Mode::train;
    for (std::size_t i = 0; i < std::min(stop, L); ++i) {
      compute(i, cache, train);
      if (options.checked && !cache.outputs[i].all_finite()) {
        throw NumericError("non-finite activation at layer '" + s_.layers[i].id + "'");
      }
      if (!train && !keep_all) release(i, cache);
    }
  }

  const Tensor& input_of(std::size_t i, const ForwardCache& cache) const {
    const int src = topo_.input[i];
    return src < 0 ? cache.input : cache.outputs[static_cast<std::size_t>(src)];
  }

  Gradients backward(ForwardCache& cache, const Tensor& grad_logits) const;

 private:
  void release(std::size_t i, ForwardCache& cache) const {
    auto drop = [&](int src) {
      if (src >= 0 && last_use_[static_cast<std::size_t>(src)] == static_cast<int>(i) &&
          static_cast<std::size_t>(src) + 1 != s_.layers.size()) {
        cache.outputs[static_cast<std::size_t>(src)] = Tensor();
      }
    };
    drop(topo_.input[i]);
    drop(topo_.skip[i]);
  }

  void compute(std::size_t i, ForwardCache& cache, bool train) const {
    const LayerSpec& l = s_.layers[i];
    const LayerGeometry& g = geo_[i];
    const Tensor& x = input_of(i, cache);
    const std::int64_t N = x.dim(0);
    Tensor y({N, g.out_channels, g.out_height, g.out_width});
    switch (l.kind) {
      case LayerKind::conv: {
        const Tensor& w = param(s_, l, kWeightSuffix, {g.out_channels, g.in_channels, l.kernel.h, l.kernel.w});
        const Tensor* b = l.has_bias ? &param(s_, l, kBiasSuffix, {g.out_channels}) : nullptr;
        conv_forward(x, w, b, window_of(l, g), g.out_channels, y);
        break;
      }
      case LayerKind::depthwise_conv: {
        const Tensor& w = param(s_, l, kWeightSuffix, {g.out_channels, 1, l.kernel.h, l.kernel.w});
        const Tensor* b = l.has_bias ? &param(s_, l, kBiasSuffix, {g.out_channels}) : nullptr;
        depthwise_forward(x, w, b, window_of(l, g), y);
        break;
      }
      case LayerKind::batch_norm:
        batch_norm(i, x, y, cache, train);
        break;
      case LayerKind::relu:
        for (std::int64_t k = 0; k < x.numel(); ++k) y[k] = std::max(x[k], 0.0f);
        break;
      case LayerKind::relu6:
        for (std::int64_t k = 0; k < x.numel(); ++k) y[k] = std::min(std::max(x[k], 0.0f), 6.0f);
        break;
      case LayerKind::max_pool:
        max_pool(x, window_of(l, g), y, cache.argmax[i]);
        break;
      case LayerKind::avg_pool:
        avg_pool(x, window_of(l, g), y);
        break;
      case LayerKind::global_avg_pool: {
        const std::int64_t HW = g.in_height * g.in_width;
        for (std::int64_t nc = 0; nc < N * g.out_channels; ++nc) {
          double acc = 0.0;
          for (std::int64_t k = 0; k < HW; ++k) acc += x[nc * HW + k];
          y[nc] = static_cast<float>(acc / static_cast<double>(HW));
        }
        break;
      }
      case LayerKind::flatten:
        std::copy(x.data(), x.data() + x.numel(), y.data());
        break;
      case LayerKind::fully_connected: {
        const Tensor& w = param(s_, l, kWeightSuffix, {g.out_channels, g.in_channels});
        MatMap ym(y.data(), N, g.out_channels);
        ym.noalias() = ConstMatMap(x.data(), N, g.in_channels) * ConstMatMap(w.data(), g.out_channels, g.in_channels).transpose();
        if (l.has_bias) {
          const Tensor& b = param(s_, l, kBiasSuffix, {g.out_channels});
          for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t o = 0; o < g.out_channels; ++o) ym(n, o) += b[o];
          }
        }
        break;
      }
      case LayerKind::add_residual: {
        const int src = topo_.skip[i];
        const Tensor& other = src < 0 ? cache.input : cache.outputs[static_cast<std::size_t>(src)];
        if (other.shape() != x.shape()) {
          throw ShapeError("add_residual '" + l.id + "' operands differ: " + shape_to_string(x.shape()) +
                           " vs " + shape_to_string(other.shape()));
        }
        for (std::int64_t k = 0; k < x.numel(); ++k) y[k] = x[k] + other[k];
        break;
      }
    }
    cache.outputs[i] = std::move(y);
  }

  void batch_norm(std::size_t i, const Tensor& x, Tensor& y, ForwardCache& cache, bool train) const {
    const LayerSpec& l = s_.layers[i];
    const std::int64_t C = geo_[i].out_channels;
    const Shape vec{C};
    const Tensor& gamma = param(s_, l, kGammaSuffix, vec);
    const Tensor& beta = param(s_, l, kBetaSuffix, vec);
    const Tensor& running_mean = param(s_, l, kMeanSuffix, vec);
    const Tensor& running_var = param(s_, l, kVarSuffix, vec);
    const std::int64_t N = x.dim(0), HW = x.dim(2) * x.dim(3);
    const auto M = N * HW;
    if (!train) {
      for (std::int64_t c = 0; c < C; ++c) {
        const float scale = gamma[c] / std::sqrt(running_var[c] + static_cast<float>(l.epsilon));
        const float shift = beta[c] - running_mean[c] * scale;
        for (std::int64_t n = 0; n < N; ++n) {
          const float* xp = x.data() + (n * C + c) * HW;
          float* yp = y.data() + (n * C + c) * HW;
          for (std::int64_t k = 0; k < HW; ++k) yp[k] = xp[k] * scale + shift;
        }
      }
      return;
    }
    if (M < 2) throw ShapeError("batch_norm '" + l.id + "' needs more than one value per channel in train mode");
    BatchNormStats stats;
    stats.mean.resize(static_cast<std::size_t>(C));
    stats.biased_var.resize(static_cast<std::size_t>(C));
    stats.count = M;
    Tensor xhat(x.shape());
    std::vector<float> inv_std(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
      double sum = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const float* xp = x.data() + (n * C + c) * HW;
        for (std::int64_t k = 0; k < HW; ++k) sum += xp[k];
      }
      const double mean = sum / static_cast<double>(M);
      double sq = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const float* xp = x.data() + (n * C + c) * HW;
        for (std::int64_t k = 0; k < HW; ++k) {
          const double d = xp[k] - mean;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(M);
      stats.mean[static_cast<std::size_t>(c)] = mean;
      stats.biased_var[static_cast<std::size_t>(c)] = var;
      const auto is = static_cast<float>(1.0 / std::sqrt(var + l.epsilon));
      inv_std[static_cast<std::size_t>(c)] = is;
      const auto mf = static_cast<float>(mean);
      for (std::int64_t n = 0; n < N; ++n) {
        const float* xp = x.data() + (n * C + c) * HW;
        float* hp = xhat.data() + (n * C + c) * HW;
        float* yp = y.data() + (n * C + c) * HW;
        for (std::int64_t k = 0; k < HW; ++k) {
          hp[k] = (xp[k] - mf) * is;
          yp[k] = gamma[c] * hp[k] + beta[c];
        }
      }
    }
    cache.normalized[i] = std::move(xhat);
    cache.inv_std[i] = std::move(inv_std);
    cache.bn_stats[l.id] = std::move(stats);
  }

  static void max_pool(const Tensor& x, const Window& g, Tensor& y, std::vector<std::int64_t>& argmax) {
    const std::int64_t N = x.dim(0);
    argmax.assign(static_cast<std::size_t>(y.numel()), 0);
    for (std::int64_t nc = 0; nc < N * g.C; ++nc) {
      const float* xp = x.data() + nc * g.H * g.W;
      for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
        for (std::int64_t ow = 0; ow < g.Wo; ++ow) {
          float best = -std::numeric_limits<float>::infinity();
          std::int64_t best_at = -1;
          for (std::int64_t i = 0; i < g.kh; ++i) {
            const std::int64_t h = oh * g.sh - g.ph + i;
            if (h < 0 || h >= g.H) continue;
            for (std::int64_t j = 0; j < g.kw; ++j) {
              const std::int64_t w = ow * g.sw - g.pw + j;
              if (w < 0 || w >= g.W) continue;
              if (best_at < 0 || xp[h * g.W + w] > best) {
                best = xp[h * g.W + w];
                best_at = h * g.W + w;
              }
            }
          }
          const std::int64_t o = nc * g.Ho * g.Wo + oh * g.Wo + ow;
          y[o] = best;
          argmax[static_cast<std::size_t>(o)] = nc * g.H * g.W + best_at;
        }
      }
    }
  }

  static void avg_pool(const Tensor& x, const Window& g, Tensor& y) {
    const std::int64_t N = x.dim(0);
    for (std::int64_t nc = 0; nc < N * g.C; ++nc) {
      const float* xp = x.data() + nc * g.H * g.W;
      for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
        for (std::int64_t ow = 0; ow < g.Wo; ++ow) {
          float acc = 0.0f;
          std::int64_t count = 0;
          for (std::int64_t i = 0; i < g.kh; ++i) {
            const std::int64_t h = oh * g.sh - g.ph + i;
            if (h < 0 || h >= g.H) continue;
            for (std::int64_t j = 0; j < g.kw; ++j) {
              const std::int64_t w = ow * g.sw - g.pw + j;
              if (w < 0 || w >= g.W) continue;
              acc += xp[h * g.W + w];
              ++count;
            }
          }
          y[nc * g.Ho * g.Wo + oh * g.Wo + ow] = acc / static_cast<float>(count);
        }
      }
    }
  }

  const ModelSnapshot& s_;
  Topology topo_;
  std::vector<LayerGeometry> geo_;
  std::vector<int> last_use_;
};

Gradients Executor::backward(ForwardCache& cache, const Tensor& grad_logits) const {
  const std::size_t L = s_.layers.size();
  Gradients grads;
  for (const auto& name : trainable_tensors(s_)) grads.emplace(name, Tensor(s_.tensor(name).shape()));
  if (L == 0) return grads;

  std::vector<Tensor> d(L);
  const Tensor& logits = cache.outputs[L - 1];
  if (grad_logits.numel() != logits.numel() || grad_logits.dim(0) != logits.dim(0)) {
    throw ShapeError("grad_logits shape " + shape_to_string(grad_logits.shape()) + " does not match logits");
  }
  d[L - 1] = grad_logits.reshaped(logits.shape());

  auto accumulate = [&](int src, const Tensor& delta) {
    if (src < 0) return;
    auto& slot = d[static_cast<std::size_t>(src)];
    if (slot.empty()) {
      slot = delta;
    } else {
      for (std::int64_t k = 0; k < delta.numel(); ++k) slot[k] += delta[k];
    }
  };
  auto grad_of = [&](const LayerSpec& l, std::string_view suffix) -> Tensor& {
    return grads.at(tensor_name(l.id, suffix));
  };

  for (std::size_t idx = L; idx-- > 0;) {
    if (d[idx].empty()) continue;
    const LayerSpec& l = s_.layers[idx];
    const LayerGeometry& g = geo_[idx];
    const Tensor& x = input_of(idx, cache);
    const Tensor& dy = d[idx];
    const int src = topo_.input[idx];
    const bool need_dx = src >= 0;
    const std::int64_t N = x.dim(0);
    switch (l.kind) {
      case LayerKind::conv: {
        Tensor dx(need_dx ? x.shape() : Shape{});
        conv_backward(x, s_.tensor(tensor_name(l.id, kWeightSuffix)), dy, window_of(l, g), g.out_channels,
                      need_dx ? &dx : nullptr, grad_of(l, kWeightSuffix),
                      l.has_bias ? &grad_of(l, kBiasSuffix) : nullptr);
        if (need_dx) accumulate(src, dx);
        break;
      }
      case LayerKind::depthwise_conv: {
        Tensor dx(need_dx ? x.shape() : Shape{});
        depthwise_backward(x, s_.tensor(tensor_name(l.id, kWeightSuffix)), dy, window_of(l, g),
                           need_dx ? &dx : nullptr, grad_of(l, kWeightSuffix),
                           l.has_bias ? &grad_of(l, kBiasSuffix) : nullptr);
        if (need_dx) accumulate(src, dx);
        break;
      }
      case LayerKind::batch_norm: {
        const std::int64_t C = g.out_channels, HW = x.dim(2) * x.dim(3);
        const double M = static_cast<double>(N * HW);
        const Tensor& xhat = cache.normalized[idx];
        const auto& inv_std = cache.inv_std[idx];
        const Tensor& gamma = s_.tensor(tensor_name(l.id, kGammaSuffix));
        Tensor& dgamma = grad_of(l, kGammaSuffix);
        Tensor& dbeta = grad_of(l, kBetaSuffix);
        Tensor dx(x.shape());
        for (std::int64_t c = 0; c < C; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const float* dyp = dy.data() + (n * C + c) * HW;
            const float* hp = xhat.data() + (n * C + c) * HW;
            for (std::int64_t k = 0; k < HW; ++k) {
              sum_dy += dyp[k];
              sum_dy_xhat += static_cast<double>(dyp[k]) * hp[k];
            }
          }
          dgamma[c] += static_cast<float>(sum_dy_xhat);
          dbeta[c] += static_cast<float>(sum_dy);
          const double scale = gamma[c] * inv_std[static_cast<std::size_t>(c)] / M;
          for (std::int64_t n = 0; n < N; ++n) {
            const float* dyp = dy.data() + (n * C + c) * HW;
            const float* hp = xhat.data() + (n * C + c) * HW;
            float* dxp = dx.data() + (n * C + c) * HW;
            for (std::int64_t k = 0; k < HW; ++k) {
              dxp[k] = static_cast<float>(scale * (M * dyp[k] - sum_dy - hp[k] * sum_dy_xhat));
            }
          }
        }
        accumulate(src, dx);
        break;
      }
      case LayerKind::relu:
      case LayerKind::relu6: {
        if (!need_dx) break;
        const Tensor& y = cache.outputs[idx];
        const float upper = l.kind == LayerKind::relu6 ? 6.0f : std::numeric_limits<float>::infinity();
        Tensor dx(x.shape());
        for (std::int64_t k = 0; k < x.numel(); ++k) dx[k] = (y[k] > 0.0f && x[k] < upper) ? dy[k] : 0.0f;
        accumulate(src, dx);
        break;
      }
      case LayerKind::max_pool: {
        if (!need_dx) break;
        Tensor dx(x.shape());
        const auto& arg = cache.argmax[idx];
        for (std::int64_t k = 0; k < dy.numel(); ++k) dx[arg[static_cast<std::size_t>(k)]] += dy[k];
        accumulate(src, dx);
        break;
      }
      case LayerKind::avg_pool: {
        if (!need_dx) break;
        const Window w = window_of(l, g);
        Tensor dx(x.shape());
        for (std::int64_t nc = 0; nc < N * w.C; ++nc) {
          for (std::int64_t oh = 0; oh < w.Ho; ++oh) {
            for (std::int64_t ow = 0; ow < w.Wo; ++ow) {
              const std::int64_t h0 = std::max<std::int64_t>(oh * w.sh - w.ph, 0);
              const std::int64_t h1 = std::min(oh * w.sh - w.ph + w.kh, w.H);
              const std::int64_t w0 = std::max<std::int64_t>(ow * w.sw - w.pw, 0);
              const std::int64_t w1 = std::min(ow * w.sw - w.pw + w.kw, w.W);
              const float share = dy[nc * w.Ho * w.Wo + oh * w.Wo + ow] / static_cast<float>((h1 - h0) * (w1 - w0));
              for (std::int64_t h = h0; h < h1; ++h) {
                for (std::int64_t ww = w0; ww < w1; ++ww) dx[nc * w.H * w.W + h * w.W + ww] += share;
              }
            }
          }
        }
        accumulate(src, dx);
        break;
      }
      case LayerKind::global_avg_pool: {
        if (!need_dx) break;
        const std::int64_t HW = x.dim(2) * x.dim(3);
        Tensor dx(x.shape());
        for (std::int64_t nc = 0; nc < N * g.out_channels; ++nc) {
          const float share = dy[nc] / static_cast<float>(HW);
          for (std::int64_t k = 0; k < HW; ++k) dx[nc * HW + k] = share;
        }
        accumulate(src, dx);
        break;
      }
      case LayerKind::flatten:
        if (need_dx) accumulate(src, dy.reshaped(x.shape()));
        break;
      case LayerKind::fully_connected: {
        const Tensor& w = s_.tensor(tensor_name(l.id, kWeightSuffix));
        const ConstMatMap dym(dy.data(), N, g.out_channels);
        const ConstMatMap xm(x.data(), N, g.in_channels);
        MatMap(grad_of(l, kWeightSuffix).data(), g.out_channels, g.in_channels).noalias() += dym.transpose() * xm;
        if (l.has_bias) {
          Tensor& db = grad_of(l, kBiasSuffix);
          for (std::int64_t o = 0; o < g.out_channels; ++o) db[o] += dym.col(o).sum();
        }
        if (need_dx) {
          Tensor dx(x.shape());
          MatMap(dx.data(), N, g.in_channels).noalias() = dym * ConstMatMap(w.data(), g.out_channels, g.in_channels);
          accumulate(src, dx);
        }
        break;
      }
      case LayerKind::add_residual:
        accumulate(src, dy);
        accumulate(topo_.skip[idx], dy);
        break;
    }
    d[idx] = Tensor();
  }
  return grads;
}

}  // namespace

ForwardResult forward(const ModelSnapshot& s, const Tensor& batch, const ForwardOptions& options) {
  Executor exec(s);
  ForwardResult result;
  exec.run(batch, options, result.cache, s.layers.size(), /*keep_all=*/options.mode == Mode::train);
  if (s.layers.empty()) {
    throw ShapeError("cannot run forward on a model with no layers");
  }
  const Tensor& last = result.cache.outputs.back();
  result.logits = last.reshaped({last.dim(0), last.numel() / std::max<std::int64_t>(last.dim(0), 1)});
  return result;
}

Tensor infer(const ModelSnapshot& s, const Tensor& batch) {
  return forward(s, batch, {Mode::eval, false}).logits;
}

std::vector<std::string> trainable_tensors(const ModelSnapshot& s) {
  std::vector<std::string> names;
  for (const auto& l : s.layers) {
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::depthwise_conv:
      case LayerKind::fully_connected:
        names.push_back(tensor_name(l.id, kWeightSuffix));
        if (l.has_bias) names.push_back(tensor_name(l.id, kBiasSuffix));
        break;
      case LayerKind::batch_norm:
        names.push_back(tensor_name(l.id, kGammaSuffix));
        names.push_back(tensor_name(l.id, kBetaSuffix));
        break;
      default:
        break;
    }
  }
  return names;
}

Gradients backward(ForwardCache& cache, const Tensor& grad_logits) {
  if (cache.snapshot == nullptr || cache.consumed) {
    throw Error("stale forward cache: already consumed or never filled");
  }
  if (cache.mode != Mode::train) throw Error("stale forward cache: backward needs a train-mode forward");
  if (cache.outputs.size() != cache.snapshot->layers.size()) {
    throw Error("stale forward cache: snapshot changed since forward");
  }
  Executor exec(*cache.snapshot);
  auto grads = exec.backward(cache, grad_logits);
  cache.consumed = true;
  return grads;
}

void update_running_stats(ModelSnapshot& s, const ForwardCache& cache, double momentum) {
  for (const auto& [id, stats] : cache.bn_stats) {
    Tensor& mean = s.tensor(tensor_name(id, kMeanSuffix));
    Tensor& var = s.tensor(tensor_name(id, kVarSuffix));
    const double unbias = static_cast<double>(stats.count) / static_cast<double>(stats.count - 1);
    for (std::int64_t c = 0; c < mean.numel(); ++c) {
      const auto k = static_cast<std::size_t>(c);
      mean[c] = static_cast<float>((1.0 - momentum) * mean[c] + momentum * stats.mean[k]);
      var[c] = static_cast<float>((1.0 - momentum) * var[c] + momentum * stats.biased_var[k] * unbias);
    }
  }
}

ModelSnapshot recalibrate_bn(const ModelSnapshot& s, const DataSlice& calib, std::int64_t batch_size) {
  if (calib.size() == 0) throw ConfigError("recalibration slice is empty");
  ModelSnapshot out = s;
  Executor exec(out);
  const BatchSampler batches(calib, batch_size);
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    const LayerSpec& l = out.layers[i];
    if (l.kind != LayerKind::batch_norm) continue;
    const std::int64_t C = exec.geometry()[i].out_channels;
    std::vector<double> sum(static_cast<std::size_t>(C), 0.0);
    std::int64_t count = 0;
    // Two passes: mean first, then centered squares, for accuracy.
    std::vector<double> sq(static_cast<std::size_t>(C), 0.0);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t b = 0; b < batches.size(); ++b) {
        const Batch batch = batches[b];
        ForwardCache cache;
        exec.run(batch.images, {Mode::eval, false}, cache, i, /*keep_all=*/false);
        const Tensor& x = exec.input_of(i, cache);
        const std::int64_t N = x.dim(0), HW = x.dim(2) * x.dim(3);
        for (std::int64_t n = 0; n < N; ++n) {
          for (std::int64_t c = 0; c < C; ++c) {
            const float* xp = x.data() + (n * C + c) * HW;
            auto k = static_cast<std::size_t>(c);
            if (pass == 0) {
              for (std::int64_t h = 0; h < HW; ++h) sum[k] += xp[h];
            } else {
              const double mean = sum[k] / static_cast<double>(count);
              for (std::int64_t h = 0; h < HW; ++h) sq[k] += (xp[h] - mean) * (xp[h] - mean);
            }
          }
        }
        if (pass == 0) count += N * HW;
      }
    }
    if (count < 2) throw ConfigError("recalibration needs at least two values per channel");
    Tensor& mean = out.tensor(tensor_name(l.id, kMeanSuffix));
    Tensor& var = out.tensor(tensor_name(l.id, kVarSuffix));
    for (std::int64_t c = 0; c < C; ++c) {
      const auto k = static_cast<std::size_t>(c);
      mean[c] = static_cast<float>(sum[k] / static_cast<double>(count));
      const double v = sq[k] / static_cast<double>(count - 1);
      // Keep the running_var > 0 invariant for channels that are constant.
      var[c] = static_cast<float>(std::max(v, static_cast<double>(std::numeric_limits<float>::min())));
    }
  }
  return out;
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  const std::int64_t N = logits.dim(0), K = logits.numel() / std::max<std::int64_t>(N, 1);
  std::vector<std::int32_t> out(static_cast<std::size_t>(N));
  for (std::int64_t n = 0; n < N; ++n) {
    std::int64_t best = 0;
    for (std::int64_t k = 1; k < K; ++k) {
      if (logits[n * K + k] > logits[n * K + best]) best = k;
    }
    out[static_cast<std::size_t>(n)] = static_cast<std::int32_t>(best);
  }
  return out;
}

double evaluate_accuracy(const ModelSnapshot& s, const DataSlice& data, std::int64_t batch_size) {
  if (data.size() == 0) throw ConfigError("cannot evaluate accuracy on an empty slice");
  const BatchSampler batches(data, batch_size);
  std::int64_t correct = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Batch batch = batches[b];
    const auto predicted = argmax_rows(infer(s, batch.images));
    for (std::size_t k = 0; k < predicted.size(); ++k) correct += predicted[k] == batch.labels[k];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace chanprune
