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

#include "chanprune/inheritance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chanprune/builtin_arch.hpp"
#include "chanprune/engine.hpp"
#include "chanprune/error.hpp"

namespace chanprune {

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::l1_norm: return "l1_norm";
    case Criterion::bn_weights: return "bn_weights";
    case Criterion::geometric_median: return "geometric_median";
    case Criterion::random_init: return "random_init";
  }
  return "?";
}

Criterion parse_criterion(std::string_view name) {
  if (name == "l1_norm" || name == "l1") return Criterion::l1_norm;
  if (name == "bn_weights" || name == "bn") return Criterion::bn_weights;
  if (name == "geometric_median" || name == "gm") return Criterion::geometric_median;
  if (name == "random_init" || name == "random") return Criterion::random_init;
  throw ConfigError("unknown inheritance criterion '" + std::string(name) + "'");
}

std::vector<std::int64_t> top_k(std::span<const double> scores, std::int64_t k) {
  const auto n = static_cast<std::int64_t>(scores.size());
  if (k < 0 || k > n) throw ConfigError("top_k: k=" + std::to_string(k) + " out of range for " + std::to_string(n));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

std::vector<double> coordinate_median(const std::vector<std::vector<double>>& points) {
  const std::size_t dims = points.front().size();
  std::vector<double> out(dims);
  std::vector<double> column(points.size());
  for (std::size_t d = 0; d < dims; ++d) {
    for (std::size_t j = 0; j < points.size(); ++j) column[j] = points[j][d];
    std::sort(column.begin(), column.end());
    const std::size_t m = column.size() / 2;
    out[d] = column.size() % 2 ? column[m] : 0.5 * (column[m - 1] + column[m]);
  }
  return out;
}

}  // namespace

std::vector<double> geometric_median(const std::vector<std::vector<double>>& points,
                                     const GeometricMedianOptions& options) {
  if (points.empty()) throw ConfigError("geometric_median needs at least one point");
  const std::size_t dims = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dims) throw ShapeError("geometric_median: points differ in dimension");
  }
  if (points.size() == 1) return points.front();
  if (points.size() == 2) {
    std::vector<double> mid(dims);
    for (std::size_t d = 0; d < dims; ++d) mid[d] = 0.5 * (points[0][d] + points[1][d]);
    return mid;
  }

  std::vector<double> y(dims, 0.0);
  for (const auto& p : points) {
    for (std::size_t d = 0; d < dims; ++d) y[d] += p[d];
  }
  for (auto& v : y) v /= static_cast<double>(points.size());

  bool restarted = false;
  std::vector<double> next(dims);
  for (int it = 0; it < options.max_iters; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    double weight = 0.0;
    std::size_t hit = points.size();
    for (std::size_t j = 0; j < points.size(); ++j) {
      const double dist = distance(y, points[j]);
      if (dist < options.tolerance) {
        hit = j;
        break;
      }
      for (std::size_t d = 0; d < dims; ++d) next[d] += points[j][d] / dist;
      weight += 1.0 / dist;
    }
    if (hit != points.size()) {
      if (restarted) return points[hit];
      restarted = true;
      y = coordinate_median(points);
      for (auto& v : y) v += 1e-6;
      continue;
    }
    for (auto& v : next) v /= weight;
    const double step = distance(next, y);
    y.swap(next);
    if (step < options.tolerance) break;
  }
  // Weiszfeld crawls when the median is a data point; compare against them.
  auto objective = [&](const std::vector<double>& x) {
    double sum = 0.0;
    for (const auto& p : points) sum += distance(x, p);
    return sum;
  };
  double best = objective(y);
  for (const auto& p : points) {
    const double o = objective(p);
    if (o < best) {
      best = o;
      y = p;
    }
  }
  return y;
}

std::vector<std::int64_t> keep_far_from_median(const std::vector<std::vector<double>>& points, std::int64_t k,
                                               const GeometricMedianOptions& options) {
  const auto n = static_cast<std::int64_t>(points.size());
  if (k < 0 || k > n) throw ConfigError("keep count " + std::to_string(k) + " out of range");
  if (k == n) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  const auto gm = geometric_median(points, options);
  std::vector<double> dist(points.size());
  for (std::size_t j = 0; j < points.size(); ++j) dist[j] = distance(points[j], gm);
  // Prune the closest n - k; keeping the k farthest with the reverse tie rule
  // is the same set.
  std::vector<std::int64_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
  });
  std::vector<std::int64_t> kept(order.begin() + (n - k), order.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

namespace {

const LayerSpec* following_bn(const ModelSnapshot& s, const Topology& topo, std::size_t producer) {
  for (std::size_t i = producer + 1; i < s.layers.size(); ++i) {
    if (s.layers[i].kind == LayerKind::batch_norm && topo.input[i] == static_cast<int>(producer)) {
      return &s.layers[i];
    }
  }
  return nullptr;
}

std::vector<std::vector<double>> filters_of(const Tensor& w) {
  const std::int64_t out = w.dim(0), per = w.numel() / out;
  std::vector<std::vector<double>> f(static_cast<std::size_t>(out), std::vector<double>(static_cast<std::size_t>(per)));
  for (std::int64_t o = 0; o < out; ++o) {
    for (std::int64_t k = 0; k < per; ++k) f[static_cast<std::size_t>(o)][static_cast<std::size_t>(k)] = w[o * per + k];
  }
  return f;
}

std::vector<std::int64_t> iota_n(std::int64_t n) {
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

ChannelSelection select_channels(const ModelSnapshot& s, const ChannelConfig& cfg, Criterion crit) {
  check_config(s, cfg);
  ChannelSelection sel;
  const auto topo = resolve_topology(s);
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const LayerSpec& l = s.layers[i];
    if (!l.prunable) continue;
    const auto it = cfg.channels.find(l.id);
    const std::int64_t k = it == cfg.channels.end() ? l.out_channels : it->second;
    if (k == l.out_channels || crit == Criterion::random_init) {
      // random_init keeps a leading-prefix placeholder; weights are redrawn.
      sel.kept[l.id] = iota_n(k);
      continue;
    }
    const Tensor& w = s.tensor(tensor_name(l.id, kWeightSuffix));
    switch (crit) {
      case Criterion::l1_norm: {
        std::vector<double> scores(static_cast<std::size_t>(l.out_channels), 0.0);
        const std::int64_t per = w.numel() / l.out_channels;
        for (std::int64_t o = 0; o < l.out_channels; ++o) {
          for (std::int64_t j = 0; j < per; ++j) scores[static_cast<std::size_t>(o)] += std::fabs(w[o * per + j]);
        }
        sel.kept[l.id] = top_k(scores, k);
        break;
      }
      case Criterion::bn_weights: {
        const LayerSpec* bn = following_bn(s, topo, i);
        if (!bn) throw ConfigError("bn_weights criterion: layer '" + l.id + "' has no following batch_norm");
        const Tensor& gamma = s.tensor(tensor_name(bn->id, kGammaSuffix));
        std::vector<double> scores(static_cast<std::size_t>(gamma.numel()));
        for (std::int64_t c = 0; c < gamma.numel(); ++c) scores[static_cast<std::size_t>(c)] = std::fabs(gamma[c]);
        sel.kept[l.id] = top_k(scores, k);
        break;
      }
      case Criterion::geometric_median:
        sel.kept[l.id] = keep_far_from_median(filters_of(w), k);
        break;
      case Criterion::random_init:
        break;
    }
  }
  sel.reinitialize = crit == Criterion::random_init;
  return sel;
}

ModelSnapshot build_pruned_snapshot(const ModelSnapshot& s, const ChannelConfig& cfg,
                                    const ChannelSelection& sel, std::uint64_t seed) {
  check_config(s, cfg);
  const auto topo = resolve_topology(s);
  const auto geo = infer_geometry(s);

  ModelSnapshot out;
  out.format_version = s.format_version;
  out.arch_name = s.arch_name;
  out.input_shape = s.input_shape;
  out.num_classes = s.num_classes;
  out.blocks = s.blocks;
  out.layers = s.layers;

  // Kept original channel indices of each layer's output.
  std::vector<std::vector<std::int64_t>> kept(s.layers.size());
  const auto input_kept = iota_n(s.input_shape.channels);
  auto kept_of = [&](int src) -> const std::vector<std::int64_t>& {
    return src < 0 ? input_kept : kept[static_cast<std::size_t>(src)];
  };
  auto copy_sliced = [&](const std::string& name, const std::vector<std::int64_t>& rows) {
    const Tensor& t = s.tensor(name);
    Shape shape = t.shape();
    const std::int64_t per = t.numel() / shape[0];
    shape[0] = static_cast<std::int64_t>(rows.size());
    Tensor r(shape);
    for (std::size_t o = 0; o < rows.size(); ++o) {
      std::copy_n(t.data() + rows[o] * per, per, r.data() + static_cast<std::int64_t>(o) * per);
    }
    out.tensors.emplace(name, std::move(r));
  };

  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const LayerSpec& l = s.layers[i];
    LayerSpec& nl = out.layers[i];
    const auto& in = kept_of(topo.input[i]);
    switch (l.kind) {
      case LayerKind::conv: {
        std::vector<std::int64_t> outs = iota_n(l.out_channels);
        if (l.prunable) {
          const auto want = cfg.channels.count(l.id) ? cfg.channels.at(l.id) : l.out_channels;
          const auto it = sel.kept.find(l.id);
          if (it != sel.kept.end()) {
            outs = it->second;
          } else if (want != l.out_channels) {
            throw ConfigError("inconsistent selection chain: no selection for pruned layer '" + l.id + "'");
          }
          const bool sorted_unique = std::adjacent_find(outs.begin(), outs.end(), std::greater_equal<>()) == outs.end();
          if (static_cast<std::int64_t>(outs.size()) != want || !sorted_unique || outs.empty() ||
              outs.front() < 0 || outs.back() >= l.out_channels) {
            throw ConfigError("inconsistent selection chain at layer '" + l.id + "'");
          }
        }
        const Tensor& w = s.tensor(tensor_name(l.id, kWeightSuffix));
        const std::int64_t kk = l.kernel.h * l.kernel.w, cin = w.dim(1);
        Tensor nw({static_cast<std::int64_t>(outs.size()), static_cast<std::int64_t>(in.size()), l.kernel.h, l.kernel.w});
        for (std::size_t o = 0; o < outs.size(); ++o) {
          for (std::size_t c = 0; c < in.size(); ++c) {
            std::copy_n(w.data() + (outs[o] * cin + in[c]) * kk, kk,
                        nw.data() + (static_cast<std::int64_t>(o * in.size() + c)) * kk);
          }
        }
        out.tensors.emplace(tensor_name(l.id, kWeightSuffix), std::move(nw));
        if (l.has_bias) copy_sliced(tensor_name(l.id, kBiasSuffix), outs);
        nl.in_channels = static_cast<std::int64_t>(in.size());
        nl.out_channels = static_cast<std::int64_t>(outs.size());
        kept[i] = std::move(outs);
        break;
      }
      case LayerKind::depthwise_conv:
        copy_sliced(tensor_name(l.id, kWeightSuffix), in);
        if (l.has_bias) copy_sliced(tensor_name(l.id, kBiasSuffix), in);
        nl.in_channels = nl.out_channels = static_cast<std::int64_t>(in.size());
        kept[i] = in;
        break;
      case LayerKind::batch_norm:
        for (auto suffix : {kGammaSuffix, kBetaSuffix, kMeanSuffix, kVarSuffix}) copy_sliced(tensor_name(l.id, suffix), in);
        nl.in_channels = nl.out_channels = static_cast<std::int64_t>(in.size());
        kept[i] = in;
        break;
      case LayerKind::flatten: {
        const std::int64_t hw = geo[i].in_height * geo[i].in_width;
        std::vector<std::int64_t> features;
        features.reserve(in.size() * static_cast<std::size_t>(hw));
        for (auto c : in) {
          for (std::int64_t k = 0; k < hw; ++k) features.push_back(c * hw + k);
        }
        nl.in_channels = static_cast<std::int64_t>(in.size());
        nl.out_channels = static_cast<std::int64_t>(features.size());
        kept[i] = std::move(features);
        break;
      }
      case LayerKind::fully_connected: {
        // Features of a spatial input are channel-major, as flatten lays them out.
        const std::int64_t hw = geo[i].in_channels / (topo.input[i] < 0 ? s.input_shape.channels
                                                                          : s.layers[static_cast<std::size_t>(topo.input[i])].out_channels);
        std::vector<std::int64_t> features;
        for (auto c : in) {
          for (std::int64_t k = 0; k < hw; ++k) features.push_back(c * hw + k);
        }
        const Tensor& w = s.tensor(tensor_name(l.id, kWeightSuffix));
        const std::int64_t fin = w.dim(1);
        Tensor nw({l.out_channels, static_cast<std::int64_t>(features.size())});
        for (std::int64_t o = 0; o < l.out_channels; ++o) {
          for (std::size_t f = 0; f < features.size(); ++f) {
            nw[o * static_cast<std::int64_t>(features.size()) + static_cast<std::int64_t>(f)] = w[o * fin + features[f]];
          }
        }
        out.tensors.emplace(tensor_name(l.id, kWeightSuffix), std::move(nw));
        if (l.has_bias) copy_sliced(tensor_name(l.id, kBiasSuffix), iota_n(l.out_channels));
        nl.in_channels = static_cast<std::int64_t>(features.size());
        kept[i] = iota_n(l.out_channels);
        break;
      }
      case LayerKind::add_residual: {
        if (kept_of(topo.skip[i]) != in) {
          throw ConfigError("inconsistent selection chain: add_residual '" + l.id + "' operands keep different channels");
        }
        nl.in_channels = nl.out_channels = static_cast<std::int64_t>(in.size());
        kept[i] = in;
        break;
      }
      default:
        nl.in_channels = nl.out_channels = static_cast<std::int64_t>(in.size());
        kept[i] = in;
        break;
    }
  }
  if (sel.reinitialize) initialize_parameters(out, seed);
  validate(out);
  return out;
}

CriterionResult evaluate_criterion(const ModelSnapshot& s, const ChannelConfig& cfg, Criterion crit,
                                   const DataSlice& calib, const DataSlice& val, std::uint64_t seed) {
  if (calib.size() == 0 || val.size() == 0) throw ConfigError("calibration and validation slices must be non-empty");
  CriterionResult r;
  r.criterion = crit;
  r.snapshot = recalibrate_bn(build_pruned_snapshot(s, cfg, select_channels(s, cfg, crit), seed), calib);
  r.accuracy = evaluate_accuracy(r.snapshot, val);
  return r;
}

InheritanceOutcome adaptive_inherit(const ModelSnapshot& s, const ChannelConfig& cfg, const DataSlice& calib,
                                    const DataSlice& val, std::uint64_t seed,
                                    std::span<const Criterion> candidates) {
  if (candidates.empty()) throw ConfigError("adaptive_inherit needs at least one candidate criterion");
  InheritanceOutcome outcome;
  double best = -1.0;
  for (Criterion c : candidates) {
    auto r = evaluate_criterion(s, cfg, c, calib, val, seed);
    outcome.accuracies.emplace_back(c, r.accuracy);
    if (r.accuracy > best) {
      best = r.accuracy;
      outcome.chosen = c;
      outcome.snapshot = std::move(r.snapshot);
    }
  }
  return outcome;
}

}  // namespace chanprune
