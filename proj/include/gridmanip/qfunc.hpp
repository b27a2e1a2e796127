#pragma once

// Previous-action-conditioned pixel-wise Q approximator.
//
// One small fully convolutional net per primitive:
//   conv 3x3 (C_in -> H) + ReLU, conv 3x3 (H -> H) + ReLU, conv 1x1 (H -> 1)
// with same padding, so every net maps an h x w input to an h x w score map.
// Rotation r is handled by rotating the input by -theta_r, running the net
// and rotating the scores back by +theta_r (nearest neighbour; exact for
// multiples of 90 degrees on square grids).

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gridmanip/core.hpp"
#include "gridmanip/gridsim.hpp"
#include "gridmanip/policy.hpp"
#include "gridmanip/reward.hpp"
#include "gridmanip/transition.hpp"

namespace gridmanip {

/// Training produced a non-finite loss.
class TrainingDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kInputChannels = kObservationChannels + kContextChannels;

struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  std::vector<double> weights;  // [out][in][ky][kx]
  std::vector<double> bias;     // [out]

  ConvLayer() = default;
  ConvLayer(int in, int out, int k)
      : in_channels(in), out_channels(out), kernel(k),
        weights(static_cast<std::size_t>(out) * in * k * k, 0.0), bias(static_cast<std::size_t>(out), 0.0) {}

  double& w(int o, int i, int ky, int kx) { return weights[((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel + kx]; }
  double w(int o, int i, int ky, int kx) const { return weights[((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel + kx]; }

  bool operator==(const ConvLayer&) const = default;
};

/// Same-padding stride-1 convolution.
inline Planes conv_forward(const ConvLayer& layer, const Planes& in) {
  const int h = in.height();
  const int w = in.width();
  const int pad = layer.kernel / 2;
  Planes out(layer.out_channels, h, w);
  for (int o = 0; o < layer.out_channels; ++o) {
    double* dst = out.plane(o);
    std::fill(dst, dst + out.plane_size(), layer.bias[o]);
    for (int i = 0; i < layer.in_channels; ++i) {
      const double* src = in.plane(i);
      for (int ky = 0; ky < layer.kernel; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy);
        const int y1 = std::min(h, h - dy);
        for (int kx = 0; kx < layer.kernel; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          const double wv = layer.w(o, i, ky, kx);
          for (int y = y0; y < y1; ++y) {
            double* drow = dst + static_cast<std::size_t>(y) * w;
            const double* srow = src + static_cast<std::size_t>(y + dy) * w + dx;
            for (int x = x0; x < x1; ++x) drow[x] += wv * srow[x];
          }
        }
      }
    }
  }
  return out;
}

/// Accumulates weight/bias gradients into `grad` and returns d(loss)/d(input)
/// when `want_input_grad` is set.
inline Planes conv_backward(const ConvLayer& layer, const Planes& in, const Planes& dout, ConvLayer& grad,
                            bool want_input_grad) {
  const int h = in.height();
  const int w = in.width();
  const int pad = layer.kernel / 2;
  Planes din = want_input_grad ? Planes(layer.in_channels, h, w) : Planes();
  for (int o = 0; o < layer.out_channels; ++o) {
    const double* g = dout.plane(o);
    double bsum = 0.0;
    for (std::size_t k = 0; k < dout.plane_size(); ++k) bsum += g[k];
    grad.bias[o] += bsum;
    for (int i = 0; i < layer.in_channels; ++i) {
      const double* src = in.plane(i);
      double* dsrc = want_input_grad ? din.plane(i) : nullptr;
      for (int ky = 0; ky < layer.kernel; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy);
        const int y1 = std::min(h, h - dy);
        for (int kx = 0; kx < layer.kernel; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          const double wv = layer.w(o, i, ky, kx);
          double acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* grow = g + static_cast<std::size_t>(y) * w;
            const double* srow = src + static_cast<std::size_t>(y + dy) * w + dx;
            for (int x = x0; x < x1; ++x) acc += grow[x] * srow[x];
            if (dsrc) {
              double* drow = dsrc + static_cast<std::size_t>(y + dy) * w + dx;
              for (int x = x0; x < x1; ++x) drow[x] += wv * grow[x];
            }
          }
          grad.w(o, i, ky, kx) += acc;
        }
      }
    }
  }
  return din;
}

/// Three-layer conv stack for one primitive.
struct ConvNet {
  ConvLayer conv1;
  ConvLayer conv2;
  ConvLayer conv3;

  ConvNet() = default;
  ConvNet(int in_channels, int hidden)
      : conv1(in_channels, hidden, 3), conv2(hidden, hidden, 3), conv3(hidden, 1, 1) {}

  /// Parameter arrays in checkpoint order.
  std::array<std::vector<double>*, 6> arrays() {
    return {&conv1.weights, &conv1.bias, &conv2.weights, &conv2.bias, &conv3.weights, &conv3.bias};
  }
  std::array<const std::vector<double>*, 6> arrays() const {
    return {&conv1.weights, &conv1.bias, &conv2.weights, &conv2.bias, &conv3.weights, &conv3.bias};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* a : arrays()) n += a->size();
    return n;
  }

  ConvNet zeros_like() const {
    ConvNet z = *this;
    for (auto* a : z.arrays()) std::fill(a->begin(), a->end(), 0.0);
    return z;
  }

  bool operator==(const ConvNet&) const = default;
};

struct ForwardCache {
  Planes input;
  Planes z1, a1, z2, a2;
};

inline Planes relu(const Planes& z) {
  Planes a = z;
  for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
  return a;
}

/// Runs one net; returns a single-channel h x w map.
inline Planes net_forward(const ConvNet& net, const Planes& input, ForwardCache* cache = nullptr) {
  Planes z1 = conv_forward(net.conv1, input);
  Planes a1 = relu(z1);
  Planes z2 = conv_forward(net.conv2, a1);
  Planes a2 = relu(z2);
  Planes out = conv_forward(net.conv3, a2);
  if (cache) *cache = ForwardCache{input, std::move(z1), std::move(a1), std::move(z2), std::move(a2)};
  return out;
}

/// Backpropagates d(loss)/d(out) through one net, accumulating into `grad`.
inline void net_backward(const ConvNet& net, const ForwardCache& cache, const Planes& dout, ConvNet& grad) {
  Planes da2 = conv_backward(net.conv3, cache.a2, dout, grad.conv3, true);
  for (std::size_t k = 0; k < da2.data().size(); ++k)
    if (!(cache.z2.data()[k] > 0.0)) da2.data()[k] = 0.0;
  Planes da1 = conv_backward(net.conv2, cache.a1, da2, grad.conv2, true);
  for (std::size_t k = 0; k < da1.data().size(); ++k)
    if (!(cache.z1.data()[k] > 0.0)) da1.data()[k] = 0.0;
  conv_backward(net.conv1, cache.input, da1, grad.conv1, false);
}

/// Nearest-neighbour pixel maps for rotating an h x w frame about its centre.
class RotationTable {
 public:
  RotationTable() = default;
  RotationTable(int height, int width, int rotations) : height_(height), width_(width) {
    to_net_.resize(rotations);
    from_net_.resize(rotations);
    for (int r = 0; r < rotations; ++r) {
      const auto [c, s] = rotation_cos_sin(r, rotations);
      to_net_[r] = build(c, s);     // content rotated by -theta
      from_net_[r] = build(c, -s);  // content rotated by +theta
    }
  }

  int rotations() const { return static_cast<int>(to_net_.size()); }

  /// Source pixel (or -1) for each destination pixel when rotating by -theta_r.
  const std::vector<int>& to_net(int r) const { return to_net_[r]; }
  /// Source pixel (or -1) for each destination pixel when rotating by +theta_r.
  const std::vector<int>& from_net(int r) const { return from_net_[r]; }

  static Planes apply(const Planes& in, const std::vector<int>& src) {
    Planes out(in.channels(), in.height(), in.width());
    for (int ch = 0; ch < in.channels(); ++ch) {
      const double* s = in.plane(ch);
      double* d = out.plane(ch);
      for (std::size_t p = 0; p < src.size(); ++p)
        if (src[p] >= 0) d[p] = s[src[p]];
    }
    return out;
  }

 private:
  // out(p) = in(c + M (p - c)), M = [[cs, -sn], [sn, cs]].
  std::vector<int> build(double cs, double sn) const {
    std::vector<int> src(static_cast<std::size_t>(height_) * width_, -1);
    const double cx = (width_ - 1) / 2.0;
    const double cy = (height_ - 1) / 2.0;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) {
        const double dx = x - cx;
        const double dy = y - cy;
        const long sx = std::lround(cx + cs * dx - sn * dy);
        const long sy = std::lround(cy + sn * dx + cs * dy);
        if (sx >= 0 && sx < width_ && sy >= 0 && sy < height_)
          src[static_cast<std::size_t>(y) * width_ + x] = static_cast<int>(sy * width_ + sx);
      }
    return src;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::vector<int>> to_net_;
  std::vector<std::vector<int>> from_net_;
};

/// Stacks observation and previous-action context into the net input.
inline Planes build_input(const Observation& obs, const PrevActionContext& ctx) {
  const int h = obs.height();
  const int w = obs.width();
  Planes in(kInputChannels, h, w);
  const Planes c = ctx.render(h, w);
  std::copy(obs.channels.data().begin(), obs.channels.data().end(), in.data().begin());
  std::copy(c.data().begin(), c.data().end(), in.data().begin() + static_cast<std::ptrdiff_t>(obs.channels.data().size()));
  return in;
}

/// Push/Pick/Place nets plus their momentum buffers.
class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(int height, int width, int rotations, int hidden = 16)
      : height_(height), width_(width), rotations_(rotations), hidden_(hidden), rot_(height, width, rotations) {
    if (height <= 0 || width <= 0 || rotations < 1 || hidden < 1) throw ConfigError("qfunc: bad network shape");
    for (auto& n : nets_) n = ConvNet(kInputChannels, hidden);
    for (auto& v : velocity_) v = ConvNet(kInputChannels, hidden);
  }

  /// Uniform(+-1/sqrt(fan_in)) weights, zero biases.
  void initialize(std::uint64_t seed) {
    for (int p = 0; p < kNumPrimitives; ++p) {
      Rng rng(derive_seed(seed, 0x7100 + p));
      for (ConvLayer* layer : {&nets_[p].conv1, &nets_[p].conv2, &nets_[p].conv3}) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer->in_channels * layer->kernel * layer->kernel));
        for (double& wv : layer->weights) wv = rng.uniform(-bound, bound);
        std::fill(layer->bias.begin(), layer->bias.end(), 0.0);
      }
      velocity_[p] = nets_[p].zeros_like();
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int rotations() const { return rotations_; }
  int hidden() const { return hidden_; }
  int in_channels() const { return kInputChannels; }

  ConvNet& net(Primitive p) { return nets_[index_of(p)]; }
  const ConvNet& net(Primitive p) const { return nets_[index_of(p)]; }
  ConvNet& velocity(Primitive p) { return velocity_[index_of(p)]; }

  const RotationTable& rotation_table() const { return rot_; }

  /// Byte-level fingerprint of all parameters.
  std::uint64_t checksum() const {
    std::string bytes;
    for (const auto& n : nets_)
      for (const auto* a : n.arrays())
        bytes.append(reinterpret_cast<const char*>(a->data()), a->size() * sizeof(double));
    return fnv1a64(bytes);
  }

 private:
  int height_ = 0;
  int width_ = 0;
  int rotations_ = 1;
  int hidden_ = 16;
  std::array<ConvNet, kNumPrimitives> nets_;
  std::array<ConvNet, kNumPrimitives> velocity_;
  RotationTable rot_;
};

/// Scores for one rotation of one primitive.
inline Planes forward_rotation(const QNetwork& q, const Planes& input, Primitive primitive, int r,
                               ForwardCache* cache = nullptr) {
  const RotationTable& rot = q.rotation_table();
  const Planes rotated = RotationTable::apply(input, rot.to_net(r));
  const Planes out = net_forward(q.net(primitive), rotated, cache);
  return RotationTable::apply(out, rot.from_net(r));
}

/// R x h x w score grid for one primitive.
inline Planes forward(const QNetwork& q, const Observation& obs, const PrevActionContext& ctx, Primitive primitive) {
  if (obs.height() != q.height() || obs.width() != q.width() || obs.channels.channels() != kObservationChannels)
    throw ContractError("qfunc::forward: observation shape does not match the network");
  const Planes input = build_input(obs, ctx);
  Planes maps(q.rotations(), q.height(), q.width());
  for (int r = 0; r < q.rotations(); ++r) {
    const Planes m = forward_rotation(q, input, primitive, r);
    std::copy(m.data().begin(), m.data().end(), maps.plane(r));
  }
  return maps;
}

/// Score maps for every primitive the task allows.
inline QMapSet forward_all(const QNetwork& q, const Observation& obs, const PrevActionContext& ctx,
                           const TaskConfig& task) {
  QMapSet set;
  for (Primitive p : kPrimitives)
    if (task.allows(p)) set[p] = forward(q, obs, ctx, p);
  return set;
}

/// Two-step expected-reward target; future reward flows only through
/// steps with positive reward.
inline double compute_target(double reward, double next_reward, double gamma) {
  const double eta = reward > 0.0 ? 1.0 : 0.0;
  return reward + eta * gamma * next_reward;
}

/// General robust loss rho(x, alpha, c) and d rho / dx; alpha = 2 and
/// alpha = 0 use their closed-form limits.
inline std::pair<double, double> robust_loss(double residual, double alpha, double c) {
  if (!(c > 0.0)) throw ContractError("robust_loss: scale must be positive");
  const double xc = residual / c;
  const double z = xc * xc;
  if (alpha == 2.0) return {0.5 * z, residual / (c * c)};
  if (alpha == 0.0) return {std::log1p(0.5 * z), residual / (c * c) / (0.5 * z + 1.0)};
  const double d = std::abs(alpha - 2.0);
  const double base_log = std::log1p(z / d);
  const double loss = d / alpha * std::expm1(0.5 * alpha * base_log);
  const double dloss = residual / (c * c) * std::exp((0.5 * alpha - 1.0) * base_log);
  return {loss, dloss};
}

struct TrainParams {
  double gamma = 0.5;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double loss_alpha = 1.0;
  double loss_scale = 0.1;
  int batch_size = 4;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("network: gamma must lie in [0, 1]");
    if (!(learning_rate > 0.0)) throw ConfigError("network: learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("network: momentum must lie in [0, 1)");
    if (!(loss_scale > 0.0)) throw ConfigError("network: loss_scale must be positive");
    if (batch_size < 1) throw ConfigError("network: batch_size must be >= 1");
  }
};

/// Per-pixel supervision for one transition.
struct TrainTarget {
  double y = 0.0;
  Grid<double> target;
  Grid<bool> mask;
};

/// Targets scaled so the executed pixel carries y and the rest of the
/// support keeps the reward map's shape.
inline TrainTarget build_target(const Transition& t, double gamma) {
  if (t.pending()) throw ContractError("build_target: transition still pending");
  const auto& map = t.reward_map;
  TrainTarget tt{compute_target(t.reward, *t.next_reward, gamma), Grid<double>(map.grid.height(), map.grid.width(), 0.0),
                 map.supervised_mask};
  const double spike = map.grid(t.action.y, t.action.x);
  if (spike > 0.0) {
    const double scale = tt.y / spike;
    for (std::size_t i = 0; i < tt.target.size(); ++i)
      if (map.supervised_mask.data()[i]) tt.target.data()[i] = map.grid.data()[i] * scale;
  }
  tt.target(t.action.y, t.action.x) = tt.y;
  tt.mask(t.action.y, t.action.x) = true;
  return tt;
}

struct ItemLoss {
  double loss = 0.0;
  Planes dscores;  // d(item loss)/d(rotated score map), h x w
};

/// Mean robust loss of one transition over its supervised pixels.
inline ItemLoss item_loss(const Planes& scores, const TrainTarget& tt, const TrainParams& params) {
  ItemLoss out{0.0, Planes(1, scores.height(), scores.width())};
  std::size_t n = 0;
  for (bool b : tt.mask.data()) n += b ? 1 : 0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int y = 0; y < scores.height(); ++y)
    for (int x = 0; x < scores.width(); ++x) {
      if (!tt.mask(y, x)) continue;
      const auto [l, dl] = robust_loss(scores.at(0, y, x) - tt.target(y, x), params.loss_alpha, params.loss_scale);
      out.loss += l * inv_n;
      out.dscores.at(0, y, x) = dl * inv_n;
    }
  return out;
}

struct BatchGradient {
  std::vector<double> item_losses;
  double mean_loss = 0.0;
  std::array<std::optional<ConvNet>, kNumPrimitives> grads;  // only for primitives present
};

/// Loss and analytic parameter gradient of the batch mean loss.
inline BatchGradient batch_loss_and_gradient(const QNetwork& q, std::span<const Transition* const> batch,
                                             const TrainParams& params, bool with_gradient = true) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  BatchGradient bg;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const Transition* t : batch) {
    const Primitive p = t->action.primitive;
    const int r = t->action.theta_index;
    if (r < 0 || r >= q.rotations()) throw ContractError("train_step: rotation index out of range");
    const Planes input = build_input(t->observation, t->context);
    ForwardCache cache;
    const Planes scores = forward_rotation(q, input, p, r, with_gradient ? &cache : nullptr);
    const TrainTarget tt = build_target(*t, params.gamma);
    ItemLoss il = item_loss(scores, tt, params);
    bg.item_losses.push_back(il.loss);
    bg.mean_loss += il.loss * inv_b;
    if (!with_gradient) continue;
    // Adjoint of the output rotation: scatter back onto the net's frame.
    Planes dout(1, q.height(), q.width());
    const auto& src = q.rotation_table().from_net(r);
    for (std::size_t px = 0; px < src.size(); ++px)
      if (src[px] >= 0) dout.data()[src[px]] += il.dscores.data()[px] * inv_b;
    auto& g = bg.grads[index_of(p)];
    if (!g) g = q.net(p).zeros_like();
    net_backward(q.net(p), cache, dout, *g);
  }
  return bg;
}

struct TrainStepResult {
  double loss = 0.0;
  std::vector<double> item_losses;
};

/// One SGD-with-momentum update on the batch. Only the nets of primitives
/// that appear in the batch change.
inline TrainStepResult train_step(QNetwork& q, std::span<const Transition* const> batch, const TrainParams& params) {
  BatchGradient bg = batch_loss_and_gradient(q, batch, params);
  if (!std::isfinite(bg.mean_loss)) {
    std::ostringstream msg;
    msg << "training diverged: non-finite loss over batch of " << batch.size() << " (item losses:";
    for (double l : bg.item_losses) msg << ' ' << l;
    msg << ')';
    throw TrainingDivergence(msg.str());
  }
  for (Primitive p : kPrimitives) {
    const auto& g = bg.grads[index_of(p)];
    if (!g) continue;
    auto params_arrays = q.net(p).arrays();
    auto vel_arrays = q.velocity(p).arrays();
    const auto grad_arrays = g->arrays();
    for (std::size_t a = 0; a < params_arrays.size(); ++a) {
      auto& w = *params_arrays[a];
      auto& v = *vel_arrays[a];
      const auto& dw = *grad_arrays[a];
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = params.momentum * v[k] - params.learning_rate * dw[k];
        w[k] += v[k];
      }
    }
  }
  return {bg.mean_loss, std::move(bg.item_losses)};
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary header + parameter arrays, with a
// key = value sidecar mirroring the header.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'G', 'M', 'Q', 'N'};

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t rotations = 0;
  std::uint32_t in_channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t hidden = 0;
  std::uint64_t config_hash = 0;
  std::uint32_t array_count = 0;

  bool operator==(const CheckpointHeader&) const = default;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int ch = in.get();
    if (ch == EOF) throw std::runtime_error("checkpoint: truncated file");
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(ch)) << (8 * i);
  }
  return v;
}
inline std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    const int ch = in.get();
    if (ch == EOF) throw std::runtime_error("checkpoint: truncated file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(ch)) << (8 * i);
  }
  return v;
}

inline std::vector<std::uint32_t> array_shape(const ConvNet& net, int a) {
  const ConvLayer* layers[3] = {&net.conv1, &net.conv2, &net.conv3};
  const ConvLayer& l = *layers[a / 2];
  if (a % 2 == 0)
    return {static_cast<std::uint32_t>(l.out_channels), static_cast<std::uint32_t>(l.in_channels),
            static_cast<std::uint32_t>(l.kernel), static_cast<std::uint32_t>(l.kernel)};
  return {static_cast<std::uint32_t>(l.out_channels)};
}

inline const char* array_name(int a) {
  static const char* names[6] = {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "conv3.weight", "conv3.bias"};
  return names[a];
}

}  // namespace detail

inline CheckpointHeader checkpoint_header(const QNetwork& q, std::uint64_t config_hash) {
  return {kCheckpointVersion,
          static_cast<std::uint32_t>(q.rotations()),
          static_cast<std::uint32_t>(q.in_channels()),
          static_cast<std::uint32_t>(q.height()),
          static_cast<std::uint32_t>(q.width()),
          static_cast<std::uint32_t>(q.hidden()),
          config_hash,
          static_cast<std::uint32_t>(kNumPrimitives * 6)};
}

inline void write_checkpoint(std::ostream& out, const QNetwork& q, std::uint64_t config_hash) {
  const CheckpointHeader h = checkpoint_header(q, config_hash);
  out.write(kCheckpointMagic, 4);
  detail::put_u32(out, h.version);
  detail::put_u32(out, h.rotations);
  detail::put_u32(out, h.in_channels);
  detail::put_u32(out, h.height);
  detail::put_u32(out, h.width);
  detail::put_u32(out, h.hidden);
  detail::put_u64(out, h.config_hash);
  detail::put_u32(out, h.array_count);
  for (Primitive p : kPrimitives) {
    const ConvNet& net = q.net(p);
    const auto arrays = net.arrays();
    for (int a = 0; a < 6; ++a) {
      const auto shape = detail::array_shape(net, a);
      detail::put_u32(out, static_cast<std::uint32_t>(shape.size()));
      for (auto d : shape) detail::put_u32(out, d);
      for (double v : *arrays[a]) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
}

inline void write_checkpoint_meta(std::ostream& out, const QNetwork& q, std::uint64_t config_hash) {
  const CheckpointHeader h = checkpoint_header(q, config_hash);
  out << "format = gridmanip-qnet\n"
      << "version = " << h.version << '\n'
      << "rotations = " << h.rotations << '\n'
      << "in_channels = " << h.in_channels << '\n'
      << "height = " << h.height << '\n'
      << "width = " << h.width << '\n'
      << "hidden = " << h.hidden << '\n'
      << "config_hash = " << std::hex << std::setw(16) << std::setfill('0') << h.config_hash << std::dec
      << std::setfill(' ') << '\n'
      << "array_count = " << h.array_count << '\n'
      << "byte_order = little\n";
  for (Primitive p : kPrimitives) {
    const ConvNet& net = q.net(p);
    for (int a = 0; a < 6; ++a) {
      out << to_string(p) << '.' << detail::array_name(a) << " =";
      for (auto d : detail::array_shape(net, a)) out << ' ' << d;
      out << '\n';
    }
  }
}

struct LoadedCheckpoint {
  CheckpointHeader header;
  QNetwork network;
};

inline CheckpointHeader read_checkpoint_header(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  CheckpointHeader h;
  h.version = detail::get_u32(in);
  if (h.version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
  h.rotations = detail::get_u32(in);
  h.in_channels = detail::get_u32(in);
  h.height = detail::get_u32(in);
  h.width = detail::get_u32(in);
  h.hidden = detail::get_u32(in);
  h.config_hash = detail::get_u64(in);
  h.array_count = detail::get_u32(in);
  return h;
}

inline LoadedCheckpoint read_checkpoint(std::istream& in) {
  LoadedCheckpoint ck;
  ck.header = read_checkpoint_header(in);
  const auto& h = ck.header;
  if (h.in_channels != static_cast<std::uint32_t>(kInputChannels)) throw std::runtime_error("checkpoint: input channel mismatch");
  if (h.array_count != static_cast<std::uint32_t>(kNumPrimitives * 6)) throw std::runtime_error("checkpoint: bad array count");
  ck.network = QNetwork(static_cast<int>(h.height), static_cast<int>(h.width), static_cast<int>(h.rotations),
                        static_cast<int>(h.hidden));
  for (Primitive p : kPrimitives) {
    ConvNet& net = ck.network.net(p);
    auto arrays = net.arrays();
    for (int a = 0; a < 6; ++a) {
      const auto expected = detail::array_shape(net, a);
      const auto ndim = detail::get_u32(in);
      if (ndim != expected.size()) throw std::runtime_error("checkpoint: shape rank mismatch");
      for (auto d : expected)
        if (detail::get_u32(in) != d) throw std::runtime_error("checkpoint: shape mismatch");
      for (double& v : *arrays[a]) v = std::bit_cast<double>(detail::get_u64(in));
    }
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const QNetwork& q, std::uint64_t config_hash) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_checkpoint(out, q, config_hash);
  }
  std::string meta_path = path;
  if (meta_path.size() > 4 && meta_path.ends_with(".bin")) meta_path.resize(meta_path.size() - 4);
  meta_path += ".meta";
  std::ofstream meta(meta_path);
  if (!meta) throw std::runtime_error("cannot write " + meta_path);
  write_checkpoint_meta(meta, q, config_hash);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_checkpoint(in);
}

}  // namespace gridmanip
