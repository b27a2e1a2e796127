#pragma once

// Numerical self-checks shipped with the library: finite-difference
// verification of the hand-written backprop and a brute-force check of the
// reward-map convolution. Both back the `selftest` CLI command.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "gridmanip/core.hpp"
#include "gridmanip/qfunc.hpp"
#include "gridmanip/reward.hpp"

namespace gridmanip::selfcheck {

struct GradientCheckResult {
  int draws = 0;
  std::size_t parameters_checked = 0;
  std::size_t parameters_skipped = 0;  // perturbation crossed a ReLU kink
  double max_relative_error = 0.0;
};

inline Transition random_transition(Rng& rng, int h, int w, int rotations, Primitive p) {
  Transition t;
  t.observation.channels = Planes(kObservationChannels, h, w);
  for (double& v : t.observation.channels.data()) v = rng.uniform01();
  if (rng.uniform01() < 0.8)
    t.context.previous = Action{kPrimitives[rng.uniform_index(3)], static_cast<int>(rng.uniform_index(w)),
                                static_cast<int>(rng.uniform_index(h)), 0, rng.uniform(-1.0, 1.0)};
  t.action = Action{p, static_cast<int>(rng.uniform_index(w)), static_cast<int>(rng.uniform_index(h)),
                    static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(rotations))), 0.0};
  t.reward = rng.uniform01() < 0.25 ? 0.0 : rng.uniform(0.1, 1.0);
  t.next_reward = rng.uniform01();
  RewardParams rp;
  rp.sigma_y = rng.uniform(0.4, 1.2);
  t.reward_map = tpg_reward_map(t.reward, t.action.x, t.action.y, rotation_angle(t.action.theta_index, rotations), h, w, rp);
  return t;
}

namespace detail {

struct LossPattern {
  double loss = 0.0;
  std::vector<std::uint8_t> pattern;
};

inline LossPattern loss_with_pattern(const QNetwork& q, const std::vector<Transition>& batch, const TrainParams& params) {
  LossPattern lp;
  for (const Transition& t : batch) {
    ForwardCache cache;
    const Planes input = build_input(t.observation, t.context);
    const Planes scores = forward_rotation(q, input, t.action.primitive, t.action.theta_index, &cache);
    lp.loss += item_loss(scores, build_target(t, params.gamma), params).loss / static_cast<double>(batch.size());
    for (double z : cache.z1.data()) lp.pattern.push_back(z > 0.0);
    for (double z : cache.z2.data()) lp.pattern.push_back(z > 0.0);
  }
  return lp;
}

}  // namespace detail

/// Central differences vs analytic gradients. Draw 0 checks every
/// parameter; later draws check a strided subset so the whole parameter
/// vector is covered across draws.
inline GradientCheckResult gradient_check(int draws, std::uint64_t seed, int size = 6, double eps = 1e-4) {
  GradientCheckResult res;
  res.draws = draws;
  Rng rng(seed);
  constexpr int kStride = 97;
  for (int d = 0; d < draws; ++d) {
    const int rotations = 4;
    QNetwork q(size, size, rotations, 16);
    q.initialize(rng.next());
    for (Primitive p : kPrimitives)
      for (auto* a : q.net(p).arrays())
        for (double& v : *a) v += rng.uniform(-0.1, 0.1);  // nonzero biases too
    TrainParams params;
    const double alphas[] = {0.0, 1.0, 2.0, 0.5, 1.5};
    params.loss_alpha = alphas[d % 5];
    params.loss_scale = rng.uniform(0.3, 2.0);
    std::vector<Transition> batch;
    for (Primitive p : kPrimitives) batch.push_back(random_transition(rng, size, size, rotations, p));
    std::vector<const Transition*> ptrs;
    for (const auto& t : batch) ptrs.push_back(&t);
    const BatchGradient bg = batch_loss_and_gradient(q, ptrs, params);
    const detail::LossPattern base = detail::loss_with_pattern(q, batch, params);

    for (Primitive p : kPrimitives) {
      auto arrays = q.net(p).arrays();
      const auto grads = bg.grads[index_of(p)]->arrays();
      std::size_t flat = 0;
      for (std::size_t a = 0; a < arrays.size(); ++a) {
        auto& values = *arrays[a];
        for (std::size_t k = 0; k < values.size(); ++k, ++flat) {
          if (d > 0 && static_cast<int>(flat % kStride) != d % kStride) continue;
          const double saved = values[k];
          values[k] = saved + eps;
          const detail::LossPattern plus = detail::loss_with_pattern(q, batch, params);
          values[k] = saved - eps;
          const detail::LossPattern minus = detail::loss_with_pattern(q, batch, params);
          values[k] = saved;
          if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
            ++res.parameters_skipped;
            continue;
          }
          const double numeric = (plus.loss - minus.loss) / (2.0 * eps);
          const double analytic = (*grads[a])[k];
          const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
          res.max_relative_error = std::max(res.max_relative_error, std::abs(numeric - analytic) / denom);
          ++res.parameters_checked;
        }
      }
    }
  }
  return res;
}

/// Scatter-form reference: every input pixel spreads into its neighbourhood.
inline Grid<double> brute_force_convolve(const Grid<double>& input, const GaussianKernel& kernel) {
  const int h = input.height();
  const int w = input.width();
  const int hw = kernel.half_width();
  Grid<double> out(h, w, 0.0);
  for (int sy = 0; sy < h; ++sy)
    for (int sx = 0; sx < w; ++sx)
      for (int ty = 0; ty < h; ++ty)
        for (int tx = 0; tx < w; ++tx) {
          const int dx = tx - sx;
          const int dy = ty - sy;
          if (std::abs(dx) > hw || std::abs(dy) > hw) continue;
          out(ty, tx) += input(sy, sx) * kernel.at(dx, dy);
        }
  return out;
}

struct ConvolutionCheckResult {
  int grids = 0;
  double max_abs_error = 0.0;
};

inline ConvolutionCheckResult convolution_check(int grids, std::uint64_t seed, int max_size = 32) {
  ConvolutionCheckResult res;
  res.grids = grids;
  Rng rng(seed);
  for (int g = 0; g < grids; ++g) {
    const int h = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_size)));
    const int w = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_size)));
    Grid<double> in(h, w);
    for (double& v : in.data()) v = rng.uniform01() < 0.3 ? 0.0 : rng.uniform(0.0, 2.0);
    RewardParams rp;
    rp.sigma_y = rng.uniform(0.3, 2.5);
    const GaussianKernel k = gaussian_kernel(rng.uniform(0.0, 2.0 * std::numbers::pi), rp);
    const Grid<double> fast = convolve(in, k);
    const Grid<double> slow = brute_force_convolve(in, k);
    for (std::size_t i = 0; i < fast.size(); ++i)
      res.max_abs_error = std::max(res.max_abs_error, std::abs(fast.data()[i] - slow.data()[i]));
  }
  return res;
}

}  // namespace gridmanip::selfcheck
