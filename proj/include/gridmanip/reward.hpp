#pragma once

// Task-progress reward and its spatially smoothed supervision map.
//
//   r_tp  = W(primitive) * success * progress
//   R_g   = spike(r_tp at executed pixel) convolved with a rotated
//           anisotropic Gaussian density, truncated at 3 sigma_x and not
//           renormalized
//   R_tpg = max(spike, R_g) pointwise

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <ostream>

#include "gridmanip/core.hpp"
#include "gridmanip/gridsim.hpp"

namespace gridmanip {

struct RewardParams {
  std::array<double, kNumPrimitives> weights{0.5, 1.0, 1.0};  // push, pick, place
  double sigma_y = 1.0;
  double anisotropy = 2.0;  // sigma_x / sigma_y

  double weight(Primitive p) const { return weights[index_of(p)]; }
  double sigma_x() const { return anisotropy * sigma_y; }
  int half_width() const { return static_cast<int>(std::ceil(3.0 * sigma_x())); }

  void validate() const {
    for (double w : weights)
      if (!(w > 0.0)) throw ConfigError("reward: weights must be positive");
    if (!(sigma_y > 0.0)) throw ConfigError("reward: sigma_y must be positive");
    if (!(anisotropy > 0.0)) throw ConfigError("reward: anisotropy must be positive");
  }
};

struct RewardMap {
  Grid<double> grid;
  Grid<bool> supervised_mask;
};

/// Gated, weighted progress reward.
inline double task_progress_reward(Primitive primitive, int success, double progress, const RewardParams& params) {
  return params.weight(primitive) * static_cast<double>(success) * progress;
}

/// Step reward used for training: a step that lowers task progress earns
/// nothing even when the primitive itself succeeded.
inline double task_progress_step_reward(Primitive primitive, int success, double progress_before,
                                        double progress_after, const RewardParams& params) {
  if (progress_after < progress_before) return 0.0;
  return task_progress_reward(primitive, success, progress_after, params);
}

inline double baseline_reward(int success) { return static_cast<double>(success); }

/// Square kernel of half-width H, indexed by integer offset (dx, dy).
class GaussianKernel {
 public:
  GaussianKernel(int half_width) : half_width_(half_width), values_(2 * half_width + 1, 2 * half_width + 1) {}

  int half_width() const { return half_width_; }
  double& at(int dx, int dy) { return values_(dy + half_width_, dx + half_width_); }
  double at(int dx, int dy) const { return values_(dy + half_width_, dx + half_width_); }
  const Grid<double>& values() const { return values_; }

 private:
  int half_width_;
  Grid<double> values_;
};

/// Anisotropic Gaussian density at (u, v) in the gripper frame.
inline double gaussian_density(double u, double v, double sigma_x, double sigma_y) {
  return std::exp(-(u * u / (2.0 * sigma_x * sigma_x) + v * v / (2.0 * sigma_y * sigma_y))) /
         (2.0 * std::numbers::pi * sigma_x * sigma_y);
}

/// Kernel with its sigma_x axis along the gripper x-axis at angle theta.
inline GaussianKernel gaussian_kernel(double theta, const RewardParams& params) {
  const int hw = params.half_width();
  GaussianKernel k(hw);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  for (int dy = -hw; dy <= hw; ++dy)
    for (int dx = -hw; dx <= hw; ++dx) {
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      k.at(dx, dy) = gaussian_density(u, v, params.sigma_x(), params.sigma_y);
    }
  return k;
}

/// Same-size convolution with zero padding outside the grid.
inline Grid<double> convolve(const Grid<double>& input, const GaussianKernel& kernel) {
  const int h = input.height();
  const int w = input.width();
  const int hw = kernel.half_width();
  Grid<double> out(h, w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      const int dy_lo = std::max(-hw, y - (h - 1));
      const int dy_hi = std::min(hw, y);
      const int dx_lo = std::max(-hw, x - (w - 1));
      const int dx_hi = std::min(hw, x);
      for (int dy = dy_lo; dy <= dy_hi; ++dy)
        for (int dx = dx_lo; dx <= dx_hi; ++dx) acc += input(y - dy, x - dx) * kernel.at(dx, dy);
      out(y, x) = acc;
    }
  return out;
}

/// Smoothed reward map for a reward spike r_tp at (x, y) with gripper angle theta.
inline RewardMap tpg_reward_map(double r_tp, int x, int y, double theta, int height, int width,
                                const RewardParams& params) {
  if (r_tp < 0.0) throw ContractError("tpg_reward_map: negative reward");
  Grid<double> spike(height, width, 0.0);
  if (!spike.contains(y, x)) throw ContractError("tpg_reward_map: pose outside the grid");
  spike(y, x) = r_tp;
  const GaussianKernel kernel = gaussian_kernel(theta, params);
  RewardMap map{convolve(spike, kernel), Grid<bool>(height, width, false)};
  for (std::size_t i = 0; i < map.grid.size(); ++i)
    map.grid.data()[i] = std::max(spike.data()[i], map.grid.data()[i]);
  const int hw = kernel.half_width();
  for (int yy = std::max(0, y - hw); yy <= std::min(height - 1, y + hw); ++yy)
    for (int xx = std::max(0, x - hw); xx <= std::min(width - 1, x + hw); ++xx) map.supervised_mask(yy, xx) = true;
  return map;
}

/// Unsmoothed spike map: one supervised pixel.
inline RewardMap baseline_reward_map(double reward, int x, int y, int height, int width) {
  RewardMap map{Grid<double>(height, width, 0.0), Grid<bool>(height, width, false)};
  if (!map.grid.contains(y, x)) throw ContractError("baseline_reward_map: pose outside the grid");
  map.grid(y, x) = reward;
  map.supervised_mask(y, x) = true;
  return map;
}

inline void write_csv(std::ostream& out, const Grid<double>& grid) {
  const auto old = out.precision(17);
  for (int y = 0; y < grid.height(); ++y) {
    for (int x = 0; x < grid.width(); ++x) {
      if (x) out << ',';
      out << grid(y, x);
    }
    out << '\n';
  }
  out.precision(old);
}

}  // namespace gridmanip
