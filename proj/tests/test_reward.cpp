#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "gridmanip/reward.hpp"

using namespace gridmanip;

namespace {

// Direct long-double evaluation of the rotated anisotropic density.
long double oracle_density(int dx, int dy, long double theta, long double sx, long double sy) {
  const long double u = std::cos(theta) * dx + std::sin(theta) * dy;
  const long double v = -std::sin(theta) * dx + std::cos(theta) * dy;
  return std::exp(-(u * u / (2 * sx * sx) + v * v / (2 * sy * sy))) / (2 * std::numbers::pi_v<long double> * sx * sy);
}

// Output-centred double loop: out(y, x) = sum over kernel taps reaching in-frame inputs.
Grid<double> oracle_smooth(const Grid<double>& in, const GaussianKernel& k) {
  Grid<double> out(in.height(), in.width(), 0.0);
  const int hw = k.half_width();
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) {
      long double acc = 0;
      for (int sy = 0; sy < in.height(); ++sy)
        for (int sx = 0; sx < in.width(); ++sx) {
          const int dx = x - sx;
          const int dy = y - sy;
          if (std::abs(dx) <= hw && std::abs(dy) <= hw) acc += static_cast<long double>(in(sy, sx)) * k.at(dx, dy);
        }
      out(y, x) = static_cast<double>(acc);
    }
  return out;
}

}  // namespace

TEST(Reward, ProductAndGate) {
  const RewardParams p;
  EXPECT_DOUBLE_EQ(task_progress_reward(Primitive::Place, 1, 0.75, p), 0.75);
  EXPECT_DOUBLE_EQ(task_progress_reward(Primitive::Push, 1, 0.75, p), 0.375);
  EXPECT_DOUBLE_EQ(task_progress_reward(Primitive::Place, 0, 0.75, p), 0.0);
  EXPECT_DOUBLE_EQ(baseline_reward(1), 1.0);
  EXPECT_DOUBLE_EQ(baseline_reward(0), 0.0);
}

TEST(Reward, ProgressReversalEarnsNothing) {
  const RewardParams p;
  // Picking from a two-stack with goal 2: success, but progress drops.
  EXPECT_DOUBLE_EQ(task_progress_step_reward(Primitive::Pick, 1, 1.0, 0.5, p), 0.0);
  EXPECT_DOUBLE_EQ(task_progress_step_reward(Primitive::Pick, 1, 0.5, 0.5, p), 0.5);
  EXPECT_DOUBLE_EQ(task_progress_step_reward(Primitive::Place, 1, 0.5, 1.0, p), 1.0);
}

TEST(Reward, KernelValues) {
  const RewardParams p;
  EXPECT_EQ(p.half_width(), 6);
  const GaussianKernel k0 = gaussian_kernel(0.0, p);
  EXPECT_NEAR(k0.at(0, 0), 0.0795774715459477, 1e-15);
  EXPECT_NEAR(k0.at(2, 0), 0.0482661763150270, 1e-15);
  EXPECT_NEAR(k0.at(0, 2), std::exp(-2.0) / (4.0 * std::numbers::pi), 1e-15);
  for (double theta : {0.0, 0.3, std::numbers::pi / 2, 2.0})
    for (int dy = -6; dy <= 6; ++dy)
      for (int dx = -6; dx <= 6; ++dx)
        EXPECT_NEAR(gaussian_kernel(theta, p).at(dx, dy), static_cast<double>(oracle_density(dx, dy, theta, 2, 1)),
                    1e-15);
}

TEST(Reward, QuarterTurnTransposesKernel) {
  const RewardParams p;
  const GaussianKernel a = gaussian_kernel(0.0, p);
  const GaussianKernel b = gaussian_kernel(std::numbers::pi / 2, p);
  for (int dy = -6; dy <= 6; ++dy)
    for (int dx = -6; dx <= 6; ++dx) EXPECT_NEAR(a.at(dx, dy), b.at(dy, dx), 1e-15);
}

TEST(Reward, MapDominatesSpikeAndMatchesOracle) {
  const RewardParams p;
  for (double r : {0.0, 0.05, 0.5, 1.0, 3.0}) {
    const RewardMap m = tpg_reward_map(r, 3, 7, 0.7, 10, 12, p);
    Grid<double> spike(10, 12, 0.0);
    spike(7, 3) = r;
    const Grid<double> smooth = oracle_smooth(spike, gaussian_kernel(0.7, p));
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 12; ++x) {
        EXPECT_GE(m.grid(y, x), spike(y, x));
        EXPECT_GE(m.grid(y, x), smooth(y, x) - 1e-15);
        EXPECT_NEAR(m.grid(y, x), std::max(spike(y, x), smooth(y, x)), 1e-12);
      }
    EXPECT_DOUBLE_EQ(m.grid(7, 3), r);
  }
}

TEST(Reward, SupervisedSupportIsClippedSquare) {
  const RewardParams p;
  const RewardMap m = tpg_reward_map(1.0, 1, 2, 0.0, 20, 20, p);
  int n = 0;
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) {
      const bool inside = std::abs(y - 2) <= 6 && std::abs(x - 1) <= 6;
      EXPECT_EQ(static_cast<bool>(m.supervised_mask(y, x)), inside);
      n += m.supervised_mask(y, x) ? 1 : 0;
    }
  EXPECT_EQ(n, 9 * 8);
  const RewardMap b = baseline_reward_map(1.0, 4, 5, 8, 8);
  EXPECT_DOUBLE_EQ(b.grid(5, 4), 1.0);
  int nb = 0;
  for (auto v : b.supervised_mask.data()) nb += v ? 1 : 0;
  EXPECT_EQ(nb, 1);
}

TEST(Reward, SmoothedValueDecaysWithDistanceAlongAxes) {
  const RewardParams p;
  const RewardMap m = tpg_reward_map(1.0, 10, 10, 0.0, 21, 21, p);
  for (int d = 1; d < 6; ++d) {
    EXPECT_GT(m.grid(10, 10 + d), m.grid(10, 10 + d + 1));
    EXPECT_GT(m.grid(10 + d, 10), m.grid(10 + d + 1, 10));
    // Wider along the gripper x axis.
    EXPECT_GT(m.grid(10, 10 + d), m.grid(10 + d, 10));
  }
}

TEST(Reward, MapScalesLinearlyWithSpike) {
  const RewardParams p;
  const RewardMap a = tpg_reward_map(0.4, 5, 5, 1.1, 11, 11, p);
  const RewardMap b = tpg_reward_map(0.8, 5, 5, 1.1, 11, 11, p);
  for (std::size_t i = 0; i < a.grid.size(); ++i) EXPECT_NEAR(2.0 * a.grid.data()[i], b.grid.data()[i], 1e-15);
}

TEST(Reward, ConvolutionMatchesOracleOnRandomGrids) {
  Rng rng(17);
  const RewardParams p;
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 1 + static_cast<int>(rng.uniform_index(20));
    const int w = 1 + static_cast<int>(rng.uniform_index(20));
    Grid<double> in(h, w);
    for (auto& v : in.data()) v = rng.uniform(-1.0, 1.0);
    const GaussianKernel k = gaussian_kernel(rng.uniform(0.0, 6.3), p);
    const Grid<double> a = convolve(in, k);
    const Grid<double> b = oracle_smooth(in, k);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
  }
}

TEST(Reward, Errors) {
  const RewardParams p;
  EXPECT_THROW(tpg_reward_map(-0.1, 0, 0, 0.0, 5, 5, p), ContractError);
  EXPECT_THROW(tpg_reward_map(1.0, 5, 0, 0.0, 5, 5, p), ContractError);
  RewardParams bad;
  bad.sigma_y = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Reward, CsvDump) {
  Grid<double> g(2, 2, 0.0);
  g(0, 1) = 0.5;
  std::ostringstream out;
  write_csv(out, g);
  EXPECT_EQ(out.str(), "0,0.5\n0,0\n");
}

TEST(Reward, ZeroSpikeGivesZeroMap) {
  const RewardMap m = tpg_reward_map(0.0, 4, 4, 0.9, 9, 9, RewardParams{});
  for (double v : m.grid.data()) EXPECT_EQ(v, 0.0);
}

TEST(Reward, OffsetPixelIsSpikeTimesKernel) {
  const RewardParams p;
  const double r = 0.6;
  const RewardMap m = tpg_reward_map(r, 5, 5, 0.0, 12, 12, p);
  EXPECT_NEAR(m.grid(5, 7), r * 0.0482661763150270, 1e-15);
  EXPECT_NEAR(m.grid(5, 3), r * 0.0482661763150270, 1e-15);
  EXPECT_DOUBLE_EQ(m.grid(5, 5), r);
}
