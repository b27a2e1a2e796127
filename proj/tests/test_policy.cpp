#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <utility>
#include <tuple>

#include "gridmanip/policy.hpp"

using namespace gridmanip;

namespace {

QMapSet constant_maps(int rotations, int h, int w, double value) {
  QMapSet q;
  for (Primitive p : kPrimitives) q[p] = Planes(rotations, h, w, value);
  return q;
}

MaskSet full_masks(int h, int w, bool value = true) {
  return {Grid<bool>(h, w, value), Grid<bool>(h, w, value), Grid<bool>(h, w, value)};
}

}  // namespace

TEST(Policy, BoltzmannTermClosedForm) {
  const ExplorationState s;
  EXPECT_NEAR(boltzmann_loss_term(1.0, s), 0.46211715726000976, 1e-15);
  EXPECT_NEAR(boltzmann_loss_term(-1.0, s), 0.46211715726000976, 1e-15);
  EXPECT_EQ(boltzmann_loss_term(0.0, s), 0.0);
  double prev = 0.0;
  for (double l = 0.01; l < 40.0; l *= 1.5) {
    const double f = boltzmann_loss_term(l, s);
    EXPECT_GT(f, prev);
    EXPECT_LT(f, 1.0);
    EXPECT_NEAR(f, std::tanh(l / 2.0), 1e-15);
    prev = f;
  }
  ExplorationState scaled = s;
  scaled.alpha_scale = 2.0;
  scaled.sigma = 4.0;
  EXPECT_NEAR(boltzmann_loss_term(1.0, scaled), std::tanh(0.25), 1e-15);
}

TEST(Policy, ExplorationMovingAverage) {
  ExplorationState s = ExplorationState::initial(0.5, 0.1, 1.0, 1.0);
  s = update_exploration(s, 0.0);
  EXPECT_NEAR(s.epsilon, 0.45, 1e-15);
  s = update_exploration(s, 1.0);
  EXPECT_NEAR(s.epsilon, 0.1 * 0.46211715726000976 + 0.9 * 0.45, 1e-15);
  // Constant loss drives epsilon to the fixed point f(loss).
  for (int i = 0; i < 2000; ++i) s = update_exploration(s, 3.0);
  EXPECT_NEAR(s.epsilon, std::tanh(1.5), 1e-12);
  ExplorationState frozen = ExplorationState::initial(0.3, 0.0, 1.0, 1.0);
  EXPECT_EQ(update_exploration(frozen, 5.0).epsilon, 0.3);
}

TEST(Policy, DecayingSchedule) {
  EXPECT_DOUBLE_EQ(epsilon_greedy_decay(0), 0.5);
  EXPECT_NEAR(epsilon_greedy_decay(3465), 0.3000155748701218, 1e-12);
  EXPECT_NEAR(epsilon_greedy_decay(200000), 0.1, 1e-12);
  EXPECT_THROW(epsilon_greedy_decay(-1), ContractError);
}

TEST(Policy, GreedyTieBreaksLexicographically) {
  QMapSet q = constant_maps(4, 3, 3, 1.0);
  const MaskSet m = full_masks(3, 3);
  EXPECT_EQ(greedy_action(q, m), (Action{Primitive::Push, 0, 0, 0, 1.0}));
  q[Primitive::Place]->at(2, 1, 2) = 2.0;
  q[Primitive::Pick]->at(3, 2, 0) = 2.0;
  EXPECT_EQ(greedy_action(q, m), (Action{Primitive::Pick, 0, 2, 3, 2.0}));
  q[Primitive::Pick]->at(3, 1, 1) = 2.0;
  EXPECT_EQ(greedy_action(q, m), (Action{Primitive::Pick, 1, 1, 3, 2.0}));
}

TEST(Policy, GreedyRespectsMasksAndMissingPrimitives) {
  QMapSet q = constant_maps(2, 2, 2, 0.0);
  q[Primitive::Push].reset();
  MaskSet m = full_masks(2, 2, false);
  m[index_of(Primitive::Pick)](1, 0) = true;
  q[Primitive::Pick]->at(0, 0, 0) = 9.0;  // masked out
  q[Primitive::Pick]->at(0, 1, 0) = -2.0;
  q[Primitive::Pick]->at(1, 1, 0) = -1.0;
  EXPECT_EQ(greedy_action(q, m), (Action{Primitive::Pick, 0, 1, 1, -1.0}));
  EXPECT_THROW(greedy_action(q, full_masks(2, 2, false)), NoValidAction);
  Rng rng(1);
  EXPECT_THROW(select_action(q, full_masks(2, 2, false), 1.0, rng), NoValidAction);
  MaskSet wrong = full_masks(3, 3);
  EXPECT_THROW(greedy_action(q, wrong), ContractError);
}

TEST(Policy, GreedyInvariantToPositiveAffineRescaling) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    QMapSet q;
    QMapSet scaled;
    for (Primitive p : kPrimitives) {
      Planes a(2, 4, 5);
      for (auto& v : a.data()) v = std::round(rng.uniform(-3.0, 3.0) * 4.0) / 4.0;  // frequent ties
      Planes b = a;
      for (auto& v : b.data()) v = 2.0 * v + 0.5;
      q[p] = a;
      scaled[p] = b;
    }
    MaskSet m = full_masks(4, 5);
    for (auto& g : m)
      for (auto& b : g.data()) b = rng.uniform01() < 0.5;
    const Action a = greedy_action(q, m);
    const Action b = greedy_action(scaled, m);
    EXPECT_EQ(std::tie(a.primitive, a.theta_index, a.y, a.x), std::tie(b.primitive, b.theta_index, b.y, b.x));
  }
}

TEST(Policy, ZeroEpsilonIsGreedyAndOneIsUniform) {
  QMapSet q = constant_maps(2, 3, 3, 0.0);
  q[Primitive::Place]->at(1, 2, 2) = 1.0;
  const MaskSet m = full_masks(3, 3);
  Rng rng(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(select_action(q, m, 0.0, rng), greedy_action(q, m));

  // Uniform over 3 primitives x 2 rotations x 9 cells = 54 entries.
  std::map<std::tuple<int, int, int, int>, int> counts;
  const int draws = 54000;
  for (int i = 0; i < draws; ++i) {
    const Action a = select_action(q, m, 1.0, rng);
    ++counts[{index_of(a.primitive), a.theta_index, a.y, a.x}];
  }
  ASSERT_EQ(counts.size(), 54u);
  const double expect = draws / 54.0;
  const double se = std::sqrt(expect * (1.0 - 1.0 / 54.0));
  for (const auto& [key, n] : counts) EXPECT_LT(std::abs(n - expect), 5.0 * se);
}

TEST(Policy, SameSeedSameChoices) {
  QMapSet q = constant_maps(4, 5, 5, 0.0);
  const MaskSet m = full_masks(5, 5);
  Rng a(42), b(42);
  for (int i = 0; i < 500; ++i) EXPECT_EQ(select_action(q, m, 0.4, a), select_action(q, m, 0.4, b));
}

// Whatever the maps, masks and epsilon, a returned action is valid.
TEST(Policy, ChosenActionAlwaysValid) {
  Rng rng(11);
  int checked = 0;
  for (int trial = 0; trial < 100000; ++trial) {
    const int h = 1 + static_cast<int>(rng.uniform_index(4));
    const int w = 1 + static_cast<int>(rng.uniform_index(4));
    const int r = 1 + static_cast<int>(rng.uniform_index(3));
    QMapSet q;
    MaskSet m;
    for (Primitive p : kPrimitives) {
      m[index_of(p)] = Grid<bool>(h, w, false);
      if (rng.uniform01() < 0.2) continue;
      Planes maps(r, h, w);
      for (auto& v : maps.data()) v = rng.uniform(-1.0, 1.0);
      q[p] = maps;
      for (auto& b : m[index_of(p)].data()) b = rng.uniform01() < 0.3;
    }
    bool any = false;
    for (Primitive p : kPrimitives)
      if (q[p])
        for (auto b : m[index_of(p)].data()) any = any || b;
    const double eps = rng.uniform01();
    if (!any) {
      EXPECT_THROW(select_action(q, m, eps, rng), NoValidAction);
      continue;
    }
    const Action a = select_action(q, m, eps, rng);
    ASSERT_TRUE(q[a.primitive].has_value());
    ASSERT_TRUE(m[index_of(a.primitive)](a.y, a.x));
    ASSERT_GE(a.theta_index, 0);
    ASSERT_LT(a.theta_index, r);
    ASSERT_EQ(a.q_value, q[a.primitive]->at(a.theta_index, a.y, a.x));
    ++checked;
  }
  EXPECT_GT(checked, 50000);
}

TEST(Policy, ValidationErrors) {
  EXPECT_THROW(ExplorationState::initial(1.0, 0.1, 1.0, 1.0).validate(), ConfigError);
  EXPECT_THROW(ExplorationState::initial(0.5, 1.0, 1.0, 1.0).validate(), ConfigError);
  EXPECT_THROW(ExplorationState::initial(0.5, 0.1, 0.0, 1.0).validate(), ConfigError);
  EXPECT_NO_THROW(ExplorationState::initial(0.5, 0.1, 1.0, 1.0).validate());
}

TEST(Policy, SpecExamples) {
  const ExplorationState s;
  EXPECT_GT(boltzmann_loss_term(1e9, s), 0.999);
  ExplorationState half = ExplorationState::initial(0.4, 0.5, 1.0, 1.0);
  EXPECT_NEAR(update_exploration(half, 2.0 * std::atanh(0.2)).epsilon, 0.3, 1e-15);
  ExplorationState conv = ExplorationState::initial(0.5, 0.1, 1.0, 1.0);
  for (int i = 0; i < 1000; ++i) conv = update_exploration(conv, 0.7);
  EXPECT_LT(std::abs(conv.epsilon - boltzmann_loss_term(0.7, conv)), 1e-6);
}

TEST(Policy, SingleValidCellAlwaysChosen) {
  QMapSet q = constant_maps(1, 3, 3, 0.0);
  MaskSet m = full_masks(3, 3, false);
  m[index_of(Primitive::Place)](2, 1) = true;
  Rng rng(6);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(select_action(q, m, 1.0, rng), (Action{Primitive::Place, 1, 2, 0, 0.0}));
}

TEST(Policy, FourCandidatesUniform) {
  QMapSet q;
  q[Primitive::Pick] = Planes(1, 3, 3, 0.0);
  MaskSet m = full_masks(3, 3, false);
  m[index_of(Primitive::Pick)](0, 0) = m[index_of(Primitive::Pick)](0, 2) = true;
  m[index_of(Primitive::Pick)](2, 0) = m[index_of(Primitive::Pick)](2, 2) = true;
  Rng rng(7);
  std::map<std::pair<int, int>, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const Action a = select_action(q, m, 1.0, rng);
    ++counts[{a.y, a.x}];
  }
  ASSERT_EQ(counts.size(), 4u);
  for (const auto& [cell, n] : counts) EXPECT_NEAR(n / static_cast<double>(draws), 0.25, 0.01);
}

TEST(Policy, StrictMaxWinsWhateverTheMask) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    QMapSet q = constant_maps(2, 4, 4, 0.0);
    q[Primitive::Push]->at(1, 3, 2) = 5.0;
    MaskSet m = full_masks(4, 4);
    for (auto& g : m)
      for (auto& b : g.data()) b = rng.uniform01() < 0.5;
    m[index_of(Primitive::Push)](3, 2) = true;
    EXPECT_EQ(greedy_action(q, m), (Action{Primitive::Push, 2, 3, 1, 5.0}));
  }
}
