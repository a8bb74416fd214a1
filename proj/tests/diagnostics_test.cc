/* Copyright 2026 The MistLab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "mistlab/diagnostics.h"

#include <bit>
#include <cmath>

#include <gtest/gtest.h>

#include "mistlab/tasks.h"
#include "test_util.h"

namespace mistlab {
namespace {

using M = Matrix<double>;

TaskBatch<double> FinalStepBatch(Rng& rng, int n_x, Index batch, int steps, double scale = 1.0) {
  auto b = testing::RandomBatch<double>(rng, n_x, batch, steps, 10, HeadMode::kFinalStep);
  for (auto& x : b.inputs) x *= scale;
  return b;
}

// dL/dh_s for one example by central differences on a state nudge.
M StateGradientByNudge(const Model<double>& model, const TaskBatch<double>& batch, int s,
                       Index example) {
  const double eps = 1e-5;
  M g(model.config.n_h, 1);
  for (int i = 0; i < model.config.n_h; ++i) {
    StateNudge<double> nudge{s, M::Zero(model.config.n_h, batch.batch())};
    nudge.delta(i, example) = eps;
    const double up = ForwardSequence(model, batch, &nudge).metrics.loss();
    nudge.delta(i, example) = -eps;
    const double down = ForwardSequence(model, batch, &nudge).metrics.loss();
    g(i, 0) = (up - down) / (2 * eps);
  }
  return g;
}

TEST(ProbeTest, MatchesStateNudges) {
  for (Arch arch : {Arch::kSimple, Arch::kLstm, Arch::kClockwork, Arch::kMist}) {
    Rng rng(1);
    const int n_d = arch == Arch::kSimple || arch == Arch::kLstm ? 0 : 3;
    const auto model = InitModel<double>(CellConfig::Make(arch, 2, 6, n_d),
                                         LossHead{HeadMode::kFinalStep, 10}, rng);
    const auto batch = FinalStepBatch(rng, 2, 3, 12);
    const GradientProfile profile = ProbeGradientNorms(model, batch);
    ASSERT_EQ(profile.tau.size(), 11u);
    for (int tau : {1, 4, 9}) {
      // The batch loss averages over B = 3 examples; undo that per example.
      double mean = 0.0;
      for (Index j = 0; j < 3; ++j) mean += 3.0 * StateGradientByNudge(model, batch, 12 - tau, j).norm();
      mean /= 3.0;
      EXPECT_NEAR(profile.At(tau), mean, 1e-7 * mean) << ArchName(arch) << " tau " << tau;
    }
  }
}

TEST(ProbeTest, RejectsPerStepLoss) {
  Rng rng(2);
  const auto model = InitModel<double>(CellConfig::Make(Arch::kSimple, 1, 4),
                                       LossHead{HeadMode::kPerStep, 10}, rng);
  const auto batch = testing::RandomBatch<double>(rng, 1, 2, 5, 10, HeadMode::kPerStep);
  EXPECT_THROW(ProbeGradientNorms(model, batch), std::invalid_argument);
}

TEST(ProbeTest, ZeroRecurrenceStopsPropagation) {
  Rng rng(3);
  auto model = InitModel<double>(CellConfig::Make(Arch::kSimple, 1, 8),
                                 LossHead{HeadMode::kFinalStep, 10}, rng);
  model.params.at("W_h").setZero();
  const GradientProfile p = ProbeGradientNorms(model, FinalStepBatch(rng, 1, 5, 30));
  // The loss reads h_T only, so even tau = 1 is cut off.
  for (int tau = 1; tau < 30; ++tau) EXPECT_EQ(p.At(tau), 0.0) << tau;
}

TEST(ProbeTest, ScalarDecayFollowsRecurrentWeight) {
  // n_h = 1 in the linear regime: each step back multiplies the gradient by w.
  Rng rng(4);
  auto model = InitModel<double>(CellConfig::Make(Arch::kSimple, 1, 1),
                                 LossHead{HeadMode::kFinalStep, 10}, rng);
  model.params.at("W_h")(0, 0) = 0.5;
  model.params.at("W_x")(0, 0) = 1.0;
  const GradientProfile p = ProbeGradientNorms(model, FinalStepBatch(rng, 1, 4, 20, 1e-3));
  const double ratio = p.At(10) / p.At(1);
  EXPECT_NEAR(ratio, std::pow(0.5, 9), 0.1 * std::pow(0.5, 9));
}

TEST(ProbeTest, MistReachesOneHundredTwentyEightStepsBack) {
  Rng rng(5);
  auto model = InitModel<double>(CellConfig::Make(Arch::kMist, 1, 8, 8),
                                 LossHead{HeadMode::kFinalStep, 10}, rng);
  // tau = 128 is one edge away; tau = 127 needs seven.
  const GradientProfile p = ProbeGradientNorms(model, FinalStepBatch(rng, 1, 4, 140));
  EXPECT_GT(p.At(128), 0.0);
  EXPECT_GT(p.At(128), 10.0 * p.At(127));
}

TEST(ProbeTest, UntrainedSimpleRnnDecaysExponentially) {
  Rng rng(6);
  const auto model = InitModel<double>(CellConfig::Make(Arch::kSimple, 1, 64),
                                       LossHead{HeadMode::kFinalStep, 10}, rng);
  const GradientProfile p = ProbeGradientNorms(model, FinalStepBatch(rng, 1, 20, 250));
  const LogLinearFit fit = FitLogNorms(p, 10, 200);
  EXPECT_LT(fit.slope, 0.0);
  EXPECT_GE(fit.r_squared, 0.9);
  EXPECT_EQ(fit.points, 191);
}

TEST(FitTest, ExactExponential) {
  GradientProfile p;
  for (int tau = 1; tau <= 50; ++tau) {
    p.tau.push_back(tau);
    p.mean_norm.push_back(3.0 * std::exp(-0.2 * tau));
  }
  const LogLinearFit fit = FitLogNorms(p, 1, 50);
  EXPECT_NEAR(fit.slope, -0.2, 1e-12);
  EXPECT_NEAR(fit.intercept, std::log(3.0), 1e-12);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Decomposition

class DecompositionTest : public ::testing::TestWithParam<Arch> {};

TEST_P(DecompositionTest, ContributionsSumToTotal) {
  const Arch arch = GetParam();
  for (HeadMode mode : {HeadMode::kPerStep, HeadMode::kFinalStep}) {
    Rng rng(7);
    const int n_d = arch == Arch::kSimple || arch == Arch::kLstm ? 0 : 4;
    const auto model =
        InitModel<double>(CellConfig::Make(arch, 3, 8, n_d), LossHead{mode, 5}, rng);
    const auto batch = testing::RandomBatch<double>(rng, 3, 4, 50, 5, mode);
    const auto d = DecomposeGradient(model, batch);
    ASSERT_EQ(d.per_step.size(), 50u);
    EXPECT_LE(d.MaxRelativeResidual(), 1e-10) << ArchName(arch);

    ParamSet<double> reference;
    BackwardSequence(model, ForwardSequence(model, batch).tape, batch, reference);
    for (Index k = 0; k < reference.size(); ++k) EXPECT_EQ(d.total[k], reference[k]);
  }
}

INSTANTIATE_TEST_SUITE_P(AllArchitectures, DecompositionTest,
                         ::testing::Values(Arch::kSimple, Arch::kLstm, Arch::kClockwork,
                                           Arch::kNarx, Arch::kMist),
                         [](const auto& info) { return std::string(ArchName(info.param)); });

TEST(DecompositionTest, SimpleRnnStepTermsFromStateGradients) {
  // For h_t = tanh(W_h h_{t-1} + W_x x_t + b), the W_x term of step t is
  // (dL/dh_t * (1 - h_t^2)) x_t^T summed over the batch.
  Rng rng(8);
  const auto model = InitModel<double>(CellConfig::Make(Arch::kSimple, 2, 4),
                                       LossHead{HeadMode::kFinalStep, 10}, rng);
  const auto batch = FinalStepBatch(rng, 2, 2, 8);
  const auto d = DecomposeGradient(model, batch);
  const auto fwd = ForwardSequence(model, batch);
  const Index wx = *model.params.Find("W_x");
  for (int t = 1; t <= 8; ++t) {
    M expected = M::Zero(4, 2);
    for (Index j = 0; j < 2; ++j) {
      const M g = StateGradientByNudge(model, batch, t, j);
      const auto h = fwd.tape.H(t).col(j).array();
      expected += ((g.array() * (1.0 - h * h)).matrix()) * batch.inputs[t - 1].col(j).transpose();
    }
    EXPECT_LE((d.per_step[t - 1][wx] - expected).cwiseAbs().maxCoeff(),
              1e-7 * std::max(1.0, expected.cwiseAbs().maxCoeff()))
        << "t=" << t;
  }
}

// ---------------------------------------------------------------------------
// Shortest paths

std::vector<int> PowersOfTwo(int n) {
  std::vector<int> d;
  for (int k = 0; k < n; ++k) d.push_back(1 << k);
  return d;
}

TEST(ShortestPathTest, ChainGraph) {
  const auto len = ShortestPathLengths(DelayGraph{{1}, 0}, 50);
  for (int tau = 0; tau <= 50; ++tau) EXPECT_EQ(len[tau], tau);
}

TEST(ShortestPathTest, Examples) {
  EXPECT_EQ(ShortestPathLengths(DelayGraph{{1, 2}, 0}, 5)[5], 3);
  const auto len = ShortestPathLengths(DelayGraph{PowersOfTwo(8), 0}, 300);
  EXPECT_EQ(len[5], 2);
  EXPECT_EQ(len[137], 3);
  for (int tau = 1; tau <= 255; ++tau) EXPECT_EQ(len[tau], std::popcount(unsigned(tau))) << tau;
}

TEST(ShortestPathTest, AgreesWithDynamicProgramming) {
  for (const auto& delays : std::vector<std::vector<int>>{
           PowersOfTwo(8), {1, 2, 3}, {1, 5, 7}, {3, 5}, {2, 4, 8}, {1, 3, 9, 27}}) {
    const auto bfs = ShortestPathLengths(DelayGraph{delays, 0}, 1000);
    const auto dp = testing::CoinChangeLengths(delays, 1000);
    for (int tau = 0; tau <= 1000; ++tau) {
      if (dp[tau] < 0) {
        EXPECT_FALSE(bfs[tau].has_value()) << tau;
      } else {
        EXPECT_EQ(bfs[tau], dp[tau]) << tau;
      }
    }
  }
}

TEST(ShortestPathTest, UnreachableFlagged) {
  const auto len = ShortestPathLengths(DelayGraph{{2, 4}, 0}, 7);
  EXPECT_FALSE(len[1].has_value());
  EXPECT_FALSE(len[7].has_value());
  EXPECT_EQ(len[6], 2);
  EXPECT_THROW(ShortestPathLengths(DelayGraph{{0, 1}, 0}, 4), std::invalid_argument);
}

TEST(ShortestPathTest, ClosedForms) {
  const auto dp = testing::CoinChangeLengths({1, 2, 3, 4}, 200);
  for (int tau = 1; tau <= 200; ++tau) EXPECT_EQ(ClosedFormLength({1, 2, 3, 4}, tau), dp[tau]);
  const auto dp2 = testing::CoinChangeLengths(PowersOfTwo(8), 2000);
  for (int tau = 1; tau <= 2000; ++tau) EXPECT_EQ(ClosedFormLength(PowersOfTwo(8), tau), dp2[tau]);
  EXPECT_EQ(ClosedFormLength({1}, 17), 17);
  EXPECT_FALSE(ClosedFormLength({1, 3}, 5).has_value());
}

TEST(DecayBoundTest, Examples) {
  const auto chain = ShortestPathLengths(DelayGraph{{1}, 0}, 100);
  const auto mist = ShortestPathLengths(DelayGraph{PowersOfTwo(8), 0}, 100);
  EXPECT_NEAR(*DecayBound(0.9, chain)[100], 2.656139888758748e-05, 1e-15);
  EXPECT_NEAR(*DecayBound(0.9, mist)[100], 0.729, 1e-12);
  for (const auto& b : DecayBound(1.0, mist)) EXPECT_EQ(*b, 1.0);
  EXPECT_THROW(DecayBound(0.0, mist), std::invalid_argument);
}

}  // namespace
}  // namespace mistlab
