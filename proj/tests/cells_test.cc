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

#include "mistlab/cells.h"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mistlab/engine.h"
#include "test_util.h"

namespace mistlab {
namespace {

using M = Matrix<double>;

M Scalar(double v) { return M::Constant(1, 1, v); }

double Sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Runs one forward step with explicitly supplied delayed states.
StepTrace<double> Step(const Cell<double>& cell, const ParamSet<double>& p, const M& x,
                       const std::vector<M>& taps, const M* c_prev = nullptr, int t = 5) {
  std::vector<const M*> ptrs;
  for (const auto& h : taps) ptrs.push_back(&h);
  StepInput<double> in{x, ptrs, c_prev, t};
  StepTrace<double> trace;
  cell.Forward(p, in, trace);
  return trace;
}

ParamSet<double> Zeroed(const Cell<double>& cell) {
  Rng rng(1);
  ParamSet<double> p = cell.InitParams(rng);
  p.SetZero();
  return p;
}

TEST(SimpleCellTest, ZeroParamsGiveZeroState) {
  const auto cell = MakeCell<double>(CellConfig::Make(Arch::kSimple, 2, 3));
  const ParamSet<double> p = Zeroed(*cell);
  const auto trace = Step(*cell, p, M::Constant(2, 1, 0.7), {M::Constant(3, 1, 0.4)});
  EXPECT_EQ(trace.h, M::Zero(3, 1));
}

TEST(SimpleCellTest, ScalarHandComputation) {
  const auto cell = MakeCell<double>(CellConfig::Make(Arch::kSimple, 1, 1));
  ParamSet<double> p = Zeroed(*cell);
  p.at("W_x")(0, 0) = 1.0;
  const auto trace = Step(*cell, p, Scalar(0.5), {Scalar(0.9)});
  EXPECT_NEAR(trace.h(0, 0), 0.46211715726000974, 1e-15);
}

TEST(SimpleCellTest, ScalarRecurrentWeightGradient) {
  const auto cell = MakeCell<double>(CellConfig::Make(Arch::kSimple, 1, 1));
  ParamSet<double> p = Zeroed(*cell);
  p.at("W_h")(0, 0) = 0.8;
  p.at("W_x")(0, 0) = -0.3;
  p.at("b")(0, 0) = 0.1;
  const M h_prev = Scalar(0.6), x = Scalar(1.2);
  const auto trace = Step(*cell, p, x, {h_prev});
  const double h = std::tanh(0.8 * 0.6 - 0.3 * 1.2 + 0.1);
  ASSERT_NEAR(trace.h(0, 0), h, 1e-15);
  std::vector<const M*> taps = {&h_prev};
  StepInput<double> in{x, taps, nullptr, 5};
  const auto g = BackwardStep(*cell, p, in, trace, Scalar(1.0));
  EXPECT_NEAR(g.params.at("W_h")(0, 0), (1 - h * h) * 0.6, 1e-15);
  EXPECT_NEAR(g.params.at("W_x")(0, 0), (1 - h * h) * 1.2, 1e-15);
  EXPECT_NEAR(g.d_taps[0](0, 0), (1 - h * h) * 0.8, 1e-15);
}

TEST(LstmCellTest, ForgetBiasHandComputation) {
  const auto cell = MakeCell<double>(CellConfig::Make(Arch::kLstm, 1, 1));
  ParamSet<double> p = Zeroed(*cell);
  p.at("b_f")(0, 0) = 1.0;
  const M c_prev = Scalar(1.0);
  const auto trace = Step(*cell, p, Scalar(0.3), {Scalar(0.2)}, &c_prev);
  const double f = Sig(1.0);
  EXPECT_NEAR(trace.f(0, 0), 0.7310585786300049, 1e-15);
  EXPECT_NEAR(trace.i(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(trace.c(0, 0), f, 1e-15);
  EXPECT_NEAR(trace.h(0, 0), 0.5 * std::tanh(f), 1e-15);
  EXPECT_NEAR(trace.h(0, 0), 0.3118, 1e-4);
}

TEST(LstmCellTest, ZeroStateStaysZero) {
  const auto cell = MakeCell<double>(CellConfig::Make(Arch::kLstm, 2, 2));
  const ParamSet<double> p = Zeroed(*cell);
  const M c_prev = M::Zero(2, 1);
  const auto trace = Step(*cell, p, M::Constant(2, 1, 1.0), {M::Zero(2, 1)}, &c_prev);
  EXPECT_EQ(trace.c, M::Zero(2, 1));
  EXPECT_EQ(trace.h, M::Zero(2, 1));
}

TEST(LstmCellTest, SaturatedForgetGateKeepsCell) {
  const auto cell = MakeCell<double>(CellConfig::Make(Arch::kLstm, 1, 1));
  ParamSet<double> p = Zeroed(*cell);
  p.at("b_f")(0, 0) = 50.0;
  p.at("W_cx")(0, 0) = 0.7;
  p.at("b_i")(0, 0) = 0.2;
  const M c_prev = Scalar(-0.4), x = Scalar(1.0);
  const auto trace = Step(*cell, p, x, {Scalar(0.0)}, &c_prev);
  const double expected = -0.4 + Sig(0.2) * std::tanh(0.7);
  EXPECT_NEAR(trace.c(0, 0), expected, 1e-12);
}

TEST(NarxCellTest, HandComputation) {
  auto config = CellConfig::Make(Arch::kNarx, 1, 1, 2);
  const auto cell = MakeCell<double>(config);
  ParamSet<double> p = Zeroed(*cell);
  p.at("W_1")(0, 0) = 0.5;
  p.at("W_2")(0, 0) = 0.5;
  const auto trace = Step(*cell, p, Scalar(3.0), {Scalar(0.2), Scalar(0.2)});
  EXPECT_NEAR(trace.h(0, 0), std::tanh(0.2), 1e-15);
  EXPECT_NEAR(trace.h(0, 0), 0.1974, 1e-4);
}

TEST(NarxCellTest, FirstStepSeesOnlyInput) {
  Rng rng(4);
  const auto config = CellConfig::Make(Arch::kNarx, 3, 5, 4);
  Model<double> model = InitModel<double>(config, LossHead{HeadMode::kPerStep, 2}, rng);
  model.params.at("b").setConstant(0.25);
  auto batch = testing::RandomBatch<double>(rng, 3, 2, 1, 2, HeadMode::kPerStep);
  const auto fwd = ForwardSequence(model, batch);
  const M expected =
      ((model.params.at("W_x") * batch.inputs[0]).colwise() + model.params.at("b").col(0))
          .array()
          .tanh()
          .matrix();
  EXPECT_LE((fwd.tape.H(1) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ClockworkCellTest, TickSchedule) {
  const auto config = CellConfig::Make(Arch::kClockwork, 1, 8, 4);  // periods 1,2,4,8
  const auto cell = MakeCell<double>(config);
  Rng rng(2);
  const ParamSet<double> p = cell->InitParams(rng);
  // Blocks updated at t: 0 always, 1 on even t, 2 on t in {4, 8}, 3 on t = 8.
  const int expected_blocks[9] = {0, 1, 2, 1, 3, 1, 2, 1, 4};
  for (int t = 1; t <= 8; ++t) {
    const auto trace = Step(*cell, p, Scalar(0.3), {M::Constant(8, 1, 0.5)}, nullptr, t);
    EXPECT_EQ(trace.updated_rows, 2 * expected_blocks[t]) << "t=" << t;
  }
}

TEST(ClockworkCellTest, IdleBlocksCopyThrough) {
  const auto config = CellConfig::Make(Arch::kClockwork, 2, 8, 4);
  const auto cell = MakeCell<double>(config);
  Rng rng(8);
  const ParamSet<double> p = cell->InitParams(rng);
  const M h_prev = InitNormal<double>(rng, 8, 3, 1.0);
  const auto trace = Step(*cell, p, InitNormal<double>(rng, 2, 3, 1.0), {h_prev}, nullptr, 6);
  ASSERT_EQ(trace.updated_rows, 4);
  for (Index r = 4; r < 8; ++r)
    for (Index c = 0; c < 3; ++c) EXPECT_EQ(trace.h(r, c), h_prev(r, c));
}

TEST(ClockworkCellTest, FirstStepOnlyFastestBlock) {
  Rng rng(6);
  const auto config = CellConfig::Make(Arch::kClockwork, 1, 8, 4);
  Model<double> model = InitModel<double>(config, LossHead{HeadMode::kPerStep, 2}, rng);
  model.params.at("b").setConstant(0.5);
  auto batch = testing::RandomBatch<double>(rng, 1, 1, 1, 2, HeadMode::kPerStep);
  const auto fwd = ForwardSequence(model, batch);
  EXPECT_NE(fwd.tape.H(1)(0, 0), 0.0);
  for (Index r = 2; r < 8; ++r) EXPECT_EQ(fwd.tape.H(1)(r, 0), 0.0);
}

TEST(ClockworkCellTest, RecurrentMaskIsBlockUpperTriangular) {
  const auto cell = MakeCell<double>(CellConfig::Make(Arch::kClockwork, 1, 6, 3));
  Rng rng(1);
  const ParamSet<double> p = cell->InitParams(rng);
  const M& w = p.at("W_h");
  for (Index r = 0; r < 6; ++r)
    for (Index c = 0; c < 6; ++c) {
      if (c / 2 < r / 2) EXPECT_EQ(w(r, c), 0.0) << r << "," << c;
      else EXPECT_NE(w(r, c), 0.0) << r << "," << c;
    }
  EXPECT_EQ(p.LearnableCount(), (2 * 6 + 2 * 4 + 2 * 2) + 6 + 6);
}

TEST(ClockworkCellTest, RejectsUnevenPartition) {
  EXPECT_THROW(CellConfig::Make(Arch::kClockwork, 1, 10, 3).Validate(), std::invalid_argument);
}

TEST(MistCellTest, EqualLogitsGiveUniformAttention) {
  const auto cell = MakeCell<double>(CellConfig::Make(Arch::kMist, 2, 3, 4));
  ParamSet<double> p = Zeroed(*cell);
  std::vector<M> taps(4, M::Constant(3, 2, 0.1));
  const auto trace = Step(*cell, p, M::Constant(2, 2, 1.0), taps);
  for (Index i = 0; i < trace.a.size(); ++i) EXPECT_DOUBLE_EQ(trace.a.data()[i], 0.25);
}

TEST(MistCellTest, ClosedResetIgnoresHistory) {
  const auto cell = MakeCell<double>(CellConfig::Make(Arch::kMist, 2, 3, 3));
  Rng rng(10);
  ParamSet<double> p = cell->InitParams(rng);
  p.at("b_r").setConstant(-50.0);
  p.at("b").setConstant(0.3);
  const M x = InitNormal<double>(rng, 2, 1, 1.0);
  std::vector<M> taps;
  for (int k = 0; k < 3; ++k) taps.push_back(InitNormal<double>(rng, 3, 1, 0.1));
  const auto trace = Step(*cell, p, x, taps);
  const M expected =
      ((p.at("W_x") * x).colwise() + p.at("b").col(0)).array().tanh().matrix();
  EXPECT_LE((trace.h - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MistCellTest, OpenResetSingleDelayApproachesSimpleRnn) {
  const auto cell = MakeCell<double>(CellConfig::Make(Arch::kMist, 2, 3, 1));
  Rng rng(12);
  ParamSet<double> p = cell->InitParams(rng);
  p.at("b_r").setConstant(50.0);
  const M x = InitNormal<double>(rng, 2, 1, 1.0);
  const M h_prev = InitNormal<double>(rng, 3, 1, 0.5);
  const auto trace = Step(*cell, p, x, {h_prev});
  const M simple =
      ((p.at("W_h") * h_prev + p.at("W_x") * x).colwise() + p.at("b").col(0))
          .array()
          .tanh()
          .matrix();
  EXPECT_LE((trace.h - simple).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MistCellTest, AttentionIsAConvexCombination) {
  Rng rng(13);
  const auto config = CellConfig::Make(Arch::kMist, 2, 4, 8);
  Model<double> model = InitModel<double>(config, LossHead{HeadMode::kPerStep, 3}, rng);
  for (const char* name : {"W_ah", "W_ax", "b_a"})
    model.params.at(name) = InitNormal<double>(rng, model.params.at(name).rows(),
                                               model.params.at(name).cols(), 3.0);
  const auto batch = testing::RandomBatch<double>(rng, 2, 5, 40, 3, HeadMode::kPerStep);
  const auto fwd = ForwardSequence(model, batch);
  for (const auto& step : fwd.tape.steps) {
    EXPECT_GE(step.a.minCoeff(), 0.0);
    for (Index b = 0; b < step.a.cols(); ++b) EXPECT_NEAR(step.a.col(b).sum(), 1.0, 1e-9);
    EXPECT_GT(step.r.minCoeff(), 0.0);
    EXPECT_LT(step.r.maxCoeff(), 1.0);
  }
}

TEST(MistCellTest, RejectsDelaysNotStartingAtOne) {
  auto config = CellConfig::Make(Arch::kMist, 1, 4, 2);
  config.delays = {2, 4};
  EXPECT_THROW(config.Validate(), std::invalid_argument);
}

TEST(CellBackwardTest, ZeroUpstreamGivesZeroGradients) {
  for (Arch arch : {Arch::kSimple, Arch::kLstm, Arch::kClockwork, Arch::kNarx, Arch::kMist}) {
    const auto config = CellConfig::Make(arch, 2, 4, arch == Arch::kNarx ? 2 : 2);
    const auto cell = MakeCell<double>(config);
    Rng rng(14);
    const ParamSet<double> p = cell->InitParams(rng);
    std::vector<M> taps;
    for (std::size_t k = 0; k < config.Taps().size(); ++k)
      taps.push_back(InitNormal<double>(rng, 4, 3, 1.0));
    const M c_prev = InitNormal<double>(rng, 4, 3, 1.0);
    const M x = InitNormal<double>(rng, 2, 3, 1.0);
    const M* c = config.HasCellState() ? &c_prev : nullptr;
    const auto trace = Step(*cell, p, x, taps, c, 4);
    std::vector<const M*> ptrs;
    for (const auto& h : taps) ptrs.push_back(&h);
    StepInput<double> in{x, ptrs, c, 4};
    const M zero = M::Zero(4, 3);
    const auto g = BackwardStep(*cell, p, in, trace, zero, config.HasCellState() ? &zero : nullptr);
    EXPECT_EQ(g.params.SquaredNorm(), 0.0) << ArchName(arch);
    for (const auto& d : g.d_taps) EXPECT_EQ(d.squaredNorm(), 0.0);
    EXPECT_EQ(g.d_x.squaredNorm(), 0.0);
  }
}

TEST(StateHistoryTest, ZeroBeforeStartAndRingOrder) {
  StateHistory<double> history(2, 1, 3, true);
  EXPECT_EQ(history.Back(1), M::Zero(2, 1));
  EXPECT_EQ(history.Back(3), M::Zero(2, 1));
  EXPECT_EQ(history.CellState(), M::Zero(2, 1));
  for (int t = 1; t <= 5; ++t) {
    M h = M::Constant(2, 1, t);
    M c = M::Constant(2, 1, -t);
    history.Push(h, &c);
  }
  EXPECT_EQ(history.time(), 5);
  EXPECT_EQ(history.Back(1)(0, 0), 5.0);
  EXPECT_EQ(history.Back(3)(0, 0), 3.0);
  EXPECT_EQ(history.CellState()(1, 0), -5.0);
  EXPECT_THROW(history.Back(4), std::out_of_range);
  history.Reset();
  EXPECT_EQ(history.Back(1), M::Zero(2, 1));
}

TEST(ParamCountTest, HandCounts) {
  EXPECT_EQ(ParamCount(CellConfig::Make(Arch::kSimple, 1, 1), 1), 5);
  EXPECT_EQ(ParamCount(CellConfig::Make(Arch::kLstm, 1, 100), 10), 41810);
}

TEST(ParamCountTest, AgreesWithInitializedModels) {
  for (Arch arch : {Arch::kSimple, Arch::kLstm, Arch::kClockwork, Arch::kNarx, Arch::kMist}) {
    const auto config = CellConfig::Make(arch, 3, 16, arch == Arch::kNarx ? 3 : 4);
    Rng rng(1);
    const auto model = InitModel<double>(config, LossHead{HeadMode::kPerStep, 7}, rng);
    EXPECT_EQ(ParamCount(config, 7), model.params.LearnableCount()) << ArchName(arch);
  }
}

TEST(CellConfigTest, DefaultsAndValidation) {
  const auto mist = CellConfig::Make(Arch::kMist, 1, 4);
  EXPECT_EQ(mist.delays, (std::vector<int>{1, 2, 4, 8, 16, 32, 64, 128}));
  EXPECT_EQ(mist.MaxDelay(), 128);
  const auto narx = CellConfig::Make(Arch::kNarx, 1, 4, 3);
  EXPECT_EQ(narx.delays, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(CellConfig::Make(Arch::kClockwork, 1, 16).Periods(),
            (std::vector<int>{1, 2, 4, 8, 16, 32, 64, 128}));
  auto bad = mist;
  bad.delays = {1, 4, 2, 8, 16, 32, 64, 128};
  EXPECT_THROW(bad.Validate(), std::invalid_argument);
  EXPECT_EQ(ParseArch("CW"), Arch::kClockwork);
  EXPECT_THROW(ParseArch("gru"), std::invalid_argument);
}

}  // namespace
}  // namespace mistlab
