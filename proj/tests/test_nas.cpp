#include <cmath>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "grmc/estimators.hpp"
#include "grmc/genotype.hpp"
#include "grmc/supernet.hpp"
#include "grmc/synthetic.hpp"
#include "grmc/trainer.hpp"

namespace grmc::nas {
namespace {

using ad::Index;
using ad::Tape;

Tensor random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

Tensor row(std::initializer_list<double> v) {
  Eigen::ArrayXd a(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) a[i++] = x;
  return Tensor({a.size()}, a);
}

// Every feature node carries the label sign: x = signal·(2y - 1) + noise.
Dataset sign_dataset(std::size_t n, std::size_t first_id, std::uint64_t seed, const SearchSpaceConfig& cfg,
                     double signal = 1.0, double noise = 0.1) {
  Rng rng(seed);
  Dataset d;
  d.n_image = cfg.n_image_features;
  d.n_speech = cfg.n_speech_features;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(static_cast<int>(i % 2));
    d.ids.push_back(first_id + i);
  }
  for (int f = 0; f < d.n_image + d.n_speech; ++f) {
    Tensor t({static_cast<Index>(n), cfg.channels, cfg.length});
    const Index block = cfg.channels * cfg.length;
    for (Index i = 0; i < t.size(); ++i) t[i] = signal * (2.0 * d.labels[static_cast<std::size_t>(i / block)] - 1.0) + noise * rng.normal();
    d.features.push_back(std::move(t));
  }
  return d;
}

// α on Identity, γ on `op`, β on the cell input, all at ±30.
SearchState saturated_state(const SearchSpace& space, Primitive op, Rng& rng) {
  SearchState s = SearchState::initialize(space, rng);
  s.alpha.col(0).setConstant(30.0);
  s.alpha.col(1).setConstant(-30.0);
  s.gamma.setConstant(-30.0);
  const auto idx = std::find(kSecondLevelOps.begin(), kSecondLevelOps.end(), op) - kSecondLevelOps.begin();
  s.gamma.col(idx).setConstant(30.0);
  s.beta.col(0).setConstant(30.0);
  s.beta.col(1).setConstant(-30.0);
  return s;
}

TEST(SearchSpace, TopologyAndNaming) {
  const SearchSpace space(SearchSpaceConfig{});
  EXPECT_EQ(space.num_nodes(), 6);
  EXPECT_EQ(space.edges().size(), 4u + 5u);
  EXPECT_EQ(space.edges_into(1).size(), 5u);
  for (int e : space.edges_into(1)) EXPECT_EQ(space.edges()[static_cast<std::size_t>(e)].dst, space.cell_node(1));
  EXPECT_EQ(space.node_name(0), "I1");
  EXPECT_EQ(space.node_name(2), "S1");
  EXPECT_EQ(space.node_name(5), "Cell2");
  EXPECT_EQ(space.node_index("S2"), 3);
  EXPECT_EQ(space.num_slots(), 8);
  Rng rng(1);
  const auto s = SearchState::initialize(space, rng);
  EXPECT_EQ(s.alpha.rows(), 9);
  EXPECT_EQ(s.alpha.cols(), 2);
  EXPECT_EQ(s.gamma.rows(), 4);
  EXPECT_EQ(s.gamma.cols(), 5);
  EXPECT_EQ(s.beta.rows(), 8);
  EXPECT_EQ(s.omega.back().first, "head.b");
  EXPECT_LT(s.alpha.cwiseAbs().maxCoeff(), 0.01);
}

TEST(SearchSpace, ConfigValidation) {
  EXPECT_THROW(SearchSpace(SearchSpaceConfig{.n_cells = 0}), ConfigError);
  EXPECT_THROW(SearchSpace(SearchSpaceConfig{.lambda = 0.0}), ConfigError);
  EXPECT_THROW(SearchSpace(SearchSpaceConfig{.k_samples = 0}), ConfigError);
  EXPECT_THROW(SearchSpace(SearchSpaceConfig{.n_speech_features = 0}), ConfigError);
}

TEST(Entropy, HandComputedValues) {
  EXPECT_NEAR(entropy(Eigen::MatrixXd::Zero(1, 2)), std::log(2.0), 1e-12);
  EXPECT_NEAR(entropy(Eigen::MatrixXd::Constant(3, 5, 0.7)), 3.0 * std::log(5.0), 1e-12);
  Eigen::MatrixXd hard(2, 2);
  hard << 30, -30, -30, 30;
  EXPECT_LT(entropy(hard), 1e-9);
  Eigen::MatrixXd p(1, 3);
  p << std::log(0.5), std::log(0.3), std::log(0.2);
  EXPECT_NEAR(entropy(p), -(0.5 * std::log(0.5) + 0.3 * std::log(0.3) + 0.2 * std::log(0.2)), 1e-12);
}

TEST(MixedEdge, DominantLogitsSelectOneOp) {
  Rng rng(2);
  Tape tape;
  const Tensor x0 = random_tensor({2, 3, 4}, rng);
  Var x = tape.constant(x0);
  SamplingStreams streams(3, 0);
  for (auto mode : {Mode::Eval, Mode::Search}) {
    const Tensor keep = mixed_edge_forward(x, tape.constant(row({30, -30})), 0.1, 100, &streams, mode).value();
    EXPECT_LT((keep.data() - x0.data()).abs().maxCoeff(), 1e-9);
    const Tensor drop = mixed_edge_forward(x, tape.constant(row({-30, 30})), 0.1, 100, &streams, mode).value();
    EXPECT_LT(drop.data().abs().maxCoeff(), 1e-9);
  }
  EXPECT_THROW(mixed_edge_forward(x, tape.constant(row({0, 0, 0})), 0.1, 1, &streams, Mode::Eval), ShapeError);
  EXPECT_THROW(mixed_edge_forward(x, tape.constant(row({0, 0})), 0.1, 1, nullptr, Mode::Search), ContractError);
}

TEST(MixedEdge, SymmetricLogitsAverageToHalf) {
  SamplingStreams streams(4, 0);
  Eigen::Vector2d total = Eigen::Vector2d::Zero();
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) {
    Tape tape;
    const Tensor w = relaxed_weights(tape.leaf(row({0.0, 0.0})), 0.1, 100, streams).value();
    ASSERT_NEAR(w[0] + w[1], 1.0, 1e-12);
    ASSERT_GE(w[0], 0.0);
    ASSERT_GE(w[1], 0.0);
    total += Eigen::Vector2d(w[0], w[1]);
  }
  total /= draws;
  EXPECT_NEAR(total[0], 0.5, 0.02);
  EXPECT_NEAR(total[1], 0.5, 0.02);
}

TEST(RelaxedWeights, BackwardIsTheRaoBlackwellProduct) {
  const Eigen::VectorXd theta = (Eigen::VectorXd(5) << 0.3, -0.2, 1.1, 0.0, -0.7).finished();
  const Eigen::VectorXd v = (Eigen::VectorXd(5) << 1.0, -2.0, 0.5, 3.0, -1.0).finished();
  for (int k : {1, 10, 100}) {
    SamplingStreams streams(5, 9);
    Tape tape;
    Var logits = tape.leaf(Tensor({5}, theta.array()));
    Var w = relaxed_weights(logits, 0.5, k, streams);
    tape.backward(ad::sum(ad::mul(w, tape.constant(Tensor({5}, v.array())))));

    Rng outcome(5, {9, 0}), conditional(5, {9, 1});
    const Logits cat(theta);
    const auto d = gumbel_max_sample(cat, outcome);
    const Eigen::VectorXd expected = rao_blackwell_jacobian_product(v, cat, d.index, 0.5, k, conditional);
    for (Index j = 0; j < 5; ++j) EXPECT_NEAR(logits.grad()[j], expected[j], 1e-12) << "K " << k;
  }
}

struct CellFixture {
  SearchSpaceConfig cfg{.n_image_features = 1, .n_speech_features = 1, .n_cells = 1, .channels = 3, .length = 4};
};

// inputs: x0, x1, edge rows ×2, γ rows ×2, β rows ×4, then LinearGLU/ConcatFC
// weights (2 + 2) for each of the 2 nodes.
Var cell_program(std::span<const Var> in, Mode mode, SamplingStreams* streams) {
  CellBinding cell;
  std::size_t cursor = 10;
  for (int m = 0; m < 2; ++m) {
    cell.gamma_rows.push_back(in[4 + static_cast<std::size_t>(m)]);
    cell.beta_rows.push_back(in[6 + 2 * static_cast<std::size_t>(m)]);
    cell.beta_rows.push_back(in[7 + 2 * static_cast<std::size_t>(m)]);
    std::vector<std::vector<Var>> ops(5);
    ops[3] = {in[cursor], in[cursor + 1]};
    ops[4] = {in[cursor + 2], in[cursor + 3]};
    cursor += 4;
    cell.weights.push_back(std::move(ops));
  }
  return cell_forward(in.subspan(0, 2), in.subspan(2, 2), cell, 0.5, 10, streams, mode);
}

std::vector<Tensor> cell_inputs(Rng& rng) {
  std::vector<Tensor> in{random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 4}, rng)};
  for (int r = 0; r < 2; ++r) in.push_back(random_tensor({2}, rng));
  for (int r = 0; r < 2; ++r) in.push_back(random_tensor({5}, rng));
  for (int r = 0; r < 4; ++r) in.push_back(random_tensor({2}, rng));
  for (int m = 0; m < 2; ++m) {
    for (auto op : {Primitive::LinearGLU, Primitive::ConcatFC}) {
      for (auto& w : instantiate(op, 3, rng).weights) in.push_back(w);
    }
  }
  return in;
}

TEST(Cell, ZeroEverywhereGivesZero) {
  Rng rng(6);
  auto in = cell_inputs(rng);
  in[4] = row({30, -30, -30, -30, -30});
  in[5] = row({30, -30, -30, -30, -30});
  Tape tape;
  std::vector<Var> vars;
  for (auto& t : in) vars.push_back(tape.constant(t));
  SamplingStreams streams(1, 1);
  for (auto mode : {Mode::Eval, Mode::Search}) {
    EXPECT_LT(cell_program(vars, mode, &streams).value().data().abs().maxCoeff(), 1e-9);
  }
}

TEST(Cell, SumWithInputWiringQuadruplesInput) {
  // input node = x; node 1 = x + x; node 2 reads the cell input twice = 2x;
  // output = 4x.
  Rng rng(7);
  auto in = cell_inputs(rng);
  in[2] = row({30, -30});
  in[3] = row({-30, 30});
  in[4] = row({-30, 30, -30, -30, -30});
  in[5] = row({-30, 30, -30, -30, -30});
  for (int s = 6; s < 10; ++s) in[static_cast<std::size_t>(s)] = row({30, -30});
  Tape tape;
  std::vector<Var> vars;
  for (auto& t : in) vars.push_back(tape.constant(t));
  const Tensor out = cell_program(vars, Mode::Eval, nullptr).value();
  EXPECT_LT((out.data() - 4.0 * in[0].data()).abs().maxCoeff(), 1e-9);

  // Node 2 reading node 1 on both slots: 2x + 4x = 6x.
  in[8] = row({-30, 30});
  in[9] = row({-30, 30});
  Tape tape2;
  std::vector<Var> vars2;
  for (auto& t : in) vars2.push_back(tape2.constant(t));
  EXPECT_LT((cell_program(vars2, Mode::Eval, nullptr).value().data() - 6.0 * in[0].data()).abs().maxCoeff(), 1e-9);
}

class CellGradCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(CellGradCheck, EvalModeMatchesFiniteDifferences) {
  Rng rng(GetParam());
  const auto in = cell_inputs(rng);
  const Tensor up = random_tensor({2, 3, 4}, rng);
  const auto report = ad::grad_check(
      [&up](Tape& tape, std::span<const Var> v) {
        return ad::sum(ad::mul(cell_program(v, Mode::Eval, nullptr), tape.constant(up)));
      },
      in);
  EXPECT_LT(report.max_relative_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, CellGradCheck, ::testing::Values(21u, 22u, 23u));

TEST(Cell, FirstNodeSlotsGetNoGradient) {
  // Both choices of node 1's slots resolve to the cell input.
  Rng rng(8);
  const auto in = cell_inputs(rng);
  Tape tape;
  std::vector<Var> vars;
  for (auto& t : in) vars.push_back(tape.leaf(t));
  tape.backward(ad::sum(cell_program(vars, Mode::Eval, nullptr)));
  EXPECT_LT(vars[6].grad().data().abs().maxCoeff(), 1e-12);
  EXPECT_LT(vars[7].grad().data().abs().maxCoeff(), 1e-12);
  EXPECT_GT(vars[8].grad().data().abs().maxCoeff(), 1e-8);
}

class SupernetTest : public ::testing::Test {
 protected:
  SearchSpaceConfig cfg{.lambda = 0.5, .k_samples = 10};
  SearchSpace space{cfg};
  Dataset data = sign_dataset(12, 0, 1, cfg);
  Batch batch = full_batch(data);
};

TEST_F(SupernetTest, EvalModeIsDeterministicAndWeightsOnSimplex) {
  Rng rng(9);
  const SearchState state = SearchState::initialize(space, rng);
  auto pass = [&](Mode mode, SamplingStreams* streams, WeightProbe* probe) {
    Tape tape;
    const auto b = bind(tape, state);
    return supernet_forward(tape, space, b, batch, mode, streams, probe).logits.value();
  };
  WeightProbe probe;
  EXPECT_EQ(pass(Mode::Eval, nullptr, &probe), pass(Mode::Eval, nullptr, nullptr));
  SamplingStreams streams(2, 0);
  pass(Mode::Search, &streams, &probe);
  EXPECT_EQ(probe.size(), 2u * (9 + 4 + 8));
  for (const auto& w : probe) {
    EXPECT_NEAR(w.sum(), 1.0, 1e-12);
    EXPECT_GE(w.minCoeff(), 0.0);
  }
}

TEST_F(SupernetTest, StateMismatchIsRejected) {
  Rng rng(10);
  SearchState state = SearchState::initialize(space, rng);
  state.omega.pop_back();
  EXPECT_THROW(supernet_gradient(space, state, batch, Mode::Eval, nullptr), std::out_of_range);
  Batch short_batch = batch;
  short_batch.features.pop_back();
  EXPECT_THROW(supernet_gradient(space, SearchState::initialize(space, rng), short_batch, Mode::Eval, nullptr),
               ShapeError);
}

TEST(ArchitectureGradient, LargerKGivesLowerVarianceAtMatchedSeeds) {
  // Same outcome streams for both K, so the runs differ only in the
  // conditional draws. Per coordinate the one-sided comparison allows three
  // paired standard errors; the total must drop outright.
  SynthTaskConfig data;
  data.n_train = data.n_val = 64;
  const auto splits = generate_synthetic(data);
  const Batch batch = full_batch(splits.val);
  SearchSpaceConfig cfg{.lambda = 0.1};
  Rng rng(11);
  const SearchState state = SearchState::initialize(SearchSpace(cfg), rng);
  const int reps = 1000;
  auto draws = [&](int k) {
    cfg.k_samples = k;
    const SearchSpace sp(cfg);
    Eigen::MatrixXd out(9 * 2 + 4 * 5, reps);
    for (int r = 0; r < reps; ++r) {
      SamplingStreams streams(77, static_cast<std::uint64_t>(r));
      const auto g = supernet_gradient(sp, state, batch, Mode::Search, &streams);
      out.col(r) << g.alpha.reshaped(), g.gamma.reshaped();
    }
    return out;
  };
  const Eigen::MatrixXd g10 = draws(10), g1000 = draws(1000);
  const Eigen::MatrixXd c10 = g10.colwise() - g10.rowwise().mean();
  const Eigen::MatrixXd c1000 = g1000.colwise() - g1000.rowwise().mean();
  const Eigen::MatrixXd d = c1000.cwiseAbs2() - c10.cwiseAbs2();
  const Eigen::VectorXd gap = d.rowwise().mean();
  for (Index j = 0; j < d.rows(); ++j) {
    const double se = std::sqrt((d.row(j).array() - gap[j]).square().sum() / (reps - 1) / reps);
    EXPECT_LE(gap[j], 3.0 * se) << "coordinate " << j;
  }
  EXPECT_LT(c1000.cwiseAbs2().sum(), c10.cwiseAbs2().sum());
}

TEST(Derive, SaturatedStateGivesFullSumDag) {
  const SearchSpace space(SearchSpaceConfig{});
  Rng rng(12);
  const auto g = derive_architecture(space, saturated_state(space, Primitive::Sum, rng), 7, 3);
  EXPECT_EQ(g.first_level_edges.size(), 9u);
  for (const auto& e : g.first_level_edges) EXPECT_TRUE(e.kept);
  ASSERT_EQ(g.cells.size(), 4u);
  for (const auto& n : g.cells) {
    EXPECT_EQ(n.op, Primitive::Sum);
    EXPECT_FALSE(n.tie);
    EXPECT_EQ(n.inputs[0], SlotSource::CellInput);
  }
  EXPECT_EQ(g.provenance, (Genotype::Provenance{0.1, 100, 7, 3}));
  EXPECT_EQ(g.parameter_count(), 2 * 4 + 2);
}

TEST(Derive, ExactTieTakesLowestIndexAndFlagsIt) {
  const SearchSpace space(SearchSpaceConfig{});
  Rng rng(13);
  SearchState s = saturated_state(space, Primitive::Sum, rng);
  s.gamma.row(2).setConstant(0.25);
  const auto g = derive_architecture(space, s);
  EXPECT_EQ(g.cells[2].op, Primitive::Zero);
  EXPECT_TRUE(g.cells[2].tie);
  EXPECT_FALSE(g.cells[1].tie);
}

TEST(Derive, InvariantToRowShifts) {
  const SearchSpace space(SearchSpaceConfig{});
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    SearchState s = SearchState::initialize(space, rng);
    for (Index i = 0; i < s.alpha.size(); ++i) s.alpha.data()[i] = rng.normal();
    for (Index i = 0; i < s.gamma.size(); ++i) s.gamma.data()[i] = rng.normal();
    for (Index i = 0; i < s.beta.size(); ++i) s.beta.data()[i] = rng.normal();
    s.alpha.row(2).setConstant(5.0);  // keep every cell connected
    s.alpha(2, 1) = -5.0;
    s.alpha.row(8).setConstant(5.0);
    s.alpha(8, 1) = -5.0;
    const auto base = derive_architecture(space, s);
    SearchState shifted = s;
    for (Index r = 0; r < s.alpha.rows(); ++r) shifted.alpha.row(r).array() += 3.0 * rng.normal();
    for (Index r = 0; r < s.gamma.rows(); ++r) shifted.gamma.row(r).array() += 3.0 * rng.normal();
    for (Index r = 0; r < s.beta.rows(); ++r) shifted.beta.row(r).array() += 3.0 * rng.normal();
    EXPECT_EQ(derive_architecture(space, shifted), base);
  }
}

TEST(Derive, CellWithoutKeptInputIsDegenerate) {
  const SearchSpace space(SearchSpaceConfig{});
  Rng rng(15);
  SearchState s = saturated_state(space, Primitive::Sum, rng);
  for (int e : space.edges_into(1)) {
    s.alpha(e, 0) = -30;
    s.alpha(e, 1) = 30;
  }
  EXPECT_THROW(derive_architecture(space, s), DegenerateGenotypeError);
}

TEST(Genotype, ParameterCountIsAnalytic) {
  const SearchSpace space(SearchSpaceConfig{.channels = 6});
  Rng rng(16);
  SearchState s = saturated_state(space, Primitive::Sum, rng);
  s.gamma.row(0) << -30, -30, -30, 30, -30;  // LinearGLU: 2·6·6
  s.gamma.row(3) << -30, -30, -30, -30, 30;  // ConcatFC: 12·6 + 6
  s.gamma.row(1) << -30, -30, 30, -30, -30;  // Attention: none
  const auto g = derive_architecture(space, s);
  EXPECT_EQ(g.parameter_count(), 72 + 78 + (2 * 6 + 2));
  EXPECT_EQ(head_parameter_count(6), 14);
}

TEST(Genotype, JsonRoundTripAndStrictParsing) {
  const SearchSpace space(SearchSpaceConfig{});
  Rng rng(17);
  SearchState s = saturated_state(space, Primitive::Attention, rng);
  s.alpha(3, 0) = -1;
  s.beta(5, 0) = -30;
  s.beta(5, 1) = 30;
  Genotype g = derive_architecture(space, s, 99, 12);
  g.entropy_history_ref = "history.csv";
  const std::string text = serialize(g);
  EXPECT_EQ(parse_genotype(text), g);
  EXPECT_EQ(serialize(parse_genotype(text)), text);

  const auto j = to_json(g);
  for (const char* key : {"version", "lambda", "K", "seed", "first_level_edges", "cells", "entropy_history_ref"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  auto bad_op = j;
  bad_op["cells"][0]["op"] = "conv3x3";
  EXPECT_THROW(genotype_from_json(bad_op), FormatError);
  auto bad_version = j;
  bad_version["version"] = 99;
  EXPECT_THROW(genotype_from_json(bad_version), FormatError);
  EXPECT_THROW(parse_genotype("{not json"), FormatError);
}

class BilevelTest : public ::testing::Test {
 protected:
  SearchSpaceConfig cfg{.lambda = 0.1, .k_samples = 10};
  SearchSpace space{cfg};
  Dataset train = sign_dataset(32, 0, 1, cfg);
  Dataset val = sign_dataset(32, 1000, 2, cfg);
};

TEST_F(BilevelTest, HeadOnlyTrainingLossStrictlyDecreases) {
  Rng rng(18);
  TrainSchedule sched;
  sched.weight_lr = 1e-2;
  sched.train_alpha = sched.train_beta = sched.train_gamma = false;
  BilevelTrainer trainer(space, saturated_state(space, Primitive::Sum, rng), sched);
  const SearchState before = trainer.state();
  SamplingStreams streams(3, 0);
  // Overlapping classes keep the optimum away from zero loss.
  const Batch tb = full_batch(sign_dataset(32, 0, 1, cfg, 0.1, 1.0));
  const Batch vb = full_batch(sign_dataset(32, 1000, 2, cfg, 0.1, 1.0));
  double prev = INFINITY;
  for (int step = 0; step < 50; ++step) {
    const double loss = trainer.step(tb, vb, streams).train_loss;
    EXPECT_LT(loss, prev) << "step " << step;
    prev = loss;
  }
  EXPECT_EQ(trainer.state().alpha, before.alpha);
  EXPECT_EQ(trainer.state().gamma, before.gamma);
  EXPECT_EQ(trainer.state().beta, before.beta);
}

TEST_F(BilevelTest, FrozenWeightsArchitecturePicksIdentity) {
  Rng rng(19);
  SearchState state = saturated_state(space, Primitive::Sum, rng);
  state.alpha.setZero();
  Tensor& head = state.weight("head.w");
  for (Index c = 0; c < cfg.channels; ++c) {
    head[2 * c] = -0.01;
    head[2 * c + 1] = 0.01;
  }
  state.weight("head.b") = Tensor::zeros({2});
  TrainSchedule sched;
  sched.train_omega = false;
  sched.train_beta = sched.train_gamma = false;
  BilevelTrainer trainer(space, state, sched);
  SamplingStreams streams(4, 0);
  const Batch tb = full_batch(train), vb = full_batch(val);
  for (int step = 0; step < 200; ++step) trainer.step(tb, vb, streams);
  EXPECT_EQ(trainer.state().omega, state.omega);
  for (Index e = 0; e < trainer.state().alpha.rows(); ++e) {
    const Eigen::VectorXd p = tempered_softmax(Eigen::VectorXd(trainer.state().alpha.row(e).transpose()), 1.0);
    EXPECT_GT(p[0], 0.9) << "edge " << e;
  }
}

TEST_F(BilevelTest, ZeroLearningRatesLeaveStateBitwiseUnchanged) {
  Rng rng(20);
  const SearchState state = SearchState::initialize(space, rng);
  TrainSchedule sched;
  sched.weight_lr = 0.0;
  sched.arch_lr = 0.0;
  BilevelTrainer trainer(space, state, sched);
  SamplingStreams streams(5, 0);
  for (int step = 0; step < 5; ++step) trainer.step(full_batch(train), full_batch(val), streams);
  EXPECT_TRUE(trainer.state() == state);
  EXPECT_EQ(trainer.steps_taken(), 5);
}

TEST_F(BilevelTest, OverlappingSplitsAndDivergenceAreErrors) {
  Rng rng(21);
  BilevelTrainer trainer(space, SearchState::initialize(space, rng), TrainSchedule{});
  SamplingStreams streams(6, 0);
  EXPECT_THROW(trainer.step(full_batch(train), full_batch(train), streams), DomainError);

  trainer.step(full_batch(train), full_batch(val), streams);
  Dataset broken = train;
  broken.features[0][0] = std::nan("");
  try {
    trainer.step(full_batch(broken), full_batch(val), streams);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.step(), 1u);
  }
  EXPECT_THROW(TrainSchedule{.weight_lr = -1.0}.validate(), ConfigError);
  EXPECT_THROW(TrainSchedule{.arch_eps = 0.0}.validate(), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Eigen::ArrayXd p = Eigen::ArrayXd::Zero(3);
  std::vector<Eigen::Map<Eigen::ArrayXd>> params{{p.data(), 3}};
  Adam adam;
  adam.step(params, {Eigen::Array3d(2.0, -0.5, 0.0)}, 0.1, 0.0);
  // Bias correction makes the first step lr·g / (|g| + ε).
  EXPECT_NEAR(p[0], -0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_EQ(adam.steps(), 1);
}

class SearchRunTest : public ::testing::Test {
 protected:
  void SetUp() override {
    data.n_train = data.n_val = data.n_test = 64;
    splits = generate_synthetic(data);
    space.k_samples = 10;
    sched.max_epochs = 12;
    sched.batch_size = 16;
    dir = std::filesystem::temp_directory_path() / "grmc_search_run_test";
    std::filesystem::create_directories(dir);
  }
  void TearDown() override { std::filesystem::remove_all(dir); }

  SynthTaskConfig data;
  SynthSplits splits;
  SearchSpaceConfig space;
  TrainSchedule sched;
  std::filesystem::path dir;
};

TEST_F(SearchRunTest, ResumeMatchesUninterruptedRun) {
  SearchRun full(space, sched, 7, splits.train, splits.val);
  full.run();

  SearchRun part(space, sched, 7, splits.train, splits.val);
  part.set_metadata({{"note", "partial"}});
  for (int e = 0; e < 4; ++e) part.run_epoch();
  part.save_checkpoint((dir / "ck.grck").string());
  EXPECT_EQ(SearchRun::checkpoint_metadata((dir / "ck.grck").string())["note"], "partial");

  SearchRun resumed = SearchRun::resume((dir / "ck.grck").string(), splits.train, splits.val);
  EXPECT_EQ(resumed.epochs_done(), 4);
  EXPECT_EQ(resumed.metadata()["note"], "partial");
  resumed.run();

  EXPECT_TRUE(resumed.state() == full.state());
  EXPECT_EQ(history_csv(resumed.history()), history_csv(full.history()));
  EXPECT_EQ(resumed.genotype_trace(), full.genotype_trace());
  EXPECT_EQ(resumed.converged(), full.converged());
}

TEST_F(SearchRunTest, SameSeedSameRunAndHistoryRoundTrips) {
  SearchRun a(space, sched, 3, splits.train, splits.val), b(space, sched, 3, splits.train, splits.val);
  a.run();
  b.run();
  EXPECT_TRUE(a.state() == b.state());
  const std::string csv = history_csv(a.history());
  EXPECT_EQ(csv, history_csv(b.history()));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,E_alpha,E_gamma,train_loss,val_loss");
  EXPECT_EQ(history_csv(parse_history_csv(csv)), csv);
  ASSERT_EQ(a.genotype_trace().size(), a.history().size());
  EXPECT_LE(a.epochs_done(), sched.max_epochs);
  EXPECT_TRUE(a.finished());
}

TEST_F(SearchRunTest, StopsOnlyWhenEntropyIsStable) {
  SearchRun run(space, sched, 5, splits.train, splits.val);
  run.run();
  const auto& h = run.history();
  if (run.converged()) {
    ASSERT_GE(h.size(), static_cast<std::size_t>(sched.entropy_patience + 1));
    for (std::size_t i = h.size() - static_cast<std::size_t>(sched.entropy_patience); i < h.size(); ++i) {
      EXPECT_LT(std::abs(h[i].e_alpha - h[i - 1].e_alpha), sched.entropy_tolerance);
      EXPECT_LT(std::abs(h[i].e_gamma - h[i - 1].e_gamma), sched.entropy_tolerance);
    }
  } else {
    EXPECT_EQ(run.epochs_done(), sched.max_epochs);
  }
}

TEST_F(SearchRunTest, MismatchedDataLayoutIsConfigError) {
  SearchSpaceConfig other = space;
  other.channels = 5;
  EXPECT_THROW(SearchRun(other, sched, 1, splits.train, splits.val), ConfigError);
}

}  // namespace
}  // namespace grmc::nas
