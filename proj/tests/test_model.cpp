#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "daregram/error.hpp"
#include "daregram/model.hpp"
#include "test_util.hpp"

using namespace daregram;
using daregram::testing::max_abs;
using daregram::testing::random_matrix;
using daregram::testing::temp_dir;

namespace {

ModelParams single_layer(const MatrixXd& w, Activation act, bool sigmoid) {
  ModelParams p;
  p.encoder.push_back(Layer{w, MatrixXd::Zero(1, w.cols()), act});
  p.head_weight = MatrixXd::Identity(w.cols(), w.cols());
  p.head_bias = MatrixXd::Zero(1, w.cols());
  p.sigmoid_head = sigmoid;
  return p;
}

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }

}  // namespace

TEST(Encode, IdentityAndLinearLayers) {
  const MatrixXd x = random_matrix(5, 3, 1);
  EXPECT_EQ(encode(single_layer(MatrixXd::Identity(3, 3), Activation::linear, false), x), x);
  const MatrixXd w = random_matrix(3, 4, 2);
  EXPECT_LT(max_abs(encode(single_layer(w, Activation::linear, false), x) - x * w), 1e-15);
}

TEST(Encode, TwoLayerTanhOnZeroInput) {
  ModelParams p;
  p.encoder.push_back(Layer{scalar(2.0), scalar(0.5), Activation::tanh});
  p.encoder.push_back(Layer{scalar(3.0), scalar(-0.25), Activation::tanh});
  p.head_weight = scalar(1.0);
  p.head_bias = scalar(0.0);
  const MatrixXd z = encode(p, MatrixXd::Zero(4, 1));
  const double expected = std::tanh(3.0 * std::tanh(0.5) - 0.25);
  for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(z(i, 0), expected);
}

TEST(Encode, DimensionMismatch) {
  const ModelParams p = single_layer(MatrixXd::Identity(3, 3), Activation::linear, false);
  EXPECT_THROW(encode(p, random_matrix(2, 4, 1)), ContractError);
  EXPECT_THROW(predict(p, random_matrix(2, 4, 1)), ContractError);
}

TEST(Predict, Examples) {
  ModelParams p = single_layer(MatrixXd::Identity(2, 2), Activation::linear, true);
  p.head_weight.setZero();
  const MatrixXd half = predict(p, random_matrix(3, 2, 4));
  EXPECT_EQ(half, MatrixXd::Constant(3, 2, 0.5));

  const ModelParams id = single_layer(MatrixXd::Identity(2, 2), Activation::linear, false);
  const MatrixXd z = random_matrix(3, 2, 5);
  EXPECT_EQ(predict(id, z), z);

  ModelParams one;
  one.head_weight = scalar(2.0);
  one.head_bias = scalar(-1.0);
  one.sigmoid_head = false;
  EXPECT_DOUBLE_EQ(predict(one, scalar(3.0))(0, 0), 5.0);
}

TEST(Predict, SigmoidHeadStaysInsideUnitInterval) {
  ModelConfig mc;
  mc.input_dim = 3;
  const ModelParams p = init_params(mc, 9);
  const MatrixXd y = predict(p, encode(p, 5.0 * random_matrix(200, 3, 6)));
  EXPECT_GT(y.minCoeff(), 0.0);
  EXPECT_LT(y.maxCoeff(), 1.0);
}

TEST(MseLoss, Examples) {
  const MatrixXd a = random_matrix(4, 2, 1);
  EXPECT_EQ(mse_loss(a, a), 0.0);
  MatrixXd pred(2, 1);
  pred << 1, 2;
  EXPECT_DOUBLE_EQ(mse_loss(pred, MatrixXd::Zero(2, 1)), 2.5);
  const double delta = 0.3;
  EXPECT_NEAR(mse_loss((a.array() + delta).matrix().leftCols(1), a.leftCols(1)), delta * delta,
              1e-15);
  EXPECT_GT(mse_loss(a, random_matrix(4, 2, 2)), 0.0);
  EXPECT_THROW(mse_loss(a, MatrixXd::Zero(4, 1)), ContractError);
}

TEST(InitParams, ShapesRangeAndDeterminism) {
  ModelConfig mc;
  mc.input_dim = 8;
  const ModelParams p = init_params(mc, 42);
  ASSERT_EQ(p.encoder.size(), 2u);
  EXPECT_EQ(p.input_dim(), 8);
  EXPECT_EQ(p.feature_dim(), 16);
  EXPECT_EQ(p.n_outputs(), 2);
  EXPECT_NO_THROW(p.validate());
  const double bound = std::sqrt(6.0 / (8 + 16));
  EXPECT_LE(p.encoder[0].weight.cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(p.encoder[0].bias, MatrixXd::Zero(1, 16));
  EXPECT_EQ(p.head_bias, MatrixXd::Zero(1, 2));

  const ModelParams q = init_params(mc, 42);
  EXPECT_EQ(p.encoder[1].weight, q.encoder[1].weight);
  EXPECT_EQ(p.head_weight, q.head_weight);
  EXPECT_NE(init_params(mc, 43).head_weight, p.head_weight);
}

TEST(ModelParams, ValidateCatchesBrokenChain) {
  ModelConfig mc;
  mc.input_dim = 3;
  ModelParams p = init_params(mc, 1);
  p.encoder[1].weight = MatrixXd::Zero(5, 16);
  EXPECT_THROW(p.validate(), ContractError);
  p = init_params(mc, 1);
  p.head_weight(0, 0) = std::nan("");
  EXPECT_THROW(p.validate(), InvalidInputError);
}

TEST(RecordedForward, MatchesPureForwardAndGradient) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelConfig mc;
    mc.input_dim = 3;
    mc.widths = {4, 5};
    mc.activation = seed % 2 ? Activation::relu : Activation::tanh;
    const ModelParams p = init_params(mc, seed);
    const MatrixXd x = random_matrix(6, 3, seed, 1);
    MatrixXd y(6, 2);
    CounterRng rng(seed, 3);
    for (Index i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform();

    Tape t;
    const ModelLeaves leaves = register_params(t, p);
    const NodeId z = record_encode(t, p, leaves, t.constant(x));
    const NodeId pred = record_predict(t, p, leaves, z);
    const NodeId loss = t.mse(pred, t.constant(y));
    EXPECT_LT(max_abs(t.value(z) - encode(p, x)), 1e-15);
    EXPECT_NEAR(t.scalar(loss), mse_loss(predict(p, encode(p, x)), y), 1e-15);

    const GradResult g = t.backward(loss);
    for (const auto& [name, value] : p.blocks()) {
      const auto f = [&, &name = name](const MatrixXd& v) {
        return t.replay({{name, v}})[loss.index](0, 0);
      };
      EXPECT_LT(max_relative_error(g.gradients.at(name), fd_gradient(f, *value)), 1e-4) << name;
    }
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelConfig mc;
  mc.input_dim = 5;
  mc.widths = {7, 3};
  mc.activation = Activation::relu;
  mc.sigmoid_head = false;
  ModelParams p = init_params(mc, 11);
  p.encoder[0].bias(0, 2) = 1.0 / 3.0;
  p.head_bias(0, 1) = -2.5e-300;
  const auto path = temp_dir("checkpoint") / "model.txt";
  save_checkpoint(p, path);
  const ModelParams q = load_checkpoint(path);
  ASSERT_EQ(q.encoder.size(), p.encoder.size());
  EXPECT_EQ(q.sigmoid_head, p.sigmoid_head);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) EXPECT_EQ(q.encoder[i].activation, Activation::relu);
  const auto pb = p.blocks();
  const auto qb = q.blocks();
  for (std::size_t i = 0; i < pb.size(); ++i) {
    EXPECT_EQ(pb[i].first, qb[i].first);
    EXPECT_EQ(*pb[i].second, *qb[i].second) << pb[i].first;
  }
}

TEST(Checkpoint, MalformedFilesRejected) {
  const auto dir = temp_dir("checkpoint_bad");
  EXPECT_THROW(load_checkpoint(dir / "missing.txt"), IoError);
  {
    std::ofstream(dir / "bad.txt") << "daregram-checkpoint 1\nsigmoid_head 1\nlayers 0\n"
                                      "tensor head.weight 1 1\nabc\ntensor head.bias 1 1\n0\nend\n";
  }
  try {
    load_checkpoint(dir / "bad.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5);
  }
  { std::ofstream(dir / "trunc.txt") << "daregram-checkpoint 1\nsigmoid_head 1\n"; }
  EXPECT_THROW(load_checkpoint(dir / "trunc.txt"), ParseError);
}
