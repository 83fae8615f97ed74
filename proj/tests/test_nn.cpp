#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "acc/nn.hpp"
#include "oracles.hpp"

using namespace acc;

namespace {

DenseNet small_net(Rng& rng, Activation hidden = Activation::relu, Activation head = Activation::linear) {
  return DenseNet::initialized({3, 7, 5, 2}, hidden, head, rng);
}

// Sum of w_ij * y_ij, so dL/dy = w.
double weighted_output(const DenseNet& net, const Matrix& x, const Matrix& w) {
  return (net.forward(x).array() * w.array()).sum();
}

}  // namespace

TEST(DenseNet, ShapesAndParameterCount) {
  Rng rng(1);
  const auto net = small_net(rng);
  EXPECT_EQ(net.num_layers(), 3u);
  EXPECT_EQ(net.input_size(), 3);
  EXPECT_EQ(net.output_size(), 2);
  EXPECT_EQ(net.num_params(), (3 * 7 + 7) + (7 * 5 + 5) + (5 * 2 + 2));
  EXPECT_EQ(net.forward(Matrix::Zero(3, 4)).cols(), 4);
}

TEST(DenseNet, FanInInitializationBounds) {
  Rng rng(2);
  const auto net = DenseNet::initialized({16, 64, 4}, Activation::relu, Activation::linear, rng);
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.layers()[i].in));
    EXPECT_LE(net.weight(i).cwiseAbs().maxCoeff(), bound);
    EXPECT_LE(net.bias(i).cwiseAbs().maxCoeff(), bound);
    // A uniform draw that fills the interval reaches well past half the bound.
    EXPECT_GT(net.weight(i).cwiseAbs().maxCoeff(), 0.5 * bound);
  }
}

TEST(DenseNet, ForwardMatchesManualComputation) {
  DenseNet net({LayerShape{2, 2, Activation::relu}, LayerShape{2, 1, Activation::tanh}});
  net.weight(0) << 1.0, -2.0, 0.5, 0.25;
  net.bias(0) << 0.1, -0.3;
  net.weight(1) << 0.7, -1.1;
  net.bias(1) << 0.05;
  Matrix x(2, 1);
  x << 0.4, 0.3;
  const double h0 = std::max(0.0, 1.0 * 0.4 - 2.0 * 0.3 + 0.1);
  const double h1 = std::max(0.0, 0.5 * 0.4 + 0.25 * 0.3 - 0.3);
  EXPECT_DOUBLE_EQ(net.forward(x)(0, 0), std::tanh(0.7 * h0 - 1.1 * h1 + 0.05));
}

TEST(DenseNet, WrongInputWidthIsRejected) {
  Rng rng(3);
  const auto net = small_net(rng);
  EXPECT_THROW(net.forward(Matrix::Zero(4, 1)), ConfigError);
  EXPECT_THROW(DenseNet({LayerShape{2, 3}, LayerShape{4, 1}}), ConfigError);
  EXPECT_THROW(DenseNet(std::vector<LayerShape>{}), ConfigError);
}

class DenseNetGradient : public ::testing::TestWithParam<std::pair<Activation, Activation>> {};

TEST_P(DenseNetGradient, BackwardMatchesCentralDifferences) {
  const auto [hidden, head] = GetParam();
  Rng rng(11);
  auto net = small_net(rng, hidden, head);
  const Matrix x = Matrix::Random(3, 6);
  const Matrix w = Matrix::Random(2, 6);

  DenseNet::Cache cache;
  net.forward(x, cache);
  Vector grad = net.zero_grad();
  const Matrix d_input = net.backward(cache, w, grad);

  auto copy = net;
  const auto by_params = [&](const Vector& p) {
    copy.params() = p;
    return weighted_output(copy, x, w);
  };
  EXPECT_LT(oracle::relative_error(grad, oracle::numeric_gradient(by_params, net.params())), 1e-4);

  const auto by_input = [&](const Vector& flat) {
    return weighted_output(net, Eigen::Map<const Matrix>(flat.data(), 3, 6), w);
  };
  const Vector flat = Eigen::Map<const Vector>(x.data(), x.size());
  const Vector d_flat = Eigen::Map<const Vector>(d_input.data(), d_input.size());
  EXPECT_LT(oracle::relative_error(d_flat, oracle::numeric_gradient(by_input, flat)), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Activations, DenseNetGradient,
                         ::testing::Values(std::pair{Activation::relu, Activation::linear},
                                           std::pair{Activation::tanh, Activation::tanh},
                                           std::pair{Activation::relu, Activation::tanh}));

TEST(DenseNet, BackwardAccumulatesIntoGradient) {
  Rng rng(4);
  const auto net = small_net(rng);
  const Matrix x = Matrix::Random(3, 2);
  DenseNet::Cache cache;
  net.forward(x, cache);
  const Matrix up = Matrix::Ones(2, 2);
  Vector once = net.zero_grad();
  net.backward(cache, up, once);
  Vector twice = net.zero_grad();
  net.backward(cache, up, twice);
  net.backward(cache, up, twice);
  EXPECT_TRUE(twice.isApprox(2.0 * once));
}

TEST(DenseNet, BackwardRejectsMismatchedShapes) {
  Rng rng(5);
  const auto net = small_net(rng);
  DenseNet::Cache cache;
  net.forward(Matrix::Random(3, 2), cache);
  Vector grad = net.zero_grad();
  EXPECT_THROW(net.backward(cache, Matrix::Ones(3, 2), grad), ArgumentError);
  Vector short_grad(3);
  EXPECT_THROW(net.backward(cache, Matrix::Ones(2, 2), short_grad), ArgumentError);
}

TEST(DenseNet, SinglePrecisionInstantiation) {
  Rng rng_d(6), rng_f(6);
  const auto d = DenseNet::initialized({3, 8, 1}, Activation::tanh, Activation::linear, rng_d);
  const auto f = BasicDenseNet<float>::initialized({3, 8, 1}, Activation::tanh, Activation::linear, rng_f);
  const Matrix x = Matrix::Random(3, 5);
  const Eigen::MatrixXf xf = x.cast<float>();
  EXPECT_TRUE(f.forward(xf).cast<double>().isApprox(d.forward(x), 1e-5));
}

TEST(Adam, MatchesHandComputedSteps) {
  Vector p(2), g(2);
  p << 1.0, -2.0;
  AdamState st(2, 0.1);
  // Reference: m_t, v_t, bias correction, step, written out per coordinate.
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  const double grads[3][2] = {{0.5, -1.0}, {0.2, 3.0}, {-0.7, 0.1}};
  for (int t = 1; t <= 3; ++t) {
    g << grads[t - 1][0], grads[t - 1][1];
    adam_step(st, p, g);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grads[t - 1][i];
      v[i] = 0.999 * v[i] + 0.001 * grads[t - 1][i] * grads[t - 1][i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    EXPECT_NEAR(p(0), ref[0], 1e-14);
    EXPECT_NEAR(p(1), ref[1], 1e-14);
  }
  EXPECT_EQ(st.step, 3);
}

TEST(Adam, FirstStepMovesEachCoordinateByLearningRate) {
  Vector p = Vector::Zero(3), g(3);
  g << 1e-3, -5.0, 42.0;
  AdamState st(3, 0.01);
  adam_step(st, p, g);
  EXPECT_NEAR(p(0), -0.01, 1e-7);
  EXPECT_NEAR(p(1), 0.01, 1e-9);
  EXPECT_NEAR(p(2), -0.01, 1e-9);
}

TEST(Adam, NonFiniteGradientAborts) {
  Vector p = Vector::Zero(2), g(2);
  g << 1.0, std::numeric_limits<double>::quiet_NaN();
  AdamState st(2);
  EXPECT_THROW(adam_step(st, p, g), TrainingAborted);
  g << 1.0, std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(st, p, g), TrainingAborted);
  EXPECT_THROW(adam_step(st, p, Vector(Vector::Zero(3))), ArgumentError);
}

TEST(Polyak, InterpolatesAndCopies) {
  Vector target(2), online(2);
  target << 0.0, 10.0;
  online << 1.0, 0.0;
  polyak_update(target, online, 0.25);
  EXPECT_DOUBLE_EQ(target(0), 0.25);
  EXPECT_DOUBLE_EQ(target(1), 7.5);
  polyak_update(target, online, 1.0);
  EXPECT_EQ(target, online);
  EXPECT_THROW(polyak_update(target, online, 0.0), ArgumentError);
  EXPECT_THROW(polyak_update(target, online, 1.5), ArgumentError);
}

TEST(Polyak, RepeatedUpdatesConvergeGeometrically) {
  Vector target = Vector::Zero(1), online = Vector::Ones(1);
  for (int i = 0; i < 100; ++i) polyak_update(target, online, 0.05);
  EXPECT_NEAR(target(0), 1.0 - std::pow(0.95, 100), 1e-12);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(7);
  std::vector<NamedNet<double>> nets{{"critic0", small_net(rng)},
                                     {"policy", DenseNet::initialized({4, 3, 2}, Activation::tanh, Activation::tanh, rng)}};
  nets[0].net.params()(0) = 1.0 / 3.0;
  nets[0].net.params()(1) = -0.0;
  nets[0].net.params()(2) = 5e-324;
  std::stringstream ss;
  save_checkpoint(ss, nets);
  const auto back = load_checkpoint(ss);
  ASSERT_EQ(back.size(), nets.size());
  for (std::size_t i = 0; i < nets.size(); ++i) {
    EXPECT_EQ(back[i].name, nets[i].name);
    EXPECT_EQ(back[i].net.layers(), nets[i].net.layers());
    EXPECT_EQ(0, std::memcmp(back[i].net.params().data(), nets[i].net.params().data(),
                             sizeof(double) * static_cast<std::size_t>(nets[i].net.num_params())));
  }
}

TEST(Checkpoint, WeightsAreWrittenRowMajor) {
  DenseNet net({LayerShape{2, 2, Activation::linear}});
  net.weight(0) << 1.0, 2.0, 3.0, 4.0;
  std::stringstream ss;
  save_checkpoint<double>(ss, {{"n", net}});
  const std::string text = ss.str();
  EXPECT_NE(text.find("tensor n.0.weight 2 2\n0x1p+0 0x1p+1 0x1.8p+1 0x1p+2\n"), std::string::npos) << text;
}

TEST(Checkpoint, MalformedInputIsRejected) {
  const auto load = [](const std::string& s) {
    std::stringstream ss(s);
    return load_checkpoint(ss);
  };
  EXPECT_THROW(load("not-a-checkpoint 1\nend\n"), ConfigError);
  EXPECT_THROW(load("acc-checkpoint 2\nend\n"), ConfigError);
  EXPECT_THROW(load("acc-checkpoint 1\nnet a 1\nlayer 1 1 linear\ntensor a.0.weight 1 1\n"), ConfigError);
  EXPECT_THROW(load("acc-checkpoint 1\nnet a 1\nlayer 1 1 swish\n"), ConfigError);
  EXPECT_THROW(load("acc-checkpoint 1\nnet a 1\nlayer 1 1 linear\ntensor a.0.weight 2 1\n0x1p+0\n"), ConfigError);
  EXPECT_TRUE(load("acc-checkpoint 1\nend\n").empty());
}
