#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <sstream>

#include "cfol/learner.hpp"

using namespace cfol;

namespace {

ModelParams random_model(Architecture arch, int d, int k, int h, SeededRng& rng) {
  return ModelParams::init_random(arch, d, k, h, rng);
}

Eigen::VectorXd random_input(int d, SeededRng& rng) {
  Eigen::VectorXd x(d);
  for (int i = 0; i < d; ++i) x[i] = rng.normal();
  return x;
}

// central finite difference of weight * cross_entropy w.r.t. one parameter
double fd_param(ModelParams m, Eigen::MatrixXd ModelParams::*field,
                Eigen::Index i, Eigen::Index j, const Eigen::VectorXd& x,
                int y, double weight, double step) {
  (m.*field)(i, j) += step;
  const double hi = weight * cross_entropy(forward_logits(m, x), y);
  (m.*field)(i, j) -= 2.0 * step;
  const double lo = weight * cross_entropy(forward_logits(m, x), y);
  return (hi - lo) / (2.0 * step);
}

double fd_bias(ModelParams m, Eigen::VectorXd ModelParams::*field,
               Eigen::Index i, const Eigen::VectorXd& x, int y, double weight,
               double step) {
  (m.*field)[i] += step;
  const double hi = weight * cross_entropy(forward_logits(m, x), y);
  (m.*field)[i] -= 2.0 * step;
  const double lo = weight * cross_entropy(forward_logits(m, x), y);
  return (hi - lo) / (2.0 * step);
}

void check_close(double analytic, double numeric, double tol) {
  const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  REQUIRE(std::abs(analytic - numeric) <= tol * scale);
}

}  // namespace

TEST_CASE("forward_logits of the zero model is zero") {
  const ModelParams m = ModelParams::linear_zero(3, 4);
  REQUIRE(forward_logits(m, Eigen::VectorXd::Ones(3)).isZero());
  const ModelParams mlp = ModelParams::mlp_zero(3, 5, 4);
  REQUIRE(forward_logits(mlp, Eigen::VectorXd::Ones(3)).isZero());
}

TEST_CASE("forward_logits with identity weights passes the input through") {
  ModelParams m = ModelParams::linear_zero(3, 3);
  m.w1 = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(3);
  e1[0] = 1.0;
  REQUIRE(forward_logits(m, e1) == e1);
}

TEST_CASE("forward_logits matches a naive triple-loop multiply") {
  SeededRng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams m = random_model(Architecture::linear, 6, 4, 0, rng);
    const Eigen::VectorXd x = random_input(6, rng);
    const Eigen::VectorXd logits = forward_logits(m, x);
    for (int i = 0; i < 4; ++i) {
      double acc = m.b1[i];
      for (int j = 0; j < 6; ++j) acc += m.w1(i, j) * x[j];
      REQUIRE(std::abs(logits[i] - acc) <= 1e-12);
    }
  }
}

TEST_CASE("forward_logits rejects wrong input dimension") {
  const ModelParams m = ModelParams::linear_zero(3, 2);
  REQUIRE_THROWS_AS(forward_logits(m, Eigen::VectorXd::Zero(4)),
                    ShapeMismatchError);
}

TEST_CASE("cross_entropy on uniform logits is log k") {
  REQUIRE(cross_entropy(Eigen::VectorXd::Zero(10), 3) ==
          Catch::Approx(std::log(10.0)).epsilon(1e-12));
  REQUIRE(cross_entropy(Eigen::VectorXd::Zero(2), 0) ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy with a huge margin is essentially zero") {
  Eigen::VectorXd logits = Eigen::VectorXd::Zero(5);
  logits[2] = 50.0;
  REQUIRE(cross_entropy(logits, 2) < 1e-20);
  REQUIRE(std::isfinite(cross_entropy(logits, 0)));
}

TEST_CASE("cross_entropy is stable under large common offsets") {
  Eigen::VectorXd logits(3);
  logits << 1000.0, 1000.0, 1000.0;
  REQUIRE(cross_entropy(logits, 1) == Catch::Approx(std::log(3.0)));
}

TEST_CASE("cross_entropy rejects out-of-range class ids") {
  REQUIRE_THROWS_AS(cross_entropy(Eigen::VectorXd::Zero(3), 3),
                    std::out_of_range);
  REQUIRE_THROWS_AS(cross_entropy(Eigen::VectorXd::Zero(3), -1),
                    std::out_of_range);
}

TEST_CASE("zero_one_loss follows argmax with ties to the lowest id") {
  Eigen::VectorXd logits(4);
  logits << 0.0, 0.0, 0.0, 0.0;
  REQUIRE(zero_one_loss(logits, 3) == 1.0);  // tie -> argmax 0
  REQUIRE(zero_one_loss(logits, 0) == 0.0);
  logits << 1.0, 2.0, 0.0, 0.0;
  REQUIRE(zero_one_loss(logits.head(2), 1) == 0.0);
  Eigen::VectorXd dom = Eigen::VectorXd::Zero(4);
  dom[2] = 5.0;
  REQUIRE(zero_one_loss(dom, 2) == 0.0);
  REQUIRE(zero_one_loss(dom, 1) == 1.0);
}

TEST_CASE("argmax of logits equals argmax of softmax") {
  SeededRng rng(103);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd logits = random_input(2 + int(rng.uniform_int(8)), rng);
    const Eigen::VectorXd probs = softmax(logits);
    REQUIRE(argmax_class(logits) == argmax_class(probs));
    REQUIRE(probs.sum() == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("backward with weight zero is the zero gradient") {
  SeededRng rng(107);
  const ModelParams m = random_model(Architecture::mlp, 4, 3, 5, rng);
  const GradientBuffer g = backward(m, random_input(4, rng), 1, 0.0);
  REQUIRE(g.w1.isZero());
  REQUIRE(g.b1.isZero());
  REQUIRE(g.w2.isZero());
  REQUIRE(g.b2.isZero());
}

TEST_CASE("backward is linear in the weight") {
  SeededRng rng(109);
  const ModelParams m = random_model(Architecture::linear, 5, 3, 0, rng);
  const Eigen::VectorXd x = random_input(5, rng);
  const GradientBuffer g1 = backward(m, x, 2, 1.0);
  const GradientBuffer g2 = backward(m, x, 2, 2.0);
  REQUIRE((g2.w1 - 2.0 * g1.w1).cwiseAbs().maxCoeff() <= 1e-12);
  REQUIRE((g2.b1 - 2.0 * g1.b1).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("backward rejects negative weights") {
  const ModelParams m = ModelParams::linear_zero(2, 2);
  REQUIRE_THROWS_AS(backward(m, Eigen::VectorXd::Zero(2), 0, -1.0),
                    std::invalid_argument);
}

TEST_CASE("parameter gradients match central finite differences") {
  SeededRng rng(113);
  const double step = 1e-5, tol = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const bool mlp = trial % 2 == 1;
    const int d = 2 + int(rng.uniform_int(5));
    const int k = 2 + int(rng.uniform_int(4));
    const int h = 2 + int(rng.uniform_int(5));
    const ModelParams m = random_model(
        mlp ? Architecture::mlp : Architecture::linear, d, k, h, rng);
    const Eigen::VectorXd x = random_input(d, rng);
    const int y = int(rng.uniform_int(std::size_t(k)));
    const double weight = 0.1 + rng.uniform();
    const GradientBuffer g = backward(m, x, y, weight);
    for (Eigen::Index i = 0; i < m.w1.rows(); ++i)
      for (Eigen::Index j = 0; j < m.w1.cols(); ++j)
        check_close(g.w1(i, j),
                    fd_param(m, &ModelParams::w1, i, j, x, y, weight, step), tol);
    for (Eigen::Index i = 0; i < m.b1.size(); ++i)
      check_close(g.b1[i], fd_bias(m, &ModelParams::b1, i, x, y, weight, step),
                  tol);
    if (mlp) {
      for (Eigen::Index i = 0; i < m.w2.rows(); ++i)
        for (Eigen::Index j = 0; j < m.w2.cols(); ++j)
          check_close(g.w2(i, j),
                      fd_param(m, &ModelParams::w2, i, j, x, y, weight, step),
                      tol);
      for (Eigen::Index i = 0; i < m.b2.size(); ++i)
        check_close(g.b2[i],
                    fd_bias(m, &ModelParams::b2, i, x, y, weight, step), tol);
    }
  }
}

TEST_CASE("input_gradient matches the linear closed form") {
  SeededRng rng(127);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParams m = random_model(Architecture::linear, 6, 4, 0, rng);
    const Eigen::VectorXd x = random_input(6, rng);
    const int y = int(rng.uniform_int(4));
    Eigen::VectorXd delta = softmax(m.w1 * x + m.b1);
    delta[y] -= 1.0;
    const Eigen::VectorXd expected = m.w1.transpose() * delta;
    REQUIRE((input_gradient(m, x, y) - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("input_gradient matches central finite differences") {
  SeededRng rng(131);
  const double step = 1e-5, tol = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const bool mlp = trial % 2 == 0;
    const int d = 2 + int(rng.uniform_int(5));
    const int k = 2 + int(rng.uniform_int(4));
    const ModelParams m = random_model(
        mlp ? Architecture::mlp : Architecture::linear, d, k, 4, rng);
    Eigen::VectorXd x = random_input(d, rng);
    const int y = int(rng.uniform_int(std::size_t(k)));
    const Eigen::VectorXd g = input_gradient(m, x, y);
    for (int i = 0; i < d; ++i) {
      Eigen::VectorXd hi = x, lo = x;
      hi[i] += step;
      lo[i] -= step;
      const double fd = (cross_entropy(forward_logits(m, hi), y) -
                         cross_entropy(forward_logits(m, lo), y)) /
                        (2.0 * step);
      check_close(g[i], fd, tol);
    }
  }
}

TEST_CASE("confident correct prediction has vanishing input gradient") {
  ModelParams m = ModelParams::linear_zero(3, 2);
  m.b1[0] = 50.0;  // class 0 wins by margin 50 regardless of x
  const Eigen::VectorXd g = input_gradient(m, Eigen::VectorXd::Zero(3), 0);
  REQUIRE(g.norm() < 1e-15);
}

TEST_CASE("backward is deterministic") {
  SeededRng rng(137);
  const ModelParams m = random_model(Architecture::mlp, 4, 3, 4, rng);
  const Eigen::VectorXd x = random_input(4, rng);
  const GradientBuffer a = backward(m, x, 1, 0.7);
  const GradientBuffer b = backward(m, x, 1, 0.7);
  REQUIRE(a.w1 == b.w1);
  REQUIRE(a.b1 == b.b1);
  REQUIRE(a.w2 == b.w2);
  REQUIRE(a.b2 == b.b2);
}

TEST_CASE("sgd_step with zero gradient and zero weight decay is the identity") {
  SeededRng rng(139);
  ModelParams m = random_model(Architecture::linear, 3, 2, 0, rng);
  const Eigen::MatrixXd w_before = m.w1;
  OptimizerState opt;
  opt.weight_decay = 0.0;
  sgd_step(m, GradientBuffer::zero_like(m), opt, 0);
  REQUIRE(m.w1 == w_before);
}

TEST_CASE("plain sgd moves by lr times the gradient") {
  ModelParams m = ModelParams::linear_zero(2, 2);
  GradientBuffer g = GradientBuffer::zero_like(m);
  g.w1(0, 0) = 1.0;
  OptimizerState opt;
  opt.learning_rate = 0.1;
  opt.momentum = 0.0;
  opt.weight_decay = 0.0;
  sgd_step(m, g, opt, 0);
  REQUIRE(m.w1(0, 0) == Catch::Approx(-0.1));
  REQUIRE(m.w1(1, 1) == 0.0);
}

TEST_CASE("two momentum steps match the hand-unrolled recurrence") {
  // v1 = g, p1 = -g; v2 = 0.9 g + g, p2 = -g - 1.9 g = -2.9 g
  ModelParams m = ModelParams::linear_zero(1, 2);
  GradientBuffer g = GradientBuffer::zero_like(m);
  g.w1(0, 0) = 1.0;
  g.w1(1, 0) = -0.5;
  OptimizerState opt;
  opt.learning_rate = 1.0;
  opt.momentum = 0.9;
  opt.weight_decay = 0.0;
  sgd_step(m, g, opt, 0);
  REQUIRE(m.w1(0, 0) == Catch::Approx(-1.0));
  sgd_step(m, g, opt, 1);
  REQUIRE(m.w1(0, 0) == Catch::Approx(-2.9));
  REQUIRE(m.w1(1, 0) == Catch::Approx(1.45));
}

TEST_CASE("weight decay pulls parameters toward zero") {
  ModelParams m = ModelParams::linear_zero(1, 1);
  m.w1(0, 0) = 1.0;
  OptimizerState opt;
  opt.learning_rate = 0.1;
  opt.momentum = 0.0;
  opt.weight_decay = 0.5;
  sgd_step(m, GradientBuffer::zero_like(m), opt, 0);
  REQUIRE(m.w1(0, 0) == Catch::Approx(1.0 - 0.1 * 0.5));
}

TEST_CASE("effective_lr applies the piecewise schedule cumulatively") {
  OptimizerState opt;
  opt.learning_rate = 0.1;
  opt.decay_schedule = {{100, 0.1}, {150, 0.1}};
  REQUIRE(opt.effective_lr(0) == Catch::Approx(0.1));
  REQUIRE(opt.effective_lr(99) == Catch::Approx(0.1));
  REQUIRE(opt.effective_lr(100) == Catch::Approx(0.01));
  REQUIRE(opt.effective_lr(149) == Catch::Approx(0.01));
  REQUIRE(opt.effective_lr(150) == Catch::Approx(0.001));
}

TEST_CASE("OptimizerState validate rejects bad settings") {
  OptimizerState opt;
  opt.learning_rate = 0.0;
  REQUIRE_THROWS_AS(opt.validate(), std::invalid_argument);
  opt.learning_rate = 0.1;
  opt.momentum = 1.0;
  REQUIRE_THROWS_AS(opt.validate(), std::invalid_argument);
  opt.momentum = 0.9;
  opt.decay_schedule = {{10, 0.0}};
  REQUIRE_THROWS_AS(opt.validate(), std::invalid_argument);
}

TEST_CASE("sgd_step rejects mismatched gradient shapes") {
  ModelParams m = ModelParams::linear_zero(3, 2);
  GradientBuffer g = GradientBuffer::zero_like(ModelParams::linear_zero(2, 2));
  OptimizerState opt;
  REQUIRE_THROWS_AS(sgd_step(m, g, opt, 0), ShapeMismatchError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  SeededRng rng(149);
  for (Architecture arch : {Architecture::linear, Architecture::mlp}) {
    const ModelParams m = random_model(arch, 5, 3, 4, rng);
    std::stringstream buf;
    save_checkpoint(m, buf);
    const ModelParams back = load_checkpoint(buf);
    REQUIRE(back.arch == m.arch);
    REQUIRE(back.d == m.d);
    REQUIRE(back.k == m.k);
    REQUIRE(back.w1 == m.w1);
    REQUIRE(back.b1 == m.b1);
    if (arch == Architecture::mlp) {
      REQUIRE(back.h == m.h);
      REQUIRE(back.w2 == m.w2);
      REQUIRE(back.b2 == m.b2);
    }
  }
}

TEST_CASE("checkpoint loading rejects corrupt input") {
  std::stringstream bad_magic("nope\nlinear\n1 1 0\n0\n0\n");
  REQUIRE_THROWS_AS(load_checkpoint(bad_magic), std::runtime_error);
  std::stringstream truncated;
  truncated << kCheckpointMagic << "\nlinear\n2 2 0\n0.5\n";
  REQUIRE_THROWS_AS(load_checkpoint(truncated), std::runtime_error);
  std::stringstream bad_arch;
  bad_arch << kCheckpointMagic << "\nconv\n1 1 0\n";
  REQUIRE_THROWS_AS(load_checkpoint(bad_arch), std::runtime_error);
}

TEST_CASE("init_random stays within the fan-in bound with zero biases") {
  SeededRng rng(151);
  const ModelParams m = ModelParams::init_random(Architecture::mlp, 9, 3, 4, rng);
  REQUIRE(m.b1.isZero());
  REQUIRE(m.b2.isZero());
  REQUIRE(m.w1.cwiseAbs().maxCoeff() <= 1.0 / 3.0);
  REQUIRE(m.w2.cwiseAbs().maxCoeff() <= 0.5);
  SeededRng rng2(151);
  const ModelParams m2 = ModelParams::init_random(Architecture::mlp, 9, 3, 4, rng2);
  REQUIRE(m.w1 == m2.w1);
}
