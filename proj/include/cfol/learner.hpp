#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfol/core.hpp"

namespace cfol {

enum class Architecture { linear, mlp };

class ShapeMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Multinomial logistic regression, optionally with one ReLU hidden layer.
// Gradients are computed by hand in backward()/input_gradient().
struct ModelParams {
  Architecture arch = Architecture::linear;
  int d = 0, k = 0, h = 0;
  Eigen::MatrixXd w1;  // linear: k x d; mlp: h x d
  Eigen::VectorXd b1;  // linear: k;     mlp: h
  Eigen::MatrixXd w2;  // mlp only: k x h
  Eigen::VectorXd b2;  // mlp only: k

  static ModelParams linear_zero(int d, int k) {
    ModelParams m;
    m.arch = Architecture::linear;
    m.d = d;
    m.k = k;
    m.w1 = Eigen::MatrixXd::Zero(k, d);
    m.b1 = Eigen::VectorXd::Zero(k);
    return m;
  }

  static ModelParams mlp_zero(int d, int h, int k) {
    ModelParams m;
    m.arch = Architecture::mlp;
    m.d = d;
    m.k = k;
    m.h = h;
    m.w1 = Eigen::MatrixXd::Zero(h, d);
    m.b1 = Eigen::VectorXd::Zero(h);
    m.w2 = Eigen::MatrixXd::Zero(k, h);
    m.b2 = Eigen::VectorXd::Zero(k);
    return m;
  }

  // Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases.
  static ModelParams init_random(Architecture arch, int d, int k, int h,
                                 SeededRng& rng) {
    ModelParams m = arch == Architecture::linear ? linear_zero(d, k)
                                                 : mlp_zero(d, h, k);
    auto fill = [&rng](Eigen::MatrixXd& w) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j)
          w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    };
    fill(m.w1);
    if (arch == Architecture::mlp) fill(m.w2);
    return m;
  }
};

struct GradientBuffer {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  static GradientBuffer zero_like(const ModelParams& m) {
    GradientBuffer g;
    g.w1 = Eigen::MatrixXd::Zero(m.w1.rows(), m.w1.cols());
    g.b1 = Eigen::VectorXd::Zero(m.b1.size());
    if (m.arch == Architecture::mlp) {
      g.w2 = Eigen::MatrixXd::Zero(m.w2.rows(), m.w2.cols());
      g.b2 = Eigen::VectorXd::Zero(m.b2.size());
    }
    return g;
  }

  void add_scaled(const GradientBuffer& other, double scale) {
    w1 += scale * other.w1;
    b1 += scale * other.b1;
    if (w2.size() > 0) {
      w2 += scale * other.w2;
      b2 += scale * other.b2;
    }
  }

  void scale(double s) {
    w1 *= s;
    b1 *= s;
    if (w2.size() > 0) {
      w2 *= s;
      b2 *= s;
    }
  }
};

inline Eigen::VectorXd forward_logits(const ModelParams& m,
                                      const Eigen::VectorXd& x) {
  if (x.size() != m.d) throw ShapeMismatchError("forward_logits: wrong input dim");
  if (m.arch == Architecture::linear) return m.w1 * x + m.b1;
  const Eigen::VectorXd hidden = (m.w1 * x + m.b1).cwiseMax(0.0);
  return m.w2 * hidden + m.b2;
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd shifted =
      (logits.array() - logits.maxCoeff()).exp();
  return shifted / shifted.sum();
}

// -log softmax(logits)[y] via log-sum-exp
inline double cross_entropy(const Eigen::VectorXd& logits, int y) {
  if (y < 0 || y >= logits.size())
    throw std::out_of_range("cross_entropy: class id out of range");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits[y];
}

// Ties go to the lowest class id.
inline int argmax_class(const Eigen::VectorXd& logits) {
  int best = 0;
  for (int i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

inline double zero_one_loss(const Eigen::VectorXd& logits, int y) {
  if (y < 0 || y >= logits.size())
    throw std::out_of_range("zero_one_loss: class id out of range");
  return argmax_class(logits) == y ? 0.0 : 1.0;
}

// Gradient of weight * cross_entropy(forward(x), y) w.r.t. every parameter.
inline GradientBuffer backward(const ModelParams& m, const Eigen::VectorXd& x,
                               int y, double weight) {
  if (x.size() != m.d) throw ShapeMismatchError("backward: wrong input dim");
  if (weight < 0.0) throw std::invalid_argument("backward: negative weight");
  GradientBuffer g = GradientBuffer::zero_like(m);
  if (m.arch == Architecture::linear) {
    Eigen::VectorXd delta = softmax(m.w1 * x + m.b1);
    delta[y] -= 1.0;
    delta *= weight;
    g.w1 = delta * x.transpose();
    g.b1 = delta;
    return g;
  }
  const Eigen::VectorXd pre = m.w1 * x + m.b1;
  const Eigen::VectorXd hidden = pre.cwiseMax(0.0);
  Eigen::VectorXd delta2 = softmax(m.w2 * hidden + m.b2);
  delta2[y] -= 1.0;
  delta2 *= weight;
  g.w2 = delta2 * hidden.transpose();
  g.b2 = delta2;
  Eigen::VectorXd delta1 = m.w2.transpose() * delta2;
  for (Eigen::Index i = 0; i < delta1.size(); ++i)
    if (pre[i] <= 0.0) delta1[i] = 0.0;
  g.w1 = delta1 * x.transpose();
  g.b1 = delta1;
  return g;
}

// d cross_entropy / dx, needed by the attack loop.
inline Eigen::VectorXd input_gradient(const ModelParams& m,
                                      const Eigen::VectorXd& x, int y) {
  if (x.size() != m.d) throw ShapeMismatchError("input_gradient: wrong input dim");
  if (m.arch == Architecture::linear) {
    Eigen::VectorXd delta = softmax(m.w1 * x + m.b1);
    delta[y] -= 1.0;
    return m.w1.transpose() * delta;
  }
  const Eigen::VectorXd pre = m.w1 * x + m.b1;
  const Eigen::VectorXd hidden = pre.cwiseMax(0.0);
  Eigen::VectorXd delta2 = softmax(m.w2 * hidden + m.b2);
  delta2[y] -= 1.0;
  Eigen::VectorXd delta1 = m.w2.transpose() * delta2;
  for (Eigen::Index i = 0; i < delta1.size(); ++i)
    if (pre[i] <= 0.0) delta1[i] = 0.0;
  return m.w1.transpose() * delta1;
}

struct OptimizerState {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // (step threshold, factor) applied to the learning rate once step >= threshold
  std::vector<std::pair<long, double>> decay_schedule;
  GradientBuffer velocity;
  bool initialized = false;

  void validate() const {
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("OptimizerState: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("OptimizerState: momentum must be in [0,1)");
    for (const auto& [step, factor] : decay_schedule)
      if (!(factor > 0.0))
        throw std::invalid_argument("OptimizerState: decay factor must be > 0");
  }

  double effective_lr(long step) const {
    double lr = learning_rate;
    for (const auto& [threshold, factor] : decay_schedule)
      if (step >= threshold) lr *= factor;
    return lr;
  }
};

// v <- momentum v + g + wd * params; params <- params - lr(step) * v
inline void sgd_step(ModelParams& m, const GradientBuffer& grads,
                     OptimizerState& opt, long step_index) {
  if (grads.w1.rows() != m.w1.rows() || grads.w1.cols() != m.w1.cols())
    throw ShapeMismatchError("sgd_step: gradient shape mismatch");
  if (!opt.initialized) {
    opt.velocity = GradientBuffer::zero_like(m);
    opt.initialized = true;
  }
  const double lr = opt.effective_lr(step_index);
  auto update = [&](Eigen::MatrixXd& p, Eigen::MatrixXd& v,
                    const Eigen::MatrixXd& g) {
    v = opt.momentum * v + g + opt.weight_decay * p;
    p -= lr * v;
  };
  auto update_vec = [&](Eigen::VectorXd& p, Eigen::VectorXd& v,
                        const Eigen::VectorXd& g) {
    v = opt.momentum * v + g + opt.weight_decay * p;
    p -= lr * v;
  };
  update(m.w1, opt.velocity.w1, grads.w1);
  update_vec(m.b1, opt.velocity.b1, grads.b1);
  if (m.arch == Architecture::mlp) {
    update(m.w2, opt.velocity.w2, grads.w2);
    update_vec(m.b2, opt.velocity.b2, grads.b2);
  }
}

// --- checkpoint format ---------------------------------------------------
// Line-oriented text: magic, arch, dims, then row-major values printed with
// %.17g so doubles round-trip exactly.

inline constexpr const char* kCheckpointMagic = "CFOL-CKPT-v1";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void save_checkpoint(const ModelParams& m, std::ostream& out) {
  out << kCheckpointMagic << "\n";
  out << (m.arch == Architecture::linear ? "linear" : "mlp") << "\n";
  out << m.d << " " << m.k << " " << m.h << "\n";
  auto dump = [&out](const auto& w) {
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        out << format_double(w(i, j)) << "\n";
  };
  dump(m.w1);
  dump(m.b1);
  if (m.arch == Architecture::mlp) {
    dump(m.w2);
    dump(m.b2);
  }
}

inline void save_checkpoint(const ModelParams& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  save_checkpoint(m, out);
}

inline ModelParams load_checkpoint(std::istream& in) {
  std::string magic, arch_tag;
  if (!std::getline(in, magic) || magic != kCheckpointMagic)
    throw std::runtime_error("load_checkpoint: bad magic");
  if (!std::getline(in, arch_tag))
    throw std::runtime_error("load_checkpoint: truncated header");
  int d = 0, k = 0, h = 0;
  in >> d >> k >> h;
  ModelParams m;
  if (arch_tag == "linear") {
    m = ModelParams::linear_zero(d, k);
  } else if (arch_tag == "mlp") {
    m = ModelParams::mlp_zero(d, h, k);
  } else {
    throw std::runtime_error("load_checkpoint: unknown architecture " + arch_tag);
  }
  auto slurp = [&in](auto& w) {
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        if (!(in >> w(i, j)))
          throw std::runtime_error("load_checkpoint: truncated values");
  };
  slurp(m.w1);
  slurp(m.b1);
  if (m.arch == Architecture::mlp) {
    slurp(m.w2);
    slurp(m.b2);
  }
  return m;
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace cfol
