#pragma once

// Dense multilayer perceptrons with hand-written backprop, Adam and Polyak averaging.
//
// Parameters of a network live in one contiguous vector. Layer i occupies
// [W_i (out x in, column-major) | b_i (out)], so optimizers and target averaging
// operate on flat vectors while layers are exposed as Eigen maps.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "acc/errors.hpp"
#include "acc/rng.hpp"

namespace acc {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { linear, relu, tanh };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::linear;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

struct LayerShape {
  Index in = 0;
  Index out = 0;
  Activation act = Activation::linear;

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

template <class T>
class BasicDenseNet {
 public:
  using Scalar = T;
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  /// Activations recorded by a forward pass, consumed by backward().
  struct Cache {
    std::vector<Matrix> inputs;  // input to layer i
    std::vector<Matrix> pre;     // pre-activation of layer i
    std::vector<Matrix> post;    // output of layer i
  };

  BasicDenseNet() = default;

  /// All-zero network with the given layer shapes.
  explicit BasicDenseNet(std::vector<LayerShape> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ConfigError("network needs at least one layer");
    Index total = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.in <= 0 || l.out <= 0) throw ConfigError("layer widths must be positive");
      if (i > 0 && layers_[i - 1].out != l.in) throw ConfigError("layer widths do not compose");
      offsets_.push_back(total);
      total += l.out * l.in + l.out;
    }
    params_ = Vector::Zero(total);
  }

  /// widths = {in, hidden..., out}; hidden layers use `hidden`, the last layer `head`.
  BasicDenseNet(const std::vector<Index>& widths, Activation hidden, Activation head)
      : BasicDenseNet(shapes_from_widths(widths, hidden, head)) {}

  /// Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static BasicDenseNet initialized(const std::vector<Index>& widths, Activation hidden, Activation head,
                                   Rng& rng) {
    BasicDenseNet net(widths, hidden, head);
    for (std::size_t i = 0; i < net.layers_.size(); ++i) {
      const T bound = T(1) / std::sqrt(static_cast<T>(net.layers_[i].in));
      std::uniform_real_distribution<double> u(-static_cast<double>(bound), static_cast<double>(bound));
      auto w = net.weight(i);
      for (Index c = 0; c < w.cols(); ++c)
        for (Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<T>(u(rng));
      auto b = net.bias(i);
      for (Index r = 0; r < b.size(); ++r) b(r) = static_cast<T>(u(rng));
    }
    return net;
  }

  static std::vector<LayerShape> shapes_from_widths(const std::vector<Index>& widths, Activation hidden,
                                                    Activation head) {
    if (widths.size() < 2) throw ConfigError("network needs input and output widths");
    std::vector<LayerShape> out;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      out.push_back({widths[i], widths[i + 1], i + 2 == widths.size() ? head : hidden});
    return out;
  }

  const std::vector<LayerShape>& layers() const noexcept { return layers_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  Index input_size() const noexcept { return layers_.empty() ? 0 : layers_.front().in; }
  Index output_size() const noexcept { return layers_.empty() ? 0 : layers_.back().out; }
  Index num_params() const noexcept { return params_.size(); }

  Vector& params() noexcept { return params_; }
  const Vector& params() const noexcept { return params_; }

  MatrixMap weight(std::size_t i) {
    return MatrixMap(params_.data() + offsets_[i], layers_[i].out, layers_[i].in);
  }
  ConstMatrixMap weight(std::size_t i) const {
    return ConstMatrixMap(params_.data() + offsets_[i], layers_[i].out, layers_[i].in);
  }
  VectorMap bias(std::size_t i) {
    return VectorMap(params_.data() + offsets_[i] + layers_[i].out * layers_[i].in, layers_[i].out);
  }
  ConstVectorMap bias(std::size_t i) const {
    return ConstVectorMap(params_.data() + offsets_[i] + layers_[i].out * layers_[i].in, layers_[i].out);
  }

  /// Batched forward pass; columns of `x` are samples.
  Matrix forward(const Matrix& x) const {
    check_input(x.rows());
    Matrix a = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Matrix z = weight(i) * a;
      z.colwise() += bias(i);
      a = activate(layers_[i].act, z);
    }
    return a;
  }

  Matrix forward(const Matrix& x, Cache& cache) const {
    check_input(x.rows());
    cache.inputs.resize(layers_.size());
    cache.pre.resize(layers_.size());
    cache.post.resize(layers_.size());
    const Matrix* a = &x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      cache.inputs[i] = *a;
      cache.pre[i] = weight(i) * *a;
      cache.pre[i].colwise() += bias(i);
      cache.post[i] = activate(layers_[i].act, cache.pre[i]);
      a = &cache.post[i];
    }
    return cache.post.back();
  }

  /// Accumulates parameter gradients into `grad` (+=) and returns the gradient
  /// with respect to the network input. `upstream` is dLoss/dOutput, one column per sample.
  Matrix backward(const Cache& cache, const Matrix& upstream, Vector& grad) const {
    if (cache.post.size() != layers_.size()) throw ArgumentError("backward: cache does not match network");
    if (upstream.rows() != output_size() || upstream.cols() != cache.post.back().cols())
      throw ArgumentError("backward: upstream gradient shape mismatch");
    if (grad.size() != params_.size()) throw ArgumentError("backward: gradient vector size mismatch");
    Matrix g = upstream;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      Matrix dz = derivative(layers_[k].act, cache.pre[k], cache.post[k], g);
      const auto& l = layers_[k];
      MatrixMap dw(grad.data() + offsets_[k], l.out, l.in);
      VectorMap db(grad.data() + offsets_[k] + l.out * l.in, l.out);
      dw.noalias() += dz * cache.inputs[k].transpose();
      db += dz.rowwise().sum();
      g = weight(k).transpose() * dz;
    }
    return g;
  }

  Vector zero_grad() const { return Vector::Zero(params_.size()); }

  bool all_finite() const { return params_.allFinite(); }

 private:
  void check_input(Index rows) const {
    if (layers_.empty()) throw ConfigError("forward on an empty network");
    if (rows != input_size())
      throw ConfigError("input has " + std::to_string(rows) + " rows, network expects " +
                        std::to_string(input_size()));
  }

  static Matrix activate(Activation act, const Matrix& z) {
    switch (act) {
      case Activation::relu: return z.cwiseMax(T(0));
      case Activation::tanh: return z.array().tanh().matrix();
      case Activation::linear: break;
    }
    return z;
  }

  static Matrix derivative(Activation act, const Matrix& pre, const Matrix& post, const Matrix& g) {
    switch (act) {
      case Activation::relu: return (pre.array() > T(0)).select(g, T(0));
      case Activation::tanh: return (g.array() * (T(1) - post.array().square())).matrix();
      case Activation::linear: break;
    }
    return g;
  }

  std::vector<LayerShape> layers_;
  std::vector<Index> offsets_;
  Vector params_;
};

using DenseNet = BasicDenseNet<double>;

/// Single-sample forward pass.
template <class T>
typename BasicDenseNet<T>::Vector forward(const BasicDenseNet<T>& net, const typename BasicDenseNet<T>::Vector& x) {
  return net.forward(typename BasicDenseNet<T>::Matrix(x));
}

template <class T>
struct BasicAdamState {
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  Vector m;
  Vector v;
  long step = 0;
  T lr = T(3e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  BasicAdamState() = default;
  explicit BasicAdamState(Index size, T learning_rate = T(3e-4))
      : m(Vector::Zero(size)), v(Vector::Zero(size)), lr(learning_rate) {}
};

using AdamState = BasicAdamState<double>;

/// One bias-corrected Adam step. Throws TrainingAborted on a non-finite gradient.
template <class T, class Params, class Grads>
void adam_step(BasicAdamState<T>& state, Params& params, const Grads& grads) {
  if (params.size() != grads.size() || state.m.size() != params.size())
    throw ArgumentError("adam_step: shape mismatch");
  if (!grads.allFinite()) throw TrainingAborted("non-finite gradient");
  ++state.step;
  state.m = state.beta1 * state.m + (T(1) - state.beta1) * grads;
  state.v = state.beta2 * state.v + (T(1) - state.beta2) * grads.cwiseProduct(grads);
  const T c1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  const T c2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  params.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
  if (!params.allFinite()) throw TrainingAborted("non-finite parameter after Adam step");
}

/// target <- (1 - tau) * target + tau * online
template <class TargetVec, class OnlineVec, class T>
void polyak_update(TargetVec& target, const OnlineVec& online, T tau) {
  if (target.size() != online.size()) throw ArgumentError("polyak_update: shape mismatch");
  if (!(tau > T(0) && tau <= T(1))) throw ArgumentError("polyak_update: tau must be in (0, 1]");
  if (tau == T(1)) {
    target = online;
    return;
  }
  target = (T(1) - tau) * target + tau * online;
}

template <class T>
void polyak_update(BasicDenseNet<T>& target, const BasicDenseNet<T>& online, T tau) {
  if (target.layers() != online.layers()) throw ArgumentError("polyak_update: architectures differ");
  polyak_update(target.params(), online.params(), tau);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Text format, one network after another:
//
//   acc-checkpoint 1
//   net <name> <num_layers>
//   layer <in> <out> <linear|relu|tanh>       (num_layers lines)
//   tensor <name>.<i>.weight <rows> <cols>    followed by rows*cols values, row-major
//   tensor <name>.<i>.bias <rows> 1           followed by rows values
//   ...
//   end
//
// Values are C99 hexfloats, so a save/load round trip is exact.

template <class T>
struct NamedNet {
  std::string name;
  BasicDenseNet<T> net;
};

namespace detail {

template <class T>
void write_values(std::ostream& os, const T* begin, Index n) {
  char buf[64];
  for (Index i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%a", static_cast<double>(begin[i]));
    os << buf << (i + 1 == n ? '\n' : ' ');
  }
}

inline std::string next_token(std::istream& is, const char* what) {
  std::string tok;
  if (!(is >> tok)) throw ConfigError(std::string("checkpoint truncated while reading ") + what);
  return tok;
}

inline void expect(std::istream& is, const std::string& word) {
  const auto tok = next_token(is, word.c_str());
  if (tok != word) throw ConfigError("checkpoint: expected '" + word + "', found '" + tok + "'");
}

inline long long read_int(std::istream& is, const char* what) {
  const auto tok = next_token(is, what);
  char* end = nullptr;
  const long long v = std::strtoll(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0') throw ConfigError(std::string("checkpoint: bad integer for ") + what);
  return v;
}

inline double read_real(std::istream& is) {
  const auto tok = next_token(is, "value");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw ConfigError("checkpoint: bad value '" + tok + "'");
  return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(std::ostream& os, const std::vector<NamedNet<T>>& nets) {
  os << "acc-checkpoint 1\n";
  for (const auto& [name, net] : nets) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
      throw ArgumentError("checkpoint net names must be non-empty without whitespace");
    os << "net " << name << ' ' << net.num_layers() << '\n';
    for (const auto& l : net.layers()) os << "layer " << l.in << ' ' << l.out << ' ' << to_string(l.act) << '\n';
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
      const auto w = net.weight(i);
      os << "tensor " << name << '.' << i << ".weight " << w.rows() << ' ' << w.cols() << '\n';
      const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = w;
      detail::write_values(os, rm.data(), rm.size());
      const auto b = net.bias(i);
      os << "tensor " << name << '.' << i << ".bias " << b.size() << " 1\n";
      detail::write_values(os, b.data(), b.size());
    }
  }
  os << "end\n";
}

template <class T = double>
std::vector<NamedNet<T>> load_checkpoint(std::istream& is) {
  detail::expect(is, "acc-checkpoint");
  if (detail::read_int(is, "version") != 1) throw ConfigError("checkpoint: unsupported version");
  std::vector<NamedNet<T>> out;
  for (;;) {
    const auto tok = detail::next_token(is, "section");
    if (tok == "end") break;
    if (tok != "net") throw ConfigError("checkpoint: expected 'net' or 'end', found '" + tok + "'");
    NamedNet<T> named;
    named.name = detail::next_token(is, "net name");
    const auto n_layers = detail::read_int(is, "layer count");
    if (n_layers <= 0) throw ConfigError("checkpoint: layer count must be positive");
    std::vector<LayerShape> shapes;
    for (long long i = 0; i < n_layers; ++i) {
      detail::expect(is, "layer");
      LayerShape s;
      s.in = detail::read_int(is, "layer in");
      s.out = detail::read_int(is, "layer out");
      s.act = activation_from_string(detail::next_token(is, "activation"));
      shapes.push_back(s);
    }
    named.net = BasicDenseNet<T>(shapes);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const std::string prefix = named.name + "." + std::to_string(i);
      detail::expect(is, "tensor");
      detail::expect(is, prefix + ".weight");
      if (detail::read_int(is, "rows") != shapes[i].out || detail::read_int(is, "cols") != shapes[i].in)
        throw ConfigError("checkpoint: weight shape mismatch in " + prefix);
      auto w = named.net.weight(i);
      for (Index r = 0; r < w.rows(); ++r)
        for (Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<T>(detail::read_real(is));
      detail::expect(is, "tensor");
      detail::expect(is, prefix + ".bias");
      if (detail::read_int(is, "rows") != shapes[i].out || detail::read_int(is, "cols") != 1)
        throw ConfigError("checkpoint: bias shape mismatch in " + prefix);
      auto b = named.net.bias(i);
      for (Index r = 0; r < b.size(); ++r) b(r) = static_cast<T>(detail::read_real(is));
    }
    out.push_back(std::move(named));
  }
  return out;
}

}  // namespace acc
