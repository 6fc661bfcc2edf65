#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xmatch/error.hpp"
#include "xmatch/rng.hpp"
#include "xmatch/tokenizer.hpp"

namespace xmatch {

/// Row-major array of doubles with an optional gradient of the same size.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_);
  Tensor(std::vector<std::size_t> shape_, std::vector<double> values_);

  std::size_t size() const noexcept { return values.size(); }
  void zero_grad();
  bool all_finite() const;

  bool operator==(const Tensor& other) const { return shape == other.shape && values == other.values; }
};

std::size_t shape_size(std::span<const std::size_t> shape);

enum class Mode { train, infer };

/// Sum of a[i]*b[i] with four interleaved accumulators. The order is fixed,
/// so dot(a,b,n) == dot(b,a,n) bitwise and a zero operand yields +0.
double dot(const double* a, const double* b, std::size_t n);

/// 1 / (1 + e^-z) without overflow for large |z|.
double sigmoid(double z);

/// max(z, 0) - z y + ln(1 + e^-|z|): cross-entropy of label y at logit z.
double bce_from_logit(double z, double y);

/// Handle to a value recorded on a Graph.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Tape for reverse-mode differentiation. Each op appends a node holding its
/// value and a backward closure; backward() replays them in reverse creation
/// order, so accumulation order is fixed by graph construction order.
///
/// Leaves created with param() (and embedding tables) push their gradients
/// into the Tensor's grad array, which is summed across uses and graphs
/// until the caller zeroes it.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(std::vector<std::size_t> shape, std::vector<double> values);
  Var param(Tensor& tensor);

  /// Row gather from a V x d table. Row 0 (PAD) receives no gradient.
  Var embed(Tensor& table, std::span<const TokenId> ids);

  /// Valid cross-correlation of an L x d input with F filters (F x w x d)
  /// plus bias, then ReLU. Output is (L - w + 1) x F.
  Var conv1d_relu(Var input, Var filters, Var bias);

  /// Column-wise max of a T x F input; gradient goes to the first argmax.
  Var max_over_time(Var input);

  /// Inverted dropout. Identity in infer mode or when p == 0.
  Var dropout(Var x, double p, Mode mode, Rng& rng);

  /// W x + b for x of length n, W of shape m x n, b of length m.
  Var affine(Var x, Var weights, Var bias);

  /// W x without bias.
  Var linear(Var x, Var weights);

  /// X w for a constant-or-variable X of shape n x p and w of length p.
  Var matvec(Var matrix, Var w);

  /// Adds a length-1 value to every entry of v.
  Var add_scalar(Var v, Var scalar);

  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var concat(std::span<const Var> parts);
  Var scale(Var x, double factor);
  Var sum_squares(Var x);

  /// Numerically stable binary cross-entropy on a length-1 logit.
  Var sigmoid_bce(Var logit, double label);

  /// Mean binary cross-entropy over a vector of logits.
  Var bce_mean(Var logits, std::span<const double> labels);

  const std::vector<double>& value(Var v) const { return node(v).value; }
  const std::vector<std::size_t>& shape(Var v) const { return node(v).shape; }
  const std::vector<double>& grad(Var v) const { return node(v).grad; }
  double scalar(Var v) const;

  /// Sigmoid output recorded by sigmoid_bce.
  double probability(Var loss) const;

  /// Reverse pass from a scalar node, seeding d(loss)/d(loss) = seed.
  void backward(Var loss, double seed = 1.0);

  /// Smallest distance of any recorded ReLU pre-activation from 0 and of any
  /// max-pooling winner from its runner-up. Finite differences with a step
  /// well below this margin never cross a kink.
  double min_kink_margin() const noexcept { return kink_margin_; }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* param = nullptr;
    std::function<void()> backward;
    double aux = 0.0;
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  Var push(Node n);
  void note_kink(double margin) {
    if (margin < kink_margin_) kink_margin_ = margin;
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

/// Adam with bias correction. One state per parameter group.
class AdamState {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  explicit AdamState(std::span<Tensor* const> params);

  /// Increments the step counter, then updates every parameter from its grad.
  void step(std::span<Tensor* const> params, double lr = 1e-3);

  long steps() const noexcept { return t_; }

 private:
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

struct GradCheckOptions {
  double eps = 1e-4;
  /// Coordinates checked per tensor; 0 checks all of them.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Coordinates to leave out (frozen entries such as PAD rows).
  std::function<bool(const Tensor&, std::size_t)> skip;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Kink margin of the unperturbed forward pass.
  double kink_margin = std::numeric_limits<double>::infinity();
};

/// Compares analytic gradients of `forward` against central differences
/// (f(x+eps) - f(x-eps)) / (2 eps); relative error is
/// |a - n| / max(1e-8, |a| + |n|). `forward` must be deterministic.
GradCheckResult grad_check(const std::function<Var(Graph&)>& forward, std::span<Tensor* const> params,
                           const GradCheckOptions& options = {});

}  // namespace xmatch
