#include "xmatch/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xmatch {

std::size_t shape_size(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape_)
    : shape(std::move(shape_)), values(shape_size(shape), 0.0), grad(values.size(), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> values_)
    : shape(std::move(shape_)), values(std::move(values_)) {
  if (values.size() != shape_size(shape)) throw ShapeError("tensor: value count does not match shape");
  grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0); }

bool Tensor::all_finite() const {
  auto finite = [](double x) { return std::isfinite(x); };
  return std::all_of(values.begin(), values.end(), finite) && std::all_of(grad.begin(), grad.end(), finite);
}

double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

namespace {

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double stable_bce(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

void check_label(double y) {
  if (y != 0.0 && y != 1.0) throw Error("binary cross-entropy label must be 0 or 1");
}

}  // namespace

double sigmoid(double z) { return stable_sigmoid(z); }
double bce_from_logit(double z, double y) { return stable_bce(z, y); }

Graph::Node& Graph::node(Var v) {
  if (v.id >= nodes_.size()) throw Error("graph: invalid variable");
  return nodes_[v.id];
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw Error("graph: invalid variable");
  return nodes_[v.id];
}

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

double Graph::scalar(Var v) const {
  const auto& n = node(v);
  if (n.value.size() != 1) throw ShapeError("graph: value is not a scalar");
  return n.value[0];
}

double Graph::probability(Var loss) const { return node(loss).aux; }

Var Graph::constant(std::vector<std::size_t> shape, std::vector<double> values) {
  if (values.size() != shape_size(shape)) throw ShapeError("constant: value count does not match shape");
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  return push(std::move(n));
}

Var Graph::param(Tensor& tensor) {
  if (tensor.grad.size() != tensor.values.size()) tensor.grad.assign(tensor.values.size(), 0.0);
  Node n;
  n.shape = tensor.shape;
  n.value = tensor.values;
  n.requires_grad = true;
  n.param = &tensor;
  return push(std::move(n));
}

Var Graph::embed(Tensor& table, std::span<const TokenId> ids) {
  if (table.shape.size() != 2) throw ShapeError("embed: table must be V x d");
  if (table.grad.size() != table.values.size()) table.grad.assign(table.values.size(), 0.0);
  const std::size_t vocab = table.shape[0];
  const std::size_t dim = table.shape[1];
  Node n;
  n.shape = {ids.size(), dim};
  n.value.resize(ids.size() * dim);
  std::vector<TokenId> rows(ids.begin(), ids.end());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t] < 0 || static_cast<std::size_t>(rows[t]) >= vocab) {
      throw ShapeError("embed: token id " + std::to_string(rows[t]) + " outside table of " + std::to_string(vocab));
    }
    std::copy_n(table.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(rows[t]) * dim), dim,
                n.value.begin() + static_cast<std::ptrdiff_t>(t * dim));
  }
  n.requires_grad = true;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, &table, rows = std::move(rows), dim] {
    const auto& g = nodes_[self].grad;
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t] == kPadId) continue;
      axpy(1.0, g.data() + t * dim, table.grad.data() + static_cast<std::size_t>(rows[t]) * dim, dim);
    }
  };
  return push(std::move(n));
}

Var Graph::conv1d_relu(Var input, Var filters, Var bias) {
  const auto& in = node(input);
  const auto& fl = node(filters);
  const auto& bs = node(bias);
  if (in.shape.size() != 2 || fl.shape.size() != 3 || bs.value.size() != fl.shape[0]) {
    throw ShapeError("conv1d_relu: expected L x d input, F x w x d filters and F biases");
  }
  const std::size_t len = in.shape[0], dim = in.shape[1];
  const std::size_t n_filters = fl.shape[0], width = fl.shape[1];
  if (fl.shape[2] != dim) throw ShapeError("conv1d_relu: filter depth does not match embedding width");
  if (width == 0 || len < width) {
    throw ShapeError("conv1d_relu: sequence length " + std::to_string(len) + " shorter than filter width " +
                     std::to_string(width));
  }
  const std::size_t out_len = len - width + 1;
  const std::size_t span = width * dim;

  // Windows lying entirely in trailing all-zero rows reduce to the bias.
  std::size_t live_rows = len;
  while (live_rows > 0) {
    const double* row = in.value.data() + (live_rows - 1) * dim;
    if (std::any_of(row, row + dim, [](double x) { return x != 0.0; })) break;
    --live_rows;
  }

  Node n;
  n.shape = {out_len, n_filters};
  n.value.resize(out_len * n_filters);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < out_len; ++t) {
    const double* window = in.value.data() + t * dim;
    double* out = n.value.data() + t * n_filters;
    if (t >= live_rows) {
      for (std::size_t f = 0; f < n_filters; ++f) {
        const double pre = bs.value[f];
        margin = std::min(margin, std::abs(pre));
        out[f] = pre > 0.0 ? pre : 0.0;
      }
      continue;
    }
    for (std::size_t f = 0; f < n_filters; ++f) {
      const double pre = dot(window, fl.value.data() + f * span, span) + bs.value[f];
      margin = std::min(margin, std::abs(pre));
      out[f] = pre > 0.0 ? pre : 0.0;
    }
  }
  note_kink(margin);
  n.requires_grad = in.requires_grad || fl.requires_grad || bs.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, input, filters, bias, out_len, n_filters, dim, span] {
    const Node& out = nodes_[self];
    Node& in_n = nodes_[input.id];
    Node& fl_n = nodes_[filters.id];
    Node& bs_n = nodes_[bias.id];
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t f = 0; f < n_filters; ++f) {
        const double g = out.grad[t * n_filters + f];
        if (g == 0.0 || out.value[t * n_filters + f] <= 0.0) continue;
        if (bs_n.requires_grad) bs_n.grad[f] += g;
        if (fl_n.requires_grad) axpy(g, in_n.value.data() + t * dim, fl_n.grad.data() + f * span, span);
        if (in_n.requires_grad) axpy(g, fl_n.value.data() + f * span, in_n.grad.data() + t * dim, span);
      }
    }
  };
  return push(std::move(n));
}

Var Graph::max_over_time(Var input) {
  const auto& in = node(input);
  if (in.shape.size() != 2 || in.shape[0] == 0) throw ShapeError("max_over_time: expected non-empty T x F input");
  const std::size_t rows = in.shape[0], cols = in.shape[1];
  Node n;
  n.shape = {cols};
  n.value.resize(cols);
  std::vector<std::size_t> argmax(cols, 0);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < cols; ++f) {
    double best = in.value[f];
    for (std::size_t t = 1; t < rows; ++t) {
      const double x = in.value[t * cols + f];
      if (x > best) {
        best = x;
        argmax[f] = t;
      }
    }
    double runner_up = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < rows; ++t) {
      const double x = in.value[t * cols + f];
      if (x < best) runner_up = std::max(runner_up, x);
    }
    margin = std::min(margin, best - runner_up);
    n.value[f] = best;
  }
  note_kink(margin);
  n.requires_grad = in.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, input, cols, argmax = std::move(argmax)] {
    const auto& g = nodes_[self].grad;
    auto& ig = nodes_[input.id].grad;
    for (std::size_t f = 0; f < cols; ++f) ig[argmax[f] * cols + f] += g[f];
  };
  return push(std::move(n));
}

Var Graph::dropout(Var x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0) || p >= 1.0) throw Error("dropout: probability must be in [0, 1)");
  const auto& in = node(x);
  Node n;
  n.shape = in.shape;
  n.value = in.value;
  n.requires_grad = in.requires_grad;
  std::vector<double> mask;
  if (mode == Mode::train && p > 0.0) {
    mask.resize(in.value.size());
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
      n.value[i] *= mask[i];
    }
  }
  const std::size_t self = nodes_.size();
  n.backward = [this, self, x, mask = std::move(mask)] {
    const auto& g = nodes_[self].grad;
    auto& xg = nodes_[x.id].grad;
    if (mask.empty()) {
      axpy(1.0, g.data(), xg.data(), g.size());
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * mask[i];
    }
  };
  return push(std::move(n));
}

Var Graph::linear(Var x, Var weights) {
  const auto& xn = node(x);
  const auto& wn = node(weights);
  const std::size_t cols = xn.value.size();
  if (wn.shape.size() != 2 || wn.shape[1] != cols) throw ShapeError("linear: weights must be m x n with n = |x|");
  const std::size_t rows = wn.shape[0];
  Node n;
  n.shape = {rows};
  n.value.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) n.value[i] = dot(wn.value.data() + i * cols, xn.value.data(), cols);
  n.requires_grad = xn.requires_grad || wn.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, x, weights, rows, cols] {
    const auto& g = nodes_[self].grad;
    Node& xn_ = nodes_[x.id];
    Node& wn_ = nodes_[weights.id];
    for (std::size_t i = 0; i < rows; ++i) {
      if (wn_.requires_grad) axpy(g[i], xn_.value.data(), wn_.grad.data() + i * cols, cols);
      if (xn_.requires_grad) axpy(g[i], wn_.value.data() + i * cols, xn_.grad.data(), cols);
    }
  };
  return push(std::move(n));
}

Var Graph::affine(Var x, Var weights, Var bias) {
  const std::size_t rows = node(weights).shape.empty() ? 0 : node(weights).shape[0];
  if (node(bias).value.size() != rows) throw ShapeError("affine: bias length must equal output size");
  Var product = linear(x, weights);
  // Fold the bias into the same node so W x + b is one rounding step per row.
  Node& pn = nodes_[product.id];
  const auto& bn = nodes_[bias.id];
  for (std::size_t i = 0; i < rows; ++i) pn.value[i] += bn.value[i];
  pn.requires_grad = pn.requires_grad || bn.requires_grad;
  auto inner = std::move(pn.backward);
  const std::size_t self = product.id;
  pn.backward = [this, self, bias, inner = std::move(inner)] {
    inner();
    Node& bn_ = nodes_[bias.id];
    if (bn_.requires_grad) axpy(1.0, nodes_[self].grad.data(), bn_.grad.data(), bn_.grad.size());
  };
  return product;
}

Var Graph::matvec(Var matrix, Var w) {
  const auto& xn = node(matrix);
  const auto& wn = node(w);
  if (xn.shape.size() != 2 || xn.shape[1] != wn.value.size()) throw ShapeError("matvec: X must be n x p, w length p");
  const std::size_t rows = xn.shape[0], cols = xn.shape[1];
  Node n;
  n.shape = {rows};
  n.value.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) n.value[i] = dot(xn.value.data() + i * cols, wn.value.data(), cols);
  n.requires_grad = xn.requires_grad || wn.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, matrix, w, rows, cols] {
    const auto& g = nodes_[self].grad;
    Node& xn_ = nodes_[matrix.id];
    Node& wn_ = nodes_[w.id];
    for (std::size_t i = 0; i < rows; ++i) {
      if (wn_.requires_grad) axpy(g[i], xn_.value.data() + i * cols, wn_.grad.data(), cols);
      if (xn_.requires_grad) axpy(g[i], wn_.value.data(), xn_.grad.data() + i * cols, cols);
    }
  };
  return push(std::move(n));
}

Var Graph::add_scalar(Var v, Var scalar) {
  const auto& vn = node(v);
  const auto& sn = node(scalar);
  if (sn.value.size() != 1) throw ShapeError("add_scalar: second operand must have one entry");
  Node n;
  n.shape = vn.shape;
  n.value = vn.value;
  for (double& x : n.value) x += sn.value[0];
  n.requires_grad = vn.requires_grad || sn.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, v, scalar] {
    const auto& g = nodes_[self].grad;
    Node& vn_ = nodes_[v.id];
    Node& sn_ = nodes_[scalar.id];
    if (vn_.requires_grad) axpy(1.0, g.data(), vn_.grad.data(), g.size());
    if (sn_.requires_grad) {
      double total = 0.0;
      for (double x : g) total += x;
      sn_.grad[0] += total;
    }
  };
  return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
  const auto& an = node(a);
  const auto& bn = node(b);
  if (an.value.size() != bn.value.size()) throw ShapeError("add: size mismatch");
  Node n;
  n.shape = an.shape;
  n.value.resize(an.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = an.value[i] + bn.value[i];
  n.requires_grad = an.requires_grad || bn.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, a, b] {
    const auto& g = nodes_[self].grad;
    for (Var v : {a, b}) {
      Node& in = nodes_[v.id];
      if (in.requires_grad) axpy(1.0, g.data(), in.grad.data(), g.size());
    }
  };
  return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
  const auto& an = node(a);
  const auto& bn = node(b);
  if (an.value.size() != bn.value.size()) throw ShapeError("mul: size mismatch");
  Node n;
  n.shape = an.shape;
  n.value.resize(an.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = an.value[i] * bn.value[i];
  n.requires_grad = an.requires_grad || bn.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, a, b] {
    const auto& g = nodes_[self].grad;
    Node& an_ = nodes_[a.id];
    Node& bn_ = nodes_[b.id];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (an_.requires_grad) an_.grad[i] += g[i] * bn_.value[i];
      if (bn_.requires_grad) bn_.grad[i] += g[i] * an_.value[i];
    }
  };
  return push(std::move(n));
}

Var Graph::concat(std::span<const Var> parts) {
  Node n;
  std::vector<Var> inputs(parts.begin(), parts.end());
  for (Var v : inputs) {
    const auto& in = node(v);
    n.value.insert(n.value.end(), in.value.begin(), in.value.end());
    n.requires_grad = n.requires_grad || in.requires_grad;
  }
  n.shape = {n.value.size()};
  const std::size_t self = nodes_.size();
  n.backward = [this, self, inputs = std::move(inputs)] {
    const auto& g = nodes_[self].grad;
    std::size_t offset = 0;
    for (Var v : inputs) {
      Node& in = nodes_[v.id];
      if (in.requires_grad) axpy(1.0, g.data() + offset, in.grad.data(), in.value.size());
      offset += in.value.size();
    }
  };
  return push(std::move(n));
}

Var Graph::scale(Var x, double factor) {
  const auto& xn = node(x);
  Node n;
  n.shape = xn.shape;
  n.value = xn.value;
  for (double& v : n.value) v *= factor;
  n.requires_grad = xn.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, x, factor] {
    axpy(factor, nodes_[self].grad.data(), nodes_[x.id].grad.data(), nodes_[self].grad.size());
  };
  return push(std::move(n));
}

Var Graph::sum_squares(Var x) {
  const auto& xn = node(x);
  Node n;
  n.shape = {1};
  n.value = {dot(xn.value.data(), xn.value.data(), xn.value.size())};
  n.requires_grad = xn.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, x] {
    const double g = nodes_[self].grad[0];
    Node& in = nodes_[x.id];
    axpy(2.0 * g, in.value.data(), in.grad.data(), in.value.size());
  };
  return push(std::move(n));
}

Var Graph::sigmoid_bce(Var logit, double label) {
  check_label(label);
  const auto& ln = node(logit);
  if (ln.value.size() != 1) throw ShapeError("sigmoid_bce: logit must be a scalar");
  const double z = ln.value[0];
  Node n;
  n.shape = {1};
  n.value = {stable_bce(z, label)};
  n.aux = stable_sigmoid(z);
  n.requires_grad = ln.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, logit, label] {
    const Node& me = nodes_[self];
    nodes_[logit.id].grad[0] += me.grad[0] * (me.aux - label);
  };
  return push(std::move(n));
}

Var Graph::bce_mean(Var logits, std::span<const double> labels) {
  const auto& ln = node(logits);
  if (ln.value.size() != labels.size() || labels.empty()) throw ShapeError("bce_mean: one label per logit required");
  std::vector<double> y(labels.begin(), labels.end());
  for (double label : y) check_label(label);
  const double inv_n = 1.0 / static_cast<double>(y.size());
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += stable_bce(ln.value[i], y[i]);
  Node n;
  n.shape = {1};
  n.value = {total * inv_n};
  n.requires_grad = ln.requires_grad;
  const std::size_t self = nodes_.size();
  n.backward = [this, self, logits, y = std::move(y), inv_n] {
    const double g = nodes_[self].grad[0];
    Node& in = nodes_[logits.id];
    for (std::size_t i = 0; i < y.size(); ++i) in.grad[i] += g * inv_n * (stable_sigmoid(in.value[i]) - y[i]);
  };
  return push(std::move(n));
}

void Graph::backward(Var loss, double seed) {
  if (nodes_.empty() || loss.id >= nodes_.size()) throw Error("backward: no forward pass recorded");
  if (backward_done_) throw Error("backward: graph already differentiated");
  if (nodes_[loss.id].value.size() != 1) throw ShapeError("backward: loss must be a scalar");
  backward_done_ = true;
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (nodes_[i].requires_grad) nodes_[i].grad.assign(nodes_[i].value.size(), 0.0);
  }
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad[0] = seed;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.backward) n.backward();
    if (n.param != nullptr) axpy(1.0, n.grad.data(), n.param->grad.data(), n.grad.size());
  }
}

AdamState::AdamState(std::span<Tensor* const> params) {
  for (const Tensor* p : params) {
    m_.emplace_back(p->values.size(), 0.0);
    v_.emplace_back(p->values.size(), 0.0);
  }
}

void AdamState::step(std::span<Tensor* const> params, double lr) {
  if (params.size() != m_.size()) throw ShapeError("adam: parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (p.values.size() != m_[k].size() || p.grad.size() != p.values.size()) {
      throw ShapeError("adam: parameter shape changed");
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double g = p.grad[i];
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.values[i] -= lr * m_hat / (std::sqrt(v_hat) + kEpsilon);
    }
  }
}

GradCheckResult grad_check(const std::function<Var(Graph&)>& forward, std::span<Tensor* const> params,
                           const GradCheckOptions& options) {
  for (Tensor* p : params) p->zero_grad();
  GradCheckResult result;
  {
    Graph g;
    Var loss = forward(g);
    result.kink_margin = g.min_kink_margin();
    g.backward(loss);
  }
  auto evaluate = [&forward] {
    Graph g;
    return g.scalar(forward(g));
  };
  Rng rng(options.seed);
  for (Tensor* p : params) {
    std::vector<std::size_t> coords;
    for (std::size_t i = 0; i < p->values.size(); ++i) {
      if (!options.skip || !options.skip(*p, i)) coords.push_back(i);
    }
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      rng.shuffle(std::span(coords));
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = p->values[i];
      p->values[i] = saved + options.eps;
      const double up = evaluate();
      p->values[i] = saved - options.eps;
      const double down = evaluate();
      p->values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double analytic = p->grad[i];
      const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      result.max_rel_error = std::max(result.max_rel_error, rel);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace xmatch
