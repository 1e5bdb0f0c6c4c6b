#include "ldistill/numerics.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "ldistill/error.hpp"

namespace ldistill {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (!has_grad) {
      grad.assign(values.size(), 0.0);
      has_grad = true;
    }
  }
};

}  // namespace detail

using detail::Node;

struct TensorAccess {
  static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_parameter_allocations{0};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

const Node& node_of(const Tensor& t, const char* op) {
  if (!t.defined()) fail(ErrorKind::InvalidArgument, std::string(op) + ": undefined tensor");
  return *TensorAccess::node(t);
}

std::size_t rows_of(const Shape& s) { return s.empty() ? 1 : s[0]; }
std::size_t cols_of(const Shape& s) {
  std::size_t c = 1;
  for (std::size_t i = 1; i < s.size(); ++i) c *= s[i];
  return c;
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorKind::Shape, std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                             " do not conform");
}

// Creates the result node and, if gradients are live, links it to its inputs.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->values = std::move(values);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || TensorAccess::node(in)->requires_grad;
  }
  if (needs) {
    out->requires_grad = true;
    out->leaf = false;
    for (const auto& in : inputs) out->parents.push_back(TensorAccess::node(in));
    out->backward = std::move(backward);
  }
  return TensorAccess::wrap(std::move(out));
}

ConstMap as_matrix(const Node& n) {
  return ConstMap(n.values.data(), static_cast<Eigen::Index>(rows_of(n.shape)),
                  static_cast<Eigen::Index>(cols_of(n.shape)));
}

MutMap grad_matrix(Node& n) {
  n.ensure_grad();
  return MutMap(n.grad.data(), static_cast<Eigen::Index>(rows_of(n.shape)),
                static_cast<Eigen::Index>(cols_of(n.shape)));
}

ConstMap upstream(const Node& n) {
  return ConstMap(n.grad.data(), static_cast<Eigen::Index>(rows_of(n.shape)),
                  static_cast<Eigen::Index>(cols_of(n.shape)));
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

// --- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) fail(ErrorKind::Shape, "tensor: empty shape");
  for (auto e : shape) {
    if (e == 0) fail(ErrorKind::Shape, "tensor: zero extent in shape " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    fail(ErrorKind::Shape, "tensor: shape " + shape_string(shape) + " holds " +
                               std::to_string(shape_numel(shape)) + " values, got " +
                               std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

const Shape& Tensor::shape() const { return node_of(*this, "shape").shape; }
std::size_t Tensor::numel() const { return node_of(*this, "numel").values.size(); }
std::size_t Tensor::rows() const { return rows_of(shape()); }
std::size_t Tensor::cols() const { return cols_of(shape()); }

std::span<const double> Tensor::values() const { return node_of(*this, "values").values; }
std::span<double> Tensor::mutable_values() {
  node_of(*this, "values");
  return node_->values;
}

double Tensor::at(std::size_t row, std::size_t col) const { return values()[row * cols() + col]; }

double Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::Shape, "item: tensor of shape " + shape_string(shape()) + " is not scalar");
  return values()[0];
}

bool Tensor::requires_grad() const { return node_of(*this, "requires_grad").requires_grad; }

void Tensor::set_requires_grad(bool on) {
  node_of(*this, "set_requires_grad");
  node_->requires_grad = on;
  if (!on) clear_grad();
}

bool Tensor::has_grad() const { return node_of(*this, "has_grad").has_grad; }

std::span<const double> Tensor::grad() const {
  const auto& n = node_of(*this, "grad");
  if (!n.has_grad) return {};
  return n.grad;
}

void Tensor::clear_grad() {
  node_of(*this, "clear_grad");
  node_->grad.clear();
  node_->grad.shrink_to_fit();
  node_->has_grad = false;
}

Tensor Tensor::detach() const {
  const auto& n = node_of(*this, "detach");
  return from_values(n.shape, n.values, false);
}

Tensor Tensor::clone() const {
  const auto& n = node_of(*this, "clone");
  return from_values(n.shape, n.values, n.requires_grad && n.leaf);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

// --- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& lhs, const Tensor& rhs, Transpose transpose_rhs) {
  const auto& a = node_of(lhs, "matmul");
  const auto& b = node_of(rhs, "matmul");
  if (a.shape.size() != 2 || b.shape.size() != 2) shape_mismatch("matmul", a.shape, b.shape);
  const bool tb = transpose_rhs == Transpose::Yes;
  const std::size_t n = a.shape[0], k = a.shape[1];
  const std::size_t bk = tb ? b.shape[1] : b.shape[0];
  const std::size_t m = tb ? b.shape[0] : b.shape[1];
  if (k != bk) shape_mismatch("matmul", a.shape, b.shape);

  std::vector<double> out(n * m);
  MutMap c(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  if (tb) {
    c.noalias() = as_matrix(a) * as_matrix(b).transpose();
  } else {
    c.noalias() = as_matrix(a) * as_matrix(b);
  }
  return make_result({n, m}, std::move(out), {lhs, rhs}, [tb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto g = upstream(self);
    if (pa.requires_grad) {
      if (tb) {
        grad_matrix(pa).noalias() += g * as_matrix(pb);
      } else {
        grad_matrix(pa).noalias() += g * as_matrix(pb).transpose();
      }
    }
    if (pb.requires_grad) {
      if (tb) {
        grad_matrix(pb).noalias() += g.transpose() * as_matrix(pa);
      } else {
        grad_matrix(pb).noalias() += as_matrix(pa).transpose() * g;
      }
    }
  });
}

namespace {

enum class Broadcast { Same, Row, Scalar };

Broadcast classify(const char* op, const Node& a, const Node& b) {
  if (a.shape == b.shape) return Broadcast::Same;
  if (b.values.size() == 1) return Broadcast::Scalar;
  const bool row_like = (b.shape.size() == 1) || (b.shape.size() == 2 && b.shape[0] == 1);
  if (row_like && a.shape.size() == 2 && b.values.size() == a.shape[1]) return Broadcast::Row;
  shape_mismatch(op, a.shape, b.shape);
}

}  // namespace

Tensor add(const Tensor& lhs, const Tensor& rhs) {
  const auto& a = node_of(lhs, "add");
  const auto& b = node_of(rhs, "add");
  const auto mode = classify("add", a, b);
  std::vector<double> out = a.values;
  const std::size_t cols = cols_of(a.shape);
  switch (mode) {
    case Broadcast::Same:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values[i];
      break;
    case Broadcast::Row:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values[i % cols];
      break;
    case Broadcast::Scalar:
      for (auto& v : out) v += b.values[0];
      break;
  }
  return make_result(a.shape, std::move(out), {lhs, rhs}, [mode, cols](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      switch (mode) {
        case Broadcast::Same:
          for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i];
          break;
        case Broadcast::Row:
          for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i % cols] += self.grad[i];
          break;
        case Broadcast::Scalar: {
          double s = 0.0;
          for (double g : self.grad) s += g;
          pb.grad[0] += s;
          break;
        }
      }
    }
  });
}

Tensor mul(const Tensor& lhs, const Tensor& rhs) {
  const auto& a = node_of(lhs, "mul");
  const auto& b = node_of(rhs, "mul");
  const auto mode = classify("mul", a, b);
  if (mode == Broadcast::Row) shape_mismatch("mul", a.shape, b.shape);
  const bool scalar = mode == Broadcast::Scalar;
  std::vector<double> out = a.values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= scalar ? b.values[0] : b.values[i];
  return make_result(a.shape, std::move(out), {lhs, rhs}, [scalar](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        pa.grad[i] += self.grad[i] * (scalar ? pb.values[0] : pb.values[i]);
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      if (scalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) s += self.grad[i] * pa.values[i];
        pb.grad[0] += s;
      } else {
        for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.values[i];
      }
    }
  });
}

Tensor silu(const Tensor& x) {
  const auto& a = node_of(x, "silu");
  std::vector<double> out(a.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = a.values[i];
    out[i] = v / (1.0 + std::exp(-v));
  }
  return make_result(a.shape, std::move(out), {x}, [](Node& self) {
    Node& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = pa.values[i];
      const double sig = 1.0 / (1.0 + std::exp(-v));
      pa.grad[i] += self.grad[i] * sig * (1.0 + v * (1.0 - sig));
    }
  });
}

Tensor concat(const Tensor& lhs, const Tensor& rhs) {
  const auto& a = node_of(lhs, "concat");
  const auto& b = node_of(rhs, "concat");
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[0] != b.shape[0]) {
    shape_mismatch("concat", a.shape, b.shape);
  }
  const std::size_t n = a.shape[0], ca = a.shape[1], cb = b.shape[1];
  std::vector<double> out(n * (ca + cb));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.values.begin() + static_cast<std::ptrdiff_t>(i * ca), ca,
                out.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb)));
    std::copy_n(b.values.begin() + static_cast<std::ptrdiff_t>(i * cb), cb,
                out.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb) + ca));
  }
  return make_result({n, ca + cb}, std::move(out), {lhs, rhs}, [n, ca, cb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double* g = self.grad.data() + i * (ca + cb);
      if (pa.requires_grad) {
        for (std::size_t j = 0; j < ca; ++j) pa.grad[i * ca + j] += g[j];
      }
      if (pb.requires_grad) {
        for (std::size_t j = 0; j < cb; ++j) pb.grad[i * cb + j] += g[ca + j];
      }
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> indices) {
  const auto& t = node_of(table, "embedding");
  if (t.shape.size() != 2) fail(ErrorKind::Shape, "embedding: table must be 2-D, got " + shape_string(t.shape));
  if (indices.empty()) fail(ErrorKind::Shape, "embedding: no indices");
  const std::size_t vocab = t.shape[0], dim = t.shape[1];
  std::vector<double> out(indices.size() * dim);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= vocab) {
      fail(ErrorKind::InvalidArgument, "embedding: index " + std::to_string(indices[i]) +
                                           " out of range for table " + shape_string(t.shape));
    }
    std::copy_n(t.values.begin() + static_cast<std::ptrdiff_t>(indices[i] * dim), dim,
                out.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result({indices.size(), dim}, std::move(out), {table}, [idx = std::move(idx), dim](Node& self) {
    Node& pt = *self.parents[0];
    pt.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < dim; ++j) pt.grad[idx[i] * dim + j] += self.grad[i * dim + j];
    }
  });
}

Tensor mse(const Tensor& prediction, const Tensor& target, Reduction reduction) {
  const auto& p = node_of(prediction, "mse");
  const auto& t = node_of(target, "mse");
  if (p.shape != t.shape) shape_mismatch("mse", p.shape, t.shape);
  const double denom =
      static_cast<double>(reduction == Reduction::MeanElements ? p.values.size() : rows_of(p.shape));
  double sum = 0.0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double d = p.values[i] - t.values[i];
    sum += d * d;
  }
  return make_result({1}, {sum / denom}, {prediction, target}, [denom](Node& self) {
    Node& pp = *self.parents[0];
    Node& pt = *self.parents[1];
    const double scale = 2.0 * self.grad[0] / denom;
    if (pp.requires_grad) pp.ensure_grad();
    if (pt.requires_grad) pt.ensure_grad();
    for (std::size_t i = 0; i < pp.values.size(); ++i) {
      const double d = scale * (pp.values[i] - pt.values[i]);
      if (pp.requires_grad) pp.grad[i] += d;
      if (pt.requires_grad) pt.grad[i] -= d;
    }
  });
}

void backpropagate(const Tensor& output) {
  const auto& root = TensorAccess::node(output);
  if (!root) fail(ErrorKind::InvalidArgument, "backpropagate: undefined tensor");
  if (root->values.size() != 1) {
    fail(ErrorKind::Shape, "backpropagate: output must be scalar, got shape " + shape_string(root->shape));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf) {
      n->grad.assign(n->values.size(), 0.0);
      n->has_grad = true;
    }
  }
  root->ensure_grad();
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->leaf && n->backward) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->leaf) {
      n->grad.clear();
      n->grad.shrink_to_fit();
      n->has_grad = false;
    }
  }
}

// --- Parameter and Adam ---------------------------------------------------

Parameter::Parameter(std::string name, Tensor tensor, bool frozen)
    : name_(std::move(name)), tensor_(std::move(tensor)) {
  if (!tensor_.defined()) fail(ErrorKind::InvalidArgument, "parameter '" + name_ + "': undefined tensor");
  g_parameter_allocations.fetch_add(1, std::memory_order_relaxed);
  set_frozen(frozen);
}

void Parameter::set_frozen(bool frozen) {
  tensor_.set_requires_grad(!frozen);
}

std::uint64_t Parameter::allocation_count() noexcept {
  return g_parameter_allocations.load(std::memory_order_relaxed);
}

std::size_t AdamState::state_size() const {
  std::size_t n = 0;
  for (const auto& [name, mom] : moments_) n += mom.m.size() + mom.v.size();
  return n;
}

void AdamState::set_lr(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorKind::InvalidArgument, "adam: lr must be finite and >= 0");
  options_.lr = lr;
}

void adam_update(std::span<Parameter> params, AdamState& state) {
  for (const auto& p : params) {
    if (!p.frozen() && !p.tensor().has_grad()) {
      fail(ErrorKind::InvalidArgument, "adam_update: parameter '" + p.name() + "' has no gradient");
    }
  }
  const auto& o = state.options_;
  ++state.step_;
  const double t = static_cast<double>(state.step_);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (auto& p : params) {
    if (p.frozen()) continue;
    auto values = p.tensor().mutable_values();
    const auto grad = p.tensor().grad();
    auto& mom = state.moments_[p.name()];
    if (mom.m.empty()) {
      mom.m.assign(values.size(), 0.0);
      mom.v.assign(values.size(), 0.0);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      mom.m[i] = o.beta1 * mom.m[i] + (1.0 - o.beta1) * g;
      mom.v[i] = o.beta2 * mom.v[i] + (1.0 - o.beta2) * g * g;
      const double m_hat = mom.m[i] / correction1;
      const double v_hat = mom.v[i] / correction2;
      values[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
    p.tensor().clear_grad();
  }
}

}  // namespace ldistill
