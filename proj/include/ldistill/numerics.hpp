#pragma once

// Dense double-precision tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Evaluating a primitive while
// any input requires a gradient records the node's parents and a backward
// closure; backpropagate() walks that graph in reverse topological order and
// accumulates into the grad buffers of leaves that require gradients.
//
// The primitive set is deliberately closed: matmul, add, mul, silu, concat,
// embedding and mse. Everything else in the library is composed from these.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ldistill {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  // First extent, and the product of the remaining extents.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const;
  // Turning gradients off drops any accumulated gradient.
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void clear_grad();

  // A leaf sharing no graph history with this tensor; values are copied.
  Tensor detach() const;
  // Deep copy of values into a fresh leaf with the same requires_grad flag.
  Tensor clone() const;

  // Identity of the underlying storage, used by the parameter census.
  const void* storage_id() const noexcept { return node_.get(); }

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// While alive, primitives record no graph even if inputs require gradients.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

enum class Transpose { No, Yes };

enum class Reduction {
  MeanElements,  // sum of squares / numel
  MeanRows,      // sum of squares / rows: mean squared L2 norm per row
};

// (n x k) * (k x m), or (n x k) * (m x k)^T when transpose_rhs is Yes.
Tensor matmul(const Tensor& lhs, const Tensor& rhs, Transpose transpose_rhs = Transpose::No);
// Same shape, or rhs broadcast: a row of extent cols() over every row, or a
// single element over everything.
Tensor add(const Tensor& lhs, const Tensor& rhs);
// Elementwise product; rhs may be a single element.
Tensor mul(const Tensor& lhs, const Tensor& rhs);
Tensor silu(const Tensor& x);
// Column-wise concatenation of two matrices with the same row count.
Tensor concat(const Tensor& lhs, const Tensor& rhs);
// Gathers rows of `table` (V x d) into an (n x d) matrix.
Tensor embedding(const Tensor& table, std::span<const std::size_t> indices);
Tensor mse(const Tensor& prediction, const Tensor& target, Reduction reduction = Reduction::MeanElements);

// Accumulates d(output)/d(leaf) into every leaf that requires a gradient.
void backpropagate(const Tensor& output);

// A named model weight. Frozen parameters never hold a gradient and never
// enter optimizer state.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor tensor, bool frozen = false);

  const std::string& name() const noexcept { return name_; }
  const Tensor& tensor() const noexcept { return tensor_; }
  Tensor& tensor() noexcept { return tensor_; }
  // Stored on the shared tensor, so every copy of a Parameter agrees.
  bool frozen() const { return !tensor_.requires_grad(); }
  void set_frozen(bool frozen);
  std::size_t numel() const { return tensor_.numel(); }

  // Number of Parameter objects constructed with fresh storage in this process.
  static std::uint64_t allocation_count() noexcept;

 private:
  std::string name_;
  Tensor tensor_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamOptions options) : options_(options) {}

  const AdamOptions& options() const noexcept { return options_; }
  // Learning rate for subsequent steps; moments are kept.
  void set_lr(double lr);
  std::uint64_t step() const noexcept { return step_; }
  bool has_state(const std::string& name) const { return moments_.count(name) != 0; }
  std::size_t tracked_parameters() const noexcept { return moments_.size(); }
  // Total number of moment scalars held (m and v together).
  std::size_t state_size() const;

 private:
  friend void adam_update(std::span<Parameter> params, AdamState& state);
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamOptions options_{};
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

// One bias-corrected Adam step over the non-frozen parameters, then clears
// their gradients.
void adam_update(std::span<Parameter> params, AdamState& state);

}  // namespace ldistill
