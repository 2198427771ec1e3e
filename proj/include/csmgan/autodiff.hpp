#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape records every forward op as a node holding its value and a closure
// that pushes the node's gradient into its parents. Nodes are appended in
// execution order, so the tape is topologically sorted by construction and
// backward() is a single reverse sweep.

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "csmgan/tensor.hpp"

namespace csmgan {

/// Trainable tensor with an accumulated gradient. Owned by a ParamStore.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; it and references from value()
/// stay valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    const char* op;
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily during backward
    bool requires_grad;
    Backward backward;
    Parameter<T>* sink;  // receives the gradient of parameter leaves
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is retained on the node (read it via Var::grad()).
  Var<T> input(Tensor<T> value);
  /// Leaf bound to a parameter; backward() adds the node gradient into p.grad.
  Var<T> param(Parameter<T>& p);

  /// Record an op. `backward` may be empty for ops with no differentiable parents.
  Var<T> record(const char* op, Tensor<T> value, bool requires_grad, Backward backward);

  /// Populate gradients of everything reachable from `loss`, which must be 1×1.
  void backward(const Var<T>& loss);

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor<T>& grad_of(std::size_t id);

  /// When false, every recorded node is treated as not requiring a gradient.
  void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

 private:
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

enum class Activation { kSigmoid, kTanh, kRelu };

// ---- Ops. Every op checks shapes up front and the finiteness of its result. ----

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);

// Element-wise binary ops broadcast b over a when b is [1×n], [m×1] or [1×1].
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);

template <typename T> Var<T> activation(const Var<T>& x, Activation kind);
template <typename T> Var<T> sigmoid(const Var<T>& x) { return activation(x, Activation::kSigmoid); }
template <typename T> Var<T> tanh(const Var<T>& x) { return activation(x, Activation::kTanh); }
template <typename T> Var<T> relu(const Var<T>& x) { return activation(x, Activation::kRelu); }

/// Row-wise softmax with max subtraction.
template <typename T> Var<T> softmax_rows(const Var<T>& x);
/// Column-wise softmax (each column sums to one).
template <typename T> Var<T> softmax_cols(const Var<T>& x);

/// Temporal cross-correlation of x [T×c_in] with kernels [k×c_in×c_out] after
/// zero-padding pad_left rows before and pad_right rows after x.
/// Output length is T + pad_left + pad_right − k + 1.
template <typename T> Var<T> conv1d(const Var<T>& x, const Var<T>& kernels, std::size_t pad_left, std::size_t pad_right);
/// conv1d with padding chosen so the output length equals the input length.
template <typename T> Var<T> conv1d_same(const Var<T>& x, const Var<T>& kernels);

/// Per element: 0.5·x² if |x| < 1, else |x| − 0.5.
template <typename T> Var<T> smooth_l1(const Var<T>& x);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);

template <typename T> Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end);
template <typename T> Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end);
template <typename T> Var<T> select_rows(const Var<T>& x, const std::vector<std::size_t>& rows);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> reverse_rows(const Var<T>& x);

/// Element-wise maximum over equally shaped inputs; ties go to the earliest input.
template <typename T> Var<T> maximum(const std::vector<Var<T>>& parts);

/// Cosine similarity between every row of a [m×d] and every row of b [n×d],
/// giving [m×n]. Pairs where either norm is below 1e-8 yield 0 and no gradient.
template <typename T> Var<T> cosine_similarity(const Var<T>& a, const Var<T>& b);

/// Mean soft-label binary cross-entropy. Scores are clamped to [eps, 1−eps];
/// clamped entries pass no gradient.
template <typename T> Var<T> soft_bce(const Var<T>& scores, const Tensor<T>& targets, T eps);

/// Runs a GRU over the rows of a pre-projected input.
///
/// x_proj is [T×3h] = x·W_x + b_x with gate blocks ordered [update | reset | candidate].
/// w_h is [h×3h], b_h is [1×3h]. With zero initial state, for each step:
///   z = σ(x_z + h·W_hz + b_hz), r = σ(x_r + h·W_hr + b_hr)
///   n = tanh(x_n + r ⊙ (h·W_hn + b_hn)), h' = (1 − z) ⊙ h + z ⊙ n
/// Returns [T×h] with row t holding the state after consuming x_t. When
/// `reverse` is set the sequence is consumed from the last row to the first.
template <typename T> Var<T> gru_sequence(const Var<T>& x_proj, const Var<T>& w_h, const Var<T>& b_h, bool reverse);

}  // namespace csmgan
