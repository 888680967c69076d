#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cslab/error.hpp"
#include "cslab/rng.hpp"

namespace cslab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;  // participates in reverse-mode autodiff
  bool is_leaf = true;
  bool freed = false;          // graph behind this node was released
  std::vector<double> grad;    // persistent; populated on leaves only

  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Receives this node's upstream gradient and one buffer per parent to
  // accumulate into; a null buffer means that parent does not need a gradient.
  std::function<void(const std::vector<double>& gout,
                     const std::vector<std::vector<double>*>& gparents)>
      backward_fn;
};

}  // namespace detail

// Dense row-major 64-bit float tensor with optional gradient tracking.
//
// Tensor is a cheap handle: copies share the underlying buffer. Values
// produced by an op are immutable; only leaves (parameters, inputs) may be
// mutated in place, via mutable_data(). Every op validates that its output
// is finite and throws NumericError otherwise.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // He fan-in scaled normal draws: N(0, sqrt(2 / fan_in)).
  static Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng,
                          bool requires_grad = true);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }

  std::span<const double> data() const;
  // Leaf-only in-place access (optimizer updates, attack iterates).
  std::span<double> mutable_data();
  double item() const;  // requires size() == 1

  bool requires_grad() const;
  bool is_leaf() const;
  // True if grad storage has been populated by a backward pass.
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Deep copy of values only (fresh leaf, no graph).
  Tensor detached_copy(bool requires_grad = false) const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_op_result(Shape shape, std::vector<double> data,
                               std::vector<Tensor> parents,
                               const char* op_name,
                               std::function<void(
                                   const std::vector<double>&,
                                   const std::vector<std::vector<double>*>&)>
                                   backward_fn);
};

// Runs reverse-mode accumulation from a scalar loss. Gradients land on leaf
// tensors created with requires_grad=true; repeated calls accumulate. With
// free_graph=true the traversed graph is released and a further backward
// through it throws.
void backward(const Tensor& loss, bool free_graph = false);

// ---- ops -------------------------------------------------------------
// Elementwise binaries broadcast trailing-aligned, numpy style.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double s);
Tensor scalar_add(const Tensor& x, double s);

Tensor relu(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor matmul(const Tensor& a, const Tensor& b);

// x: [N, Cin, H, W], w: [Cout, Cin, kh, kw]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride = 1,
              std::size_t padding = 0);

Tensor avgpool2d(const Tensor& x, std::size_t k = 2, std::size_t stride = 0);
// Ties route the gradient to the lowest flat input index.
Tensor maxpool2d(const Tensor& x, std::size_t k = 2, std::size_t stride = 0);

// [N, C, H, W] -> [N, C]: mean over the spatial extent.
Tensor spatial_mean(const Tensor& x);

Tensor sum(const Tensor& x);   // -> [1]
Tensor mean(const Tensor& x);  // -> [1]

// [R, C] -> [C] column reductions.
Tensor sum_axis0(const Tensor& x);
// Subgradient of max routes to the lowest row index among maximizers.
Tensor max_axis0(const Tensor& x);

struct BatchNormBuffers {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

// Per-channel normalization for rank-4 input, per-feature for rank-2.
// Training mode normalizes with batch statistics (population variance) and
// updates the running buffers as r <- momentum*r + (1-momentum)*batch;
// evaluation mode normalizes with the running buffers.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormBuffers& buffers, bool training,
                 double momentum = 0.9, double eps = 1e-5);

// Mean cross-entropy of row-wise softmax against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels);

// Row-wise argmax of a [N, C] tensor (no graph).
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace cslab
