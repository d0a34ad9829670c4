#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A tensor is a handle to a shared graph node. Ops whose inputs require
// gradients record their parents and a backward rule on the output node;
// backward() orders the reachable nodes topologically and replays the rules
// in reverse. Leaves keep accumulating gradients across backward calls until
// zero_grad(), which is how mini-batches are summed.
//
// Only 1-D and 2-D shapes are used. A "scalar" is shape {1}.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cognialign/error.hpp"

namespace cognialign {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(TensorNode&)> backward;

  bool is_leaf() const { return parents.empty(); }
  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor filled(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t i) const { return node().shape.at(i); }
  std::size_t numel() const { return node().data.size(); }
  // Row/column view: a 1-D tensor is a single row.
  std::size_t rows() const { return rank() == 1 ? 1 : dim(0); }
  std::size_t cols() const { return rank() == 1 ? dim(0) : dim(1); }

  std::span<const T> data() const { return node().data; }
  // Direct writes are only meaningful on leaves (optimizer updates, test
  // perturbations); they do not invalidate graphs already built.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::size_t i) const { return node().data.at(i); }
  T at(std::size_t r, std::size_t c) const { return node().data.at(r * cols() + c); }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool is_leaf() const { return node().is_leaf(); }

  // Zero-filled when no gradient has been accumulated yet.
  std::vector<T> grad() const;
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  // Fresh leaf with the same values and no history.
  BasicTensor detach(bool requires_grad = false) const {
    return BasicTensor(shape(), node().data, requires_grad);
  }

  template <class U>
  BasicTensor<U> cast(bool requires_grad = false) const {
    std::vector<U> out(node().data.begin(), node().data.end());
    return BasicTensor<U>(shape(), std::move(out), requires_grad);
  }

  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  const Node& node() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return *node_;
  }
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Builds an op result. When any parent requires grad the result records the
// parents and `backward`; otherwise the graph is not retained.
template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                           std::vector<BasicTensor<T>> parents,
                           std::function<void(TensorNode<T>&)> backward);

// Topologically ordered record of the ops reachable from a root; inputs
// always precede the ops that consume them.
template <class T>
class ComputationTape {
 public:
  explicit ComputationTape(const BasicTensor<T>& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<TensorNode<T>*>& order() const { return order_; }
  // Runs backward rules in exact reverse order, seeding the root with 1.
  void backward();

 private:
  std::shared_ptr<TensorNode<T>> root_;
  std::vector<TensorNode<T>*> order_;
};

// Populates gradients of every requires_grad leaf reachable from `loss`.
template <class T>
void backward(const BasicTensor<T>& loss);

// Counter-based dropout masks: every call draws from hash(seed, call index),
// so a training run replays bit-identically from its seed.
struct DropoutContext {
  std::uint64_t seed = 0;
  std::uint64_t calls = 0;
};

// --- ops -------------------------------------------------------------------
// Elementwise binary ops accept identical shapes, or a 1-D right operand
// whose length equals the left operand's last dimension (broadcast per row).

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
// a · bᵀ
template <class T>
BasicTensor<T> matmul_bt(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);
// Exact (erf) form.
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x);
template <class T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps = T(1e-5));
// axis 0 averages rows, axis 1 averages columns. keepdim keeps a 2-D result.
template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::size_t axis, bool keepdim = false);
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x);
// 2-D concatenation; 1-D inputs are treated as single rows.
template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <class T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t begin,
                     std::size_t end);
// 1-D inputs are treated as single rows.
template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x);
template <class T>
BasicTensor<T> gather_rows(const BasicTensor<T>& table, std::span<const std::size_t> indices);
// Inverted dropout; identity when !train or rate == 0.
template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, T rate, bool train, DropoutContext& ctx);
template <class T>
BasicTensor<T> cross_entropy_with_logits(const BasicTensor<T>& logits, std::size_t target);
template <class T>
BasicTensor<T> mse(const BasicTensor<T>& prediction, const BasicTensor<T>& target);

}  // namespace cognialign
