#include "cognialign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "cognialign/kernels.hpp"
#include "cognialign/rng.hpp"

namespace cognialign {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 2)
    throw ContractError("tensors must be 1-D or 2-D, got " + shape_string(shape));
  for (auto d : shape)
    if (d == 0) throw ContractError("tensor dimensions must be positive, got " + shape_string(shape));
}

}  // namespace

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  check_shape(shape);
  if (data.size() != shape_numel(shape))
    throw ContractError("data length " + std::to_string(data.size()) + " does not match shape " +
                        shape_string(shape));
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), T(0), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::filled(Shape shape, T value, bool requires_grad) {
  check_shape(shape);
  const auto n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <class T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node().data[0];
}

template <class T>
std::vector<T> BasicTensor<T>::grad() const {
  const auto& n = node();
  if (n.grad.size() == n.data.size()) return n.grad;
  return std::vector<T>(n.data.size(), T(0));
}

template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                           std::vector<BasicTensor<T>> parents,
                           std::function<void(TensorNode<T>&)> backward) {
  BasicTensor<T> out(std::move(shape), std::move(data));
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const BasicTensor<T>& p) { return p.requires_grad(); });
  auto& node = *out.node_ptr();
  node.op = op;
  if (needs) {
    node.requires_grad = true;
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node_ptr());
    node.backward = std::move(backward);
  }
  return out;
}

template <class T>
ComputationTape<T>::ComputationTape(const BasicTensor<T>& root) : root_(root.node_ptr()) {
  if (!root_) throw ContractError("tape root is undefined");
  // Iterative post-order DFS over nodes that require grad.
  std::unordered_set<const TensorNode<T>*> seen;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  if (root_->requires_grad) {
    stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

template <class T>
void ComputationTape<T>::backward() {
  if (order_.empty()) return;
  for (auto* node : order_)
    if (!node->is_leaf()) node->grad.assign(node->data.size(), T(0));
  auto& seed = root_->ensure_grad();
  std::fill(seed.begin(), seed.end(), T(1));
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (!node->is_leaf() && node->backward) node->backward(*node);
  }
}

template <class T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  ComputationTape<T> tape(loss);
  tape.backward();
}

namespace {

template <class T>
std::vector<T>* grad_of(TensorNode<T>& out, std::size_t parent) {
  auto& p = *out.parents[parent];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

enum class Broadcast { kSame, kRow };

template <class T>
Broadcast check_binary(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.rank() == 1 && b.dim(0) == a.shape().back()) return Broadcast::kRow;
  throw ContractError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                      " and " + shape_string(b.shape()));
}

// Sums a per-element gradient into b's gradient, folding rows when b was
// broadcast.
template <class T>
void accumulate_rhs(std::vector<T>& gb, const std::vector<T>& contrib, Broadcast mode) {
  if (mode == Broadcast::kSame) {
    for (std::size_t i = 0; i < contrib.size(); ++i) gb[i] += contrib[i];
    return;
  }
  const std::size_t n = gb.size();
  for (std::size_t i = 0; i < contrib.size(); ++i) gb[i % n] += contrib[i];
}

template <class T>
BasicTensor<T> elementwise(const BasicTensor<T>& a, const BasicTensor<T>& b, int kind) {
  static constexpr const char* kNames[] = {"add", "sub", "mul"};
  const Broadcast mode = check_binary(a, b, kNames[kind]);
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = bd.size();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const T bv = bd[mode == Broadcast::kSame ? i : i % n];
    out[i] = kind == 0 ? ad[i] + bv : kind == 1 ? ad[i] - bv : ad[i] * bv;
  }
  return make_result<T>(a.shape(), std::move(out), kNames[kind], {a, b},
                        [kind, mode](TensorNode<T>& o) {
                          const auto& g = o.grad;
                          const auto& av = o.parents[0]->data;
                          const auto& bv = o.parents[1]->data;
                          const std::size_t nb = bv.size();
                          if (auto* ga = grad_of(o, 0)) {
                            for (std::size_t i = 0; i < g.size(); ++i)
                              (*ga)[i] += kind == 2 ? g[i] * bv[mode == Broadcast::kSame ? i : i % nb]
                                                    : g[i];
                          }
                          if (auto* gb = grad_of(o, 1)) {
                            std::vector<T> contrib(g.size());
                            for (std::size_t i = 0; i < g.size(); ++i)
                              contrib[i] = kind == 0 ? g[i] : kind == 1 ? -g[i] : g[i] * av[i];
                            accumulate_rhs(*gb, contrib, mode);
                          }
                        });
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

Shape as_matrix(const Shape& s) { return s.size() == 1 ? Shape{1, s[0]} : s; }

}  // namespace

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (b.rank() != 2 || a.cols() != b.dim(0))
    throw ContractError("matmul: dimension mismatch " + shape_string(a.shape()) + " x " +
                        shape_string(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::matmul<T>(a.data(), b.data(), out, m, k, n);
  Shape shape = a.rank() == 1 ? Shape{n} : Shape{m, n};
  return make_result<T>(std::move(shape), std::move(out), "matmul", {a, b},
                        [m, k, n](TensorNode<T>& o) {
                          if (auto* ga = grad_of(o, 0)) {
                            std::vector<T> tmp(m * k);
                            kernels::matmul_bt<T>(o.grad, o.parents[1]->data, tmp, m, n, k);
                            for (std::size_t i = 0; i < tmp.size(); ++i) (*ga)[i] += tmp[i];
                          }
                          if (auto* gb = grad_of(o, 1)) {
                            std::vector<T> tmp(k * n);
                            kernels::matmul_at<T>(o.parents[0]->data, o.grad, tmp, k, m, n);
                            for (std::size_t i = 0; i < tmp.size(); ++i) (*gb)[i] += tmp[i];
                          }
                        });
}

template <class T>
BasicTensor<T> matmul_bt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.cols() != b.cols())
    throw ContractError("matmul_bt: dimension mismatch " + shape_string(a.shape()) + " x " +
                        shape_string(b.shape()) + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<T> out(m * n);
  kernels::matmul_bt<T>(a.data(), b.data(), out, m, k, n);
  return make_result<T>({m, n}, std::move(out), "matmul_bt", {a, b}, [m, k, n](TensorNode<T>& o) {
    // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
    if (auto* ga = grad_of(o, 0)) {
      std::vector<T> tmp(m * k);
      kernels::matmul<T>(o.grad, o.parents[1]->data, tmp, m, n, k);
      for (std::size_t i = 0; i < tmp.size(); ++i) (*ga)[i] += tmp[i];
    }
    if (auto* gb = grad_of(o, 1)) {
      std::vector<T> tmp(n * k);
      kernels::matmul_at<T>(o.grad, o.parents[0]->data, tmp, n, m, k);
      for (std::size_t i = 0; i < tmp.size(); ++i) (*gb)[i] += tmp[i];
    }
  });
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(a, b, 0);
}
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(a, b, 1);
}
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(a, b, 2);
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), "scale", {a}, [factor](TensorNode<T>& o) {
    auto& ga = *grad_of(o, 0);
    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * factor;
  });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(xd[i]);
  return make_result<T>(x.shape(), std::move(out), "sigmoid", {x}, [](TensorNode<T>& o) {
    auto& gx = *grad_of(o, 0);
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T y = o.data[i];
      gx[i] += o.grad[i] * y * (T(1) - y);
    }
  });
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(0.5) * xd[i] * (T(1) + std::erf(xd[i] * kInvSqrt2));
  return make_result<T>(x.shape(), std::move(out), "gelu", {x}, [](TensorNode<T>& o) {
    constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
    auto& gx = *grad_of(o, 0);
    const auto& xv = o.parents[0]->data;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      gx[i] += o.grad[i] * (cdf + v * pdf);
    }
  });
}

template <class T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(m * n);
  kernels::softmax_rows<T>(x.data(), out, m, n);
  return make_result<T>(x.shape(), std::move(out), "softmax_rows", {x}, [m, n](TensorNode<T>& o) {
    auto& gx = *grad_of(o, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = o.data.data() + i * n;
      const T* g = o.grad.data() + i * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[j] * (g[j] - dot);
    }
  });
}

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n)
    throw ContractError("layer_norm: gain/bias length must equal " + std::to_string(n));
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  std::vector<T> out(m * n), mu(m), rstd(m);
  kernels::layer_norm_rows<T>(x.data(), gain.data(), bias.data(), out, mu, rstd, m, n, eps);
  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [m, n, mu = std::move(mu), rstd = std::move(rstd)](TensorNode<T>& o) {
        const auto& xv = o.parents[0]->data;
        const auto& gv = o.parents[1]->data;
        auto* gx = grad_of(o, 0);
        auto* gg = grad_of(o, 1);
        auto* gb = grad_of(o, 2);
        std::vector<T> xhat(n), dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          const T* g = o.grad.data() + i * n;
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < n; ++j) {
            xhat[j] = (xv[i * n + j] - mu[i]) * rstd[i];
            dxhat[j] = g[j] * gv[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[j];
            if (gg) (*gg)[j] += g[j] * xhat[j];
            if (gb) (*gb)[j] += g[j];
          }
          mean_d /= static_cast<T>(n);
          mean_dx /= static_cast<T>(n);
          if (gx)
            for (std::size_t j = 0; j < n; ++j)
              (*gx)[i * n + j] += rstd[i] * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
      });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::size_t axis, bool keepdim) {
  if (axis > 1) throw ContractError("mean: axis must be 0 or 1");
  const std::size_t m = x.rows(), n = x.cols();
  const auto xd = x.data();
  std::vector<T> out(axis == 0 ? n : m, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += xd[i * n + j];
  const T inv = T(1) / static_cast<T>(axis == 0 ? m : n);
  for (auto& v : out) v *= inv;
  Shape shape = axis == 0 ? (keepdim ? Shape{1, n} : Shape{n}) : (keepdim ? Shape{m, 1} : Shape{m});
  return make_result<T>(std::move(shape), std::move(out), "mean", {x},
                        [axis, m, n, inv](TensorNode<T>& o) {
                          auto& gx = *grad_of(o, 0);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j)
                              gx[i * n + j] += o.grad[axis == 0 ? j : i] * inv;
                        });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>({1}, {total}, "sum", {x}, [](TensorNode<T>& o) {
    auto& gx = *grad_of(o, 0);
    for (auto& v : gx) v += o.grad[0];
  });
}

template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  if (axis > 1) throw ContractError("concat: axis must be 0 or 1");
  std::vector<Shape> shapes;
  for (const auto& p : parts) shapes.push_back(as_matrix(p.shape()));
  std::size_t rows = 0, cols = 0;
  for (const auto& s : shapes) {
    const std::size_t fixed = axis == 0 ? s[1] : s[0];
    const std::size_t ref = axis == 0 ? shapes[0][1] : shapes[0][0];
    if (fixed != ref)
      throw ContractError("concat: incompatible shapes " + shape_string(shapes[0]) + " and " +
                          shape_string(s));
    rows = axis == 0 ? rows + s[0] : s[0];
    cols = axis == 0 ? s[1] : cols + s[1];
  }
  std::vector<T> out(rows * cols);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto d = parts[p].data();
    const std::size_t pr = shapes[p][0], pc = shapes[p][1];
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t r = axis == 0 ? offset + i : i;
        const std::size_t c = axis == 0 ? j : offset + j;
        out[r * cols + c] = d[i * pc + j];
      }
    offsets.push_back(offset);
    offset += axis == 0 ? pr : pc;
  }
  return make_result<T>({rows, cols}, std::move(out), "concat", parts,
                        [axis, cols, shapes = std::move(shapes), offsets = std::move(offsets)](
                            TensorNode<T>& o) {
                          for (std::size_t p = 0; p < shapes.size(); ++p) {
                            auto* gp = grad_of(o, p);
                            if (!gp) continue;
                            const std::size_t pr = shapes[p][0], pc = shapes[p][1];
                            for (std::size_t i = 0; i < pr; ++i)
                              for (std::size_t j = 0; j < pc; ++j) {
                                const std::size_t r = axis == 0 ? offsets[p] + i : i;
                                const std::size_t c = axis == 0 ? j : offsets[p] + j;
                                (*gp)[i * pc + j] += o.grad[r * cols + c];
                              }
                          }
                        });
}

template <class T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t begin,
                     std::size_t end) {
  if (axis > 1) throw ContractError("slice: axis must be 0 or 1");
  const std::size_t m = x.rows(), n = x.cols();
  const std::size_t extent = axis == 0 ? m : n;
  if (begin >= end || end > extent)
    throw ContractError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                        ") out of bounds for " + shape_string(x.shape()));
  const std::size_t rows = axis == 0 ? end - begin : m;
  const std::size_t cols = axis == 0 ? n : end - begin;
  const std::size_t r0 = axis == 0 ? begin : 0, c0 = axis == 0 ? 0 : begin;
  const auto xd = x.data();
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = xd[(r0 + i) * n + c0 + j];
  Shape shape = x.rank() == 1 ? Shape{cols} : Shape{rows, cols};
  return make_result<T>(std::move(shape), std::move(out), "slice", {x},
                        [rows, cols, r0, c0, n](TensorNode<T>& o) {
                          auto& gx = *grad_of(o, 0);
                          for (std::size_t i = 0; i < rows; ++i)
                            for (std::size_t j = 0; j < cols; ++j)
                              gx[(r0 + i) * n + c0 + j] += o.grad[i * cols + j];
                        });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  const auto xd = x.data();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xd[i * n + j];
  return make_result<T>({n, m}, std::move(out), "transpose", {x}, [m, n](TensorNode<T>& o) {
    auto& gx = *grad_of(o, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += o.grad[j * m + i];
  });
}

template <class T>
BasicTensor<T> gather_rows(const BasicTensor<T>& table, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("gather_rows: no indices");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (auto i : idx)
    if (i >= v)
      throw ContractError("gather_rows: index " + std::to_string(i) + " out of range for " +
                          std::to_string(v) + " rows");
  const auto td = table.data();
  std::vector<T> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(td.begin() + idx[r] * d, d, out.begin() + r * d);
  const std::size_t count = idx.size();
  return make_result<T>({count, d}, std::move(out), "gather_rows", {table},
                        [idx = std::move(idx), d](TensorNode<T>& o) {
                          auto& gt = *grad_of(o, 0);
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += o.grad[r * d + j];
                        });
}

template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, T rate, bool train, DropoutContext& ctx) {
  if (!(rate >= T(0) && rate < T(1))) throw ContractError("dropout: rate must be in [0, 1)");
  if (!train || rate == T(0)) return x;
  const std::uint64_t key = hash_combine(ctx.seed, ctx.calls++);
  const T keep_scale = T(1) / (T(1) - rate);
  std::vector<T> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = to_unit(hash_combine(key, i)) < static_cast<double>(rate) ? T(0) : keep_scale;
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  return make_result<T>(x.shape(), std::move(out), "dropout", {x},
                        [mask = std::move(mask)](TensorNode<T>& o) {
                          auto& gx = *grad_of(o, 0);
                          for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += o.grad[i] * mask[i];
                        });
}

template <class T>
BasicTensor<T> cross_entropy_with_logits(const BasicTensor<T>& logits, std::size_t target) {
  const std::size_t c = logits.numel();
  if (target >= c)
    throw ContractError("cross_entropy_with_logits: target " + std::to_string(target) +
                        " out of range for " + std::to_string(c) + " classes");
  const auto z = logits.data();
  std::vector<T> probs(c);
  kernels::serial::softmax_rows<T>(z, probs, 1, c);
  const T peak = *std::max_element(z.begin(), z.end());
  T total = 0;
  for (T v : z) total += std::exp(v - peak);
  const T loss = peak + std::log(total) - z[target];
  return make_result<T>({1}, {loss}, "cross_entropy", {logits},
                        [target, probs = std::move(probs)](TensorNode<T>& o) {
                          auto& gz = *grad_of(o, 0);
                          for (std::size_t i = 0; i < probs.size(); ++i)
                            gz[i] += o.grad[0] * (probs[i] - (i == target ? T(1) : T(0)));
                        });
}

template <class T>
BasicTensor<T> mse(const BasicTensor<T>& prediction, const BasicTensor<T>& target) {
  if (prediction.numel() != target.numel())
    throw ContractError("mse: shape mismatch " + shape_string(prediction.shape()) + " vs " +
                        shape_string(target.shape()));
  const auto p = prediction.data();
  const auto t = target.data();
  const std::size_t n = p.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
  return make_result<T>({1}, {total / static_cast<T>(n)}, "mse", {prediction, target},
                        [n](TensorNode<T>& o) {
                          const auto& pv = o.parents[0]->data;
                          const auto& tv = o.parents[1]->data;
                          const T s = T(2) * o.grad[0] / static_cast<T>(n);
                          if (auto* gp = grad_of(o, 0))
                            for (std::size_t i = 0; i < n; ++i) (*gp)[i] += s * (pv[i] - tv[i]);
                          if (auto* gt = grad_of(o, 1))
                            for (std::size_t i = 0; i < n; ++i) (*gt)[i] -= s * (pv[i] - tv[i]);
                        });
}

#define COGNIALIGN_INSTANTIATE(T)                                                                 \
  template class BasicTensor<T>;                                                                  \
  template class ComputationTape<T>;                                                              \
  template BasicTensor<T> make_result<T>(Shape, std::vector<T>, const char*,                      \
                                         std::vector<BasicTensor<T>>,                             \
                                         std::function<void(TensorNode<T>&)>);                    \
  template void backward<T>(const BasicTensor<T>&);                                               \
  template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> matmul_bt<T>(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> sub<T>(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> sigmoid<T>(const BasicTensor<T>&);                                      \
  template BasicTensor<T> gelu<T>(const BasicTensor<T>&);                                         \
  template BasicTensor<T> softmax_rows<T>(const BasicTensor<T>&);                                 \
  template BasicTensor<T> layer_norm<T>(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                        const BasicTensor<T>&, T);                                \
  template BasicTensor<T> mean<T>(const BasicTensor<T>&, std::size_t, bool);                      \
  template BasicTensor<T> sum<T>(const BasicTensor<T>&);                                          \
  template BasicTensor<T> concat<T>(const std::vector<BasicTensor<T>>&, std::size_t);             \
  template BasicTensor<T> slice<T>(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t); \
  template BasicTensor<T> transpose<T>(const BasicTensor<T>&);                                    \
  template BasicTensor<T> gather_rows<T>(const BasicTensor<T>&, std::span<const std::size_t>);    \
  template BasicTensor<T> dropout<T>(const BasicTensor<T>&, T, bool, DropoutContext&);            \
  template BasicTensor<T> cross_entropy_with_logits<T>(const BasicTensor<T>&, std::size_t);       \
  template BasicTensor<T> mse<T>(const BasicTensor<T>&, const BasicTensor<T>&);

COGNIALIGN_INSTANTIATE(float)
COGNIALIGN_INSTANTIATE(double)
#undef COGNIALIGN_INSTANTIATE

}  // namespace cognialign
