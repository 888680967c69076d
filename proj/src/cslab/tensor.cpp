#include "cslab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace cslab {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? ", " : "") << shape[i];
  os << "]";
  return os.str();
}

namespace {

using detail::TensorImpl;

void check_shape_positive(const Shape& shape, const char* where) {
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError(std::string(where) + ": zero extent in shape " + shape_str(shape));
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + ": non-finite output value");
}

std::shared_ptr<TensorImpl> make_leaf(Shape shape, std::vector<double> data,
                                      bool requires_grad) {
  check_shape_positive(shape, "tensor");
  if (shape_numel(shape) != data.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                     std::to_string(data.size()) + " values");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->is_leaf = true;
  return impl;
}

}  // namespace

Tensor make_op_result(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents, const char* op_name,
                      std::function<void(const std::vector<double>&,
                                         const std::vector<std::vector<double>*>&)>
                          backward_fn) {
  check_finite(data, op_name);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->is_leaf = false;
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  if (needs_grad) {
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (const auto& p : parents) impl->parents.push_back(p.impl_ptr());
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(impl));
}

// ---- Tensor -----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  if (!std::isfinite(value)) throw NumericError("Tensor::full: non-finite fill value");
  std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  check_finite(data, "Tensor::from_data");
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::he_normal(Shape shape, std::size_t fan_in, Rng& rng, bool requires_grad) {
  if (fan_in == 0) throw InvalidArgument("he_normal: fan_in must be positive");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (auto& v : data) v = rng.normal(0.0, stddev);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (auto& v : data) v = rng.uniform(lo, hi);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw InvalidArgument("Tensor: undefined handle");
  return impl_->shape;
}

std::size_t Tensor::size() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw InvalidArgument("Tensor: undefined handle");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw InvalidArgument("Tensor: undefined handle");
  if (!impl_->is_leaf)
    throw InvalidArgument("Tensor: op results are immutable; mutate leaves only");
  return impl_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(size()) + " values");
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
bool Tensor::is_leaf() const { return impl_ && impl_->is_leaf; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) throw InvalidArgument("Tensor: undefined handle");
  if (impl_->grad.empty())
    throw InvalidArgument("Tensor::grad: no gradient populated; run backward first");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detached_copy(bool requires_grad) const {
  if (!impl_) throw InvalidArgument("Tensor: undefined handle");
  return from_data(impl_->shape, impl_->data, requires_grad);
}

// ---- backward engine ---------------------------------------------------

void backward(const Tensor& loss, bool free_graph) {
  if (!loss.defined()) throw InvalidArgument("backward: undefined tensor");
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  TensorImpl* root = loss.impl();
  if (root->freed) throw InvalidArgument("backward: graph already freed");
  if (!root->requires_grad) return;  // nothing reachable tracks gradients

  // Topological order by iterative post-order DFS over parents.
  std::vector<TensorImpl*> topo;
  std::unordered_map<TensorImpl*, int> state;  // 0 unseen, 1 open, 2 done
  std::vector<TensorImpl*> stack{root};
  while (!stack.empty()) {
    TensorImpl* node = stack.back();
    auto it = state.find(node);
    const int st = it == state.end() ? 0 : it->second;
    if (st == 0) {
      if (node->freed) throw InvalidArgument("backward: graph already freed");
      state[node] = 1;
      for (const auto& p : node->parents)
        if (p->requires_grad) {
          auto pit = state.find(p.get());
          if (pit == state.end() || pit->second != 2) stack.push_back(p.get());
        }
    } else {
      stack.pop_back();
      if (st == 1) {
        state[node] = 2;
        topo.push_back(node);
      }
    }
  }

  // Transient gradient buffer per node; persisted only on requiring leaves.
  std::unordered_map<TensorImpl*, std::vector<double>> grads;
  grads.reserve(topo.size());
  for (TensorImpl* node : topo) grads.emplace(node, std::vector<double>(node->data.size(), 0.0));
  grads[root][0] = 1.0;

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* node = *it;
    const std::vector<double>& gout = grads[node];
    if (node->backward_fn) {
      std::vector<std::vector<double>*> gparents(node->parents.size(), nullptr);
      for (std::size_t i = 0; i < node->parents.size(); ++i) {
        TensorImpl* p = node->parents[i].get();
        if (p->requires_grad) gparents[i] = &grads[p];
      }
      node->backward_fn(gout, gparents);
    }
    if (node->is_leaf && node->requires_grad) {
      if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
      for (std::size_t i = 0; i < gout.size(); ++i) node->grad[i] += gout[i];
    }
    if (free_graph && !node->is_leaf) {
      node->backward_fn = nullptr;
      node->parents.clear();
      node->freed = true;
    }
  }
}

// ---- broadcast helpers --------------------------------------------------

namespace {

struct BroadcastPlan {
  Shape out_shape;
  std::vector<std::size_t> out_strides;
  std::vector<std::size_t> a_strides;  // 0 on broadcast axes
  std::vector<std::size_t> b_strides;
  std::size_t numel;
};

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape ae(rank, 1), be(rank, 1), out(rank, 1);
  std::copy(a.begin(), a.end(), ae.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), be.begin() + (rank - b.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (ae[i] == be[i]) out[i] = ae[i];
    else if (ae[i] == 1) out[i] = be[i];
    else if (be[i] == 1) out[i] = ae[i];
    else
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
  }
  BroadcastPlan plan;
  plan.out_shape = out;
  plan.out_strides = row_major_strides(out);
  auto as = row_major_strides(ae);
  auto bs = row_major_strides(be);
  plan.a_strides.resize(rank);
  plan.b_strides.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    plan.a_strides[i] = ae[i] == 1 && out[i] != 1 ? 0 : as[i];
    plan.b_strides[i] = be[i] == 1 && out[i] != 1 ? 0 : bs[i];
  }
  plan.numel = shape_numel(out);
  return plan;
}

// Calls fn(out_flat, a_flat, b_flat) for every output element, in row-major
// order (deterministic).
template <typename Fn>
void broadcast_for_each(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t rank = plan.out_shape.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ai = 0, bi = 0;
  for (std::size_t flat = 0; flat < plan.numel; ++flat) {
    fn(flat, ai, bi);
    for (std::size_t d = rank; d-- > 0;) {
      idx[d]++;
      ai += plan.a_strides[d];
      bi += plan.b_strides[d];
      if (idx[d] < plan.out_shape[d]) break;
      ai -= plan.a_strides[d] * plan.out_shape[d];
      bi -= plan.b_strides[d] * plan.out_shape[d];
      idx[d] = 0;
    }
  }
}

// Shared implementation for broadcasting binaries. ValFn computes the output
// value; DaFn/DbFn give local derivatives w.r.t. a and b.
template <typename ValFn, typename DaFn, typename DbFn>
Tensor binary_broadcast_op(const Tensor& a, const Tensor& b, const char* name,
                           ValFn val, DaFn da, DbFn db) {
  BroadcastPlan plan = broadcast_plan(a.shape(), b.shape(), name);
  std::vector<double> out(plan.numel);
  const auto av = a.data();
  const auto bv = b.data();
  broadcast_for_each(plan, [&](std::size_t o, std::size_t ai, std::size_t bi) {
    out[o] = val(av[ai], bv[bi]);
  });
  auto a_impl = a.impl_ptr();
  auto b_impl = b.impl_ptr();
  return make_op_result(
      plan.out_shape, std::move(out), {a, b}, name,
      [plan, a_impl, b_impl, da, db](const std::vector<double>& gout,
                                     const std::vector<std::vector<double>*>& gp) {
        broadcast_for_each(plan, [&](std::size_t o, std::size_t ai, std::size_t bi) {
          const double g = gout[o];
          const double x = a_impl->data[ai];
          const double y = b_impl->data[bi];
          if (gp[0]) (*gp[0])[ai] += g * da(x, y);
          if (gp[1]) (*gp[1])[bi] += g * db(x, y);
        });
      });
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_broadcast_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_broadcast_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scalar_mul(const Tensor& x, double s) {
  if (!std::isfinite(s)) throw NumericError("scalar_mul: non-finite scalar");
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
  return make_op_result(
      x.shape(), std::move(out), {x}, "scalar_mul",
      [s](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (gp[0])
          for (std::size_t i = 0; i < gout.size(); ++i) (*gp[0])[i] += gout[i] * s;
      });
}

Tensor scalar_add(const Tensor& x, double s) {
  if (!std::isfinite(s)) throw NumericError("scalar_add: non-finite scalar");
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + s;
  return make_op_result(
      x.shape(), std::move(out), {x}, "scalar_add",
      [](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (gp[0])
          for (std::size_t i = 0; i < gout.size(); ++i) (*gp[0])[i] += gout[i];
      });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  auto xi = x.impl_ptr();
  return make_op_result(
      x.shape(), std::move(out), {x}, "relu",
      [xi](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (!gp[0]) return;
        // subgradient at 0 is 0
        for (std::size_t i = 0; i < gout.size(); ++i)
          if (xi->data[i] > 0.0) (*gp[0])[i] += gout[i];
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape_positive(shape, "reshape");
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op_result(
      std::move(shape), std::move(out), {x}, "reshape",
      [](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (gp[0])
          for (std::size_t i = 0; i < gout.size(); ++i) (*gp[0])[i] += gout[i];
      });
}

// ---- matmul ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return make_op_result(
      {m, n}, std::move(out), {a, b}, "matmul",
      [m, k, n, ai, bi](const std::vector<double>& gout,
                        const std::vector<std::vector<double>*>& gp) {
        if (gp[0]) {  // dA = G * B^T
          std::vector<double>& ga = *gp[0];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* grow = &gout[i * n];
              const double* brow = &bi->data[p * n];
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
        }
        if (gp[1]) {  // dB = A^T * G
          std::vector<double>& gb = *gp[1];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = ai->data[i * k + p];
              const double* grow = &gout[i * n];
              double* gbrow = &gb[p * n];
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
            }
        }
      });
}

// ---- conv2d ----------------------------------------------------------------

namespace {

struct ConvDims {
  std::size_t n, ci, h, w, co, kh, kw, ho, wo, stride, pad;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, std::size_t stride, std::size_t pad) {
  if (xs.size() != 4 || ws.size() != 4)
    throw ShapeError("conv2d: expected rank-4 input and kernel, got " + shape_str(xs) +
                     " and " + shape_str(ws));
  if (stride == 0) throw InvalidArgument("conv2d: stride must be positive");
  ConvDims d;
  d.n = xs[0]; d.ci = xs[1]; d.h = xs[2]; d.w = xs[3];
  d.co = ws[0]; d.kh = ws[2]; d.kw = ws[3];
  d.stride = stride; d.pad = pad;
  if (ws[1] != d.ci)
    throw ShapeError("conv2d: kernel expects " + std::to_string(ws[1]) +
                     " input channels, input has " + std::to_string(d.ci));
  if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw)
    throw ShapeError("conv2d: kernel larger than padded input");
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

// Valid output-column range for kernel column j: 0 <= ow*stride + j - pad < w.
inline void conv_col_range(std::size_t wo, std::size_t w, std::size_t stride,
                           std::size_t j, std::size_t pad, std::size_t& lo,
                           std::size_t& hi) {
  // smallest ow with ow*stride + j >= pad
  lo = j >= pad ? 0 : (pad - j + stride - 1) / stride;
  // largest ow with ow*stride + j - pad <= w-1
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(w - 1 + pad) - static_cast<std::ptrdiff_t>(j);
  hi = top < 0 ? 0 : std::min(wo, static_cast<std::size_t>(top) / stride + 1);
  if (lo > hi) lo = hi;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), stride, padding);
  std::vector<double> out(d.n * d.co * d.ho * d.wo, 0.0);
  const auto xv = x.data();
  const auto wv = w.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t co = 0; co < d.co; ++co) {
      double* oplane = &out[(n * d.co + co) * d.ho * d.wo];
      for (std::size_t ci = 0; ci < d.ci; ++ci) {
        const double* xplane = &xv[(n * d.ci + ci) * d.h * d.w];
        const double* wplane = &wv[(co * d.ci + ci) * d.kh * d.kw];
        for (std::size_t i = 0; i < d.kh; ++i)
          for (std::size_t j = 0; j < d.kw; ++j) {
            const double wval = wplane[i * d.kw + j];
            std::size_t lo, hi;
            conv_col_range(d.wo, d.w, d.stride, j, d.pad, lo, hi);
            for (std::size_t oh = 0; oh < d.ho; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * d.stride + i) -
                                        static_cast<std::ptrdiff_t>(d.pad);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
              const double* xrow = &xplane[static_cast<std::size_t>(ih) * d.w + j - d.pad];
              double* orow = &oplane[oh * d.wo];
              for (std::size_t ow = lo; ow < hi; ++ow)
                orow[ow] += wval * xrow[ow * d.stride];
            }
          }
      }
    }
  auto xi = x.impl_ptr();
  auto wi = w.impl_ptr();
  return make_op_result(
      {d.n, d.co, d.ho, d.wo}, std::move(out), {x, w}, "conv2d",
      [d, xi, wi](const std::vector<double>& gout,
                  const std::vector<std::vector<double>*>& gp) {
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t co = 0; co < d.co; ++co) {
            const double* gplane = &gout[(n * d.co + co) * d.ho * d.wo];
            for (std::size_t ci = 0; ci < d.ci; ++ci) {
              const double* xplane = &xi->data[(n * d.ci + ci) * d.h * d.w];
              const double* wplane = &wi->data[(co * d.ci + ci) * d.kh * d.kw];
              double* gxplane = gp[0] ? &(*gp[0])[(n * d.ci + ci) * d.h * d.w] : nullptr;
              double* gwplane = gp[1] ? &(*gp[1])[(co * d.ci + ci) * d.kh * d.kw] : nullptr;
              for (std::size_t i = 0; i < d.kh; ++i)
                for (std::size_t j = 0; j < d.kw; ++j) {
                  const double wval = wplane[i * d.kw + j];
                  double gw_acc = 0.0;
                  std::size_t lo, hi;
                  conv_col_range(d.wo, d.w, d.stride, j, d.pad, lo, hi);
                  for (std::size_t oh = 0; oh < d.ho; ++oh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * d.stride + i) -
                                              static_cast<std::ptrdiff_t>(d.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    const std::size_t xoff = static_cast<std::size_t>(ih) * d.w + j - d.pad;
                    const double* grow = &gplane[oh * d.wo];
                    if (gxplane) {
                      double* gxrow = &gxplane[xoff];
                      for (std::size_t ow = lo; ow < hi; ++ow)
                        gxrow[ow * d.stride] += wval * grow[ow];
                    }
                    if (gwplane) {
                      const double* xrow = &xplane[xoff];
                      for (std::size_t ow = lo; ow < hi; ++ow)
                        gw_acc += xrow[ow * d.stride] * grow[ow];
                    }
                  }
                  if (gwplane) gwplane[i * d.kw + j] += gw_acc;
                }
            }
          }
      });
}

// ---- pooling ----------------------------------------------------------------

namespace {

struct PoolDims {
  std::size_t n, c, h, w, k, stride, ho, wo;
};

PoolDims pool_dims(const Shape& xs, std::size_t k, std::size_t stride, const char* op) {
  if (xs.size() != 4) throw ShapeError(std::string(op) + ": expected rank-4 input, got " + shape_str(xs));
  if (k == 0) throw InvalidArgument(std::string(op) + ": window must be positive");
  PoolDims d;
  d.n = xs[0]; d.c = xs[1]; d.h = xs[2]; d.w = xs[3];
  d.k = k;
  d.stride = stride == 0 ? k : stride;
  if (d.h < k || d.w < k) throw ShapeError(std::string(op) + ": window larger than input");
  d.ho = (d.h - k) / d.stride + 1;
  d.wo = (d.w - k) / d.stride + 1;
  return d;
}

}  // namespace

Tensor avgpool2d(const Tensor& x, std::size_t k, std::size_t stride) {
  const PoolDims d = pool_dims(x.shape(), k, stride, "avgpool2d");
  const double inv = 1.0 / static_cast<double>(d.k * d.k);
  std::vector<double> out(d.n * d.c * d.ho * d.wo);
  const auto xv = x.data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    const double* plane = &xv[nc * d.h * d.w];
    for (std::size_t oh = 0; oh < d.ho; ++oh)
      for (std::size_t ow = 0; ow < d.wo; ++ow) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d.k; ++i)
          for (std::size_t j = 0; j < d.k; ++j)
            acc += plane[(oh * d.stride + i) * d.w + ow * d.stride + j];
        out[o++] = acc * inv;
      }
  }
  return make_op_result(
      {d.n, d.c, d.ho, d.wo}, std::move(out), {x}, "avgpool2d",
      [d, inv](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (!gp[0]) return;
        std::vector<double>& gx = *gp[0];
        std::size_t o = 0;
        for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
          double* gplane = &gx[nc * d.h * d.w];
          for (std::size_t oh = 0; oh < d.ho; ++oh)
            for (std::size_t ow = 0; ow < d.wo; ++ow) {
              const double g = gout[o++] * inv;
              for (std::size_t i = 0; i < d.k; ++i)
                for (std::size_t j = 0; j < d.k; ++j)
                  gplane[(oh * d.stride + i) * d.w + ow * d.stride + j] += g;
            }
        }
      });
}

Tensor maxpool2d(const Tensor& x, std::size_t k, std::size_t stride) {
  const PoolDims d = pool_dims(x.shape(), k, stride, "maxpool2d");
  std::vector<double> out(d.n * d.c * d.ho * d.wo);
  std::vector<std::size_t> argmax(out.size());
  const auto xv = x.data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    const std::size_t base = nc * d.h * d.w;
    for (std::size_t oh = 0; oh < d.ho; ++oh)
      for (std::size_t ow = 0; ow < d.wo; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t i = 0; i < d.k; ++i)
          for (std::size_t j = 0; j < d.k; ++j) {
            const std::size_t idx = base + (oh * d.stride + i) * d.w + ow * d.stride + j;
            if (xv[idx] > best) {  // strict: ties keep the lowest flat index
              best = xv[idx];
              best_idx = idx;
            }
          }
        out[o] = best;
        argmax[o] = best_idx;
        ++o;
      }
  }
  return make_op_result(
      {d.n, d.c, d.ho, d.wo}, std::move(out), {x}, "maxpool2d",
      [argmax](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (!gp[0]) return;
        for (std::size_t o = 0; o < gout.size(); ++o) (*gp[0])[argmax[o]] += gout[o];
      });
}

Tensor spatial_mean(const Tensor& x) {
  if (x.rank() != 4)
    throw ShapeError("spatial_mean: expected rank-4 input, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const std::size_t hw = x.shape()[2] * x.shape()[3];
  const double inv = 1.0 / static_cast<double>(hw);
  std::vector<double> out(n * c);
  const auto xv = x.data();
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    double acc = 0.0;
    const double* plane = &xv[nc * hw];
    for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
    out[nc] = acc * inv;
  }
  return make_op_result(
      {n, c}, std::move(out), {x}, "spatial_mean",
      [hw, inv](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (!gp[0]) return;
        std::vector<double>& gx = *gp[0];
        for (std::size_t nc = 0; nc < gout.size(); ++nc) {
          const double g = gout[nc] * inv;
          for (std::size_t i = 0; i < hw; ++i) gx[nc * hw + i] += g;
        }
      });
}

// ---- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_op_result(
      {1}, {acc}, {x}, "sum",
      [](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (!gp[0]) return;
        for (double& g : *gp[0]) g += gout[0];
      });
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_op_result(
      {1}, {acc * inv}, {x}, "mean",
      [inv](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (!gp[0]) return;
        const double g = gout[0] * inv;
        for (double& gi : *gp[0]) gi += g;
      });
}

Tensor sum_axis0(const Tensor& x) {
  if (x.rank() != 2)
    throw ShapeError("sum_axis0: expected rank-2 input, got " + shape_str(x.shape()));
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(c, 0.0);
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[i * c + j];
  return make_op_result(
      {c}, std::move(out), {x}, "sum_axis0",
      [r, c](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (!gp[0]) return;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) (*gp[0])[i * c + j] += gout[j];
      });
}

Tensor max_axis0(const Tensor& x) {
  if (x.rank() != 2)
    throw ShapeError("max_axis0: expected rank-2 input, got " + shape_str(x.shape()));
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(c);
  std::vector<std::size_t> argrow(c, 0);
  const auto xv = x.data();
  for (std::size_t j = 0; j < c; ++j) {
    double best = xv[j];
    std::size_t bi = 0;
    for (std::size_t i = 1; i < r; ++i)
      if (xv[i * c + j] > best) {  // ties keep the lowest row index
        best = xv[i * c + j];
        bi = i;
      }
    out[j] = best;
    argrow[j] = bi;
  }
  return make_op_result(
      {c}, std::move(out), {x}, "max_axis0",
      [c, argrow](const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        if (!gp[0]) return;
        for (std::size_t j = 0; j < c; ++j) (*gp[0])[argrow[j] * c + j] += gout[j];
      });
}

// ---- batchnorm -------------------------------------------------------------------

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormBuffers& buffers, bool training, double momentum, double eps) {
  const Shape& xs = x.shape();
  std::size_t channels, inner, groups;
  if (xs.size() == 4) {
    channels = xs[1];
    inner = xs[2] * xs[3];
    groups = xs[0];
  } else if (xs.size() == 2) {
    channels = xs[1];
    inner = 1;
    groups = xs[0];
  } else {
    throw ShapeError("batchnorm: expected rank-2 or rank-4 input, got " + shape_str(xs));
  }
  if (gamma.size() != channels || beta.size() != channels)
    throw ShapeError("batchnorm: gamma/beta must have one value per channel");
  if (buffers.running_mean.size() != channels || buffers.running_var.size() != channels)
    throw ShapeError("batchnorm: running buffers must have one value per channel");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("batchnorm: momentum in [0,1)");

  const std::size_t m = groups * inner;  // samples per channel
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();

  auto channel_offset = [&](std::size_t g, std::size_t c) {
    return (g * channels + c) * inner;
  };

  std::vector<double> mu(channels), var(channels);
  if (training) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t g = 0; g < groups; ++g) {
        const double* p = &xv[channel_offset(g, c)];
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      mu[c] = s / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t g = 0; g < groups; ++g) {
        const double* p = &xv[channel_offset(g, c)];
        for (std::size_t i = 0; i < inner; ++i) {
          const double dlt = p[i] - mu[c];
          sq += dlt * dlt;
        }
      }
      var[c] = sq / static_cast<double>(m);  // population variance
      buffers.running_mean[c] = momentum * buffers.running_mean[c] + (1.0 - momentum) * mu[c];
      buffers.running_var[c] = momentum * buffers.running_var[c] + (1.0 - momentum) * var[c];
    }
  } else {
    mu = buffers.running_mean;
    var = buffers.running_var;
  }

  std::vector<double> invstd(channels);
  for (std::size_t c = 0; c < channels; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + eps);

  std::vector<double> out(x.size());
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = channel_offset(g, c);
      for (std::size_t i = 0; i < inner; ++i)
        out[off + i] = gv[c] * (xv[off + i] - mu[c]) * invstd[c] + bv[c];
    }

  auto xi = x.impl_ptr();
  auto gi = gamma.impl_ptr();
  return make_op_result(
      xs, std::move(out), {x, gamma, beta}, "batchnorm",
      [xi, gi, mu, invstd, training, channels, inner, groups, m](
          const std::vector<double>& gout, const std::vector<std::vector<double>*>& gp) {
        const auto& xd = xi->data;
        const auto& gd = gi->data;
        auto offset = [channels, inner](std::size_t g, std::size_t c) {
          return (g * channels + c) * inner;
        };
        for (std::size_t c = 0; c < channels; ++c) {
          // Reductions over the channel's slice, shared by all three grads.
          double sum_g = 0.0, sum_gxhat = 0.0;
          for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t off = offset(g, c);
            for (std::size_t i = 0; i < inner; ++i) {
              const double go = gout[off + i];
              sum_g += go;
              sum_gxhat += go * (xd[off + i] - mu[c]) * invstd[c];
            }
          }
          if (gp[1]) (*gp[1])[c] += sum_gxhat;
          if (gp[2]) (*gp[2])[c] += sum_g;
          if (!gp[0]) continue;
          if (training) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t g = 0; g < groups; ++g) {
              const std::size_t off = offset(g, c);
              for (std::size_t i = 0; i < inner; ++i) {
                const double xhat = (xd[off + i] - mu[c]) * invstd[c];
                (*gp[0])[off + i] += gd[c] * invstd[c] *
                                     (gout[off + i] - inv_m * sum_g - inv_m * xhat * sum_gxhat);
              }
            }
          } else {
            const double scale = gd[c] * invstd[c];
            for (std::size_t g = 0; g < groups; ++g) {
              const std::size_t off = offset(g, c);
              for (std::size_t i = 0; i < inner; ++i) (*gp[0])[off + i] += scale * gout[off + i];
            }
          }
        }
      });
}

// ---- softmax cross-entropy ----------------------------------------------------------

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw ShapeError("softmax_cross_entropy: expected [N, C] logits, got " + shape_str(logits.shape()));
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  const auto zv = logits.data();
  std::vector<double> softmax(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    const double* row = &zv[i * c];
    double zmax = row[0];
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - zmax);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < c; ++j) softmax[i * c + j] = std::exp(row[j] - zmax) / denom;
    loss += log_denom - (row[y] - zmax);
  }
  loss /= static_cast<double>(n);
  return make_op_result(
      {1}, {loss}, {logits}, "softmax_cross_entropy",
      [n, c, labels, softmax](const std::vector<double>& gout,
                              const std::vector<std::vector<double>*>& gp) {
        if (!gp[0]) return;
        const double g = gout[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            double v = softmax[i * c + j];
            if (j == static_cast<std::size_t>(labels[i])) v -= 1.0;
            (*gp[0])[i * c + j] += g * v;
          }
      });
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2)
    throw ShapeError("argmax_rows: expected rank-2 input, got " + shape_str(logits.shape()));
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  const auto zv = logits.data();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (zv[i * c + j] > zv[i * c + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace cslab
