#pragma once

// Dense 64-bit tensors with a per-forward reverse-mode differentiation graph.
//
// Every operation that has at least one input requiring a gradient records its
// parents and a backward closure on the result node. `backward(loss)` walks the
// graph in reverse topological order, accumulates gradients into leaf tensors
// (parameters), and then releases the interior graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <cblas.h>

#include "gman/error.hpp"

namespace gman {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first use
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
  }
};

inline thread_local bool grad_disabled = false;

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled) { detail::grad_disabled = true; }
  ~NoGradGuard() { detail::grad_disabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (element_count(shape) != values.size())
      throw DimensionError("shape " + shape_string(shape) + " holds " + std::to_string(element_count(shape)) +
                           " elements, got " + std::to_string(values.size()));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->data.size(), 0.0);
    return Tensor(std::move(node));
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = element_count(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }
  static Tensor scalar(double value) { return from({}, {value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  /// Extent of `axis`; negative values count from the end.
  std::size_t extent(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape()));
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access; reserved for optimizers, initializers, and checks.
  std::span<double> mutable_data() { return node_->data; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return {node_->grad_buffer(), node_->data.size()}; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }
  double at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch for " + shape_string(shape()));
    std::size_t flat = 0;
    std::size_t i = 0;
    for (std::size_t v : index) {
      if (v >= node_->shape[i]) throw DimensionError("index out of range for " + shape_string(shape()));
      flat = flat * node_->shape[i++] + v;
    }
    return node_->data[flat];
  }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return from(shape(), node_->data); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// A trainable tensor with a stable registry name.
struct Parameter {
  std::string name;
  Tensor tensor;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                          std::vector<std::shared_ptr<Node>> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  const bool needs = !grad_disabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const auto& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->op = op;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

// Broadcast plan for a binary op. The smaller operand either repeats over
// leading dimensions (its shape is a suffix of the larger one) or repeats
// over trailing singleton dimensions (same rank, a prefix of equal extents
// followed by ones).
struct Broadcast {
  enum class Mode { same, leading, trailing };
  Shape out;
  Mode mode_a = Mode::same, mode_b = Mode::same;
  std::size_t count_a = 0, count_b = 0;
  std::size_t inner_a = 1, inner_b = 1;

  std::size_t index_a(std::size_t i) const { return map(i, mode_a, count_a, inner_a); }
  std::size_t index_b(std::size_t i) const { return map(i, mode_b, count_b, inner_b); }

  static std::size_t map(std::size_t i, Mode mode, std::size_t count, std::size_t inner) {
    switch (mode) {
      case Mode::same: return i;
      case Mode::leading: return i % count;
      case Mode::trailing: return i / inner;
    }
    return i;
  }
};

inline bool broadcast_into(const Shape& small, const Shape& big, Broadcast::Mode& mode, std::size_t& inner) {
  if (small == big) {
    mode = Broadcast::Mode::same;
    return true;
  }
  if (small.size() <= big.size() && std::equal(small.rbegin(), small.rend(), big.rbegin())) {
    mode = Broadcast::Mode::leading;
    return true;
  }
  if (small.size() == big.size()) {
    std::size_t r = 0;
    while (r < small.size() && small[r] == big[r]) ++r;
    if (std::all_of(small.begin() + static_cast<std::ptrdiff_t>(r), small.end(), [](std::size_t e) { return e == 1; })) {
      mode = Broadcast::Mode::trailing;
      inner = 1;
      for (std::size_t i = r; i < big.size(); ++i) inner *= big[i];
      return true;
    }
  }
  return false;
}

inline Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast plan;
  plan.count_a = element_count(a);
  plan.count_b = element_count(b);
  if (plan.count_a >= plan.count_b && broadcast_into(b, a, plan.mode_b, plan.inner_b)) {
    plan.out = a;
    return plan;
  }
  if (broadcast_into(a, b, plan.mode_a, plan.inner_a)) {
    plan.out = b;
    return plan;
  }
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

enum class BinaryOp { add, sub, mul };

// Calls f(i, ia, ib) for every output element with the operand offsets.
template <typename F>
void for_each_broadcast(const Broadcast& plan, std::size_t n, F&& f) {
  using Mode = Broadcast::Mode;
  if (plan.mode_a == Mode::same && plan.mode_b == Mode::same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
  } else if (plan.mode_a == Mode::same && plan.mode_b == Mode::leading) {
    const std::size_t c = plan.count_b;
    for (std::size_t o = 0; o < n; o += c)
      for (std::size_t j = 0; j < c; ++j) f(o + j, o + j, j);
  } else if (plan.mode_a == Mode::same && plan.mode_b == Mode::trailing) {
    const std::size_t w = plan.inner_b;
    for (std::size_t o = 0, r = 0; o < n; o += w, ++r)
      for (std::size_t j = 0; j < w; ++j) f(o + j, o + j, r);
  } else {
    for (std::size_t i = 0; i < n; ++i) f(i, plan.index_a(i), plan.index_b(i));
  }
}

template <BinaryOp kind>
Tensor binary_impl(const Tensor& a, const Tensor& b, const char* name) {
  const Broadcast plan = plan_broadcast(a.shape(), b.shape(), name);
  const std::size_t n = element_count(plan.out);
  std::vector<double> out(n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data();
  for_each_broadcast(plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    if constexpr (kind == BinaryOp::add) po[i] = pa[ia] + pb[ib];
    else if constexpr (kind == BinaryOp::sub) po[i] = pa[ia] - pb[ib];
    else po[i] = pa[ia] * pb[ib];
  });
  return make_result(plan.out, std::move(out), name, {a.node_ptr(), b.node_ptr()}, [plan, n](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const double* g = self.grad.data();
    const double* da = na.data.data();
    const double* db = nb.data.data();
    if (na.requires_grad) {
      double* ga = na.grad_buffer();
      for_each_broadcast(plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        if constexpr (kind == BinaryOp::mul) ga[ia] += g[i] * db[ib];
        else ga[ia] += g[i];
      });
    }
    if (nb.requires_grad) {
      double* gb = nb.grad_buffer();
      for_each_broadcast(plan, n, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        if constexpr (kind == BinaryOp::mul) gb[ib] += g[i] * da[ia];
        else if constexpr (kind == BinaryOp::sub) gb[ib] -= g[i];
        else gb[ib] += g[i];
      });
    }
  });
}

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryOp kind, const char* name) {
  switch (kind) {
    case BinaryOp::add: return binary_impl<BinaryOp::add>(a, b, name);
    case BinaryOp::sub: return binary_impl<BinaryOp::sub>(a, b, name);
    case BinaryOp::mul: return binary_impl<BinaryOp::mul>(a, b, name);
  }
  throw DimensionError(std::string(name) + ": unknown operation");
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, const char* name, Forward forward, Derivative derivative) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  const double* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = forward(px[i]);
  return make_result(x.shape(), std::move(out), name, {x.node_ptr()}, [derivative, n](Node& self) {
    Node& nx = *self.parents[0];
    double* gx = nx.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i] * derivative(nx.data[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryOp::add, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryOp::sub, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryOp::mul, "mul"); }

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, "relu", [](double v) { return v < 0.0 ? 0.0 : v; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

/// |x| with subgradient 0 at 0.
inline Tensor abs(const Tensor& x) {
  return detail::unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

/// scale * x + shift
inline Tensor affine(const Tensor& x, double scale, double shift = 0.0) {
  return detail::unary(
      x, "affine", [scale, shift](double v) { return scale * v + shift; }, [scale](double, double) { return scale; });
}

// ---------------------------------------------------------------------------
// Matrix products

namespace detail {

struct MatmulDims {
  std::size_t batch, m, k, n;
  bool shared_b;
  Shape out;
};

inline MatmulDims matmul_dims(const Tensor& a, const Tensor& b, bool transpose_b, const char* name) {
  auto fail = [&]() {
    return DimensionError(std::string(name) + ": cannot multiply " + shape_string(a.shape()) + " by " +
                          shape_string(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw fail();
  MatmulDims d{};
  d.m = a.extent(-2);
  d.k = a.extent(-1);
  const std::size_t bk = transpose_b ? b.extent(-1) : b.extent(-2);
  d.n = transpose_b ? b.extent(-2) : b.extent(-1);
  if (bk != d.k) throw fail();
  const Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  const Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  d.shared_b = lead_b.empty();
  if (!d.shared_b && lead_a != lead_b) throw fail();
  d.batch = element_count(lead_a);
  d.out = lead_a;
  d.out.push_back(d.m);
  d.out.push_back(d.n);
  return d;
}

}  // namespace detail

namespace detail {

/// C = op(A) · op(B) + beta · C for row-major matrices.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
                 const double* b, double beta, double* c) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] *= beta;
    return;
  }
  const auto lda = static_cast<blasint>(trans_a ? m : k);
  const auto ldb = static_cast<blasint>(trans_b ? k : n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<blasint>(m), static_cast<blasint>(n), static_cast<blasint>(k), 1.0, a, lda, b, ldb, beta, c,
              static_cast<blasint>(n));
}

/// Shared backward of a · op(b) where op transposes when `transpose_b`.
inline void matmul_backward(Node& self, const MatmulDims& d, bool transpose_b) {
  Node& na = *self.parents[0];
  Node& nb = *self.parents[1];
  const double* G = self.grad.data();
  if (na.requires_grad) {
    // dA = G · op(b)ᵀ
    double* ga = na.grad_buffer();
    if (d.shared_b) {
      gemm(false, !transpose_b, d.batch * d.m, d.k, d.n, G, nb.data.data(), 1.0, ga);
    } else {
      for (std::size_t s = 0; s < d.batch; ++s)
        gemm(false, !transpose_b, d.m, d.k, d.n, G + s * d.m * d.n, nb.data.data() + s * d.k * d.n, 1.0,
             ga + s * d.m * d.k);
    }
  }
  if (nb.requires_grad) {
    // d op(b) = Aᵀ · G, so db = Aᵀ·G or Gᵀ·A
    double* gb = nb.grad_buffer();
    const std::size_t rows = d.shared_b ? d.batch * d.m : d.m;
    const std::size_t slices = d.shared_b ? 1 : d.batch;
    for (std::size_t s = 0; s < slices; ++s) {
      const double* A = na.data.data() + s * d.m * d.k;
      const double* Gs = G + s * d.m * d.n;
      double* gbs = gb + s * d.k * d.n;
      if (transpose_b)
        gemm(true, false, d.n, d.k, rows, Gs, A, 1.0, gbs);
      else
        gemm(true, false, d.k, d.n, rows, A, Gs, 1.0, gbs);
    }
  }
}

inline std::vector<double> matmul_forward(const Tensor& a, const Tensor& b, const MatmulDims& d, bool transpose_b) {
  std::vector<double> out(d.batch * d.m * d.n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  if (d.shared_b) {
    gemm(false, transpose_b, d.batch * d.m, d.n, d.k, pa, pb, 0.0, out.data());
  } else {
    for (std::size_t s = 0; s < d.batch; ++s)
      gemm(false, transpose_b, d.m, d.n, d.k, pa + s * d.m * d.k, pb + s * d.k * d.n, 0.0, out.data() + s * d.m * d.n);
  }
  return out;
}

}  // namespace detail

/// Matrix product over the trailing two dimensions. `b` is either a plain
/// matrix shared across the batch or carries the same leading extents as `a`.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto d = detail::matmul_dims(a, b, false, "matmul");
  return detail::make_result(d.out, detail::matmul_forward(a, b, d, false), "matmul", {a.node_ptr(), b.node_ptr()},
                             [d](detail::Node& self) { detail::matmul_backward(self, d, false); });
}

/// a · bᵀ over the trailing two dimensions: (..., m, k) x (..., n, k) -> (..., m, n).
inline Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  const auto d = detail::matmul_dims(a, b, true, "matmul_transposed");
  return detail::make_result(d.out, detail::matmul_forward(a, b, d, true), "matmul_transposed",
                             {a.node_ptr(), b.node_ptr()},
                             [d](detail::Node& self) { detail::matmul_backward(self, d, true); });
}

// ---------------------------------------------------------------------------
// Softmax

/// Boolean keep-mask for softmax. Its shape must be a suffix of the scored
/// tensor's shape; it repeats over the remaining leading dimensions.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> keep;
};

/// Softmax along the last dimension. Masked entries receive exactly zero
/// weight; a row with no kept entry is rejected.
inline Tensor softmax_lastdim(const Tensor& x, const Mask* mask = nullptr) {
  if (x.rank() == 0) throw DimensionError("softmax on a scalar");
  const std::size_t width = x.extent(-1);
  const std::size_t rows = width ? x.numel() / width : 0;
  std::size_t mask_count = 0;
  if (mask) {
    const Shape& ms = mask->shape;
    if (ms.size() > x.rank() || !std::equal(ms.rbegin(), ms.rend(), x.shape().rbegin()) || ms.empty())
      throw DimensionError("softmax mask " + shape_string(ms) + " does not match " + shape_string(x.shape()));
    if (mask->keep.size() != element_count(ms)) throw DimensionError("softmax mask size disagrees with its shape");
    mask_count = mask->keep.size();
  }
  std::vector<double> out(x.numel(), 0.0);
  const double* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * width;
    double* y = out.data() + r * width;
    const std::uint8_t* keep = mask ? mask->keep.data() + (r * width) % mask_count : nullptr;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < width; ++j)
      if (!keep || keep[j]) peak = std::max(peak, row[j]);
    if (peak == -std::numeric_limits<double>::infinity())
      throw NumericError("softmax: degenerate mask leaves row " + std::to_string(r) + " without entries");
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j)
      if (!keep || keep[j]) total += (y[j] = std::exp(row[j] - peak));
    for (std::size_t j = 0; j < width; ++j) y[j] /= total;
  }
  return detail::make_result(x.shape(), std::move(out), "softmax", {x.node_ptr()}, [rows, width](detail::Node& self) {
    detail::Node& nx = *self.parents[0];
    double* gx = nx.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * width;
      const double* g = self.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += y[j] * g[j];
      double* gr = gx + r * width;
      for (std::size_t j = 0; j < width; ++j) gr[j] += y[j] * (g[j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero parts");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat of scalars");
  const Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<std::shared_ptr<detail::Node>> parents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin()))
      throw DimensionError("concat: " + shape_string(s) + " does not match " + shape_string(first));
    widths.push_back(s.back());
    total += s.back();
    parents.push_back(p.node_ptr());
  }
  const std::size_t rows = element_count(lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* src = parts[k].data().data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src + r * widths[k], widths[k], out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    offset += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  return detail::make_result(shape, std::move(out), "concat", std::move(parents),
                             [widths, rows, total](detail::Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 detail::Node& p = *self.parents[k];
                                 if (p.requires_grad) {
                                   double* g = p.grad_buffer();
                                   for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                       g[r * widths[k] + j] += self.grad[r * total + off + j];
                                 }
                                 off += widths[k];
                               }
                             });
}

/// Columns [begin, begin + count) of the last dimension.
inline Tensor slice_lastdim(const Tensor& x, std::size_t begin, std::size_t count) {
  if (x.rank() == 0 || begin + count > x.extent(-1))
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(begin + count) + ") of " +
                         shape_string(x.shape()));
  const std::size_t width = x.extent(-1);
  const std::size_t rows = x.numel() / width;
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * width + begin), count,
                out.begin() + static_cast<std::ptrdiff_t>(r * count));
  Shape shape = x.shape();
  shape.back() = count;
  return detail::make_result(shape, std::move(out), "slice", {x.node_ptr()}, [rows, width, begin, count](detail::Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < count; ++j) g[r * width + begin + j] += self.grad[r * count + j];
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.numel())
    throw DimensionError("reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), "reshape", {x.node_ptr()}, [](detail::Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

/// Reorders dimensions: output dimension i is input dimension axes[i].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw DimensionError("permute: axis list length mismatch for " + shape_string(x.shape()));
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis list");
    seen[a] = true;
  }
  const Shape& in = x.shape();
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  std::vector<std::size_t> strides(r);  // input stride per output dimension
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  const std::size_t n = x.numel();
  // source offset for each output element
  std::vector<std::size_t> source(n);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
      source[i] = off;
      for (std::size_t d = r; d-- > 0;) {
        if (++idx[d] < out_shape[d]) {
          off += strides[d];
          break;
        }
        off -= strides[d] * (out_shape[d] - 1);
        idx[d] = 0;
      }
    }
  }
  std::vector<double> out(n);
  const double* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = px[source[i]];
  return detail::make_result(out_shape, std::move(out), "permute", {x.node_ptr()},
                             [source = std::move(source)](detail::Node& self) {
                               double* g = self.parents[0]->grad_buffer();
                               for (std::size_t i = 0; i < source.size(); ++i) g[source[i]] += self.grad[i];
                             });
}

/// Inserts a new dimension of extent `count` at `axis`, repeating the input.
inline Tensor expand(const Tensor& x, std::size_t axis, std::size_t count) {
  if (axis > x.rank()) throw DimensionError("expand axis beyond rank of " + shape_string(x.shape()));
  const Shape& in = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis; i < in.size(); ++i) inner *= in[i];
  Shape shape = in;
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  std::vector<double> out(outer * count * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < count; ++c)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * count + c) * inner));
  return detail::make_result(shape, std::move(out), "expand", {x.node_ptr()}, [outer, count, inner](detail::Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t c = 0; c < count; ++c)
        for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] += self.grad[(o * count + c) * inner + i];
  });
}

/// Selects slices along `axis`. An index of -1 produces a zero slice.
inline Tensor gather(const Tensor& x, std::size_t axis, const std::vector<std::int64_t>& indices) {
  if (axis >= x.rank()) throw DimensionError("gather axis beyond rank of " + shape_string(x.shape()));
  const Shape& in = x.shape();
  const std::size_t extent = in[axis];
  for (auto i : indices)
    if (i < -1 || i >= static_cast<std::int64_t>(extent))
      throw DimensionError("gather index " + std::to_string(i) + " out of range for extent " + std::to_string(extent));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  Shape shape = in;
  shape[axis] = indices.size();
  const std::size_t m = indices.size();
  std::vector<double> out(outer * m * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      if (indices[j] >= 0)
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((o * extent + static_cast<std::size_t>(indices[j])) * inner),
                    inner, out.begin() + static_cast<std::ptrdiff_t>((o * m + j) * inner));
  return detail::make_result(shape, std::move(out), "gather", {x.node_ptr()},
                             [indices, outer, extent, inner](detail::Node& self) {
                               double* g = self.parents[0]->grad_buffer();
                               const std::size_t m = indices.size();
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t j = 0; j < m; ++j) {
                                   if (indices[j] < 0) continue;
                                   double* dst = g + (o * extent + static_cast<std::size_t>(indices[j])) * inner;
                                   const double* src = self.grad.data() + (o * m + j) * inner;
                                   for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                                 }
                             });
}

/// Maximum along `axis` (removed from the output). Ties route the gradient
/// to the first maximal entry.
inline Tensor max_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("max axis beyond rank of " + shape_string(x.shape()));
  const Shape& in = x.shape();
  const std::size_t extent = in[axis];
  if (extent == 0) throw DimensionError("max over an empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  Shape shape = in;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(outer * inner);
  std::vector<std::size_t> arg(outer * inner);
  const double* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = o * extent * inner + i;
      for (std::size_t e = 1; e < extent; ++e) {
        const std::size_t at = (o * extent + e) * inner + i;
        if (px[at] > px[best]) best = at;
      }
      out[o * inner + i] = px[best];
      arg[o * inner + i] = best;
    }
  return detail::make_result(shape, std::move(out), "max", {x.node_ptr()}, [arg = std::move(arg)](detail::Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return detail::make_result({}, {total}, "sum", {x.node_ptr()}, [](detail::Node& self) {
    double* g = self.parents[0]->grad_buffer();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) g[i] += up;
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return affine(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Backward pass

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient, then releases the interior graph.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ConfigError("backward requires a scalar loss, got shape " +
                      (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  detail::Node* root = loss.node();
  if (!root->requires_grad) return;

  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack{{loss.node_ptr(), 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      std::shared_ptr<detail::Node> parent = top.first->parents[top.second++];
      if (parent->requires_grad && visited.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
  for (const auto& node : order) {
    if (!node->backward) continue;
    node->backward = nullptr;
    node->parents.clear();
    if (node.get() != root) std::vector<double>().swap(node->grad);
  }
}

}  // namespace gman
