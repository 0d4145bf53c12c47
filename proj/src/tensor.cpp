#include "lite/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lite/errors.hpp"

namespace lite {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  if (shape_.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto extent : shape_)
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  if (shape_numel(shape_) != values_.size())
    throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return values_[0];
}

std::span<const double> Tensor::grad() const {
  if (!grad_) return {};
  return *grad_;
}

std::span<double> Tensor::grad_mut() {
  if (!grad_) grad_.emplace(values_.size(), 0.0);
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

namespace ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Parameter: return "parameter";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddRowBias: return "add_row_bias";
    case Op::MulRowwise: return "mul_rowwise";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Softmax: return "softmax";
    case Op::TopKMask: return "topk_mask";
    case Op::Softplus: return "softplus";
    case Op::Gelu: return "gelu";
    case Op::Relu: return "relu";
    case Op::LayerNorm: return "layer_norm";
    case Op::Concat: return "concat";
    case Op::Reshape: return "reshape";
    case Op::Embedding: return "embedding";
    case Op::GatherRows: return "gather_rows";
    case Op::GatherColumn: return "gather_column";
    case Op::ReplaceRows: return "replace_rows";
    case Op::PlaceRows: return "place_rows";
    case Op::SegmentMean: return "segment_mean";
    case Op::Attention: return "attention";
  }
  return "?";
}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::parameter(Tensor& param) {
  Node node;
  node.op = Op::Parameter;
  node.value = param;
  node.value.clear_grad();
  node.needs_grad = grad_enabled_ && param.requires_grad();
  node.param = node.needs_grad ? &param : nullptr;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) {
  Node node;
  node.op = Op::Constant;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::record(Op op, std::vector<int> inputs, Tensor value, BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.needs_grad = false;
  if (grad_enabled_)
    for (int in : inputs) node.needs_grad = node.needs_grad || nodes_.at(in).needs_grad;
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

std::span<double> Graph::grad_of(int id) {
  auto& node = nodes_.at(id);
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw Error("backward: loss belongs to another graph");
  if (nodes_.at(loss.id).value.size() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_str(nodes_.at(loss.id).value.shape()));
  if (!nodes_[loss.id].needs_grad) return;
  grad_of(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    auto& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.param != nullptr) {
      auto dst = node.param->grad_mut();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
    } else if (node.backward) {
      node.backward(*this, id);
    }
    std::vector<double>().swap(node.grad);
  }
}

namespace {

Graph& same_graph(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw Error("vars belong to different graphs");
  return *a.graph;
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    throw ShapeError(std::string(what) + " expects a rank-2 tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

bool excluded(double v) { return v <= kNegSentinel / 2; }

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  if (A.dim(1) != B.dim(0))
    throw ShapeError("matmul: inner extents differ, " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out = Tensor::zeros({m, n});
  kernels::parallel::matmul(A.values(), B.values(), out.values(), m, k, n, false);
  return g.record(Op::MatMul, {a.id, b.id}, std::move(out), [=](Graph& gr, int self) {
    auto gout = gr.grad_view(self);
    const auto& Av = gr.value(a.id).values();
    const auto& Bv = gr.value(b.id).values();
    if (gr.needs_grad(a.id)) kernels::parallel::matmul_nt(gout, Bv, gr.grad_of(a.id), m, n, k, true);
    if (gr.needs_grad(b.id)) kernels::parallel::matmul_tn(Av, gout, gr.grad_of(b.id), k, m, n, true);
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul_nt");
  require_rank2(B, "matmul_nt");
  if (A.dim(1) != B.dim(1))
    throw ShapeError("matmul_nt: inner extents differ, " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()) + "^T");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(0);
  Tensor out = Tensor::zeros({m, n});
  kernels::parallel::matmul_nt(A.values(), B.values(), out.values(), m, k, n, false);
  return g.record(Op::MatMulNT, {a.id, b.id}, std::move(out), [=](Graph& gr, int self) {
    auto gout = gr.grad_view(self);
    const auto& Av = gr.value(a.id).values();
    const auto& Bv = gr.value(b.id).values();
    if (gr.needs_grad(a.id)) kernels::parallel::matmul(gout, Bv, gr.grad_of(a.id), m, n, k, true);
    if (gr.needs_grad(b.id)) kernels::parallel::matmul_tn(gout, Av, gr.grad_of(b.id), n, m, k, true);
  });
}

namespace {

template <class Fwd, class Bwd>
Var binary_elementwise(Op op, Var a, Var b, const char* name, Fwd fwd, Bwd bwd) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.value(), b.value(), name);
  const auto& av = a.value().values();
  const auto& bv = b.value().values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return g.record(op, {a.id, b.id}, Tensor(a.shape(), std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    const auto& x = gr.value(a.id).values();
                    const auto& y = gr.value(b.id).values();
                    const bool ga = gr.needs_grad(a.id), gb = gr.needs_grad(b.id);
                    std::span<double> da = ga ? gr.grad_of(a.id) : std::span<double>{};
                    std::span<double> db = gb ? gr.grad_of(b.id) : std::span<double>{};
                    for (std::size_t i = 0; i < gout.size(); ++i) {
                      const auto [dx, dy] = bwd(x[i], y[i], gout[i]);
                      if (ga) da[i] += dx;
                      if (gb) db[i] += dy;
                    }
                  });
}

// Elementwise unary op with derivative computed from (input, output).
template <class Fwd, class Deriv>
Var unary_elementwise(Op op, Var x, Fwd fwd, Deriv deriv) {
  Graph& g = *x.graph;
  const auto& xv = x.value().values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return g.record(op, {x.id}, Tensor(x.shape(), std::move(out)), [=](Graph& gr, int self) {
    auto gout = gr.grad_view(self);
    const auto& in = gr.value(x.id).values();
    const auto& y = gr.value(self).values();
    auto dx = gr.grad_of(x.id);
    for (std::size_t i = 0; i < gout.size(); ++i) dx[i] += gout[i] * deriv(in[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise(
      Op::Add, a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair{g, g}; });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      Op::Sub, a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair{g, -g}; });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      Op::Mul, a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

Var scale(Var a, double factor) {
  return unary_elementwise(
      Op::Scale, a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var add_row_bias(Var x, Var bias) {
  Graph& g = same_graph(x, bias);
  const Tensor& X = x.value();
  const std::size_t n = X.cols();
  if (bias.value().size() != n)
    throw ShapeError("add_row_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                     shape_str(X.shape()));
  const std::size_t rows = X.rows();
  std::vector<double> out(X.values().begin(), X.values().end());
  const auto& bv = bias.value().values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  return g.record(Op::AddRowBias, {x.id, bias.id}, Tensor(X.shape(), std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    if (gr.needs_grad(x.id)) {
                      auto dx = gr.grad_of(x.id);
                      for (std::size_t i = 0; i < gout.size(); ++i) dx[i] += gout[i];
                    }
                    if (gr.needs_grad(bias.id)) {
                      auto db = gr.grad_of(bias.id);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < n; ++c) db[c] += gout[r * n + c];
                    }
                  });
}

Var mul_rowwise(Var x, Var w) {
  Graph& g = same_graph(x, w);
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), n = X.cols();
  if (w.value().size() != rows)
    throw ShapeError("mul_rowwise: weights " + shape_str(w.shape()) + " do not match rows of " +
                     shape_str(X.shape()));
  std::vector<double> out(X.size());
  const auto& xv = X.values();
  const auto& wv = w.value().values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xv[r * n + c] * wv[r];
  return g.record(Op::MulRowwise, {x.id, w.id}, Tensor(X.shape(), std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    const auto& xs = gr.value(x.id).values();
                    const auto& ws = gr.value(w.id).values();
                    if (gr.needs_grad(x.id)) {
                      auto dx = gr.grad_of(x.id);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += gout[r * n + c] * ws[r];
                    }
                    if (gr.needs_grad(w.id)) {
                      auto dw = gr.grad_of(w.id);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < n; ++c) s += gout[r * n + c] * xs[r * n + c];
                        dw[r] += s;
                      }
                    }
                  });
}

Var sum(Var x) {
  Graph& g = *x.graph;
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return g.record(Op::Sum, {x.id}, Tensor::scalar(s), [=](Graph& gr, int self) {
    const double go = gr.grad_view(self)[0];
    auto dx = gr.grad_of(x.id);
    for (auto& d : dx) d += go;
  });
}

Var mean(Var x) {
  Graph& g = *x.graph;
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return g.record(Op::Mean, {x.id}, Tensor::scalar(s / n), [=](Graph& gr, int self) {
    const double go = gr.grad_view(self)[0] / n;
    auto dx = gr.grad_of(x.id);
    for (auto& d : dx) d += go;
  });
}

Var square(Var x) {
  return unary_elementwise(
      Op::Square, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sqrt(Var x) {
  return unary_elementwise(
      Op::Sqrt, x,
      [](double v) {
        if (v < 0.0) throw Error("sqrt of negative value");
        return std::sqrt(v);
      },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var softmax(Var x) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), n = X.cols();
  std::vector<double> out(X.size(), 0.0);
  const auto& xv = X.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mx = 0.0;
    bool any = false;
    for (std::size_t c = 0; c < n; ++c) {
      if (excluded(row[c])) continue;
      mx = any ? std::max(mx, row[c]) : row[c];
      any = true;
    }
    if (!any) continue;
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (excluded(row[c])) continue;
      out[r * n + c] = std::exp(row[c] - mx);
      total += out[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= total;
  }
  return g.record(Op::Softmax, {x.id}, Tensor(X.shape(), std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    const auto& y = gr.value(self).values();
                    auto dx = gr.grad_of(x.id);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double dot = 0.0;
                      for (std::size_t c = 0; c < n; ++c) dot += y[r * n + c] * gout[r * n + c];
                      for (std::size_t c = 0; c < n; ++c)
                        dx[r * n + c] += y[r * n + c] * (gout[r * n + c] - dot);
                    }
                  });
}

Var topk_mask(Var x, std::size_t k) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), n = X.cols();
  if (k == 0 || k > n)
    throw ShapeError("topk_mask: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  auto keep = std::make_shared<std::vector<std::uint8_t>>(X.size(), 0);
  std::vector<double> out(X.size(), kNegSentinel);
  std::vector<std::size_t> order(n);
  const auto& xv = X.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Larger value first; ties go to the lower index.
    std::stable_sort(order.begin(), order.end(),
                     [row](std::size_t i, std::size_t j) { return row[i] > row[j]; });
    for (std::size_t s = 0; s < k; ++s) {
      (*keep)[r * n + order[s]] = 1;
      out[r * n + order[s]] = row[order[s]];
    }
  }
  return g.record(Op::TopKMask, {x.id}, Tensor(X.shape(), std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    auto dx = gr.grad_of(x.id);
                    for (std::size_t i = 0; i < gout.size(); ++i)
                      if ((*keep)[i]) dx[i] += gout[i];
                  });
}

Var softplus(Var x) {
  return unary_elementwise(
      Op::Softplus, x,
      [](double v) { return v > 20.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var x) {
  return unary_elementwise(
      Op::Gelu, x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      });
}

Var relu(Var x) {
  return unary_elementwise(
      Op::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = same_graph(x, gamma);
  same_graph(x, beta);
  const Tensor& X = x.value();
  const std::size_t rows = X.rows(), n = X.cols();
  if (gamma.value().size() != n || beta.value().size() != n)
    throw ShapeError("layer_norm: scale/shift must have " + std::to_string(n) + " entries");
  auto xhat = std::make_shared<std::vector<double>>(X.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(X.size());
  const auto& xv = X.values();
  const auto& gv = gamma.value().values();
  const auto& bv = beta.value().values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return g.record(Op::LayerNorm, {x.id, gamma.id, beta.id}, Tensor(X.shape(), std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    const auto& gam = gr.value(gamma.id).values();
                    if (gr.needs_grad(gamma.id)) {
                      auto dg = gr.grad_of(gamma.id);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < n; ++c)
                          dg[c] += gout[r * n + c] * (*xhat)[r * n + c];
                    }
                    if (gr.needs_grad(beta.id)) {
                      auto db = gr.grad_of(beta.id);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < n; ++c) db[c] += gout[r * n + c];
                    }
                    if (gr.needs_grad(x.id)) {
                      auto dx = gr.grad_of(x.id);
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t c = 0; c < n; ++c) {
                          const double dh = gout[r * n + c] * gam[c];
                          m1 += dh;
                          m2 += dh * (*xhat)[r * n + c];
                        }
                        m1 *= inv_n;
                        m2 *= inv_n;
                        for (std::size_t c = 0; c < n; ++c) {
                          const double dh = gout[r * n + c] * gam[c];
                          dx[r * n + c] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * n + c] * m2);
                        }
                      }
                    }
                  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Graph& g = *parts[0].graph;
  const std::size_t rank = parts[0].value().rank();
  if (rank > 2) throw ShapeError("concat supports rank 1 and 2 only");
  if (axis >= rank) throw ShapeError("concat axis out of range");
  std::vector<int> ids;
  for (const auto& p : parts) {
    same_graph(parts[0], p);
    if (p.value().rank() != rank) throw ShapeError("concat: rank mismatch");
    ids.push_back(p.id);
  }
  if (rank == 1 || axis == 0) {
    const std::size_t cols = rank == 1 ? 1 : parts[0].value().dim(1);
    std::vector<double> out;
    std::size_t total_rows = 0;
    for (const auto& p : parts) {
      if (rank == 2 && p.value().dim(1) != cols)
        throw ShapeError("concat axis 0: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                         shape_str(p.shape()));
      out.insert(out.end(), p.value().values().begin(), p.value().values().end());
      total_rows += rank == 1 ? p.value().size() : p.value().dim(0);
    }
    Shape shape = rank == 1 ? Shape{total_rows} : Shape{total_rows, cols};
    return g.record(Op::Concat, ids, Tensor(shape, std::move(out)), [ids](Graph& gr, int self) {
      auto gout = gr.grad_view(self);
      std::size_t offset = 0;
      for (int id : ids) {
        const std::size_t n = gr.value(id).size();
        if (gr.needs_grad(id)) {
          auto d = gr.grad_of(id);
          for (std::size_t i = 0; i < n; ++i) d[i] += gout[offset + i];
        }
        offset += n;
      }
    });
  }
  const std::size_t rows = parts[0].value().dim(0);
  std::size_t total_cols = 0;
  for (const auto& p : parts) {
    if (p.value().dim(0) != rows)
      throw ShapeError("concat axis 1: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    total_cols += p.value().dim(1);
  }
  std::vector<double> out(rows * total_cols);
  std::size_t col0 = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.value().dim(1);
    const auto& pv = p.value().values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(pv.begin() + r * c, pv.begin() + (r + 1) * c, out.begin() + r * total_cols + col0);
    col0 += c;
  }
  return g.record(Op::Concat, ids, Tensor({rows, total_cols}, std::move(out)),
                  [ids, rows, total_cols](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    std::size_t c0 = 0;
                    for (int id : ids) {
                      const std::size_t c = gr.value(id).dim(1);
                      if (gr.needs_grad(id)) {
                        auto d = gr.grad_of(id);
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t j = 0; j < c; ++j)
                            d[r * c + j] += gout[r * total_cols + c0 + j];
                      }
                      c0 += c;
                    }
                  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = *x.graph;
  Tensor out(std::move(shape), std::vector<double>(x.value().values().begin(), x.value().values().end()));
  return g.record(Op::Reshape, {x.id}, std::move(out), [=](Graph& gr, int self) {
    auto gout = gr.grad_view(self);
    auto dx = gr.grad_of(x.id);
    for (std::size_t i = 0; i < gout.size(); ++i) dx[i] += gout[i];
  });
}

Var embedding(Var table, std::span<const std::int32_t> ids_in) {
  Graph& g = *table.graph;
  const Tensor& T = table.value();
  require_rank2(T, "embedding");
  const std::size_t vocab = T.dim(0), d = T.dim(1);
  if (ids_in.empty()) throw ShapeError("embedding lookup with no ids");
  auto ids = std::make_shared<std::vector<std::int32_t>>(ids_in.begin(), ids_in.end());
  std::vector<double> out(ids->size() * d);
  for (std::size_t i = 0; i < ids->size(); ++i) {
    const auto id = (*ids)[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw ShapeError("embedding index " + std::to_string(id) + " outside table of " +
                       std::to_string(vocab) + " rows");
    std::copy_n(T.values().begin() + id * d, d, out.begin() + i * d);
  }
  return g.record(Op::Embedding, {table.id}, Tensor({ids->size(), d}, std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    auto dt = gr.grad_of(table.id);
                    for (std::size_t i = 0; i < ids->size(); ++i)
                      for (std::size_t c = 0; c < d; ++c)
                        dt[static_cast<std::size_t>((*ids)[i]) * d + c] += gout[i * d + c];
                  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows_in) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  const std::size_t n = X.cols(), total = X.rows();
  if (rows_in.empty()) throw ShapeError("gather_rows with no rows");
  auto rows = std::make_shared<std::vector<std::size_t>>(rows_in.begin(), rows_in.end());
  std::vector<double> out(rows->size() * n);
  for (std::size_t i = 0; i < rows->size(); ++i) {
    if ((*rows)[i] >= total) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(X.values().begin() + (*rows)[i] * n, n, out.begin() + i * n);
  }
  return g.record(Op::GatherRows, {x.id}, Tensor({rows->size(), n}, std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    auto dx = gr.grad_of(x.id);
                    for (std::size_t i = 0; i < rows->size(); ++i)
                      for (std::size_t c = 0; c < n; ++c) dx[(*rows)[i] * n + c] += gout[i * n + c];
                  });
}

Var gather_column(Var x, std::span<const std::size_t> rows_in, std::size_t col) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  const std::size_t n = X.cols(), total = X.rows();
  if (col >= n) throw ShapeError("gather_column: column out of range");
  if (rows_in.empty()) throw ShapeError("gather_column with no rows");
  auto rows = std::make_shared<std::vector<std::size_t>>(rows_in.begin(), rows_in.end());
  std::vector<double> out(rows->size());
  for (std::size_t i = 0; i < rows->size(); ++i) {
    if ((*rows)[i] >= total) throw ShapeError("gather_column: row index out of range");
    out[i] = X.values()[(*rows)[i] * n + col];
  }
  return g.record(Op::GatherColumn, {x.id}, Tensor({rows->size(), 1}, std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    auto dx = gr.grad_of(x.id);
                    for (std::size_t i = 0; i < rows->size(); ++i) dx[(*rows)[i] * n + col] += gout[i];
                  });
}

Var replace_rows(Var x, std::span<const std::size_t> rows_in, Var replacement) {
  Graph& g = same_graph(x, replacement);
  const Tensor& X = x.value();
  const std::size_t n = X.cols(), total = X.rows();
  const Tensor& R = replacement.value();
  if (R.cols() != n || R.rows() != rows_in.size())
    throw ShapeError("replace_rows: replacement " + shape_str(R.shape()) + " does not match " +
                     std::to_string(rows_in.size()) + " rows of width " + std::to_string(n));
  auto rows = std::make_shared<std::vector<std::size_t>>(rows_in.begin(), rows_in.end());
  auto replaced = std::make_shared<std::vector<std::uint8_t>>(total, 0);
  std::vector<double> out(X.values().begin(), X.values().end());
  for (std::size_t i = 0; i < rows->size(); ++i) {
    const std::size_t r = (*rows)[i];
    if (r >= total) throw ShapeError("replace_rows: row index out of range");
    if ((*replaced)[r]) throw ShapeError("replace_rows: duplicate row index");
    (*replaced)[r] = 1;
    std::copy_n(R.values().begin() + i * n, n, out.begin() + r * n);
  }
  return g.record(Op::ReplaceRows, {x.id, replacement.id}, Tensor(X.shape(), std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    if (gr.needs_grad(x.id)) {
                      auto dx = gr.grad_of(x.id);
                      for (std::size_t r = 0; r < total; ++r)
                        if (!(*replaced)[r])
                          for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += gout[r * n + c];
                    }
                    if (gr.needs_grad(replacement.id)) {
                      auto dr = gr.grad_of(replacement.id);
                      for (std::size_t i = 0; i < rows->size(); ++i)
                        for (std::size_t c = 0; c < n; ++c)
                          dr[i * n + c] += gout[(*rows)[i] * n + c];
                    }
                  });
}

Var place_rows(Graph& g, std::size_t n_rows, std::size_t cols,
               const std::vector<RowPlacement>& pieces) {
  std::vector<double> out(n_rows * cols, 0.0);
  std::vector<int> ids;
  auto dests = std::make_shared<std::vector<std::vector<std::size_t>>>();
  for (const auto& piece : pieces) {
    if (piece.source.graph != &g) throw Error("place_rows: source from another graph");
    const Tensor& S = piece.source.value();
    if (S.cols() != cols || S.rows() != piece.dest_rows.size())
      throw ShapeError("place_rows: source " + shape_str(S.shape()) + " does not match " +
                       std::to_string(piece.dest_rows.size()) + " destination rows of width " +
                       std::to_string(cols));
    for (std::size_t i = 0; i < piece.dest_rows.size(); ++i) {
      const std::size_t r = piece.dest_rows[i];
      if (r >= n_rows) throw ShapeError("place_rows: destination row out of range");
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += S.values()[i * cols + c];
    }
    ids.push_back(piece.source.id);
    dests->push_back(piece.dest_rows);
  }
  return g.record(Op::PlaceRows, ids, Tensor({n_rows, cols}, std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      if (!gr.needs_grad(ids[p])) continue;
                      auto d = gr.grad_of(ids[p]);
                      const auto& rows = (*dests)[p];
                      for (std::size_t i = 0; i < rows.size(); ++i)
                        for (std::size_t c = 0; c < cols; ++c)
                          d[i * cols + c] += gout[rows[i] * cols + c];
                    }
                  });
}

Var segment_mean(Var x, const std::vector<kernels::Segment>& segments_in,
                 std::span<const std::uint8_t> row_valid) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  const std::size_t n = X.cols(), total = X.rows();
  if (segments_in.empty()) throw ShapeError("segment_mean with no segments");
  if (!row_valid.empty() && row_valid.size() != total)
    throw ShapeError("segment_mean: validity mask length mismatch");
  auto segments = std::make_shared<std::vector<kernels::Segment>>(segments_in);
  auto weights = std::make_shared<std::vector<double>>(segments->size(), 0.0);
  auto valid = std::make_shared<std::vector<std::uint8_t>>(row_valid.begin(), row_valid.end());
  std::vector<double> out(segments->size() * n, 0.0);
  for (std::size_t s = 0; s < segments->size(); ++s) {
    const auto& seg = (*segments)[s];
    if (seg.start + seg.length > total) throw ShapeError("segment_mean: segment out of range");
    std::size_t count = 0;
    for (std::size_t r = seg.start; r < seg.start + seg.length; ++r) {
      if (!valid->empty() && !(*valid)[r]) continue;
      ++count;
      for (std::size_t c = 0; c < n; ++c) out[s * n + c] += X.values()[r * n + c];
    }
    if (count == 0) continue;
    (*weights)[s] = 1.0 / static_cast<double>(count);
    for (std::size_t c = 0; c < n; ++c) out[s * n + c] *= (*weights)[s];
  }
  return g.record(Op::SegmentMean, {x.id}, Tensor({segments->size(), n}, std::move(out)),
                  [=](Graph& gr, int self) {
                    auto gout = gr.grad_view(self);
                    auto dx = gr.grad_of(x.id);
                    for (std::size_t s = 0; s < segments->size(); ++s) {
                      const auto& seg = (*segments)[s];
                      const double w = (*weights)[s];
                      for (std::size_t r = seg.start; r < seg.start + seg.length; ++r) {
                        if (!valid->empty() && !(*valid)[r]) continue;
                        for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += w * gout[s * n + c];
                      }
                    }
                  });
}

Var attention(Var q, Var k, Var v, std::shared_ptr<const kernels::AttentionLayout> layout) {
  Graph& g = same_graph(q, k);
  same_graph(q, v);
  const Tensor& Q = q.value();
  require_rank2(Q, "attention");
  require_same_shape(Q, k.value(), "attention");
  require_same_shape(Q, v.value(), "attention");
  const std::size_t rows = Q.dim(0), d = Q.dim(1);
  if (layout->n_heads == 0 || d % layout->n_heads != 0)
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(layout->n_heads) + " heads");
  if (!layout->key_valid.empty() && layout->key_valid.size() != rows)
    throw ShapeError("attention: key mask length mismatch");
  std::size_t expected = 0;
  for (const auto& seg : layout->segments) {
    if (seg.start != expected || seg.length == 0)
      throw ShapeError("attention: segments must tile the rows contiguously");
    expected += seg.length;
  }
  if (expected != rows) throw ShapeError("attention: segments do not cover all rows");
  auto probs = std::make_shared<std::vector<double>>(kernels::attention_prob_count(*layout));
  Tensor out = Tensor::zeros({rows, d});
  kernels::parallel::attention_forward(Q.values(), k.value().values(), v.value().values(),
                                       out.values(), *probs, d, *layout);
  return g.record(Op::Attention, {q.id, k.id, v.id}, std::move(out), [=](Graph& gr, int self) {
    auto gout = gr.grad_view(self);
    std::vector<double> dq(rows * d, 0.0), dk(rows * d, 0.0), dv(rows * d, 0.0);
    kernels::parallel::attention_backward(gr.value(q.id).values(), gr.value(k.id).values(),
                                          gr.value(v.id).values(), *probs, gout, dq, dk, dv, d,
                                          *layout);
    const std::pair<int, const std::vector<double>*> pairs[] = {{q.id, &dq}, {k.id, &dk}, {v.id, &dv}};
    for (const auto& [id, src] : pairs) {
      if (!gr.needs_grad(id)) continue;
      auto dst = gr.grad_of(id);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (*src)[i];
    }
  });
}

}  // namespace ad

}  // namespace lite
