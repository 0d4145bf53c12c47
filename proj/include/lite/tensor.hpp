#pragma once
// Dense 64-bit tensors and a tape-based reverse-mode differentiation graph.
//
// A `Tensor` owns values (and optionally a gradient buffer). Trainable
// parameters are Tensors with requires_grad set; a `Graph` records every op
// applied to them during one forward pass and `Graph::backward` accumulates
// d(loss)/d(param) into each parameter's grad.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lite/kernels.hpp"

namespace lite {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Stand-in for -infinity: the most negative finite double. Softmax treats any
/// entry <= kNegSentinel / 2 as excluded.
inline constexpr double kNegSentinel = std::numeric_limits<double>::lowest();

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  // Rows/cols view: the last axis is the row width.
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return grad_.has_value(); }
  std::span<const double> grad() const;
  // Allocates a zero gradient on first use.
  std::span<double> grad_mut();
  void zero_grad();
  void clear_grad() { grad_.reset(); }

 private:
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

namespace ad {

enum class Op : std::uint8_t {
  Parameter,
  Constant,
  MatMul,
  MatMulNT,
  Add,
  Sub,
  Mul,
  Scale,
  AddRowBias,
  MulRowwise,
  Sum,
  Mean,
  Square,
  Sqrt,
  Softmax,
  TopKMask,
  Softplus,
  Gelu,
  Relu,
  LayerNorm,
  Concat,
  Reshape,
  Embedding,
  GatherRows,
  GatherColumn,
  ReplaceRows,
  PlaceRows,
  SegmentMean,
  Attention,
};

const char* op_name(Op op);

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Binds a parameter tensor. Its grad receives contributions on backward()
  /// when the tensor requires grad and the graph records gradients.
  Var parameter(Tensor& param);
  Var constant(Tensor value);

  /// Reverse pass from a scalar loss. Non-leaf gradients are released as soon
  /// as they have been propagated.
  void backward(Var loss);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  Op op(int id) const { return nodes_.at(id).op; }
  const std::vector<int>& inputs(int id) const { return nodes_.at(id).inputs; }
  const Tensor& value(int id) const { return nodes_.at(id).value; }
  bool needs_grad(int id) const { return nodes_.at(id).needs_grad; }

  // Used by op implementations.
  Var record(Op op, std::vector<int> inputs, Tensor value, BackwardFn backward);
  std::span<double> grad_of(int id);
  std::span<const double> grad_view(int id) const { return nodes_.at(id).grad; }

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<int> inputs;
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    Tensor* param = nullptr;
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;  // deque: values stay addressable while the tape grows
};

// ---- ops ------------------------------------------------------------------

Var matmul(Var a, Var b);     // [m x k] * [k x n]
Var matmul_nt(Var a, Var b);  // [m x k] * [n x k]^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_row_bias(Var x, Var bias);  // x [.. x n] + bias [n]
Var mul_rowwise(Var x, Var w);      // x [r x n] * w [r x 1]
Var sum(Var x);
Var mean(Var x);
Var square(Var x);
Var sqrt(Var x);  // gradient at exactly 0 is defined as 0
Var softmax(Var x);                // along the last axis
Var topk_mask(Var x, std::size_t k);  // per row: keep top-k, others -> kNegSentinel
Var softplus(Var x);
Var gelu(Var x);  // tanh approximation
Var relu(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var reshape(Var x, Shape shape);
Var embedding(Var table, std::span<const std::int32_t> ids);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var gather_column(Var x, std::span<const std::size_t> rows, std::size_t col);  // -> [n x 1]
Var replace_rows(Var x, std::span<const std::size_t> rows, Var replacement);

struct RowPlacement {
  Var source;
  std::vector<std::size_t> dest_rows;
};
/// Builds an [n_rows x cols] matrix, summing each source row into its destination.
Var place_rows(Graph& g, std::size_t n_rows, std::size_t cols,
               const std::vector<RowPlacement>& pieces);

/// Mean of rows within each segment, optionally restricted to rows with
/// row_valid != 0. Output [n_segments x cols]; segments with no valid rows give 0.
Var segment_mean(Var x, const std::vector<kernels::Segment>& segments,
                 std::span<const std::uint8_t> row_valid = {});

/// Segmented multi-head scaled dot-product attention over [rows x d] inputs.
Var attention(Var q, Var k, Var v, std::shared_ptr<const kernels::AttentionLayout> layout);

}  // namespace ad

}  // namespace lite
