#pragma once
// Dense numeric kernels used by the autodiff ops.
//
// Every kernel exists twice: `serial::` is the reference implementation and
// `parallel::` distributes independent output rows (or attention segments)
// over OpenMP threads. Both share the same per-row inner loops, so results are
// bit-identical regardless of thread count; the unit tests assert this.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lite::kernels {

/// A contiguous block of rows forming one independent attention sequence.
struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Shape of a segmented multi-head attention call.
struct AttentionLayout {
  std::vector<Segment> segments;
  std::size_t n_heads = 1;
  bool causal = false;
  // Optional per-row key validity (1 = attendable). Empty means all valid.
  std::vector<std::uint8_t> key_valid;
};

/// Number of attention probabilities stored for a layout (sum of len^2 * heads).
std::size_t attention_prob_count(const AttentionLayout& layout);

namespace serial {

// c[m x n] (+)= a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// c[m x n] (+)= a[k x m]^T * b[k x n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// q, k, v, out: [rows x d]. probs receives attention_prob_count(layout) values.
void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       std::size_t d, const AttentionLayout& layout);
// Accumulates into dq, dk, dv.
void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, std::size_t d, const AttentionLayout& layout);

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       std::size_t d, const AttentionLayout& layout);
void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, std::size_t d, const AttentionLayout& layout);

}  // namespace parallel

}  // namespace lite::kernels
