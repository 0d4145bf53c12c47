#include "lite/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace lite::kernels {

namespace {

constexpr std::size_t kParallelWork = 1 << 15;

inline void matmul_row(const double* a_row, const double* b, double* c_row, std::size_t k,
                       std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c_row, c_row + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a_row[p];
    if (av == 0.0) continue;
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

inline void matmul_nt_row(const double* a_row, const double* b, double* c_row, std::size_t k,
                          std::size_t n, bool accumulate) {
  for (std::size_t j = 0; j < n; ++j) {
    const double* b_row = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += a_row[p] * b_row[p];
    c_row[j] = accumulate ? c_row[j] + s : s;
  }
}

inline void matmul_tn_row(const double* a, std::size_t i, const double* b, double* c_row,
                          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c_row, c_row + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    if (av == 0.0) continue;
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

std::vector<std::size_t> prob_offsets(const AttentionLayout& layout) {
  std::vector<std::size_t> offsets(layout.segments.size() + 1, 0);
  for (std::size_t s = 0; s < layout.segments.size(); ++s) {
    const std::size_t len = layout.segments[s].length;
    offsets[s + 1] = offsets[s] + len * len * layout.n_heads;
  }
  return offsets;
}

inline bool key_ok(const AttentionLayout& layout, std::size_t row) {
  return layout.key_valid.empty() || layout.key_valid[row] != 0;
}

// One (segment, head) unit of the forward pass. Keys are transposed into a
// local block so the score loop runs over j; every score still sums its dh
// products in column order, so results match the naive loop bit for bit.
void attention_unit_forward(const double* q, const double* k, const double* v, double* out,
                            double* probs, std::size_t d, const AttentionLayout& layout,
                            const Segment& seg, std::size_t head) {
  const std::size_t dh = d / layout.n_heads;
  const std::size_t col0 = head * dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t len = seg.length;
  std::vector<std::size_t> keys;
  keys.reserve(len);
  for (std::size_t j = 0; j < len; ++j)
    if (key_ok(layout, seg.start + j)) keys.push_back(j);
  const std::size_t nk = keys.size();
  std::vector<double> kt(dh * nk);
  for (std::size_t idx = 0; idx < nk; ++idx) {
    const double* kj = k + (seg.start + keys[idx]) * d + col0;
    for (std::size_t c = 0; c < dh; ++c) kt[c * nk + idx] = kj[c];
  }
  std::vector<double> scores(nk);
  for (std::size_t i = 0; i < len; ++i) {
    const double* qi = q + (seg.start + i) * d + col0;
    double* p_row = probs + i * len;
    std::fill(p_row, p_row + len, 0.0);
    double* oi = out + (seg.start + i) * d + col0;
    std::fill(oi, oi + dh, 0.0);
    // Keys are ascending, so the causal limit is a prefix of the key list.
    const std::size_t n_use =
        layout.causal ? static_cast<std::size_t>(std::upper_bound(keys.begin(), keys.end(), i) - keys.begin()) : nk;
    if (n_use == 0) continue;
    std::fill(scores.begin(), scores.begin() + n_use, 0.0);
    for (std::size_t c = 0; c < dh; ++c) {
      const double qc = qi[c];
      const double* row = kt.data() + c * nk;
      for (std::size_t idx = 0; idx < n_use; ++idx) scores[idx] += qc * row[idx];
    }
    double max_score = scores[0] * scale;
    for (std::size_t idx = 0; idx < n_use; ++idx) {
      scores[idx] *= scale;
      max_score = std::max(max_score, scores[idx]);
    }
    double total = 0.0;
    for (std::size_t idx = 0; idx < n_use; ++idx) {
      scores[idx] = std::exp(scores[idx] - max_score);
      total += scores[idx];
    }
    for (std::size_t idx = 0; idx < n_use; ++idx) {
      const double pj = scores[idx] / total;
      p_row[keys[idx]] = pj;
      const double* vj = v + (seg.start + keys[idx]) * d + col0;
      for (std::size_t c = 0; c < dh; ++c) oi[c] += pj * vj[c];
    }
  }
}

void attention_unit_backward(const double* q, const double* k, const double* v,
                             const double* probs, const double* dout, double* dq, double* dk,
                             double* dv, std::size_t d, const AttentionLayout& layout,
                             const Segment& seg, std::size_t head) {
  const std::size_t dh = d / layout.n_heads;
  const std::size_t col0 = head * dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t len = seg.length;
  std::vector<double> dp(len);
  for (std::size_t i = 0; i < len; ++i) {
    const double* p_row = probs + i * len;
    const double* doi = dout + (seg.start + i) * d + col0;
    const std::size_t limit = layout.causal ? i + 1 : len;
    double dot = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      dp[j] = 0.0;
      const double pj = p_row[j];
      if (pj == 0.0) continue;
      const double* vj = v + (seg.start + j) * d + col0;
      double* dvj = dv + (seg.start + j) * d + col0;
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) {
        s += doi[c] * vj[c];
        dvj[c] += pj * doi[c];
      }
      dp[j] = s;
      dot += pj * s;
    }
    const double* qi = q + (seg.start + i) * d + col0;
    double* dqi = dq + (seg.start + i) * d + col0;
    for (std::size_t j = 0; j < limit; ++j) {
      const double pj = p_row[j];
      if (pj == 0.0) continue;
      const double ds = pj * (dp[j] - dot) * scale;
      const double* kj = k + (seg.start + j) * d + col0;
      double* dkj = dk + (seg.start + j) * d + col0;
      for (std::size_t c = 0; c < dh; ++c) {
        dqi[c] += ds * kj[c];
        dkj[c] += ds * qi[c];
      }
    }
  }
}

}  // namespace

std::size_t attention_prob_count(const AttentionLayout& layout) {
  return prob_offsets(layout).back();
}

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    matmul_nt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    matmul_tn_row(a.data(), i, b.data(), c.data() + i * n, m, k, n, accumulate);
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       std::size_t d, const AttentionLayout& layout) {
  const auto offsets = prob_offsets(layout);
  for (std::size_t s = 0; s < layout.segments.size(); ++s) {
    const auto& seg = layout.segments[s];
    for (std::size_t h = 0; h < layout.n_heads; ++h)
      attention_unit_forward(q.data(), k.data(), v.data(), out.data(),
                             probs.data() + offsets[s] + h * seg.length * seg.length, d, layout,
                             seg, h);
  }
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, std::size_t d, const AttentionLayout& layout) {
  const auto offsets = prob_offsets(layout);
  for (std::size_t s = 0; s < layout.segments.size(); ++s) {
    const auto& seg = layout.segments[s];
    for (std::size_t h = 0; h < layout.n_heads; ++h)
      attention_unit_backward(q.data(), k.data(), v.data(),
                              probs.data() + offsets[s] + h * seg.length * seg.length,
                              dout.data(), dq.data(), dk.data(), dv.data(), d, layout, seg, h);
  }
}

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i)
    matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i)
    matmul_nt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i)
    matmul_tn_row(a.data(), static_cast<std::size_t>(i), b.data(), c.data() + i * n, m, k, n,
                  accumulate);
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       std::size_t d, const AttentionLayout& layout) {
  const auto offsets = prob_offsets(layout);
  const long units = static_cast<long>(layout.segments.size() * layout.n_heads);
#pragma omp parallel for schedule(dynamic) if (offsets.back() * d > kParallelWork)
  for (long u = 0; u < units; ++u) {
    const std::size_t s = static_cast<std::size_t>(u) / layout.n_heads;
    const std::size_t h = static_cast<std::size_t>(u) % layout.n_heads;
    const auto& seg = layout.segments[s];
    attention_unit_forward(q.data(), k.data(), v.data(), out.data(),
                           probs.data() + offsets[s] + h * seg.length * seg.length, d, layout, seg,
                           h);
  }
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, std::size_t d, const AttentionLayout& layout) {
  const auto offsets = prob_offsets(layout);
  const long units = static_cast<long>(layout.segments.size() * layout.n_heads);
  // Units touch disjoint (row range, column block) regions, so no reduction races.
#pragma omp parallel for schedule(dynamic) if (offsets.back() * d > kParallelWork)
  for (long u = 0; u < units; ++u) {
    const std::size_t s = static_cast<std::size_t>(u) / layout.n_heads;
    const std::size_t h = static_cast<std::size_t>(u) % layout.n_heads;
    const auto& seg = layout.segments[s];
    attention_unit_backward(q.data(), k.data(), v.data(),
                            probs.data() + offsets[s] + h * seg.length * seg.length, dout.data(),
                            dq.data(), dk.data(), dv.data(), d, layout, seg, h);
  }
}

}  // namespace parallel

}  // namespace lite::kernels
