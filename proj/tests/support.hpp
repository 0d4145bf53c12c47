#pragma once
// Shared helpers for the unit and acceptance tests: random tensors and a
// centered finite-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lite/tensor.hpp"
#include "lite/util.hpp"

namespace testing {

inline lite::Tensor random_tensor(lite::Shape shape, lite::Rng& rng, double lo = -2.0, double hi = 2.0,
                                  bool requires_grad = true) {
  std::vector<double> v(lite::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return lite::Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// One parameter entry probed by the oracle.
struct Probe {
  lite::Tensor* tensor;
  std::size_t index;
};

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "analytic vs numeric" of the worst entry
};

/// Compares analytic gradients of `loss` (built fresh on each call) against
/// centered differences with step h at every probe.
inline GradCheck check_gradients(const std::function<lite::ad::Var(lite::ad::Graph&)>& loss,
                                 const std::vector<lite::Tensor*>& params, const std::vector<Probe>& probes,
                                 double h = 1e-5) {
  for (auto* p : params) p->clear_grad();
  {
    lite::ad::Graph g;
    g.backward(loss(g));
  }
  GradCheck out;
  for (const auto& pr : probes) {
    const double analytic = pr.tensor->has_grad() ? pr.tensor->grad()[pr.index] : 0.0;
    const double orig = (*pr.tensor)[pr.index];
    auto eval = [&](double x) {
      (*pr.tensor)[pr.index] = x;
      lite::ad::Graph g(false);
      return loss(g).value().item();
    };
    const double plus = eval(orig + h);
    const double minus = eval(orig - h);
    (*pr.tensor)[pr.index] = orig;
    const double numeric = (plus - minus) / (2.0 * h);
    const double err = relative_error(analytic, numeric);
    if (err >= out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = std::to_string(analytic) + " vs " + std::to_string(numeric);
    }
    ++out.checked;
  }
  return out;
}

/// Every entry of every parameter.
inline std::vector<Probe> all_entries(const std::vector<lite::Tensor*>& params) {
  std::vector<Probe> probes;
  for (auto* p : params)
    for (std::size_t i = 0; i < p->size(); ++i) probes.push_back({p, i});
  return probes;
}

/// Weighted sum with fixed random weights, so every output entry matters.
inline lite::ad::Var probe_sum(lite::ad::Graph& g, lite::ad::Var x, std::uint64_t seed = 99) {
  lite::Rng rng(seed);
  lite::Tensor w = random_tensor(x.shape(), rng, -1.0, 1.0, false);
  return lite::ad::sum(lite::ad::mul(x, g.constant(std::move(w))));
}

}  // namespace testing
