#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "lgloc/error.hpp"

namespace lgloc::quad {

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendreRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

inline GaussLegendreRule compute_gauss_legendre(int n) {
  GaussLegendreRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // Tricomi initial guess, then Newton on P_n.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) {
        p1 = x;
        p0 = 1.0;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute derivative at the converged node.
    double p0 = 1.0;
    double p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = (n == 1) ? 1.0 : n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    const auto lo = static_cast<std::size_t>(i);
    const auto hi = static_cast<std::size_t>(n - 1 - i);
    rule.nodes[lo] = -x;
    rule.nodes[hi] = x;
    rule.weights[lo] = w;
    rule.weights[hi] = w;
  }
  if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
  return rule;
}

}  // namespace detail

/// Cached rule of order n. Thread-safe; returned references stay valid for the program lifetime.
inline const GaussLegendreRule& gauss_legendre(int n) {
  if (n < 1) throw Error(ErrorKind::invalid_argument, "gauss_legendre: order must be >= 1");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<GaussLegendreRule>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<GaussLegendreRule>(detail::compute_gauss_legendre(n));
  return *slot;
}

/// Nodes and weights of a composite rule: `panels` equal panels on [a, b], `order` nodes each.
struct CompositeRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline CompositeRule composite_gauss_legendre(double a, double b, int panels, int order) {
  const auto& base = gauss_legendre(order);
  CompositeRule out;
  out.nodes.reserve(static_cast<std::size_t>(panels * order));
  out.weights.reserve(static_cast<std::size_t>(panels * order));
  const double h = (b - a) / panels;
  for (int j = 0; j < panels; ++j) {
    const double lo = a + j * h;
    for (int i = 0; i < order; ++i) {
      out.nodes.push_back(lo + 0.5 * h * (base.nodes[static_cast<std::size_t>(i)] + 1.0));
      out.weights.push_back(0.5 * h * base.weights[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

/// Composite rule over arbitrary sorted panel breakpoints.
inline CompositeRule composite_gauss_legendre(std::span<const double> breaks, int order) {
  const auto& base = gauss_legendre(order);
  CompositeRule out;
  for (std::size_t j = 0; j + 1 < breaks.size(); ++j) {
    const double lo = breaks[j];
    const double h = breaks[j + 1] - lo;
    for (int i = 0; i < order; ++i) {
      out.nodes.push_back(lo + 0.5 * h * (base.nodes[static_cast<std::size_t>(i)] + 1.0));
      out.weights.push_back(0.5 * h * base.weights[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

/// Composite Simpson rule with an odd number of points (>= 3).
template <class F>
double simpson(F&& f, double a, double b, int points) {
  if (points < 3 || points % 2 == 0) {
    throw Error(ErrorKind::invalid_argument, "simpson: point count must be odd and >= 3");
  }
  const double h = (b - a) / (points - 1);
  double sum = f(a) + f(b);
  for (int i = 1; i < points - 1; ++i) sum += (i % 2 == 1 ? 4.0 : 2.0) * f(a + i * h);
  return sum * h / 3.0;
}

/// Fixed-order pairwise summation. The result depends only on the input order.
inline double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kBlock = 32;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace lgloc::quad
