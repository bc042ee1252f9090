#pragma once

// Per-pixel readout law for the calibrated mixed-noise model ("Model A"):
//   P(X | mu) = sum_N Poisson(N; mu) * R(X | N),
// with R the Gaussian response density of detector.hpp. Provides the log-density,
// its mu-derivative, and the per-pixel Fisher attenuation factor
//   eta(mu) = integral dX [sum_N R P (N - mu)]^2 / (mu * sum_N R P),
// which multiplies the noiseless kernel (1/mu) dmu dmu.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "lgloc/detector.hpp"
#include "lgloc/quadrature.hpp"

namespace lgloc {

class ReadoutModel {
 public:
  /// `table_max_mu` > 0 tabulates eta(mu) on [1e-8, table_max_mu] for fast lookups.
  explicit ReadoutModel(NoiseParams noise, double table_max_mu = 0.0) : noise_(noise) {
    noise_.validate();
    if (noise_.enabled && !(noise_.b_sigma > 0.0)) {
      throw Error(ErrorKind::invalid_argument, "ReadoutModel: enabled noise needs b_sigma > 0");
    }
    var_.resize(kVarTable);
    log_norm_.resize(kVarTable);
    for (std::size_t n = 0; n < kVarTable; ++n) {
      var_[n] = noise_.b_sigma * noise_.b_sigma + noise_.signal_variance(static_cast<double>(n));
      log_norm_[n] = 0.5 * std::log(2.0 * std::numbers::pi * var_[n]);
    }
    if (table_max_mu > 0.0 && noise_.enabled) build_table(table_max_mu);
  }

  const NoiseParams& noise() const noexcept { return noise_; }

  /// Inclusive Poisson truncation window [lo, hi] for mean mu.
  static std::pair<long, long> poisson_window(double mu) {
    const double half = 8.0 * std::sqrt(std::max(mu, 0.0));
    const long lo = std::max(0L, static_cast<long>(std::floor(mu - half)));
    const long hi = static_cast<long>(std::ceil(mu + half)) + 20;
    return {lo, hi};
  }

  struct PixelTerms {
    double log_p = 0.0;      ///< ln P(X | mu)
    double dlogp_dmu = 0.0;  ///< d ln P / d mu
  };

  PixelTerms evaluate(double x, double mu) const {
    if (!noise_.enabled) {
      // Pure shot noise: Poisson density in the readout itself.
      if (x < 0.0) throw Error(ErrorKind::numerical, "readout model: negative readout with noise disabled");
      const double m = std::max(mu, 1e-300);
      return {x * std::log(m) - m - std::lgamma(x + 1.0), x / m - 1.0};
    }
    const double m = std::max(mu, 1e-300);
    const double log_mu = std::log(m);
    const auto [lo, hi] = poisson_window(m);
    const double gmax = -log_norm_[0];
    double lp = static_cast<double>(lo) * log_mu - m - std::lgamma(static_cast<double>(lo) + 1.0);
    double top = -std::numeric_limits<double>::infinity();
    double s0 = 0.0;
    double s1 = 0.0;
    for (long n = lo; n <= hi; ++n) {
      if (n > lo) lp += log_mu - std::log(static_cast<double>(n));
      if (static_cast<double>(n) > m && lp + gmax < top - 50.0) break;
      const double d = x - static_cast<double>(n) - noise_.b_mean;
      const double lt = lp - 0.5 * d * d / variance(n) - log_norm(n);
      if (lt > top) {
        const double scale = std::exp(top - lt);
        s0 *= scale;
        s1 *= scale;
        top = lt;
      }
      const double e = std::exp(lt - top);
      s0 += e;
      s1 += e * static_cast<double>(n);
    }
    return {top + std::log(s0), s1 / (s0 * m) - 1.0};
  }

  /// eta(mu) by 129-point Simpson over X in [mu + b - 10 sigma_max, mu + b + 10 sigma_max].
  double attenuation_exact(double mu) const {
    if (!noise_.enabled) return 1.0;
    if (!(mu > 0.0)) return 0.0;
    const double log_mu = std::log(mu);
    const auto [lo, hi] = poisson_window(mu);
    const double sigma_max = std::sqrt(variance(hi));
    const double centre = mu + noise_.b_mean;
    const double gmax = -log_norm_[0];
    auto integrand = [&](double x) {
      double lp = static_cast<double>(lo) * log_mu - mu - std::lgamma(static_cast<double>(lo) + 1.0);
      double top = -std::numeric_limits<double>::infinity();
      double a = 0.0;
      double b = 0.0;
      for (long n = lo; n <= hi; ++n) {
        if (n > lo) lp += log_mu - std::log(static_cast<double>(n));
        if (static_cast<double>(n) > mu && lp + gmax < top - 50.0) break;
        const double d = x - static_cast<double>(n) - noise_.b_mean;
        const double lt = lp - 0.5 * d * d / variance(n) - log_norm(n);
        if (lt > top) {
          const double scale = std::exp(top - lt);
          a *= scale;
          b *= scale;
          top = lt;
        }
        const double e = std::exp(lt - top);
        a += e;
        b += e * (static_cast<double>(n) - mu);
      }
      return std::exp(top) * b * b / (a * mu);
    };
    return quad::simpson(integrand, centre - 10.0 * sigma_max, centre + 10.0 * sigma_max, 129);
  }

  /// eta(mu); uses the table when one covers mu, otherwise the exact quadrature.
  double attenuation(double mu) const {
    if (!noise_.enabled) return 1.0;
    if (!(mu > 0.0)) return 0.0;
    if (table_.empty() || mu > table_max_) return attenuation_exact(mu);
    if (mu <= kTableMin) return table_.front() > -1e300 ? std::exp(table_.front()) * mu / kTableMin : 0.0;
    const double u = (std::log(mu) - std::log(kTableMin)) / table_step_;
    const auto n = static_cast<long>(table_.size());
    long i = std::clamp(static_cast<long>(std::floor(u)) - 1, 0L, n - 4);
    const double s = u - static_cast<double>(i);
    // 4-point Lagrange interpolation of ln eta on nodes i..i+3 (s in node units from node i).
    const double y0 = table_[static_cast<std::size_t>(i)];
    const double y1 = table_[static_cast<std::size_t>(i + 1)];
    const double y2 = table_[static_cast<std::size_t>(i + 2)];
    const double y3 = table_[static_cast<std::size_t>(i + 3)];
    const double l0 = -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0;
    const double l1 = s * (s - 2.0) * (s - 3.0) / 2.0;
    const double l2 = -s * (s - 1.0) * (s - 3.0) / 2.0;
    const double l3 = s * (s - 1.0) * (s - 2.0) / 6.0;
    return std::exp(l0 * y0 + l1 * y1 + l2 * y2 + l3 * y3);
  }

  double table_max() const noexcept { return table_max_; }

 private:
  static constexpr std::size_t kVarTable = 1 << 14;
  static constexpr double kTableMin = 1e-8;
  static constexpr int kNodesPerDecade = 128;

  double variance(long n) const {
    if (static_cast<std::size_t>(n) < kVarTable) return var_[static_cast<std::size_t>(n)];
    return noise_.b_sigma * noise_.b_sigma + noise_.signal_variance(static_cast<double>(n));
  }
  double log_norm(long n) const {
    if (static_cast<std::size_t>(n) < kVarTable) return log_norm_[static_cast<std::size_t>(n)];
    return 0.5 * std::log(2.0 * std::numbers::pi * variance(n));
  }

  void build_table(double max_mu) {
    table_step_ = std::log(10.0) / kNodesPerDecade;
    const double span = std::log(max_mu) - std::log(kTableMin);
    const auto nodes = static_cast<std::size_t>(std::ceil(span / table_step_)) + 3;
    table_.resize(std::max<std::size_t>(nodes, 4));
    for (std::size_t i = 0; i < table_.size(); ++i) {
      const double mu = kTableMin * std::exp(static_cast<double>(i) * table_step_);
      table_[i] = std::log(attenuation_exact(mu));
    }
    table_max_ = kTableMin * std::exp(static_cast<double>(table_.size() - 2) * table_step_);
  }

  NoiseParams noise_;
  std::vector<double> var_;
  std::vector<double> log_norm_;
  std::vector<double> table_;
  double table_step_ = 0.0;
  double table_max_ = 0.0;
};

}  // namespace lgloc
