#pragma once

// Pixel-integrated photon means, the readout noise model and synthetic frames.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "lgloc/error.hpp"
#include "lgloc/psf.hpp"
#include "lgloc/quadrature.hpp"
#include "lgloc/rng.hpp"

namespace lgloc {

/// Readout noise: X = N_k + N_b + N_c with N_b ~ Normal(b_mean, b_sigma^2) and
/// N_c ~ Normal(0, sigma_c^2(N_k)), ln sigma_c^2 = c_alpha ln N_k + c_beta.
struct NoiseParams {
  double b_mean = 515.6;
  double b_sigma = 7.1;
  double c_alpha = 1.4;
  double c_beta = -0.7;
  bool enabled = true;

  static NoiseParams disabled() {
    NoiseParams n;
    n.enabled = false;
    return n;
  }

  /// sigma_c^2 at photon count n; zero for n <= 0.
  double signal_variance(double n) const { return n > 0.0 ? std::exp(c_alpha * std::log(n) + c_beta) : 0.0; }

  /// Readout variance given n photons, excluding the photon shot noise itself.
  double readout_variance(double n) const { return enabled ? b_sigma * b_sigma + signal_variance(n) : 0.0; }

  double offset() const { return enabled ? b_mean : 0.0; }

  void validate() const {
    if (!(b_sigma >= 0.0) || !std::isfinite(b_mean) || !std::isfinite(c_alpha) || !std::isfinite(c_beta)) {
      throw Error(ErrorKind::invalid_argument, "NoiseParams: b_sigma must be >= 0 and all fields finite");
    }
  }

  friend bool operator==(const NoiseParams&, const NoiseParams&) = default;
};

/// Pixel grid. Pixel (r, c) is centred at center_offset + ((c - (cols-1)/2), (r - (rows-1)/2)) * pitch.
struct DetectorModel {
  double pixel_pitch = 13.0;
  int rows = 64;
  int cols = 64;
  double center_x = 0.0;
  double center_y = 0.0;
  NoiseParams noise{};

  void validate() const {
    if (!(pixel_pitch > 0.0) || !std::isfinite(pixel_pitch)) {
      throw Error(ErrorKind::invalid_argument, "DetectorModel: pixel pitch must be positive");
    }
    if (rows < 1 || cols < 1 || static_cast<long long>(rows) * cols < 4) {
      throw Error(ErrorKind::invalid_argument, "DetectorModel: need rows, cols >= 1 and rows*cols >= 4");
    }
    noise.validate();
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  double pixel_x(int c) const { return center_x + (c - 0.5 * (cols - 1)) * pixel_pitch; }
  double pixel_y(int r) const { return center_y + (r - 0.5 * (rows - 1)) * pixel_pitch; }
};

/// Expected photon counts per pixel, optionally with d mu / d theta (row-major, `n_params` per pixel).
struct PixelMeanMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  int n_params = 0;
  std::vector<double> gradient;

  std::size_t size() const { return values.size(); }
  double grad(std::size_t k, int i) const { return gradient[k * static_cast<std::size_t>(n_params) + static_cast<std::size_t>(i)]; }
  double total() const { return quad::pairwise_sum(values); }
  double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
};

/// One detector frame of real-valued readouts.
struct Frame {
  int rows = 0;
  int cols = 0;
  std::vector<double> readouts;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  std::size_t size() const { return readouts.size(); }
};

struct PixelQuadrature {
  int order = 6;           ///< Gauss-Legendre nodes per axis per (sub)pixel
  double max_cell = 0.5;   ///< sub-pixel edge limit, in units of the PSF feature scale
};

/// mu_k = N * integral of I over pixel k; gradients integrate dI/dtheta on the same nodes.
inline PixelMeanMap expected_pixel_means(const PsfModel& psf, const Vec3& theta, const DetectorModel& det,
                                         double photons, bool with_gradient, PixelQuadrature pq = {}) {
  det.validate();
  PixelMeanMap map;
  map.rows = det.rows;
  map.cols = det.cols;
  map.values.assign(det.pixel_count(), 0.0);
  map.n_params = with_gradient ? 3 : 0;
  if (with_gradient) map.gradient.assign(det.pixel_count() * 3, 0.0);

  const double feature = psf.feature_scale(theta);
  const int sub = std::max(1, static_cast<int>(std::ceil(det.pixel_pitch / (pq.max_cell * feature) - 1e-12)));
  const auto& gl = quad::gauss_legendre(pq.order);
  // Node offsets within a pixel (relative to its centre) and tensor weights, normalized to pixel area.
  std::vector<double> off;
  std::vector<double> wt;
  const double cell = det.pixel_pitch / sub;
  for (int s = 0; s < sub; ++s) {
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      off.push_back(-0.5 * det.pixel_pitch + cell * (s + 0.5 * (gl.nodes[i] + 1.0)));
      wt.push_back(0.5 * cell * gl.weights[i]);
    }
  }
  const double cutoff = 1.5 * psf.support_radius(theta) + det.pixel_pitch;
  for (int r = 0; r < det.rows; ++r) {
    const double py = det.pixel_y(r);
    if (std::abs(py - theta[1]) > cutoff) continue;
    for (int c = 0; c < det.cols; ++c) {
      const double px = det.pixel_x(c);
      if (std::abs(px - theta[0]) > cutoff) continue;
      const std::size_t k = static_cast<std::size_t>(r) * det.cols + c;
      double acc = 0.0;
      double g0 = 0.0, g1 = 0.0, g2 = 0.0;
      for (std::size_t a = 0; a < off.size(); ++a) {
        const double y = py + off[a];
        for (std::size_t b = 0; b < off.size(); ++b) {
          const double x = px + off[b];
          const double wgt = wt[a] * wt[b];
          if (with_gradient) {
            const auto s = psf.sample(theta, x, y);
            acc += wgt * s.value;
            g0 += wgt * s.grad[0];
            g1 += wgt * s.grad[1];
            g2 += wgt * s.grad[2];
          } else {
            acc += wgt * psf.intensity(theta, x, y);
          }
        }
      }
      map.values[k] = photons * acc;
      if (with_gradient) {
        map.gradient[3 * k] = photons * g0;
        map.gradient[3 * k + 1] = photons * g1;
        map.gradient[3 * k + 2] = photons * g2;
      }
    }
  }
  return map;
}

inline PixelMeanMap expected_pixel_means(const ModeSpec& spec, const BeamGeometry& geom, const Pose& pose,
                                         const DetectorModel& det, double photons, bool with_gradient) {
  return expected_pixel_means(PsfModel(spec, geom, Parameterization::xyz), {pose.x_e, pose.y_e, pose.z_e}, det, photons,
                              with_gradient);
}

/// Density of readout X given n photons: Normal(n + b_mean, b_sigma^2 + sigma_c^2(n)).
/// Exact convolution of the two Gaussian noise terms.
inline double response_density(const NoiseParams& noise, double x, double n) {
  const double var = noise.b_sigma * noise.b_sigma + noise.signal_variance(n);
  const double d = x - n - noise.b_mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

/// Poisson photon draw plus readout noise, per pixel, from stream (seed, stream, pixel index).
inline Frame sample_frame(std::uint64_t seed, std::uint64_t stream, const PixelMeanMap& means, const NoiseParams& noise) {
  Frame f;
  f.rows = means.rows;
  f.cols = means.cols;
  f.seed = seed;
  f.stream = stream;
  f.readouts.resize(means.size());
  for (std::size_t k = 0; k < means.size(); ++k) {
    CounterRng rng(seed, stream, k);
    const double mu = means.values[k];
    double n = 0.0;
    if (mu > 0.0) n = static_cast<double>(std::poisson_distribution<long long>(mu)(rng));
    double x = n;
    if (noise.enabled) {
      x += std::normal_distribution<double>(noise.b_mean, noise.b_sigma)(rng);
      const double vc = noise.signal_variance(n);
      if (vc > 0.0) x += std::normal_distribution<double>(0.0, std::sqrt(vc))(rng);
    }
    f.readouts[k] = x;
  }
  return f;
}

/// Mean over signal-bearing pixels (mu > 1% of max) of mu / sqrt(mu + b_sigma^2 + sigma_c^2(mu)).
inline double snr(const PixelMeanMap& means, const NoiseParams& noise) {
  const double peak = means.max();
  double sum = 0.0;
  std::size_t count = 0;
  for (double mu : means.values) {
    if (!(mu > 0.01 * peak) || mu <= 0.0) continue;
    sum += mu / std::sqrt(mu + noise.readout_variance(mu));
    ++count;
  }
  if (count == 0) throw Error(ErrorKind::numerical, "snr: no signal-bearing pixels");
  return sum / static_cast<double>(count);
}

}  // namespace lgloc
