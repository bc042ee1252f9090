#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lgloc/detector.hpp"
#include "lgloc/readout.hpp"

using namespace lgloc;

namespace {

const BeamGeometry kNominal(0.633, 77.48);

DetectorModel grid(double pitch, int n, NoiseParams noise = NoiseParams::disabled()) {
  DetectorModel d;
  d.pixel_pitch = pitch;
  d.rows = n;
  d.cols = n;
  d.noise = noise;
  return d;
}

// Per-pixel Fisher information E[(d ln P / d mu)^2] from a brute-force readout density:
// full Poisson sum, trapezoid over a wide X grid, central differences in mu.
double brute_pixel_fisher(const NoiseParams& noise, double mu) {
  auto density = [&](double x, double m) {
    double s = 0.0;
    const int top = static_cast<int>(m + 12.0 * std::sqrt(m) + 40.0);
    for (int n = 0; n <= top; ++n) {
      const double lp = n * std::log(m) - m - std::lgamma(n + 1.0);
      s += std::exp(lp) * response_density(noise, x, n);
    }
    return s;
  };
  const double h = 1e-4 * mu;
  const double sd = std::sqrt(mu + noise.readout_variance(mu + 12 * std::sqrt(mu) + 40));
  const double lo = mu + noise.b_mean - 14.0 * sd;
  const double hi = mu + noise.b_mean + 14.0 * sd;
  const int steps = 6000;
  double acc = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double x = lo + (hi - lo) * i / steps;
    const double p = density(x, mu);
    const double d = (density(x, mu + h) - density(x, mu - h)) / (2 * h);
    const double t = p > 0.0 ? d * d / p : 0.0;
    acc += (i == 0 || i == steps ? 0.5 : 1.0) * t;
  }
  return acc * (hi - lo) / steps;
}

}  // namespace

TEST(PixelMeans, PhotonConservationAndSymmetry) {
  const auto spec = ModeSpec::lg(0, 0);
  const double w = kNominal.waist();
  const auto det = grid(w / 4.0, 64);  // spans 16 w
  const auto m = expected_pixel_means(spec, kNominal, Pose{}, det, 1e4, false);
  EXPECT_GE(m.total(), 0.9999 * 1e4);
  EXPECT_LE(m.total(), 1e4 * (1 + 1e-12));
  EXPECT_NEAR(m.total(), 1e4, 1e-9 * 1e4);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      const double a = m.values[static_cast<std::size_t>(r * 64 + c)];
      const double b = m.values[static_cast<std::size_t>(c * 64 + (63 - r))];
      EXPECT_NEAR(a, b, 1e-12 * m.max());
    }
}

TEST(PixelMeans, QuadratureSelfConvergence) {
  const double w = kNominal.waist();
  for (const auto& spec : {ModeSpec::lg(0, 0), ModeSpec::lg(1, 2)}) {
    const PsfModel psf(spec, kNominal);
    const auto det = grid(w / 4.0, 48);
    const Vec3 theta{3.0, -5.0, 0.5 * kNominal.rayleigh_range()};
    const auto a = expected_pixel_means(psf, theta, det, 1e4, false);
    const auto b = expected_pixel_means(psf, theta, det, 1e4, false, PixelQuadrature{12, 0.25});
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (b.values[k] < 1e-6 * b.max()) continue;
      EXPECT_LE(std::abs(a.values[k] - b.values[k]), 1e-8 * b.values[k]) << k;
    }
  }
}

TEST(PixelMeans, GradientMatchesFiniteDifferences) {
  const PsfModel psf(ModeSpec::equal_superposition({{0, 0}, {2, 0}}), kNominal);
  const auto det = grid(13.0, 40);
  const Vec3 theta{4.0, -2.0, 0.3 * kNominal.rayleigh_range()};
  const auto m = expected_pixel_means(psf, theta, det, 1e4, true);
  const double steps[3] = {1e-3, 1e-3, 1.0};
  for (int i = 0; i < 3; ++i) {
    Vec3 tp = theta, tm = theta;
    tp[static_cast<std::size_t>(i)] += steps[i];
    tm[static_cast<std::size_t>(i)] -= steps[i];
    const auto mp = expected_pixel_means(psf, tp, det, 1e4, false);
    const auto mm = expected_pixel_means(psf, tm, det, 1e4, false);
    double scale = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) scale = std::max(scale, std::abs(m.grad(k, i)));
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double fd = (mp.values[k] - mm.values[k]) / (2 * steps[i]);
      EXPECT_NEAR(m.grad(k, i), fd, 1e-6 * scale) << i << ' ' << k;
    }
  }
}

TEST(ResponseDensity, CalibrationValues) {
  const NoiseParams n;
  EXPECT_NEAR(n.readout_variance(100.0), 7.1 * 7.1 + std::exp(1.4 * std::log(100.0) - 0.7), 1e-12);
  EXPECT_NEAR(n.signal_variance(100.0), std::exp(5.7472), 1e-3 * 313.0);
  EXPECT_EQ(n.readout_variance(0.0), 7.1 * 7.1);
  // Density peaks at N + 515.6.
  const double at = response_density(n, 100.0 + 515.6, 100.0);
  EXPECT_GT(at, response_density(n, 100.0 + 515.6 + 0.01, 100.0));
  EXPECT_GT(at, response_density(n, 100.0 + 515.6 - 0.01, 100.0));
}

TEST(ResponseDensity, IntegratesToOne) {
  // Gauss-Hermite with 40 nodes via the Golub-Welsch-free route: substitute x = m + sqrt(2) s t
  // into a Gauss-Legendre rule over a wide window, which is exact to double precision here.
  const NoiseParams n;
  for (double nk : {0.0, 3.0, 100.0, 5000.0}) {
    const double sd = std::sqrt(n.readout_variance(nk));
    const double m = nk + n.b_mean;
    const auto rule = quad::composite_gauss_legendre(m - 20 * sd, m + 20 * sd, 40, 16);
    double s = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * response_density(n, rule.nodes[i], nk);
    EXPECT_NEAR(s, 1.0, 1e-10);
  }
}

TEST(SampleFrame, Deterministic) {
  const auto det = grid(13.0, 24, NoiseParams{});
  const auto m = expected_pixel_means(ModeSpec::lg(0, 0), kNominal, Pose{}, det, 1e4, false);
  const auto a = sample_frame(7, 3, m, det.noise);
  const auto b = sample_frame(7, 3, m, det.noise);
  EXPECT_EQ(a.readouts, b.readouts);
  const auto c = sample_frame(7, 4, m, det.noise);
  EXPECT_NE(a.readouts, c.readouts);
}

TEST(SampleFrame, ShotNoiseMoments) {
  const auto det = grid(26.0, 16);
  const auto m = expected_pixel_means(ModeSpec::lg(0, 0), kNominal, Pose{}, det, 1e4, false);
  const int frames = 10000;
  std::vector<double> sum(m.size(), 0.0);
  for (int f = 0; f < frames; ++f) {
    const auto fr = sample_frame(11, static_cast<std::uint64_t>(f), m, det.noise);
    for (std::size_t k = 0; k < m.size(); ++k) sum[k] += fr.readouts[k];
  }
  std::size_t good = 0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double se = std::sqrt(std::max(m.values[k], 1e-300) / frames);
    if (std::abs(sum[k] / frames - m.values[k]) <= 4.0 * se || m.values[k] < 1e-12) ++good;
  }
  EXPECT_GE(static_cast<double>(good), 0.99 * static_cast<double>(m.size()));
}

TEST(SampleFrame, NoisyVarianceFollowsTotalVarianceLaw) {
  const NoiseParams noise;
  PixelMeanMap m;
  m.rows = 1;
  m.cols = 4;
  m.values = {0.0, 2.0, 50.0, 400.0};
  const int frames = 20000;
  for (std::size_t k = 0; k < m.size(); ++k) {
    // Model variance: mu + b_sigma^2 + E[sigma_c^2(N)], with the expectation over Poisson(mu).
    const double mu = m.values[k];
    double ec = 0.0;
    const int top = static_cast<int>(mu + 12 * std::sqrt(mu) + 30);
    for (int n = 1; n <= top; ++n) ec += std::exp(n * std::log(std::max(mu, 1e-300)) - mu - std::lgamma(n + 1.0)) * noise.signal_variance(n);
    const double var = mu + noise.b_sigma * noise.b_sigma + ec;
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;
    std::vector<double> xs(frames);
    for (int f = 0; f < frames; ++f) {
      xs[static_cast<std::size_t>(f)] = sample_frame(5, static_cast<std::uint64_t>(f), m, noise).readouts[k];
      s1 += xs[static_cast<std::size_t>(f)];
    }
    const double mean = s1 / frames;
    for (double x : xs) {
      s2 += (x - mean) * (x - mean);
      s4 += std::pow(x - mean, 4);
    }
    const double sv = s2 / (frames - 1);
    const double m4 = s4 / frames;
    const double se = std::sqrt((m4 - sv * sv) / frames);
    EXPECT_NEAR(sv, var, 5.0 * se) << "mu=" << mu;
    EXPECT_NEAR(mean, mu + noise.b_mean, 5.0 * std::sqrt(var / frames));
  }
}

TEST(Snr, Values) {
  PixelMeanMap m;
  m.rows = 2;
  m.cols = 2;
  m.values = {100.0, 100.0, 100.0, 100.0};
  EXPECT_NEAR(snr(m, NoiseParams::disabled()), 10.0, 1e-12);
  for (auto& v : m.values) v *= 4;
  EXPECT_NEAR(snr(m, NoiseParams::disabled()), 20.0, 1e-12);
  m.values.assign(4, 0.0);
  EXPECT_THROW(snr(m, NoiseParams{}), Error);
}

TEST(Snr, NominalConditionsRegression) {
  const auto det = grid(13.0, 64, NoiseParams{});
  const auto m = expected_pixel_means(ModeSpec::lg(0, 0), kNominal, Pose{}, det, 1e4, false);
  EXPECT_NEAR(snr(m, det.noise), 2.2653964522, 1e-8);
}

TEST(Readout, AttenuationMatchesBruteForce) {
  const NoiseParams noise;
  const ReadoutModel model(noise);
  for (double mu : {0.05, 1.0, 7.0, 40.0, 300.0}) {
    const double brute = brute_pixel_fisher(noise, mu) * mu;
    EXPECT_NEAR(model.attenuation_exact(mu), brute, 1e-6 * brute) << mu;
    EXPECT_LE(model.attenuation_exact(mu), 1.0);
  }
}

TEST(Readout, TableMatchesExact) {
  const ReadoutModel model(NoiseParams{}, 2000.0);
  for (double mu : {1e-6, 0.013, 0.5, 3.3, 17.0, 123.4, 1999.0}) {
    EXPECT_NEAR(model.attenuation(mu), model.attenuation_exact(mu), 1e-7 * model.attenuation_exact(mu)) << mu;
  }
  EXPECT_EQ(model.attenuation(0.0), 0.0);
}

TEST(Readout, ScoreMatchesFiniteDifferences) {
  const ReadoutModel model(NoiseParams{});
  for (double mu : {0.3, 12.0, 250.0})
    for (double x : {500.0, 520.0, 515.6 + mu, 515.6 + 2 * mu + 30}) {
      const auto t = model.evaluate(x, mu);
      const double h = 1e-5 * mu;
      const double fd = (model.evaluate(x, mu + h).log_p - model.evaluate(x, mu - h).log_p) / (2 * h);
      EXPECT_NEAR(t.dlogp_dmu, fd, 1e-6 * (std::abs(fd) + 1.0 / mu));
    }
}

TEST(Readout, NoiselessIsPoisson) {
  const ReadoutModel model(NoiseParams::disabled());
  const auto t = model.evaluate(3.0, 2.0);
  EXPECT_NEAR(t.log_p, 3 * std::log(2.0) - 2.0 - std::log(6.0), 1e-14);
  EXPECT_EQ(model.attenuation(5.0), 1.0);
  EXPECT_THROW(model.evaluate(-1.0, 2.0), Error);
}
