#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lgloc/harness.hpp"

using namespace lgloc;

namespace {

const BeamGeometry kNominal(0.633, 77.48);

std::vector<Eigen::VectorXd> normal_samples(std::size_t n, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Eigen::VectorXd> s(n, Eigen::VectorXd(dim));
  for (auto& v : s)
    for (int i = 0; i < dim; ++i) v(i) = g(rng);
  return s;
}

double width_at(double w0, double zr, double z, double inflate = 1.0) {
  const double u = inflate * z / zr;
  return w0 * std::sqrt(1.0 + u * u);
}

ExperimentConfig small_experiment() {
  ExperimentConfig c;
  c.detector.rows = c.detector.cols = 40;
  c.frames_per_plane = 40;
  c.groups = 4;
  c.z_planes = {0.5 * kNominal.rayleigh_range()};
  c.threads = 1;
  return c;
}

double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy * sxy / (sxx * syy);
}

}  // namespace

TEST(GroupedVariance, SixHundredFramesInTwentyGroupsOfThirty) {
  std::mt19937_64 rng(11);
  const auto s = normal_samples(600, 2, rng);
  const auto g = grouped_variance(s, 20);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(2);
  for (int k = 0; k < 20; ++k) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(2);
    for (int i = 0; i < 30; ++i) m += s[k * 30 + i] / 30.0;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(2);
    for (int i = 0; i < 30; ++i) v += (s[k * 30 + i] - m).cwiseAbs2() / 29.0;
    expect += v / 20.0;
  }
  EXPECT_NEAR((g.variance - expect).cwiseAbs().maxCoeff(), 0.0, 1e-14);
  ExperimentConfig c;
  c.frames_per_plane = 600;
  c.groups = 20;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.frames_per_plane / c.groups, 30);
}

TEST(GroupedVariance, IdenticalPairedStreamsGiveZero) {
  std::mt19937_64 rng(3);
  const auto left = normal_samples(200, 3, rng);
  std::vector<Eigen::VectorXd> diff;
  for (const auto& v : left) diff.push_back(v - v);
  const auto g = grouped_variance(diff, 20, 0.5);
  EXPECT_EQ(g.variance.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.error.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GroupedVariance, PairedScaleHalvesDifferenceVariance) {
  std::mt19937_64 rng(5);
  const auto a = normal_samples(4000, 1, rng);
  const auto b = normal_samples(4000, 1, rng);
  std::vector<Eigen::VectorXd> d;
  for (std::size_t i = 0; i < a.size(); ++i) d.push_back(a[i] - b[i]);
  const auto g = grouped_variance(d, 20, 0.5);
  EXPECT_NEAR(g.variance(0), 1.0, 4.0 * g.error(0));
}

TEST(GroupedVariance, QuadruplingFramesHalvesErrorBar) {
  std::mt19937_64 rng(17);
  double e200 = 0, e800 = 0;
  const int reps = 400;
  for (int r = 0; r < reps; ++r) {
    e200 += grouped_variance(normal_samples(200, 1, rng), 20).error(0) / reps;
    e800 += grouped_variance(normal_samples(800, 1, rng), 20).error(0) / reps;
  }
  // Group sizes 10 and 40: sqrt(39/9) = 2.08 for Gaussian data.
  EXPECT_NEAR(e200 / e800, 2.0, 0.2);
}

TEST(GroupedVariance, ConfigRejectsIndivisibleGroups) {
  ExperimentConfig c;
  c.frames_per_plane = 201;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Psnr, IdenticalImagesGiveInfiniteSentinel) {
  std::vector<double> a{0.1, 0.5, 1.0, 0.2};
  EXPECT_EQ(psnr(a, a), kPsnrInfinite);
}

TEST(Psnr, ConstructedMseGivesTwentyDecibels) {
  std::vector<double> ref(100, 0.0), obs(100, 0.0);
  ref[0] = 1.0;
  for (std::size_t i = 0; i < obs.size(); ++i) obs[i] = ref[i] + (i % 2 == 0 ? 0.1 : -0.1);
  EXPECT_NEAR(psnr(obs, ref), 20.0, 1e-12);
  EXPECT_THROW(psnr(std::vector<double>(3), ref), Error);
}

TEST(Psnr, FittedReferenceRecoversNoiselessImage) {
  DetectorModel det;
  det.rows = det.cols = 32;
  det.noise = NoiseParams::disabled();
  const PsfModel psf(ModeSpec::lg(0, 0), kNominal, Parameterization::xyw);
  const auto m = expected_pixel_means(psf, {4.0, -3.0, 90.0}, det, 1.0, false);
  std::vector<double> img = m.values;
  const double top = m.max();
  for (auto& v : img) v /= top;
  const auto r = fitted_reference(img, ModeSpec::lg(0, 0), kNominal, det, {0.0, 0.0, 80.0});
  EXPECT_NEAR(r.theta[0], 4.0, 1e-6);
  EXPECT_NEAR(r.theta[1], -3.0, 1e-6);
  EXPECT_NEAR(r.theta[2], 90.0, 1e-6);
  EXPECT_GT(psnr(img, r.image), 150.0);
}

TEST(Psnr, HighestNearFocusAcrossZScan) {
  DetectorModel det;
  det.rows = det.cols = 48;
  const double zr = kNominal.rayleigh_range();
  const std::vector<double> planes{-1.5 * zr, -0.75 * zr, 0.0, 0.75 * zr, 1.5 * zr};
  const PsfModel psf(ModeSpec::lg(0, 0), kNominal);
  std::vector<double> values;
  for (std::size_t pi = 0; pi < planes.size(); ++pi) {
    const auto means = expected_pixel_means(psf, {0.0, 0.0, planes[pi]}, det, 1e4, false);
    std::vector<Frame> stack;
    for (int f = 0; f < 50; ++f) stack.push_back(sample_frame(9, frame_stream(pi, 0, f), means, det.noise));
    const auto img = normalized_mean_image(stack, det.noise.offset());
    const auto ref = fitted_reference(img, ModeSpec::lg(0, 0), kNominal, det, {0.0, 0.0, psf.width({0.0, 0.0, planes[pi]})});
    values.push_back(psnr(img, ref.image));
  }
  const auto best = std::max_element(values.begin(), values.end()) - values.begin();
  EXPECT_EQ(best, 2);
  EXPECT_GT(values[2], values[0]);
  EXPECT_GT(values[2], values[4]);
}

TEST(BeamQuality, IdealGaussianHasUnitRatio) {
  const double w0 = kNominal.waist(), zr = kNominal.rayleigh_range();
  std::vector<WidthSample> s;
  for (int i = -10; i <= 10; ++i) s.push_back({i * 3000.0, width_at(w0, zr, i * 3000.0), 0.0});
  const auto q = fit_beam_quality(s, 0, 0, kNominal.wavelength());
  EXPECT_NEAR(q.divergence_ratio, 1.0, 1e-6);
  EXPECT_NEAR(q.w0, w0, 1e-6 * w0);
  EXPECT_NEAR(q.z_r, zr, 1e-6 * zr);
  EXPECT_NEAR(q.z0, 0.0, 1e-6 * zr);
}

TEST(BeamQuality, HigherOrderModeUsesItsOwnTheory) {
  // Mode-own widths w0 sqrt(1+(z/zR)^2) give ratio 1; the raw factor is 2p+|l|+1.
  const double w0 = kNominal.waist(), zr = kNominal.rayleigh_range();
  std::vector<WidthSample> s;
  for (int i = 0; i <= 20; ++i) s.push_back({-30000.0 + i * 3000.0, width_at(w0, zr, -30000.0 + i * 3000.0), 0.25});
  const auto q = fit_beam_quality(s, 1, 2, kNominal.wavelength());
  EXPECT_NEAR(q.divergence_ratio, 1.0, 1e-6);
  EXPECT_NEAR(q.m_squared, 6.0, 6e-6);
}

TEST(BeamQuality, InflatedDivergenceIsRecovered) {
  const double w0 = kNominal.waist(), zr = kNominal.rayleigh_range();
  std::vector<WidthSample> s;
  for (int i = -10; i <= 10; ++i) s.push_back({i * 3000.0 + 1500.0, width_at(w0, zr, i * 3000.0 + 1500.0, 1.42), 0.0});
  const auto q = fit_beam_quality(s, 0, 0, kNominal.wavelength());
  EXPECT_NEAR(q.divergence_ratio, 1.42, 1e-6);
  EXPECT_NEAR(q.m_squared, 1.42, 1e-6);
}

TEST(BeamQuality, RejectsTooFewPlanes) {
  std::vector<WidthSample> s{{0, 80, 0}, {1000, 81, 0}, {2000, 82, 0}, {2000, 82, 0}};
  EXPECT_THROW(fit_beam_quality(s, 0, 0, 0.633), Error);
}

TEST(Sweep, PitchThresholdAndMonotoneRatio) {
  SweepConfig c;
  c.axis = SweepAxis::pixel_pitch;
  c.model = PixelModel::noiseless;
  c.detector.noise = NoiseParams::disabled();
  c.extent = 832.0;
  c.values = {208, 104, 52, 26, 13, 6.5, 3.25};
  const auto rows = sweep(c);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GE(rows[i].ratio(0), rows[i - 1].ratio(0) - 1e-12);
  // Frozen threshold: waist/pitch >= 5.96 (13 um pitch) keeps the lateral ratio within 1% of 1.
  for (const auto& r : rows) {
    if (kNominal.waist() / r.axis_value >= 5.96) {
      EXPECT_NEAR(r.ratio(0), 1.0, 0.01) << r.axis_value;
    } else {
      EXPECT_LT(r.ratio(0), 0.99) << r.axis_value;
    }
  }
}

TEST(Sweep, SnrRatioMonotoneAndLinearInMidRange) {
  SweepConfig c;
  c.axis = SweepAxis::snr;
  c.z_e = 0.5 * kNominal.rayleigh_range();
  c.detector.rows = c.detector.cols = 48;
  // Mid range: SNR from 0.04 to 0.94, below the nominal operating point (SNR 1.94 at N = 1e4).
  c.values = {100, 141, 200, 283, 400, 566, 800, 1131, 1600, 2263, 3200};
  const auto rows = sweep(c);
  std::vector<double> snr, lat, ax;
  for (const auto& r : rows) {
    snr.push_back(r.snr);
    lat.push_back(r.ratio(0));
    ax.push_back(r.ratio(2));
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GT(snr[i], snr[i - 1]);
    EXPECT_GT(lat[i], lat[i - 1]);
    EXPECT_GT(ax[i], ax[i - 1]);
  }
  EXPECT_GT(r_squared(snr, lat), 0.95);
  EXPECT_GT(r_squared(snr, ax), 0.95);
}

TEST(Sweep, DefocusCurvesPeakAtFocusAndRayleighRange) {
  SweepConfig c;
  const double zr = kNominal.rayleigh_range();
  c.axis = SweepAxis::z_plane;
  for (int i = -20; i <= 20; ++i) c.values.push_back(i * 0.1 * zr);
  const auto rows = sweep(c);
  std::size_t lat = 0, ax = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].cfi(0) > rows[lat].cfi(0)) lat = i;
    if (rows[i].cfi(2) > rows[ax].cfi(2) + 1e-15) ax = i;
  }
  EXPECT_DOUBLE_EQ(rows[lat].axis_value, 0.0);
  EXPECT_NEAR(std::abs(rows[ax].axis_value), zr, 1e-9 * zr);
  EXPECT_NEAR(rows[30].cfi(2), rows[10].cfi(2), 1e-12 * rows[30].cfi(2));
}

TEST(Sweep, EmptyRangeIsConfigError) {
  SweepConfig c;
  try {
    sweep(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Ambiguity, SingleModeProfileIsEven) {
  DetectorModel det;
  det.rows = det.cols = 40;
  const double zr = kNominal.rayleigh_range();
  std::vector<double> grid;
  for (int i = -6; i <= 6; ++i) grid.push_back(i * 0.1 * zr);
  const auto prof = ambiguity_scan(ModeSpec::lg(0, 0), kNominal, det, {0, 0, 0.3 * zr}, grid, 1e4, 8, 21);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& a = prof[i];
    const auto& b = prof[grid.size() - 1 - i];
    EXPECT_NEAR(a.mean_loglik, b.mean_loglik, 1e-9 * std::abs(a.mean_loglik));
  }
}

TEST(Ambiguity, RotationModeHasUniqueMaximumAtTruth) {
  DetectorModel det;
  det.rows = det.cols = 40;
  const double zr = kNominal.rayleigh_range();
  const double step = 0.1 * zr;
  std::vector<double> grid;
  for (int i = -6; i <= 6; ++i) grid.push_back(i * step);
  const auto spec = ModeSpec::equal_superposition({{0, 0}, {2, 0}});
  const auto prof = ambiguity_scan(spec, kNominal, det, {0, 0, 0.3 * zr}, grid, 1e4, 8, 21);
  std::size_t best = 0;
  for (std::size_t i = 0; i < prof.size(); ++i)
    if (prof[i].mean_loglik > prof[best].mean_loglik) best = i;
  EXPECT_LT(std::abs(prof[best].z - 0.3 * zr), step);
  // The mirror image is clearly worse.
  EXPECT_GT(prof[best].mean_loglik - prof[3].mean_loglik, 10.0 * prof[3].sem);
}

TEST(Ambiguity, FocusTruthPeaksAtZero) {
  // With the truth at focus a single LG mode is flat to second order in z, so the frame count
  // must resolve the width change of one grid step (about 12 standard errors here).
  DetectorModel det;
  det.rows = det.cols = 40;
  const double zr = kNominal.rayleigh_range();
  std::vector<double> grid;
  for (int i = -2; i <= 2; ++i) grid.push_back(i * 0.2 * zr);
  for (const auto& spec : {ModeSpec::lg(0, 0), ModeSpec::equal_superposition({{0, 0}, {2, 0}})}) {
    const auto prof = ambiguity_scan(spec, kNominal, det, {0, 0, 0}, grid, 1e4, 300, 4);
    std::size_t best = 0;
    for (std::size_t i = 0; i < prof.size(); ++i)
      if (prof[i].mean_loglik > prof[best].mean_loglik) best = i;
    EXPECT_DOUBLE_EQ(prof[best].z, 0.0) << spec.describe();
  }
}

TEST(Experiment, CrbOverlayIdealBelowPractical) {
  const double zr = kNominal.rayleigh_range();
  for (const auto& spec : {ModeSpec::lg(0, 0), ModeSpec::lg(0, 1), ModeSpec::lg(1, 0)}) {
    for (double z : {0.25 * zr, 0.5 * zr, 1.0 * zr}) {
      ExperimentConfig c;
      c.spec = spec;
      c.estimator.parameterization = Parameterization::xyz;
      const auto practical = practical_crb(c, truth_vector(c, z), nullptr);
      const auto ideal = ideal_crb(c, z);
      for (int i = 0; i < 3; ++i) EXPECT_LE(ideal(i), practical(i)) << spec.describe() << " z=" << z << " i=" << i;
    }
  }
}

TEST(Experiment, PracticalCrbImprovesWithRadialIndex) {
  const double z = 0.5 * kNominal.rayleigh_range();
  Eigen::VectorXd prev;
  for (int p = 0; p <= 2; ++p) {
    ExperimentConfig c;
    c.spec = ModeSpec::lg(0, p);
    c.estimator.parameterization = Parameterization::xyz;
    const auto v = practical_crb(c, truth_vector(c, z), nullptr);
    if (p > 0) {
      EXPECT_LT(v(0), prev(0));
      EXPECT_LT(v(2), prev(2));
    }
    prev = v;
  }
}

TEST(Experiment, ReportIsReproducibleAndThreadIndependent) {
  auto c = small_experiment();
  c.keep_estimates = true;
  const auto a = run_experiment(c);
  const auto b = run_experiment(c);
  c.threads = 3;
  const auto d = run_experiment(c);
  ASSERT_EQ(a.planes.size(), 1u);
  for (const auto* r : {&b, &d}) {
    const auto& p = r->planes[0];
    EXPECT_EQ(p.variance, a.planes[0].variance);
    EXPECT_EQ(p.mean_estimate, a.planes[0].mean_estimate);
    EXPECT_EQ(p.crb_practical, a.planes[0].crb_practical);
    ASSERT_EQ(p.estimates.size(), a.planes[0].estimates.size());
    for (std::size_t i = 0; i < p.estimates.size(); ++i) EXPECT_EQ(p.estimates[i], a.planes[0].estimates[i]);
  }
  const auto& p = a.planes[0];
  EXPECT_EQ(p.fits, 40u);
  EXPECT_FALSE(p.degraded);
  for (int i = 0; i < 3; ++i) EXPECT_LE(p.crb_ideal(i), p.crb_practical(i));
  c.seed = 2;
  EXPECT_NE(run_experiment(c).planes[0].variance, p.variance);
}

TEST(Experiment, PairedModeReportsHalfDifferenceVariance) {
  auto c = small_experiment();
  c.paired = true;
  c.frames_per_plane = 80;
  c.groups = 4;
  const auto r = run_experiment(c);
  const auto& p = r.planes[0];
  EXPECT_EQ(p.fits, 160u);
  for (int i = 0; i < 3; ++i) {
    // var(diff)/2 estimates the single-beam variance; 80 pairs give ~16% relative spread.
    EXPECT_GT(p.variance(i), 0.5 * p.crb_practical(i));
    EXPECT_LT(p.variance(i), 2.0 * p.crb_practical(i));
  }
}

TEST(Experiment, RotationModeBeatsConstituentsAxiallyNearFocus) {
  const double z = 0.2 * kNominal.rayleigh_range();
  auto axial_variance = [&](const ModeSpec& spec) {
    ExperimentConfig c;
    c.spec = spec;
    c.detector.rows = c.detector.cols = 48;
    c.estimator.parameterization = Parameterization::xyz;
    c.z_planes = {z};
    c.frames_per_plane = 20;
    c.groups = 2;
    c.threads = 1;
    const auto r = run_experiment(c);
    return r.planes[0].variance_pooled(2);
  };
  const double rot = axial_variance(ModeSpec::equal_superposition({{0, 0}, {2, 0}}));
  EXPECT_LT(rot, axial_variance(ModeSpec::lg(0, 0)));
  EXPECT_LT(rot, axial_variance(ModeSpec::lg(2, 0)));
}

TEST(Experiment, DegradedFlagWhenFitsFail) {
  auto c = small_experiment();
  c.estimator.max_iter = 1;
  const auto r = run_experiment(c);
  EXPECT_TRUE(r.degraded);
  EXPECT_TRUE(r.planes[0].degraded);
  EXPECT_GT(r.planes[0].failures, 2u);
}
