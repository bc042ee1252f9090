#pragma once

// Monte Carlo experiments: simulate frame stacks per detection plane, fit every frame,
// and compare grouped variances with the practical and ideal Cramer-Rao bounds.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "lgloc/detector.hpp"
#include "lgloc/estimator.hpp"
#include "lgloc/fisher.hpp"
#include "lgloc/readout.hpp"
#include "lgloc/rng.hpp"

namespace lgloc {

/// One incoherent part of the simulated source. Several parts model an imperfect beam.
struct SourceComponent {
  ModeSpec spec;
  BeamGeometry geom;
  double weight = 1.0;
};

struct ExperimentConfig {
  ModeSpec spec = ModeSpec::lg(0, 0);         ///< model used by the fits
  BeamGeometry geom{0.633, 77.48};
  DetectorModel detector{};
  double photons = 1e4;
  std::vector<double> z_planes{0.0};
  double x_e = 0.0;
  double y_e = 0.0;
  int frames_per_plane = 200;
  int groups = 20;
  bool paired = false;
  std::uint64_t seed = 1;
  EstimatorOptions estimator{};
  std::vector<SourceComponent> source;  ///< empty: simulate the fit model itself
  int threads = 0;                      ///< 0: hardware concurrency
  bool keep_estimates = false;

  void validate() const {
    detector.validate();
    estimator.validate();
    if (!(photons > 0.0)) throw Error(ErrorKind::config, "experiment: photons must be > 0");
    if (z_planes.empty()) throw Error(ErrorKind::config, "experiment: no z planes");
    if (frames_per_plane < 2 || groups < 1) throw Error(ErrorKind::config, "experiment: need >= 2 frames and >= 1 group");
    if (frames_per_plane % groups != 0) {
      throw Error(ErrorKind::config, "experiment: frames per plane must be divisible by groups");
    }
    if (frames_per_plane / groups < 2) throw Error(ErrorKind::config, "experiment: need >= 2 frames per group");
    for (const auto& c : source)
      if (!(c.weight > 0.0)) throw Error(ErrorKind::config, "experiment: source weights must be > 0");
  }
};

struct PlaneReport {
  double z = 0.0;
  std::vector<std::string> labels;
  Eigen::VectorXd truth;
  Eigen::VectorXd mean_estimate;
  Eigen::VectorXd variance;        ///< mean of the group variances
  Eigen::VectorXd variance_error;  ///< sd of the group variances / sqrt(groups)
  Eigen::VectorXd variance_pooled; ///< all accepted frames at once
  Eigen::VectorXd crb_practical;   ///< diag of crb(cfi_pixelated) for the fit model
  Eigen::VectorXd crb_ideal;       ///< diag of crb(ideal CFI), spatial parameters only
  std::size_t fits = 0;
  std::size_t failures = 0;
  double convergence_rate = 0.0;
  bool degraded = false;
  std::string crb_note;
  std::vector<Eigen::VectorXd> estimates;  ///< per frame (or per pair difference), when kept
};

struct VarianceReport {
  std::vector<PlaneReport> planes;
  bool degraded = false;
};

/// Grouped variance statistics of a list of samples (rows: samples, cols: parameters).
struct GroupedVariance {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::VectorXd error;
  Eigen::VectorXd pooled;
};

inline GroupedVariance grouped_variance(const std::vector<Eigen::VectorXd>& samples, int groups, double scale = 1.0) {
  if (samples.empty()) throw Error(ErrorKind::invalid_argument, "grouped_variance: no samples");
  const auto dim = samples.front().size();
  const std::size_t n = samples.size();
  GroupedVariance g;
  g.mean = Eigen::VectorXd::Zero(dim);
  for (const auto& s : samples) g.mean += s;
  g.mean /= static_cast<double>(n);
  g.pooled = Eigen::VectorXd::Zero(dim);
  for (const auto& s : samples) g.pooled += (s - g.mean).cwiseAbs2();
  g.pooled *= scale / static_cast<double>(std::max<std::size_t>(n - 1, 1));
  const std::size_t per = n / static_cast<std::size_t>(groups);
  std::vector<Eigen::VectorXd> gv;
  for (int k = 0; k < groups && per >= 2; ++k) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
    for (std::size_t i = 0; i < per; ++i) m += samples[static_cast<std::size_t>(k) * per + i];
    m /= static_cast<double>(per);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    for (std::size_t i = 0; i < per; ++i) v += (samples[static_cast<std::size_t>(k) * per + i] - m).cwiseAbs2();
    gv.push_back(v * scale / static_cast<double>(per - 1));
  }
  g.variance = Eigen::VectorXd::Zero(dim);
  g.error = Eigen::VectorXd::Zero(dim);
  if (gv.empty()) {
    g.variance = g.pooled;
    return g;
  }
  for (const auto& v : gv) g.variance += v;
  g.variance /= static_cast<double>(gv.size());
  if (gv.size() > 1) {
    for (const auto& v : gv) g.error += (v - g.variance).cwiseAbs2();
    g.error = (g.error / static_cast<double>(gv.size() - 1)).cwiseSqrt() / std::sqrt(static_cast<double>(gv.size()));
  }
  return g;
}

namespace detail {

/// Runs `job(i)` for i in [0, n) on up to `threads` workers; results land by index.
template <class Job>
void parallel_for(std::size_t n, int threads, Job&& job) {
  unsigned hw = std::thread::hardware_concurrency();
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads) : std::max(1u, hw);
  workers = std::min(workers, std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) job(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Expected photon counts of the simulated source at a pose.
inline PixelMeanMap source_means(const ExperimentConfig& cfg, double x, double y, double z) {
  if (cfg.source.empty()) {
    return expected_pixel_means(PsfModel(cfg.spec, cfg.geom), {x, y, z}, cfg.detector, cfg.photons, false);
  }
  double total = 0.0;
  for (const auto& c : cfg.source) total += c.weight;
  PixelMeanMap sum;
  for (const auto& c : cfg.source) {
    const auto m = expected_pixel_means(PsfModel(c.spec, c.geom), {x, y, z}, cfg.detector, cfg.photons * c.weight / total, false);
    if (sum.values.empty()) {
      sum = m;
    } else {
      for (std::size_t k = 0; k < m.size(); ++k) sum.values[k] += m.values[k];
    }
  }
  return sum;
}

/// Parameter vector of the fit model at the true pose.
inline Eigen::VectorXd truth_vector(const ExperimentConfig& cfg, double z) {
  const bool model_b = cfg.estimator.model == PixelModel::B;
  Eigen::VectorXd t(model_b ? 5 : 3);
  t(0) = cfg.x_e;
  t(1) = cfg.y_e;
  t(2) = cfg.estimator.parameterization == Parameterization::xyz ? z : geometry_at(cfg.geom, -z).w;
  if (model_b) {
    t(3) = cfg.photons;
    t(4) = cfg.detector.noise.offset();
  }
  return t;
}

/// Practical CRB diagonal (frame units) for the fit model at the true pose.
inline Eigen::VectorXd practical_crb(const ExperimentConfig& cfg, const Eigen::VectorXd& truth,
                                     const ReadoutModel* readout) {
  EstimatorOptions o = cfg.estimator;
  PsfModel psf(cfg.spec, cfg.geom, o.parameterization);
  const FisherMatrix f = cfi_pixelated(psf, {truth(0), truth(1), truth(2)}, cfg.detector, o.model, cfg.photons, readout);
  return crb(f, cfg.photons).variances();
}

/// Ideal-intensity CRB diagonal for the spatial parameters.
inline Eigen::VectorXd ideal_crb(const ExperimentConfig& cfg, double z) {
  FisherMatrix f;
  if (cfg.spec.is_single()) {
    const auto& c = cfg.spec.components().front();
    f = cfg.estimator.parameterization == Parameterization::xyz ? cfi_ideal_lg(c.l, c.p, cfg.geom, z)
                                                                : cfi_ideal_lg_width(c.l, c.p, geometry_at(cfg.geom, -z).w);
  } else {
    f = cfi_ideal_numeric(PsfModel(cfg.spec, cfg.geom, cfg.estimator.parameterization),
                          {cfg.x_e, cfg.y_e, z});
  }
  return crb(f, cfg.photons).variances();
}

inline VarianceReport run_experiment(const ExperimentConfig& cfg,
                                     std::shared_ptr<const ReadoutModel> readout = nullptr) {
  cfg.validate();
  if (cfg.estimator.model == PixelModel::A && !readout) {
    readout = std::make_shared<ReadoutModel>(cfg.detector.noise, cfg.photons);
  }
  EstimatorOptions opts = cfg.estimator;
  opts.photons = cfg.photons;
  const LocalizationProblem problem(cfg.spec, cfg.geom, cfg.detector, opts, readout);
  VarianceReport report;
  const int beams = cfg.paired ? 2 : 1;
  for (std::size_t pi = 0; pi < cfg.z_planes.size(); ++pi) {
    const double z = cfg.z_planes[pi];
    PlaneReport plane;
    plane.z = z;
    plane.labels = problem.labels();
    plane.truth = truth_vector(cfg, z);
    const auto means = source_means(cfg, cfg.x_e, cfg.y_e, z);
    const std::size_t jobs = static_cast<std::size_t>(cfg.frames_per_plane) * beams;
    std::vector<std::optional<EstimateResult>> fits(jobs);
    detail::parallel_for(jobs, cfg.threads, [&](std::size_t i) {
      const auto beam = static_cast<std::uint64_t>(i % static_cast<std::size_t>(beams));
      const auto frame_id = static_cast<std::uint64_t>(i / static_cast<std::size_t>(beams));
      const Frame f = sample_frame(cfg.seed, frame_stream(pi, beam, frame_id), means, cfg.detector.noise);
      try {
        fits[i] = problem.fit(f, problem.initialize(f));
      } catch (const Error&) {
        fits[i].reset();
      }
    });
    std::vector<Eigen::VectorXd> samples;
    std::size_t ok = 0;
    for (int k = 0; k < cfg.frames_per_plane; ++k) {
      bool good = true;
      for (int b = 0; b < beams; ++b) {
        const auto& r = fits[static_cast<std::size_t>(k * beams + b)];
        if (!r || !r->converged) good = false;
      }
      ok += good ? beams : 0;
      if (!good) continue;
      if (cfg.paired) {
        samples.push_back(fits[static_cast<std::size_t>(2 * k)]->theta_hat - fits[static_cast<std::size_t>(2 * k + 1)]->theta_hat);
      } else {
        samples.push_back(fits[static_cast<std::size_t>(k)]->theta_hat);
      }
    }
    plane.fits = jobs;
    plane.failures = jobs - ok;
    plane.convergence_rate = static_cast<double>(ok) / static_cast<double>(jobs);
    plane.degraded = static_cast<double>(plane.failures) > 0.05 * static_cast<double>(jobs);
    report.degraded = report.degraded || plane.degraded;
    if (samples.size() >= 2) {
      // Paired differences carry twice the single-beam variance.
      const auto g = grouped_variance(samples, cfg.groups, cfg.paired ? 0.5 : 1.0);
      plane.variance = g.variance;
      plane.variance_error = g.error;
      plane.variance_pooled = g.pooled;
      plane.mean_estimate = Eigen::VectorXd::Zero(plane.truth.size());
      std::size_t count = 0;
      for (int k = 0; k < cfg.frames_per_plane; ++k)
        for (int b = 0; b < beams; ++b) {
          const auto& r = fits[static_cast<std::size_t>(k * beams + b)];
          if (r && r->converged) {
            plane.mean_estimate += r->theta_hat;
            ++count;
          }
        }
      plane.mean_estimate /= static_cast<double>(std::max<std::size_t>(count, 1));
    }
    try {
      plane.crb_practical = practical_crb(cfg, plane.truth, readout.get());
      plane.crb_ideal = ideal_crb(cfg, z);
    } catch (const Error& e) {
      plane.crb_note = e.what();
    }
    if (cfg.keep_estimates) plane.estimates = std::move(samples);
    report.planes.push_back(std::move(plane));
  }
  return report;
}

/// Sentinel returned by psnr when the images are identical.
inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

/// PSNR = 10 log10(MAX_K^2 / MSE) with MAX_K the reference maximum.
inline double psnr(std::span<const double> observed, std::span<const double> reference) {
  if (observed.size() != reference.size() || observed.empty()) {
    throw Error(ErrorKind::invalid_argument, "psnr: images must have the same nonzero size");
  }
  std::vector<double> sq(observed.size());
  for (std::size_t i = 0; i < observed.size(); ++i) sq[i] = (observed[i] - reference[i]) * (observed[i] - reference[i]);
  const double mse = quad::pairwise_sum(sq) / static_cast<double>(sq.size());
  if (mse == 0.0) return kPsnrInfinite;
  const double peak = *std::max_element(reference.begin(), reference.end());
  return 10.0 * std::log10(peak * peak / mse);
}

/// Mean of a stack minus the offset, normalized to unit maximum.
inline std::vector<double> normalized_mean_image(const std::vector<Frame>& frames, double offset) {
  if (frames.empty()) throw Error(ErrorKind::invalid_argument, "normalized_mean_image: empty stack");
  std::vector<double> m(frames.front().size(), 0.0);
  for (const auto& f : frames)
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += f.readouts[k];
  for (auto& v : m) v = v / static_cast<double>(frames.size()) - offset;
  const double top = *std::max_element(m.begin(), m.end());
  if (!(top > 0.0)) throw Error(ErrorKind::numerical, "normalized_mean_image: no signal");
  for (auto& v : m) v /= top;
  return m;
}

struct PsnrReference {
  std::vector<double> image;  ///< amplitude * model image, same layout as the data
  Vec3 theta{0.0, 0.0, 0.0};  ///< fitted (x_e, y_e, w) for single modes, (x_e, y_e, z_e) otherwise
  double amplitude = 0.0;
};

/// Least-squares fit of amplitude * pixelated model to a background-subtracted, normalized mean
/// image (Levenberg-Marquardt on the pose, amplitude solved in closed form each step).
inline PsnrReference fitted_reference(std::span<const double> image, const ModeSpec& spec, const BeamGeometry& geom,
                                      const DetectorModel& det, Vec3 start, int max_iter = 60) {
  if (image.size() != det.pixel_count()) throw Error(ErrorKind::invalid_argument, "fitted_reference: image size mismatch");
  const PsfModel psf(spec, geom, spec.is_single() ? Parameterization::xyw : Parameterization::xyz);
  auto eval = [&](const Vec3& t, bool grad) { return expected_pixel_means(psf, t, det, 1.0, grad); };
  auto amplitude = [&](const PixelMeanMap& m) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) {
      num += m.values[k] * image[k];
      den += m.values[k] * m.values[k];
    }
    return den > 0.0 ? num / den : 0.0;
  };
  auto cost = [&](const PixelMeanMap& m, double a) {
    double c = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) c += (a * m.values[k] - image[k]) * (a * m.values[k] - image[k]);
    return c;
  };
  Vec3 theta = start;
  auto m = eval(theta, true);
  double a = amplitude(m);
  double c = cost(m, a);
  double lambda = 1e-3;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
    Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
    for (std::size_t k = 0; k < m.size(); ++k) {
      const Eigen::Vector3d g(a * m.grad(k, 0), a * m.grad(k, 1), a * m.grad(k, 2));
      jtj += g * g.transpose();
      jtr += g * (a * m.values[k] - image[k]);
    }
    bool accepted = false;
    for (int tries = 0; tries < 20 && !accepted; ++tries) {
      Eigen::Matrix3d lhs = jtj;
      lhs.diagonal() *= 1.0 + lambda;
      const Eigen::Vector3d step = lhs.ldlt().solve(-jtr);
      Vec3 trial{theta[0] + step(0), theta[1] + step(1), theta[2] + step(2)};
      if (psf.parameterization() == Parameterization::xyw && !(trial[2] > 0.0)) {
        lambda *= 10.0;
        continue;
      }
      auto mt = eval(trial, false);
      const double at = amplitude(mt);
      const double ct = cost(mt, at);
      if (ct <= c) {
        const bool done = c - ct <= 1e-14 * (c + 1e-300);
        theta = trial;
        c = ct;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        m = eval(theta, true);
        a = amplitude(m);
        if (done) it = max_iter;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  PsnrReference r;
  r.theta = theta;
  r.amplitude = a;
  r.image.resize(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) r.image[k] = a * m.values[k];
  return r;
}

struct WidthSample {
  double z = 0.0;
  double w = 0.0;
  double var_w = 0.0;
};

struct BeamQuality {
  double w0 = 0.0;
  double z0 = 0.0;
  double z_r = 0.0;               ///< Rayleigh range of the fitted hyperbola
  double divergence_ratio = 0.0;  ///< fitted divergence over that of an ideal beam with the fitted waist
  double m_squared = 0.0;         ///< divergence_ratio * (2p + |l| + 1)
};

/// Weighted least squares of w^2(z) = w0^2 [1 + ((z - z0)/z_R)^2], as a quadratic in z.
inline BeamQuality fit_beam_quality(const std::vector<WidthSample>& samples, int l, int p, double wavelength) {
  std::vector<double> zs;
  for (const auto& s : samples) zs.push_back(s.z);
  std::sort(zs.begin(), zs.end());
  if (std::unique(zs.begin(), zs.end()) - zs.begin() < 4) {
    throw Error(ErrorKind::invalid_argument, "fit_beam_quality: need >= 4 distinct z samples");
  }
  if (p < 0 || !(wavelength > 0.0)) throw Error(ErrorKind::invalid_argument, "fit_beam_quality: bad mode or wavelength");
  const double zscale = std::max(std::abs(zs.front()), std::abs(zs.back()));
  Eigen::MatrixXd a(static_cast<Eigen::Index>(samples.size()), 3);
  Eigen::VectorXd b(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!(s.w > 0.0)) throw Error(ErrorKind::invalid_argument, "fit_beam_quality: widths must be positive");
    // var(w^2) = 4 w^2 var(w); unit weights when no variance is given.
    const double sd = s.var_w > 0.0 ? 2.0 * s.w * std::sqrt(s.var_w) : 1.0;
    const double u = s.z / zscale;
    const auto r = static_cast<Eigen::Index>(i);
    a(r, 0) = 1.0 / sd;
    a(r, 1) = u / sd;
    a(r, 2) = u * u / sd;
    b(r) = s.w * s.w / sd;
  }
  const Eigen::Vector3d c = a.colPivHouseholderQr().solve(b);
  const double c0 = c(0), c1 = c(1) / zscale, c2 = c(2) / (zscale * zscale);
  if (!c.allFinite() || !(c2 > 0.0)) throw Error(ErrorKind::numerical, "fit_beam_quality: hyperbola fit did not converge");
  const double w0sq = c0 - c1 * c1 / (4.0 * c2);
  if (!(w0sq > 0.0)) throw Error(ErrorKind::numerical, "fit_beam_quality: fitted waist is not real");
  BeamQuality q;
  q.w0 = std::sqrt(w0sq);
  q.z0 = -c1 / (2.0 * c2);
  q.z_r = q.w0 / std::sqrt(c2);
  const double ideal = wavelength / (std::numbers::pi * q.w0);
  q.divergence_ratio = std::sqrt(c2) / ideal;
  q.m_squared = q.divergence_ratio * (2.0 * p + std::abs(l) + 1.0);
  return q;
}

enum class SweepAxis { pixel_pitch, snr, z_plane };

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::pixel_pitch: return "pixel_pitch";
    case SweepAxis::snr: return "snr";
    case SweepAxis::z_plane: return "z_plane";
  }
  return "?";
}

struct SweepRow {
  double axis_value = 0.0;
  double snr = std::numeric_limits<double>::quiet_NaN();
  Eigen::Vector3d cfi = Eigen::Vector3d::Zero();    ///< per photon, spatial diagonal
  Eigen::Vector3d qfi = Eigen::Vector3d::Zero();
  Eigen::Vector3d ratio = Eigen::Vector3d::Zero();  ///< cfi / qfi
};

struct SweepConfig {
  ModeSpec spec = ModeSpec::lg(0, 0);
  BeamGeometry geom{0.633, 77.48};
  DetectorModel detector{};
  double photons = 1e4;
  double z_e = 0.0;
  PixelModel model = PixelModel::A;  ///< pixelated information model for pitch and snr sweeps
  SweepAxis axis = SweepAxis::z_plane;
  std::vector<double> values;        ///< pitch (um), photon count, or z_e (um)
  double extent = 0.0;               ///< pitch sweep: detector side length kept fixed (0: current)
};

/// Information curves behind the pitch, SNR and defocus studies. For the pitch axis the grid
/// side stays fixed, so halving sequences of pitches give nested pixel partitions.
inline std::vector<SweepRow> sweep(const SweepConfig& cfg) {
  if (cfg.values.empty()) throw Error(ErrorKind::config, "sweep: empty axis range");
  const Eigen::Vector3d q = qfi(cfg.spec, cfg.geom).values.diagonal();
  std::vector<SweepRow> rows;
  for (double v : cfg.values) {
    SweepRow row;
    row.axis_value = v;
    row.qfi = q;
    if (cfg.axis == SweepAxis::z_plane) {
      if (cfg.spec.is_single()) {
        const auto& c = cfg.spec.components().front();
        row.cfi = cfi_ideal_lg(c.l, c.p, cfg.geom, v).values.diagonal();
      } else {
        row.cfi = cfi_ideal_numeric(cfg.spec, cfg.geom, v).values.diagonal();
      }
    } else {
      DetectorModel det = cfg.detector;
      double photons = cfg.photons;
      if (cfg.axis == SweepAxis::pixel_pitch) {
        if (!(v > 0.0)) throw Error(ErrorKind::config, "sweep: pitch must be > 0");
        const double side = cfg.extent > 0.0 ? cfg.extent : det.pixel_pitch * det.cols;
        det.pixel_pitch = v;
        det.cols = det.rows = std::max(2, static_cast<int>(std::lround(side / v)));
      } else {
        if (!(v > 0.0)) throw Error(ErrorKind::config, "sweep: photon count must be > 0");
        photons = v;
      }
      const PsfModel psf(cfg.spec, cfg.geom);
      const Vec3 theta{0.0, 0.0, cfg.z_e};
      const PixelModel model = cfg.model == PixelModel::B ? PixelModel::A : cfg.model;
      row.cfi = cfi_pixelated(psf, theta, det, model, photons).values.diagonal().head(3);
      row.snr = snr(expected_pixel_means(psf, theta, det, photons, false), det.noise.enabled ? det.noise : NoiseParams::disabled());
    }
    for (int i = 0; i < 3; ++i) row.ratio(i) = row.qfi(i) > 0.0 ? row.cfi(i) / row.qfi(i) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

struct AmbiguityPoint {
  double z = 0.0;
  double mean_loglik = 0.0;
  double sem = 0.0;  ///< standard error of the mean over frames
};

/// Mean Model A log-likelihood over simulated frames versus hypothesized z, lateral position
/// held at the truth.
inline std::vector<AmbiguityPoint> ambiguity_scan(const ModeSpec& spec, const BeamGeometry& geom,
                                                  const DetectorModel& det, const Pose& truth,
                                                  const std::vector<double>& z_grid, double photons, int frames,
                                                  std::uint64_t seed) {
  if (z_grid.empty() || frames < 2) throw Error(ErrorKind::invalid_argument, "ambiguity_scan: need a grid and >= 2 frames");
  EstimatorOptions o;
  o.model = PixelModel::A;
  o.parameterization = Parameterization::xyz;
  o.photons = photons;
  const LocalizationProblem problem(spec, geom, det, o);
  const auto means = expected_pixel_means(problem.psf(), {truth.x_e, truth.y_e, truth.z_e}, det, photons, false);
  std::vector<Frame> stack;
  for (int f = 0; f < frames; ++f) stack.push_back(sample_frame(seed, frame_stream(0, 0, static_cast<std::uint64_t>(f)), means, det.noise));
  std::vector<AmbiguityPoint> out;
  for (double z : z_grid) {
    Eigen::VectorXd t(3);
    t << truth.x_e, truth.y_e, z;
    std::vector<double> ll;
    for (const auto& f : stack) ll.push_back(problem.log_likelihood(f, t));
    AmbiguityPoint p;
    p.z = z;
    p.mean_loglik = quad::pairwise_sum(ll) / frames;
    double ss = 0.0;
    for (double v : ll) ss += (v - p.mean_loglik) * (v - p.mean_loglik);
    p.sem = std::sqrt(ss / (frames - 1) / frames);
    out.push_back(p);
  }
  return out;
}

}  // namespace lgloc
