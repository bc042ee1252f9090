#pragma once

// Pixel likelihoods, score and expected information for Models A and B, and the
// Fisher-scoring maximum-likelihood fit with backtracking step control.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lgloc/detector.hpp"
#include "lgloc/fisher.hpp"
#include "lgloc/psf.hpp"
#include "lgloc/readout.hpp"

namespace lgloc {

struct EstimatorOptions {
  PixelModel model = PixelModel::A;  ///< A or B
  Parameterization parameterization = Parameterization::xyw;
  double tol = 1e-6;      ///< scaled step tolerance (lengths / w0, counts / N)
  int max_iter = 100;
  double damping = 0.0;   ///< Levenberg-style diagonal loading of F, relative
  int branch = +1;        ///< sign of z_e used when a width is mapped to an axial position
  double photons = 1e4;   ///< calibrated photon count (Model A) and count scale (Model B)

  void validate() const {
    if (model == PixelModel::noiseless) {
      throw Error(ErrorKind::invalid_argument, "EstimatorOptions: model must be A or B");
    }
    if (!(tol > 0.0)) throw Error(ErrorKind::invalid_argument, "EstimatorOptions: tol must be > 0");
    if (max_iter < 1) throw Error(ErrorKind::invalid_argument, "EstimatorOptions: max_iter must be >= 1");
    if (!(damping >= 0.0)) throw Error(ErrorKind::invalid_argument, "EstimatorOptions: damping must be >= 0");
    if (branch != 1 && branch != -1) throw Error(ErrorKind::invalid_argument, "EstimatorOptions: branch must be +1 or -1");
    if (!(photons > 0.0)) throw Error(ErrorKind::invalid_argument, "EstimatorOptions: photons must be > 0");
  }
};

struct FitDiagnostics {
  std::vector<double> loglik;        ///< accepted log-likelihood per iteration, starting value first
  std::vector<double> scaled_steps;  ///< max scaled component of each accepted step
  std::vector<int> halvings;         ///< backtracking halvings per iteration
  int singular_iterations = 0;
  Eigen::VectorXd standardized_score;  ///< s_i / sqrt(F_ii) at the solution
  std::string message;
};

struct EstimateResult {
  Eigen::VectorXd theta_hat;
  std::vector<std::string> labels;
  bool converged = false;
  int iterations = 0;
  double final_loglik = 0.0;
  FisherMatrix fisher_at_solution;  ///< per photon, so crb(F, photons) is the covariance bound
  FitDiagnostics diagnostics;
};

/// One frame's likelihood surface for a fixed mode, geometry, detector and model.
class LocalizationProblem {
 public:
  struct Evaluation {
    double loglik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd fisher;  ///< expected information of the frame (not per photon)
  };

  LocalizationProblem(ModeSpec spec, BeamGeometry geom, DetectorModel det, EstimatorOptions opts,
                      std::shared_ptr<const ReadoutModel> readout = nullptr)
      : psf_(std::move(spec), geom, opts.parameterization), det_(std::move(det)), opts_(opts), readout_(std::move(readout)) {
    det_.validate();
    opts_.validate();
    if (opts_.model == PixelModel::A && !readout_) {
      readout_ = std::make_shared<ReadoutModel>(det_.noise, opts_.photons);
    }
  }

  const PsfModel& psf() const noexcept { return psf_; }
  const DetectorModel& detector() const noexcept { return det_; }
  const EstimatorOptions& options() const noexcept { return opts_; }
  std::shared_ptr<const ReadoutModel> readout() const { return readout_; }

  int dimension() const { return opts_.model == PixelModel::B ? 5 : 3; }

  std::vector<std::string> labels() const {
    auto l = spatial_labels(opts_.parameterization);
    if (opts_.model == PixelModel::B) {
      l.push_back("N");
      l.push_back("N_b");
    }
    return l;
  }

  double log_likelihood(const Frame& frame, const Eigen::VectorXd& theta) const {
    return evaluate(frame, theta, false).loglik;
  }

  Eigen::VectorXd score(const Frame& frame, const Eigen::VectorXd& theta) const {
    return evaluate(frame, theta, true).score;
  }

  Eigen::MatrixXd fisher(const Eigen::VectorXd& theta) const {
    check_theta(theta);
    const auto means = expected_pixel_means(psf_, spatial(theta), det_, photons_of(theta), true);
    if (opts_.model == PixelModel::B) return pixel_fisher_total(means, PixelModel::B, nullptr, theta(3), theta(4));
    return pixel_fisher_total(means, PixelModel::A, readout_.get(), opts_.photons, 0.0);
  }

  Evaluation evaluate(const Frame& frame, const Eigen::VectorXd& theta, bool derivatives, PixelQuadrature pq = {}) const {
    check_theta(theta);
    check_frame(frame);
    const double photons = photons_of(theta);
    const auto means = expected_pixel_means(psf_, spatial(theta), det_, photons, derivatives, pq);
    const std::size_t n = means.size();
    const int dim = dimension();
    std::vector<double> ll(n);
    std::vector<std::vector<double>> sc(derivatives ? static_cast<std::size_t>(dim) : 0, std::vector<double>(n, 0.0));
    const bool model_b = opts_.model == PixelModel::B;
    for (std::size_t k = 0; k < n; ++k) {
      const double x = frame.readouts[k];
      double dmu = 0.0;
      if (model_b) {
        const double mu = means.values[k] + theta(4);
        if (x < 0.0) throw Error(ErrorKind::numerical, "Model B likelihood: negative readout outside Poisson support");
        if (!(mu > 0.0)) throw Error(ErrorKind::numerical, "Model B likelihood: non-positive pixel mean");
        ll[k] = x * std::log(mu) - mu - log_factorial(x);
        dmu = x / mu - 1.0;
      } else {
        const auto t = readout_->evaluate(x, means.values[k]);
        ll[k] = t.log_p;
        dmu = t.dlogp_dmu;
      }
      if (derivatives) {
        for (int i = 0; i < 3; ++i) sc[static_cast<std::size_t>(i)][k] = dmu * means.grad(k, i);
        if (model_b) {
          sc[3][k] = dmu * (photons > 0.0 ? means.values[k] / photons : 0.0);
          sc[4][k] = dmu;
        }
      }
    }
    Evaluation ev;
    ev.loglik = quad::pairwise_sum(ll);
    if (derivatives) {
      ev.score.resize(dim);
      for (int i = 0; i < dim; ++i) ev.score(i) = quad::pairwise_sum(sc[static_cast<std::size_t>(i)]);
      ev.fisher = model_b ? pixel_fisher_total(means, PixelModel::B, nullptr, photons, theta(4))
                          : pixel_fisher_total(means, PixelModel::A, readout_.get(), photons, 0.0);
    }
    return ev;
  }

  /// Component scales for the convergence test: lengths by w0, counts by the photon scale.
  Eigen::VectorXd step_scales() const {
    Eigen::VectorXd s(dimension());
    s.head(3).setConstant(psf_.geometry().waist());
    if (opts_.model == PixelModel::B) s.tail(2).setConstant(opts_.photons);
    return s;
  }

  EstimateResult fit(const Frame& frame, const Eigen::VectorXd& init) const {
    check_theta(init);
    const int dim = dimension();
    const Eigen::VectorXd scales = step_scales();
    EstimateResult res;
    res.labels = labels();
    Eigen::VectorXd theta = init;
    Evaluation ev = evaluate(frame, theta, true);
    res.diagnostics.loglik.push_back(ev.loglik);
    int singular_run = 0;
    for (int it = 1; it <= opts_.max_iter; ++it) {
      res.iterations = it;
      Eigen::MatrixXd f = ev.fisher;
      if (opts_.damping > 0.0) f.diagonal() *= 1.0 + opts_.damping;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f);
      const auto& evals = es.eigenvalues();
      const double top = evals.cwiseAbs().maxCoeff();
      Eigen::VectorXd step;
      if (!(evals.minCoeff() > 1e-12 * top) || !(top > 0.0)) {
        ++singular_run;
        ++res.diagnostics.singular_iterations;
        if (singular_run >= 3) {
          throw Error(ErrorKind::singular, "fisher scoring: information matrix singular for 3 consecutive iterations");
        }
        // Pseudo-inverse step restricted to the well-determined subspace.
        Eigen::VectorXd inv = Eigen::VectorXd::Zero(dim);
        for (int i = 0; i < dim; ++i)
          if (evals(i) > 1e-12 * top) inv(i) = 1.0 / evals(i);
        step = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose() * ev.score;
      } else {
        singular_run = 0;
        step = f.ldlt().solve(ev.score);
      }
      if (!step.allFinite()) throw Error(ErrorKind::numerical, "fisher scoring: non-finite step");
      const double scaled = step.cwiseQuotient(scales).cwiseAbs().maxCoeff();
      if (scaled < opts_.tol) {
        theta += step;
        keep_feasible(theta);
        ev = evaluate(frame, theta, true);
        res.diagnostics.loglik.push_back(ev.loglik);
        res.diagnostics.scaled_steps.push_back(scaled);
        res.diagnostics.halvings.push_back(0);
        res.converged = true;
        break;
      }
      // Backtracking: halve until the likelihood does not decrease.
      double t = 1.0;
      int halvings = 0;
      Eigen::VectorXd cand;
      double cand_ll = -std::numeric_limits<double>::infinity();
      bool accepted = false;
      const double slack = 1e-12 * (std::abs(ev.loglik) + 1.0);
      for (;;) {
        cand = theta + t * step;
        if (feasible(cand)) {
          try {
            cand_ll = log_likelihood(frame, cand);
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::numerical) throw;
            cand_ll = -std::numeric_limits<double>::infinity();
          }
          if (cand_ll >= ev.loglik - slack) {
            accepted = true;
            break;
          }
        }
        if (halvings == 10) break;
        t *= 0.5;
        ++halvings;
      }
      if (!accepted) {
        res.diagnostics.message = "backtracking exhausted without likelihood ascent";
        res.diagnostics.halvings.push_back(halvings);
        // A failed line search with a step already near tolerance is the optimum at rounding level.
        res.converged = scaled < 1e3 * opts_.tol;
        break;
      }
      theta = cand;
      ev = evaluate(frame, theta, true);
      res.diagnostics.loglik.push_back(ev.loglik);
      res.diagnostics.scaled_steps.push_back(t * scaled);
      res.diagnostics.halvings.push_back(halvings);
    }
    res.theta_hat = theta;
    res.final_loglik = ev.loglik;
    res.fisher_at_solution.labels = res.labels;
    res.fisher_at_solution.kind = opts_.model == PixelModel::B ? FisherKind::cfi_pixelated_B : FisherKind::cfi_pixelated_A;
    res.fisher_at_solution.values = ev.fisher / photons_of(theta);
    Eigen::VectorXd z(dim);
    for (int i = 0; i < dim; ++i) z(i) = ev.fisher(i, i) > 0.0 ? ev.score(i) / std::sqrt(ev.fisher(i, i)) : ev.score(i);
    res.diagnostics.standardized_score = z;
    if (!res.converged && res.diagnostics.message.empty()) res.diagnostics.message = "max_iter reached";
    return res;
  }

  /// Starting point from background-subtracted moments of the frame.
  Eigen::VectorXd initialize(const Frame& frame) const;

  /// Spatial part and the photon count implied by a parameter vector.
  Vec3 spatial(const Eigen::VectorXd& theta) const { return {theta(0), theta(1), theta(2)}; }
  double photons_of(const Eigen::VectorXd& theta) const {
    return opts_.model == PixelModel::B ? theta(3) : opts_.photons;
  }

 private:
  static double log_factorial(double x) {
    // Stirling with the 1/2 ln(2 pi x) term for large readouts, exact log-Gamma otherwise.
    if (x >= 100.0) return x * std::log(x) - x + 0.5 * std::log(2.0 * std::numbers::pi * x);
    return std::lgamma(x + 1.0);
  }

  void check_theta(const Eigen::VectorXd& theta) const {
    if (theta.size() != dimension()) {
      throw Error(ErrorKind::invalid_argument, "parameter vector has " + std::to_string(theta.size()) +
                                                   " entries, model needs " + std::to_string(dimension()));
    }
    if (!theta.allFinite()) throw Error(ErrorKind::invalid_argument, "parameter vector is not finite");
    if (opts_.parameterization == Parameterization::xyw && !(theta(2) > 0.0)) {
      throw Error(ErrorKind::invalid_argument, "width parameter must be positive");
    }
  }

  void check_frame(const Frame& frame) const {
    if (frame.rows != det_.rows || frame.cols != det_.cols || frame.size() != det_.pixel_count()) {
      throw Error(ErrorKind::invalid_argument, "frame dimensions do not match the detector");
    }
  }

  bool feasible(const Eigen::VectorXd& theta) const {
    if (!theta.allFinite()) return false;
    if (opts_.parameterization == Parameterization::xyw && !(theta(2) > 0.0)) return false;
    if (opts_.model == PixelModel::B && (!(theta(3) > 0.0) || !(theta(4) >= 0.0))) return false;
    return true;
  }

  void keep_feasible(Eigen::VectorXd& theta) const {
    if (opts_.parameterization == Parameterization::xyw) theta(2) = std::max(theta(2), 1e-6 * psf_.geometry().waist());
    if (opts_.model == PixelModel::B) {
      theta(3) = std::max(theta(3), 1e-9 * opts_.photons);
      theta(4) = std::max(theta(4), 0.0);
    }
  }

  PsfModel psf_;
  DetectorModel det_;
  EstimatorOptions opts_;
  std::shared_ptr<const ReadoutModel> readout_;
};

/// z = branch * z_R * sqrt((w/w0)^2 - 1), var_z = var_w / (dw/dz)^2 at that z.
struct AxialEstimate {
  double z = 0.0;
  double var_z = 0.0;
};

inline AxialEstimate axial_from_width(double w_hat, double var_w, const BeamGeometry& geom, int branch) {
  const double w0 = geom.waist();
  const double zr = geom.rayleigh_range();
  if (branch != 1 && branch != -1) throw Error(ErrorKind::invalid_argument, "axial_from_width: branch must be +1 or -1");
  if (!(w_hat >= w0)) throw Error(ErrorKind::invalid_argument, "axial_from_width: width below the waist");
  if (w_hat == w0) throw Error(ErrorKind::invalid_argument, "axial_from_width: width equals the waist, dw/dz = 0");
  const double ratio = w_hat / w0;
  AxialEstimate a;
  a.z = branch * zr * std::sqrt(ratio * ratio - 1.0);
  const double dwdz = w0 * w0 * a.z / (zr * zr * w_hat);
  a.var_z = var_w / (dwdz * dwdz);
  return a;
}

/// Second-moment factor of a mode: <r^2> = w^2 * m2 / 2 with m2 the power-weighted 2p+|l|+1.
inline double mode_second_moment_factor(const ModeSpec& spec) {
  double m2 = 0.0;
  for (const auto& c : spec.components()) m2 += std::norm(c.weight) * (2.0 * c.p + std::abs(c.l) + 1.0);
  return m2;
}

struct MomentEstimate {
  double x = 0.0;
  double y = 0.0;
  double sigma = 0.0;  ///< per-axis standard deviation after the pixel-size correction
  double signal = 0.0;
  double background = 0.0;
};

/// Background-subtracted centroid and second moment of a frame. Starts at the peak of the
/// 3x3-smoothed image and iterates unclipped moments within a window sized from the current
/// width estimate. `m2` is the mode's second-moment factor, `w_start` the first width guess.
inline MomentEstimate frame_moments(const Frame& frame, const DetectorModel& det, double background, double m2,
                                    double w_start) {
  auto value = [&](int r, int c) { return frame.readouts[static_cast<std::size_t>(r) * det.cols + c] - background; };
  double best = -std::numeric_limits<double>::infinity();
  int br = 0, bc = 0;
  for (int r = 0; r < det.rows; ++r)
    for (int c = 0; c < det.cols; ++c) {
      double s = 0.0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = std::clamp(r + dr, 0, det.rows - 1);
          const int cc = std::clamp(c + dc, 0, det.cols - 1);
          s += value(rr, cc);
        }
      if (s > best) {
        best = s;
        br = r;
        bc = c;
      }
    }
  if (!(best > 0.0)) throw Error(ErrorKind::numerical, "initialize: no net signal above background");
  MomentEstimate m;
  m.x = det.pixel_x(bc);
  m.y = det.pixel_y(br);
  m.background = background;
  double w = w_start;
  const double floor_var = det.pixel_pitch * det.pixel_pitch / 12.0;
  for (int pass = 0; pass < 5; ++pass) {
    const double radius = w * (2.5 + std::sqrt(m2));
    double s0 = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0;
    for (int r = 0; r < det.rows; ++r) {
      const double y = det.pixel_y(r) - m.y;
      for (int c = 0; c < det.cols; ++c) {
        const double x = det.pixel_x(c) - m.x;
        if (x * x + y * y > radius * radius) continue;
        const double v = value(r, c);
        s0 += v;
        sx += v * x;
        sy += v * y;
        sxx += v * x * x;
        syy += v * y * y;
      }
    }
    if (!(s0 > 0.0)) {
      if (pass == 0) throw Error(ErrorKind::numerical, "initialize: net signal is not positive");
      break;
    }
    const double cx = sx / s0;
    const double cy = sy / s0;
    const double var = 0.5 * ((sxx / s0 - cx * cx) + (syy / s0 - cy * cy)) - floor_var;
    m.x += cx;
    m.y += cy;
    m.signal = s0;
    m.sigma = std::sqrt(std::max(var, floor_var));
    w = std::clamp(2.0 * m.sigma / std::sqrt(m2), 0.25 * w_start, 4.0 * w_start);
  }
  return m;
}

inline Eigen::VectorXd LocalizationProblem::initialize(const Frame& frame) const {
  check_frame(frame);
  const auto& spec = psf_.spec();
  const auto& geom = psf_.geometry();
  const double m2 = mode_second_moment_factor(spec);
  // Background: the calibrated offset; without calibrated noise, Model B uses the frame border.
  double background = det_.noise.offset();
  if (opts_.model == PixelModel::B && !det_.noise.enabled) {
    std::vector<double> border;
    for (int r = 0; r < det_.rows; ++r)
      for (int c = 0; c < det_.cols; ++c)
        if (r == 0 || c == 0 || r == det_.rows - 1 || c == det_.cols - 1)
          border.push_back(frame.readouts[static_cast<std::size_t>(r) * det_.cols + c]);
    std::nth_element(border.begin(), border.begin() + static_cast<long>(border.size() / 2), border.end());
    background = std::max(border[border.size() / 2], 0.0);
  }
  // sigma^2 per axis = w^2 m2 / 4.
  const auto mom = frame_moments(frame, det_, background, m2, 2.0 * geom.waist());
  const double w_hat = 2.0 * mom.sigma / std::sqrt(m2);
  Eigen::VectorXd theta(dimension());
  theta(0) = mom.x;
  theta(1) = mom.y;
  if (opts_.parameterization == Parameterization::xyw) {
    theta(2) = w_hat;
  } else if (spec.is_rotation_mode()) {
    // Coarse search over the pattern orientation, mapped to z through the rotation law.
    const double v = *spec.rotation_rate();
    Eigen::VectorXd probe = theta;
    if (opts_.model == PixelModel::B) {
      probe(3) = std::max(mom.signal, 1.0);
      probe(4) = background;
    }
    // A coarse pixel rule is enough to rank orientations.
    const PixelQuadrature coarse{3, 1.0};
    double best = -std::numeric_limits<double>::infinity();
    double best_z = 0.0;
    constexpr int kSteps = 41;
    for (int i = 0; i < kSteps; ++i) {
      const double angle = -0.5 * std::numbers::pi * v + std::numbers::pi * v * (i + 0.5) / kSteps;
      const double z = geom.rayleigh_range() * std::tan(angle / v);
      probe(2) = z;
      const double ll = evaluate(frame, probe, false, coarse).loglik;
      if (ll > best) {
        best = ll;
        best_z = z;
      }
    }
    theta(2) = best_z;
  } else {
    const double ratio = std::max(w_hat / geom.waist(), 1.0);
    const double z = geom.rayleigh_range() * std::sqrt(ratio * ratio - 1.0);
    theta(2) = opts_.branch * std::clamp(z, 0.05 * geom.rayleigh_range(), 3.0 * geom.rayleigh_range());
  }
  if (opts_.model == PixelModel::B) {
    double total = 0.0;
    for (double x : frame.readouts) total += x - background;
    theta(3) = std::max(total, 1.0);
    theta(4) = background;
  }
  return theta;
}

/// Free-function forms.
inline double log_likelihood(const Frame& frame, const Eigen::VectorXd& theta, const ModeSpec& spec,
                             const BeamGeometry& geom, const DetectorModel& det, const EstimatorOptions& opts) {
  return LocalizationProblem(spec, geom, det, opts).log_likelihood(frame, theta);
}

inline Eigen::VectorXd score(const Frame& frame, const Eigen::VectorXd& theta, const ModeSpec& spec,
                             const BeamGeometry& geom, const DetectorModel& det, const EstimatorOptions& opts) {
  return LocalizationProblem(spec, geom, det, opts).score(frame, theta);
}

inline EstimateResult fisher_scoring_fit(const Frame& frame, const Eigen::VectorXd& init, const ModeSpec& spec,
                                         const BeamGeometry& geom, const DetectorModel& det,
                                         const EstimatorOptions& opts) {
  return LocalizationProblem(spec, geom, det, opts).fit(frame, init);
}

inline Eigen::VectorXd initialize(const Frame& frame, const ModeSpec& spec, const BeamGeometry& geom,
                                  const DetectorModel& det, const EstimatorOptions& opts) {
  return LocalizationProblem(spec, geom, det, opts).initialize(frame);
}

}  // namespace lgloc
