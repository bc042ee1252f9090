#pragma once

// Quantum and classical Fisher information for 3D source localization, and Cramer-Rao bounds.
//
// Unless stated otherwise FisherMatrix values are per photon: the bound on the
// covariance of an unbiased estimator from N photons is inverse(values) / N.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "lgloc/detector.hpp"
#include "lgloc/psf.hpp"
#include "lgloc/quadrature.hpp"
#include "lgloc/readout.hpp"

namespace lgloc {

enum class FisherKind { qfi, cfi_ideal, cfi_pixelated_noiseless, cfi_pixelated_A, cfi_pixelated_B };

inline const char* to_string(FisherKind k) {
  switch (k) {
    case FisherKind::qfi: return "QFI";
    case FisherKind::cfi_ideal: return "CFI_ideal";
    case FisherKind::cfi_pixelated_noiseless: return "CFI_pixelated_noiseless";
    case FisherKind::cfi_pixelated_A: return "CFI_pixelated_A";
    case FisherKind::cfi_pixelated_B: return "CFI_pixelated_B";
  }
  return "?";
}

struct FisherMatrix {
  std::vector<std::string> labels;
  Eigen::MatrixXd values;
  FisherKind kind = FisherKind::qfi;
  std::size_t skipped_pixels = 0;  ///< pixels dropped because their mean was (numerically) zero

  Eigen::VectorXd diagonal() const { return values.diagonal(); }

  bool is_symmetric(double rel_tol = 1e-12) const {
    const double scale = values.cwiseAbs().maxCoeff();
    return (values - values.transpose()).cwiseAbs().maxCoeff() <= rel_tol * std::max(scale, 1e-300);
  }

  bool is_positive_semidefinite(double rel_tol = 1e-10) const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(values);
    const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
    return es.eigenvalues().minCoeff() >= -rel_tol * scale;
  }
};

struct CrbReport {
  std::vector<std::string> labels;
  Eigen::MatrixXd covariance_lower_bound;
  double photons = 0.0;

  Eigen::VectorXd variances() const { return covariance_lower_bound.diagonal(); }
};

inline std::vector<std::string> spatial_labels(Parameterization p) {
  if (p == Parameterization::xyz) return {"x_e", "y_e", "z_e"};
  return {"x_e", "y_e", "w"};
}

inline FisherMatrix diagonal_fisher(FisherKind kind, std::vector<std::string> labels, double a, double b, double c) {
  FisherMatrix f;
  f.kind = kind;
  f.labels = std::move(labels);
  f.values = Eigen::Vector3d(a, b, c).asDiagonal();
  return f;
}

/// Closed-form QFI for a single LG mode, or an equal two-mode p = 0 superposition with l != l'.
inline FisherMatrix qfi(const ModeSpec& spec, const BeamGeometry& geom) {
  const double w0 = geom.waist();
  const double zr = geom.rayleigh_range();
  const auto& c = spec.components();
  if (spec.is_single()) {
    const int al = std::abs(c[0].l);
    const int p = c[0].p;
    const double lat = 4.0 * (2.0 * p + al + 1.0) / (w0 * w0);
    const double ax = (2.0 * p * (p + al) + 2.0 * p + al + 1.0) / (zr * zr);
    return diagonal_fisher(FisherKind::qfi, spatial_labels(Parameterization::xyz), lat, lat, ax);
  }
  const bool two_mode_p0 = c.size() == 2 && c[0].p == 0 && c[1].p == 0 && c[0].l != c[1].l &&
                           std::abs(std::norm(c[0].weight) - 0.5) < 1e-12 && std::abs(std::norm(c[1].weight) - 0.5) < 1e-12;
  if (!two_mode_p0) {
    throw Error(ErrorKind::no_closed_form,
                "qfi: no closed form for " + spec.describe() + "; use cfi_ideal_numeric for superpositions");
  }
  const double a = std::abs(c[0].l);
  const double b = std::abs(c[1].l);
  const double lat = 2.0 * (a + b + 2.0) / (w0 * w0);
  const double ax = (4.0 + 2.0 * (a + b) + (a - b) * (a - b)) / (zr * zr);
  return diagonal_fisher(FisherKind::qfi, spatial_labels(Parameterization::xyz), lat, lat, ax);
}

/// Ideal intensity-detection CFI of LG_{lp} with the source at axial offset z_e.
inline FisherMatrix cfi_ideal_lg(int l, int p, const BeamGeometry& geom, double z_e) {
  if (p < 0) throw Error(ErrorKind::invalid_argument, "cfi_ideal_lg: p must be >= 0");
  const auto fp = geometry_at(geom, -z_e);
  const int al = std::abs(l);
  const double lat = 4.0 * (2.0 * p + 1.0) / (fp.w * fp.w);
  const double ax = 4.0 * (2.0 * p * (p + al) + 2.0 * p + al + 1.0) * fp.inv_R * fp.inv_R;
  return diagonal_fisher(FisherKind::cfi_ideal, spatial_labels(Parameterization::xyz), lat, lat, ax);
}

/// Same in the (x_e, y_e, w) parameterization: the width entry is 4[2p(p+|l|)+2p+|l|+1]/w^2.
inline FisherMatrix cfi_ideal_lg_width(int l, int p, double w) {
  const int al = std::abs(l);
  const double lat = 4.0 * (2.0 * p + 1.0) / (w * w);
  const double ww = 4.0 * (2.0 * p * (p + al) + 2.0 * p + al + 1.0) / (w * w);
  return diagonal_fisher(FisherKind::cfi_ideal, spatial_labels(Parameterization::xyw), lat, lat, ww);
}

struct IntegrationSpec {
  double rel_tol = 1e-8;     ///< per-entry change between refinements, relative to sqrt(F_ii F_jj)
  int initial_radial = 128;  ///< nodes; panels of 8 Gauss-Legendre points
  int initial_angular = 32;
  int max_radial = 4096;
  int max_angular = 512;
  double radius_in_widths = 10.0;
  double floor_rel = 1e-15;  ///< integrand is 0 where I < floor_rel * peak
};

namespace detail {

/// Isolated zeros of a superposed field, in polar coordinates about (x_e, y_e). Near such a
/// zero (dI)^2 / I depends on direction only, so the quadrature grades its panels toward it.
struct FieldZero {
  double r;
  double phi;
};

inline std::vector<FieldZero> find_field_zeros(const PsfModel& psf, const Vec3& theta, double radius,
                                               const std::vector<double>& scan, int nr, int na, double peak) {
  std::vector<FieldZero> out;
  if (psf.spec().is_single()) return out;  // single modes vanish on rings or the axis only
  const double w = psf.width(theta);
  auto at = [&](int i, int j) { return scan[static_cast<std::size_t>(i) * na + static_cast<std::size_t>((j + na) % na)]; };
  for (int i = 1; i < nr; ++i) {
    for (int j = 0; j < na; ++j) {
      const double v = at(i, j);
      if (!(v < 1e-2 * peak)) continue;
      bool minimum = true;
      for (int di = -1; di <= 1 && minimum; ++di)
        for (int dj = -1; dj <= 1; ++dj)
          if ((di || dj) && at(i + di, j + dj) < v) {
            minimum = false;
            break;
          }
      if (!minimum) continue;
      const double r0 = radius * i / (nr - 1);
      const double p0 = 2.0 * std::numbers::pi * j / na;
      double x = r0 * std::cos(p0);
      double y = r0 * std::sin(p0);
      bool ok = false;
      for (int it = 0; it < 60; ++it) {
        const auto jet = psf.field(theta, theta[0] + x, theta[1] + y);
        const double a = jet.d_ux.real(), b = jet.d_uy.real(), c = jet.d_ux.imag(), d = jet.d_uy.imag();
        const double det = a * d - b * c;
        if (!(std::abs(det) > 1e-14 * std::abs(jet.d_ux) * std::abs(jet.d_uy))) break;
        const double dx = -(d * jet.value.real() - b * jet.value.imag()) / det;
        const double dy = -(-c * jet.value.real() + a * jet.value.imag()) / det;
        x += dx;
        y += dy;
        if (std::hypot(dx, dy) < 1e-13 * w) {
          ok = std::norm(psf.field(theta, theta[0] + x, theta[1] + y).value) < 1e-20 * peak;
          break;
        }
      }
      const double r = std::hypot(x, y);
      if (!ok || r < 1e-6 * w || r >= radius) continue;
      const FieldZero z{r, std::atan2(y, x) < 0 ? std::atan2(y, x) + 2.0 * std::numbers::pi : std::atan2(y, x)};
      const bool seen = std::any_of(out.begin(), out.end(), [&](const FieldZero& o) {
        return std::hypot(o.r * std::cos(o.phi) - x, o.r * std::sin(o.phi) - y) < 1e-8 * w;
      });
      if (!seen) out.push_back(z);
    }
  }
  return out;
}

/// Uniform panels on [a, b] plus geometric grading (ratio 1/2, down to ~1e-12 h) toward each point.
inline std::vector<double> graded_breaks(double a, double b, int panels, const std::vector<double>& points, double h,
                                         bool periodic) {
  std::vector<double> br;
  for (int j = 0; j <= panels; ++j) br.push_back(a + (b - a) * j / panels);
  const double span = b - a;
  for (double c : points) {
    std::vector<double> cand{c};
    for (int k = 0; k <= 40; ++k) {
      cand.push_back(c - h * std::ldexp(1.0, -k));
      cand.push_back(c + h * std::ldexp(1.0, -k));
    }
    for (double v : cand) {
      if (periodic) v = a + std::fmod(std::fmod(v - a, span) + span, span);
      if (v > a && v < b) br.push_back(v);
    }
  }
  std::sort(br.begin(), br.end());
  std::vector<double> out;
  for (double v : br)
    if (out.empty() || v - out.back() > 1e-14 * span) out.push_back(v);
  if (b - out.back() <= 1e-14 * span) out.back() = b;
  return out;
}

inline Eigen::Matrix3d polar_cfi(const PsfModel& psf, const Vec3& theta, int nr, int na, double radius, double floor,
                                 const std::vector<FieldZero>& zeros) {
  constexpr int kOrder = 8;
  std::vector<double> zr, zp;
  for (const auto& z : zeros) {
    zr.push_back(z.r);
    zp.push_back(z.phi);
  }
  const double w = psf.width(theta);
  const auto rb = graded_breaks(0.0, radius, nr / kOrder, zr, 0.25 * w, false);
  const auto pb = graded_breaks(0.0, 2.0 * std::numbers::pi, na / kOrder, zp, 0.25, true);
  const auto rr = quad::composite_gauss_legendre(rb, kOrder);
  const auto ra = quad::composite_gauss_legendre(pb, kOrder);
  std::vector<double> cs(ra.nodes.size());
  std::vector<double> sn(ra.nodes.size());
  for (std::size_t j = 0; j < ra.nodes.size(); ++j) {
    cs[j] = std::cos(ra.nodes[j]);
    sn[j] = std::sin(ra.nodes[j]);
  }
  std::array<std::vector<double>, 6> ring;
  for (auto& v : ring) v.assign(rr.nodes.size(), 0.0);
  for (std::size_t i = 0; i < rr.nodes.size(); ++i) {
    const double r = rr.nodes[i];
    std::array<double, 6> acc{};
    for (std::size_t j = 0; j < ra.nodes.size(); ++j) {
      const auto s = psf.sample(theta, theta[0] + r * cs[j], theta[1] + r * sn[j]);
      if (!(s.value > floor)) continue;
      const double wgt = ra.weights[j] / s.value;
      int e = 0;
      for (int a = 0; a < 3; ++a)
        for (int b = a; b < 3; ++b) acc[static_cast<std::size_t>(e++)] += wgt * s.grad[static_cast<std::size_t>(a)] * s.grad[static_cast<std::size_t>(b)];
    }
    for (std::size_t e = 0; e < 6; ++e) ring[e][i] = acc[e] * rr.weights[i] * r;
  }
  Eigen::Matrix3d f;
  int e = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = a; b < 3; ++b) {
      const double v = quad::pairwise_sum(ring[static_cast<std::size_t>(e++)]);
      f(a, b) = v;
      f(b, a) = v;
    }
  return f;
}

}  // namespace detail

/// Brute-force ideal CFI: integral of (1/I) dI/dtheta_i dI/dtheta_j over a disk of radius 10 w,
/// nested Gauss-Legendre product rule in polar coordinates, refined until converged.
inline FisherMatrix cfi_ideal_numeric(const PsfModel& psf, const Vec3& theta, const IntegrationSpec& q = {}) {
  const double w = psf.width(theta);
  const double radius = q.radius_in_widths * w;
  // A coarse scan sets the floor and seeds the search for field zeros.
  constexpr int kScanR = 257;
  constexpr int kScanA = 128;
  std::vector<double> scan(static_cast<std::size_t>(kScanR * kScanA));
  double peak = 0.0;
  for (int i = 0; i < kScanR; ++i) {
    const double r = radius * i / (kScanR - 1);
    for (int j = 0; j < kScanA; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / kScanA;
      const double v = psf.intensity(theta, theta[0] + r * std::cos(phi), theta[1] + r * std::sin(phi));
      scan[static_cast<std::size_t>(i * kScanA + j)] = v;
      peak = std::max(peak, v);
    }
  }
  const double floor = q.floor_rel * peak;
  const auto zeros = detail::find_field_zeros(psf, theta, radius, scan, kScanR, kScanA, peak);
  int nr = q.initial_radial;
  int na = q.initial_angular;
  Eigen::Matrix3d prev = detail::polar_cfi(psf, theta, nr, na, radius, floor, zeros);
  for (;;) {
    const bool at_cap = nr >= q.max_radial && na >= q.max_angular;
    if (at_cap) break;
    nr = std::min(2 * nr, q.max_radial);
    na = std::min(2 * na, q.max_angular);
    const Eigen::Matrix3d next = detail::polar_cfi(psf, theta, nr, na, radius, floor, zeros);
    double worst = 0.0;
    int wi = 0, wj = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double scale = std::sqrt(std::abs(next(i, i) * next(j, j)));
        const double d = std::abs(next(i, j) - prev(i, j));
        const double rel = scale > 0.0 ? d / scale : (d > 0.0 ? 1.0 : 0.0);
        if (rel > worst) {
          worst = rel;
          wi = i;
          wj = j;
        }
      }
    if (worst < q.rel_tol) {
      FisherMatrix f;
      f.kind = FisherKind::cfi_ideal;
      f.labels = spatial_labels(psf.parameterization());
      f.values = next;
      return f;
    }
    if (nr >= q.max_radial && na >= q.max_angular) {
      std::ostringstream os;
      os << std::setprecision(17) << "cfi_ideal_numeric: no convergence for " << psf.spec().describe() << " entry (" << wi
         << ',' << wj << "): " << prev(wi, wj) << " -> " << next(wi, wj);
      throw QuadratureError(os.str(), prev(wi, wj), next(wi, wj));
    }
    prev = next;
  }
  throw QuadratureError("cfi_ideal_numeric: refinement cap below initial grid", prev(0, 0), prev(0, 0));
}

inline FisherMatrix cfi_ideal_numeric(const ModeSpec& spec, const BeamGeometry& geom, double z_e,
                                      const IntegrationSpec& q = {}) {
  return cfi_ideal_numeric(PsfModel(spec, geom, Parameterization::xyz), {0.0, 0.0, z_e}, q);
}

enum class PixelModel { noiseless, A, B };

inline const char* to_string(PixelModel m) {
  switch (m) {
    case PixelModel::noiseless: return "noiseless";
    case PixelModel::A: return "A";
    case PixelModel::B: return "B";
  }
  return "?";
}

/// Sum over pixels of the per-pixel Fisher information, in frame units (not per photon).
///
/// `means` must carry spatial gradients and include the photon count. Model B appends the
/// photon count and a uniform per-pixel background (`background`) as parameters 4 and 5.
inline Eigen::MatrixXd pixel_fisher_total(const PixelMeanMap& means, PixelModel model, const ReadoutModel* readout,
                                          double photons, double background, std::size_t* skipped = nullptr) {
  if (means.n_params != 3) throw Error(ErrorKind::invalid_argument, "pixel_fisher_total: mean map lacks gradients");
  const int dim = model == PixelModel::B ? 5 : 3;
  const int entries = dim * (dim + 1) / 2;
  constexpr std::size_t kBlock = 1024;
  const std::size_t n = means.size();
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  std::vector<std::vector<double>> partial(static_cast<std::size_t>(entries), std::vector<double>(blocks, 0.0));
  const double cut = 1e-12 * photons;
  std::size_t dropped = 0;
  double g[5];
  for (std::size_t k = 0; k < n; ++k) {
    const double mu = means.values[k];
    double weight = 0.0;
    for (int i = 0; i < 3; ++i) g[i] = means.grad(k, i);
    if (model == PixelModel::B) {
      const double total = mu + background;
      if (!(total >= cut) || total <= 0.0) {
        ++dropped;
        continue;
      }
      g[3] = photons > 0.0 ? mu / photons : 0.0;
      g[4] = 1.0;
      weight = 1.0 / total;
    } else {
      if (!(mu >= cut) || mu <= 0.0) {
        if (g[0] != 0.0 || g[1] != 0.0 || g[2] != 0.0) ++dropped;
        continue;
      }
      const double eta = model == PixelModel::A ? readout->attenuation(mu) : 1.0;
      weight = eta / mu;
    }
    const std::size_t blk = k / kBlock;
    int e = 0;
    for (int a = 0; a < dim; ++a)
      for (int b = a; b < dim; ++b) partial[static_cast<std::size_t>(e++)][blk] += weight * g[a] * g[b];
  }
  Eigen::MatrixXd f(dim, dim);
  int e = 0;
  for (int a = 0; a < dim; ++a)
    for (int b = a; b < dim; ++b) {
      const double v = quad::pairwise_sum(partial[static_cast<std::size_t>(e++)]);
      f(a, b) = v;
      f(b, a) = v;
    }
  if (skipped) *skipped = dropped;
  return f;
}

/// Pixelated, optionally noisy CFI per photon. Model A uses `readout` (a tabulated model is
/// built on the fly when null). Model B takes the per-pixel background from noise.b_mean.
inline FisherMatrix cfi_pixelated(const PsfModel& psf, const Vec3& theta, const DetectorModel& det, PixelModel model,
                                  double photons, const ReadoutModel* readout = nullptr) {
  if (!(photons > 0.0)) throw Error(ErrorKind::invalid_argument, "cfi_pixelated: photon count must be positive");
  const auto means = expected_pixel_means(psf, theta, det, photons, true);
  std::unique_ptr<ReadoutModel> local;
  if (model == PixelModel::A && readout == nullptr) {
    local = std::make_unique<ReadoutModel>(det.noise, std::max(means.max(), 1.0) * 1.01);
    readout = local.get();
  }
  FisherMatrix f;
  f.labels = spatial_labels(psf.parameterization());
  if (model == PixelModel::B) {
    f.labels.push_back("N");
    f.labels.push_back("N_b");
  }
  f.kind = model == PixelModel::A ? FisherKind::cfi_pixelated_A
           : model == PixelModel::B ? FisherKind::cfi_pixelated_B
                                    : FisherKind::cfi_pixelated_noiseless;
  const double background = det.noise.enabled ? det.noise.b_mean : 0.0;
  f.values = pixel_fisher_total(means, model, readout, photons, background, &f.skipped_pixels) / photons;
  return f;
}

inline FisherMatrix cfi_pixelated(const ModeSpec& spec, const BeamGeometry& geom, const Pose& pose,
                                  const DetectorModel& det, PixelModel model, double photons) {
  return cfi_pixelated(PsfModel(spec, geom, Parameterization::xyz), {pose.x_e, pose.y_e, pose.z_e}, det, model, photons);
}

/// inverse(F) / N. Throws ErrorKind::singular, naming the null-space direction, when F is not
/// positive definite.
inline CrbReport crb(const FisherMatrix& f, double photons) {
  if (!(photons > 0.0)) throw Error(ErrorKind::invalid_argument, "crb: photon count must be positive");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f.values);
  const auto& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  if (!(ev.minCoeff() > 1e-12 * top)) {
    Eigen::Index idx = 0;
    ev.minCoeff(&idx);
    const Eigen::VectorXd v = es.eigenvectors().col(idx);
    std::ostringstream os;
    os << "crb: Fisher matrix is singular or indefinite (eigenvalue " << ev(idx) << "); null-space direction:";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const std::string label = static_cast<std::size_t>(i) < f.labels.size() ? f.labels[static_cast<std::size_t>(i)] : "p" + std::to_string(i);
      os << (i ? " + " : " ") << std::fixed << std::setprecision(3) << v(i) << '*' << label;
    }
    throw Error(ErrorKind::singular, os.str());
  }
  CrbReport r;
  r.labels = f.labels;
  r.photons = photons;
  const Eigen::MatrixXd inv = f.values.inverse();
  r.covariance_lower_bound = 0.5 * (inv + inv.transpose()) / photons;
  return r;
}

}  // namespace lgloc
