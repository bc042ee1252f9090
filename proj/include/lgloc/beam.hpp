#pragma once

// Laguerre-Gaussian fields and their superpositions on the detection plane.
//
// Coordinates: the detection plane is z = 0 and the source (beam focus) sits at
// axial offset z_e, so every z-dependent quantity is evaluated at dz = -z_e.
// All lengths are micrometres, all angles radians.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lgloc/error.hpp"

namespace lgloc {

using cplx = std::complex<double>;

class BeamGeometry {
 public:
  BeamGeometry(double wavelength_um, double waist_um) : wavelength_(wavelength_um), waist_(waist_um) {
    if (!(wavelength_ > 0.0) || !std::isfinite(wavelength_)) {
      throw Error(ErrorKind::invalid_argument, "BeamGeometry: wavelength must be positive");
    }
    if (!(waist_ > 0.0) || !std::isfinite(waist_)) {
      throw Error(ErrorKind::invalid_argument, "BeamGeometry: waist must be positive");
    }
  }

  double wavelength() const noexcept { return wavelength_; }
  double waist() const noexcept { return waist_; }
  double rayleigh_range() const noexcept { return std::numbers::pi * waist_ * waist_ / wavelength_; }
  double wavenumber() const noexcept { return 2.0 * std::numbers::pi / wavelength_; }

  /// Geometry with every length multiplied by s (wavelength included, so z_R scales by s).
  BeamGeometry scaled(double s) const { return BeamGeometry(wavelength_ * s, waist_ * s); }

 private:
  double wavelength_;
  double waist_;
};

struct ModeComponent {
  int l = 0;
  int p = 0;
  cplx weight{1.0, 0.0};
};

/// Normalized superposition of LG components. A single LG mode is the one-component case.
class ModeSpec {
 public:
  explicit ModeSpec(std::vector<ModeComponent> components) : components_(std::move(components)) {
    if (components_.empty()) throw Error(ErrorKind::invalid_argument, "ModeSpec: no components");
    double total = 0.0;
    for (const auto& c : components_) {
      if (c.p < 0) throw Error(ErrorKind::invalid_argument, "ModeSpec: radial index p must be >= 0");
      total += std::norm(c.weight);
    }
    if (std::abs(total - 1.0) > 1e-12) {
      std::ostringstream os;
      os << "ModeSpec: weights not normalized (sum |c|^2 = " << total << ")";
      throw Error(ErrorKind::invalid_argument, os.str());
    }
    norms_.reserve(components_.size());
    for (const auto& c : components_) {
      const int al = std::abs(c.l);
      // sqrt(2 p! / (pi (p+|l|)!))
      const double log_ratio = std::lgamma(c.p + 1.0) - std::lgamma(c.p + al + 1.0);
      norms_.push_back(std::sqrt(2.0 / std::numbers::pi * std::exp(log_ratio)) * std::pow(std::numbers::sqrt2, al));
    }
  }

  static ModeSpec lg(int l, int p) { return ModeSpec({ModeComponent{l, p, {1.0, 0.0}}}); }

  /// Equal-weight superposition of the listed (l, p) pairs.
  static ModeSpec equal_superposition(const std::vector<std::pair<int, int>>& lp) {
    std::vector<ModeComponent> comps;
    const double c = 1.0 / std::sqrt(static_cast<double>(lp.size()));
    for (auto [l, p] : lp) comps.push_back({l, p, {c, 0.0}});
    return ModeSpec(std::move(comps));
  }

  const std::vector<ModeComponent>& components() const noexcept { return components_; }
  std::size_t size() const noexcept { return components_.size(); }
  bool is_single() const noexcept { return components_.size() == 1; }

  /// Constant V with [(2p+|l|)_{j+1} - (2p+|l|)_j] / [l_{j+1} - l_j] == V for all consecutive pairs.
  std::optional<double> rotation_rate() const {
    if (components_.size() < 2) return std::nullopt;
    std::optional<double> rate;
    for (std::size_t j = 0; j + 1 < components_.size(); ++j) {
      const auto& a = components_[j];
      const auto& b = components_[j + 1];
      const int dl = b.l - a.l;
      if (dl == 0) return std::nullopt;
      const double v = static_cast<double>(order(b) - order(a)) / dl;
      if (rate && std::abs(*rate - v) > 1e-12) return std::nullopt;
      rate = v;
    }
    return rate;
  }

  bool is_rotation_mode() const { return rotation_rate().has_value(); }

  /// Largest Gouy index 2p+|l|+1 among the components.
  int max_gouy_index() const {
    int m = 1;
    for (const auto& c : components_) m = std::max(m, order(c) + 1);
    return m;
  }

  std::string describe() const {
    std::ostringstream os;
    for (std::size_t j = 0; j < components_.size(); ++j) {
      if (j) os << '+';
      os << "LG(" << components_[j].l << ',' << components_[j].p << ')';
    }
    return os.str();
  }

  /// Per-component amplitude prefactor sqrt(2 p!/(pi (p+|l|)!)) * sqrt(2)^|l|.
  double prefactor(std::size_t j) const { return norms_[j]; }

  friend bool operator==(const ModeSpec& a, const ModeSpec& b) {
    if (a.components_.size() != b.components_.size()) return false;
    for (std::size_t j = 0; j < a.components_.size(); ++j) {
      const auto& x = a.components_[j];
      const auto& y = b.components_[j];
      if (x.l != y.l || x.p != y.p || x.weight != y.weight) return false;
    }
    return true;
  }

 private:
  static int order(const ModeComponent& c) { return 2 * c.p + std::abs(c.l); }

  std::vector<ModeComponent> components_;
  std::vector<double> norms_;
};

struct Pose {
  double x_e = 0.0;
  double y_e = 0.0;
  double z_e = 0.0;
};

/// Local beam parameters at axial offset dz from the focus. Curvature is stored inverted.
struct BeamFrameParams {
  double w = 0.0;
  double inv_R = 0.0;
  double gouy = 0.0;  ///< base angle arctan(dz/z_R); multiply by 2p+|l|+1 per component.
};

inline BeamFrameParams geometry_at(const BeamGeometry& geom, double dz) {
  const double zr = geom.rayleigh_range();
  const double u = dz / zr;
  return {geom.waist() * std::sqrt(1.0 + u * u), dz / (dz * dz + zr * zr), std::atan(u)};
}

namespace detail {

/// BeamFrameParams together with their derivatives in dz.
struct FrameJet {
  BeamFrameParams at;
  double dw = 0.0;
  double dinv_R = 0.0;
  double dgouy = 0.0;
};

inline FrameJet frame_jet(const BeamGeometry& geom, double dz) {
  FrameJet f;
  f.at = geometry_at(geom, dz);
  const double zr = geom.rayleigh_range();
  const double w0 = geom.waist();
  const double d2 = dz * dz + zr * zr;
  f.dw = w0 * w0 * dz / (zr * zr * f.at.w);
  f.dinv_R = (zr * zr - dz * dz) / (d2 * d2);
  f.dgouy = zr / d2;
  return f;
}

/// Generalized Laguerre polynomial L_p^a(t), three-term upward recurrence in p.
inline double laguerre(int p, double a, double t) {
  if (p < 0) return 0.0;
  double l0 = 1.0;
  if (p == 0) return l0;
  double l1 = 1.0 + a - t;
  for (int n = 1; n < p; ++n) {
    const double l2 = ((2.0 * n + 1.0 + a - t) * l1 - (n + a) * l0) / (n + 1.0);
    l0 = l1;
    l1 = l2;
  }
  return l1;
}

inline cplx ipow(cplx z, int n) {
  cplx r{1.0, 0.0};
  for (int i = 0; i < n; ++i) r *= z;
  return r;
}

/// Field and its partials in the local variables (u_x, u_y) = (x - x_e, y - y_e),
/// the width w, the Gouy base angle and the inverse curvature.
struct FieldJet {
  cplx value{};
  cplx d_ux{};
  cplx d_uy{};
  cplx d_w{};
  cplx d_gouy{};
  cplx d_inv_R{};
};

inline FieldJet field_jet(const ModeSpec& spec, double k, const BeamFrameParams& fp, double ux, double uy) {
  const double w = fp.w;
  const double w2 = w * w;
  const double r2 = ux * ux + uy * uy;
  const double t = 2.0 * r2 / w2;
  // Common envelope exp(-r^2/w^2 + i k r^2 / (2R)); the global exp(-ikz) is 1 on the plane z = 0.
  const cplx beta(-1.0 / w2, 0.5 * k * fp.inv_R);
  const cplx envelope = std::exp(r2 * beta);
  FieldJet out;
  const auto& comps = spec.components();
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const auto& c = comps[j];
    const int al = std::abs(c.l);
    const double s = c.l >= 0 ? 1.0 : -1.0;
    // r^|l| exp(-i l phi) == (u_x - i s u_y)^|l|, smooth through r = 0.
    const cplx zeta(ux, -s * uy);
    const cplx poly = ipow(zeta, al);
    const cplx dpoly = al > 0 ? static_cast<double>(al) * ipow(zeta, al - 1) : cplx{};
    const double lag = laguerre(c.p, al, t);
    const double dlag = c.p > 0 ? -laguerre(c.p - 1, al + 1.0, t) : 0.0;
    const double g = 2.0 * c.p + al + 1.0;
    const cplx pref = c.weight * (spec.prefactor(j) * std::pow(w, -(al + 1))) * std::polar(1.0, -g * fp.gouy) * envelope;
    const cplx e = pref * poly * lag;
    out.value += e;
    out.d_ux += pref * (dpoly * lag + poly * (dlag * 4.0 * ux / w2) + poly * lag * (2.0 * ux) * beta);
    out.d_uy += pref * (dpoly * cplx(0.0, -s) * lag + poly * (dlag * 4.0 * uy / w2) + poly * lag * (2.0 * uy) * beta);
    out.d_w += pref * poly * (lag * (t - al - 1.0) / w - dlag * 2.0 * t / w);
    out.d_gouy += cplx(0.0, -g) * e;
    out.d_inv_R += cplx(0.0, 0.5 * k * r2) * e;
  }
  return out;
}

}  // namespace detail

/// Complex field on the detection plane at (x, y) for a source at `pose`.
inline cplx field_amplitude(const ModeSpec& spec, const BeamGeometry& geom, const Pose& pose, double x, double y) {
  const auto fp = geometry_at(geom, -pose.z_e);
  return detail::field_jet(spec, geom.wavenumber(), fp, x - pose.x_e, y - pose.y_e).value;
}

/// Intensity and its gradient with respect to three source parameters.
struct IntensitySample {
  double value = 0.0;
  std::array<double, 3> grad{};
};

/// I = |field|^2 and (dI/dx_e, dI/dy_e, dI/dz_e), analytic.
inline IntensitySample intensity_and_gradient(const ModeSpec& spec, const BeamGeometry& geom, const Pose& pose,
                                              double x, double y) {
  const auto fj = detail::frame_jet(geom, -pose.z_e);
  const auto jet = detail::field_jet(spec, geom.wavenumber(), fj.at, x - pose.x_e, y - pose.y_e);
  const cplx ce = std::conj(jet.value);
  // dz = -z_e, so d/dz_e = -d/d(dz); likewise d/dx_e = -d/du_x.
  const cplx dz_e = -(jet.d_w * fj.dw + jet.d_gouy * fj.dgouy + jet.d_inv_R * fj.dinv_R);
  IntensitySample s;
  s.value = std::norm(jet.value);
  s.grad[0] = -2.0 * (ce * jet.d_ux).real();
  s.grad[1] = -2.0 * (ce * jet.d_uy).real();
  s.grad[2] = 2.0 * (ce * dz_e).real();
  return s;
}

/// Width parameterization (x_e, y_e, w) of a single LG mode: gradient is (dI/dx_e, dI/dy_e, dI/dw).
/// Gouy and curvature phases drop out of a single mode's intensity, so only w matters.
inline IntensitySample intensity_and_gradient_width(const ModeSpec& spec, const BeamGeometry& geom, double x_e,
                                                    double y_e, double w, double x, double y) {
  if (!spec.is_single()) {
    throw Error(ErrorKind::invalid_argument, "width parameterization requires a single LG mode");
  }
  const BeamFrameParams fp{w, 0.0, 0.0};
  const auto jet = detail::field_jet(spec, geom.wavenumber(), fp, x - x_e, y - y_e);
  const cplx ce = std::conj(jet.value);
  IntensitySample s;
  s.value = std::norm(jet.value);
  s.grad[0] = -2.0 * (ce * jet.d_ux).real();
  s.grad[1] = -2.0 * (ce * jet.d_uy).real();
  s.grad[2] = 2.0 * (ce * jet.d_w).real();
  return s;
}

/// Angle by which a rotation mode's pattern has turned, relative to its waist pattern,
/// when the source sits at axial offset z_e: V * arctan(z_e / z_R).
inline double rotation_angle(const ModeSpec& spec, const BeamGeometry& geom, double z_e) {
  const auto v = spec.rotation_rate();
  if (!v) throw Error(ErrorKind::invalid_argument, "rotation_angle: " + spec.describe() + " is not a rotation mode");
  return *v * std::atan(z_e / geom.rayleigh_range());
}

}  // namespace lgloc
