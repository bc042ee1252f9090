#pragma once

#include <array>
#include <cmath>
#include <string>

#include "lgloc/beam.hpp"

namespace lgloc {

/// How the three spatial parameters are read: (x_e, y_e, z_e) or (x_e, y_e, w).
enum class Parameterization { xyz, xyw };

inline const char* to_string(Parameterization p) { return p == Parameterization::xyz ? "xyz" : "xyw"; }

using Vec3 = std::array<double, 3>;

/// Intensity model seen by the detector: a mode, a geometry and a parameterization.
class PsfModel {
 public:
  PsfModel(ModeSpec spec, BeamGeometry geom, Parameterization param = Parameterization::xyz)
      : spec_(std::move(spec)), geom_(geom), param_(param) {
    if (param_ == Parameterization::xyw && !spec_.is_single()) {
      throw Error(ErrorKind::invalid_argument,
                  "xyw parameterization needs a single LG mode; " + spec_.describe() + " depends on z beyond w");
    }
  }

  const ModeSpec& spec() const noexcept { return spec_; }
  const BeamGeometry& geometry() const noexcept { return geom_; }
  Parameterization parameterization() const noexcept { return param_; }

  IntensitySample sample(const Vec3& theta, double x, double y) const {
    if (param_ == Parameterization::xyz) {
      return intensity_and_gradient(spec_, geom_, Pose{theta[0], theta[1], theta[2]}, x, y);
    }
    return intensity_and_gradient_width(spec_, geom_, theta[0], theta[1], theta[2], x, y);
  }

  double intensity(const Vec3& theta, double x, double y) const {
    const BeamFrameParams fp = frame(theta);
    return std::norm(detail::field_jet(spec_, geom_.wavenumber(), fp, x - theta[0], y - theta[1]).value);
  }

  /// Field value and its derivatives in the detector-plane offsets from (x_e, y_e).
  detail::FieldJet field(const Vec3& theta, double x, double y) const {
    return detail::field_jet(spec_, geom_.wavenumber(), frame(theta), x - theta[0], y - theta[1]);
  }

  /// Local beam radius w at these parameters.
  double width(const Vec3& theta) const { return frame(theta).w; }

  /// Smallest transverse feature scale, used to size pixel quadrature.
  double feature_scale(const Vec3& theta) const { return width(theta) / std::sqrt(double(spec_.max_gouy_index())); }

  /// Radius that contains all but a negligible fraction of the power.
  double support_radius(const Vec3& theta) const { return width(theta) * (4.0 + std::sqrt(double(spec_.max_gouy_index()))); }

  std::array<std::string, 3> labels() const {
    if (param_ == Parameterization::xyz) return {"x_e", "y_e", "z_e"};
    return {"x_e", "y_e", "w"};
  }

 private:
  BeamFrameParams frame(const Vec3& theta) const {
    if (param_ == Parameterization::xyz) return geometry_at(geom_, -theta[2]);
    return BeamFrameParams{theta[2], 0.0, 0.0};
  }

  ModeSpec spec_;
  BeamGeometry geom_;
  Parameterization param_;
};

}  // namespace lgloc
