#pragma once

// JSON run configuration. Every object rejects keys it does not know.

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lgloc/harness.hpp"

namespace lgloc {

struct RunConfig {
  ExperimentConfig experiment;
  SweepConfig sweep;
  bool has_sweep = false;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::config, where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || k == a;
    if (!known) throw Error(ErrorKind::config, where + ": unknown key \"" + k + "\"");
  }
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline ModeSpec mode_from_json(const nlohmann::json& j) {
  // {"l":..,"p":..} for one mode, or a list of {"l","p","weight":[re,im]} components.
  if (j.is_object()) {
    check_keys(j, {"l", "p"}, "mode");
    return ModeSpec::lg(j.at("l").get<int>(), get_or<int>(j, "p", 0));
  }
  if (!j.is_array() || j.empty()) throw Error(ErrorKind::config, "mode: expected an object or a non-empty list");
  bool weighted = false;
  for (const auto& c : j) weighted = weighted || (c.is_object() && c.contains("weight"));
  if (!weighted) {
    std::vector<std::pair<int, int>> lp;
    for (const auto& c : j) {
      check_keys(c, {"l", "p"}, "mode component");
      lp.emplace_back(c.at("l").get<int>(), get_or<int>(c, "p", 0));
    }
    return ModeSpec::equal_superposition(lp);
  }
  std::vector<ModeComponent> comps;
  for (const auto& c : j) {
    check_keys(c, {"l", "p", "weight"}, "mode component");
    const auto& w = c.at("weight");
    if (!w.is_array() || w.size() != 2) throw Error(ErrorKind::config, "mode component: weight must be [re, im]");
    comps.push_back({c.at("l").get<int>(), get_or<int>(c, "p", 0), {w[0].get<double>(), w[1].get<double>()}});
  }
  return ModeSpec(comps);
}

inline PixelModel model_from_string(const std::string& s) {
  if (s == "A") return PixelModel::A;
  if (s == "B") return PixelModel::B;
  if (s == "noiseless") return PixelModel::noiseless;
  throw Error(ErrorKind::config, "unknown model \"" + s + "\" (A, B or noiseless)");
}

inline Parameterization param_from_string(const std::string& s) {
  if (s == "xyz") return Parameterization::xyz;
  if (s == "xyw") return Parameterization::xyw;
  throw Error(ErrorKind::config, "unknown parameterization \"" + s + "\" (xyz or xyw)");
}

inline SweepAxis axis_from_string(const std::string& s) {
  if (s == "pixel_pitch") return SweepAxis::pixel_pitch;
  if (s == "snr") return SweepAxis::snr;
  if (s == "z_plane") return SweepAxis::z_plane;
  throw Error(ErrorKind::config, "unknown sweep axis \"" + s + "\" (pixel_pitch, snr or z_plane)");
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using namespace detail;
  try {
    check_keys(j, {"mode", "geometry", "detector", "noise", "photons", "pose", "z_planes_um", "frames_per_plane", "groups",
                   "paired", "seed", "estimator", "sweep", "threads", "source"},
               "config");
    RunConfig rc;
    auto& e = rc.experiment;
    if (j.contains("mode")) e.spec = mode_from_json(j.at("mode"));
    if (j.contains("geometry")) {
      const auto& g = j.at("geometry");
      check_keys(g, {"wavelength_um", "waist_um"}, "geometry");
      e.geom = BeamGeometry(get_or<double>(g, "wavelength_um", e.geom.wavelength()), get_or<double>(g, "waist_um", e.geom.waist()));
    }
    if (j.contains("detector")) {
      const auto& d = j.at("detector");
      check_keys(d, {"pixel_pitch_um", "rows", "cols", "center_x_um", "center_y_um"}, "detector");
      e.detector.pixel_pitch = get_or<double>(d, "pixel_pitch_um", e.detector.pixel_pitch);
      e.detector.rows = get_or<int>(d, "rows", e.detector.rows);
      e.detector.cols = get_or<int>(d, "cols", e.detector.cols);
      e.detector.center_x = get_or<double>(d, "center_x_um", 0.0);
      e.detector.center_y = get_or<double>(d, "center_y_um", 0.0);
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      check_keys(n, {"b_mean", "b_sigma", "c_alpha", "c_beta", "enabled"}, "noise");
      auto& np = e.detector.noise;
      np.b_mean = get_or<double>(n, "b_mean", np.b_mean);
      np.b_sigma = get_or<double>(n, "b_sigma", np.b_sigma);
      np.c_alpha = get_or<double>(n, "c_alpha", np.c_alpha);
      np.c_beta = get_or<double>(n, "c_beta", np.c_beta);
      np.enabled = get_or<bool>(n, "enabled", np.enabled);
    }
    e.photons = get_or<double>(j, "photons", e.photons);
    if (j.contains("pose")) {
      const auto& p = j.at("pose");
      check_keys(p, {"x_e_um", "y_e_um"}, "pose");
      e.x_e = get_or<double>(p, "x_e_um", 0.0);
      e.y_e = get_or<double>(p, "y_e_um", 0.0);
    }
    if (j.contains("z_planes_um")) e.z_planes = j.at("z_planes_um").get<std::vector<double>>();
    e.frames_per_plane = get_or<int>(j, "frames_per_plane", e.frames_per_plane);
    e.groups = get_or<int>(j, "groups", e.groups);
    e.paired = get_or<bool>(j, "paired", e.paired);
    e.seed = get_or<std::uint64_t>(j, "seed", e.seed);
    e.threads = get_or<int>(j, "threads", e.threads);
    if (j.contains("source")) {
      // Simulated source as an incoherent mixture; each entry has its own mode and geometry.
      const auto& src = j.at("source");
      if (!src.is_array()) throw Error(ErrorKind::config, "source: expected a list");
      for (const auto& c : src) {
        check_keys(c, {"mode", "geometry", "weight"}, "source component");
        SourceComponent sc{e.spec, e.geom, get_or<double>(c, "weight", 1.0)};
        if (c.contains("mode")) sc.spec = mode_from_json(c.at("mode"));
        if (c.contains("geometry")) {
          const auto& g = c.at("geometry");
          check_keys(g, {"wavelength_um", "waist_um"}, "source geometry");
          sc.geom = BeamGeometry(get_or<double>(g, "wavelength_um", e.geom.wavelength()), get_or<double>(g, "waist_um", e.geom.waist()));
        }
        e.source.push_back(sc);
      }
    }
    if (j.contains("estimator")) {
      const auto& o = j.at("estimator");
      check_keys(o, {"model", "parameterization", "tol", "max_iter", "damping", "branch"}, "estimator");
      auto& eo = e.estimator;
      if (o.contains("model")) eo.model = model_from_string(o.at("model").get<std::string>());
      if (o.contains("parameterization")) eo.parameterization = param_from_string(o.at("parameterization").get<std::string>());
      eo.tol = get_or<double>(o, "tol", eo.tol);
      eo.max_iter = get_or<int>(o, "max_iter", eo.max_iter);
      eo.damping = get_or<double>(o, "damping", eo.damping);
      eo.branch = get_or<int>(o, "branch", eo.branch);
    }
    e.estimator.photons = e.photons;
    rc.sweep.spec = e.spec;
    rc.sweep.geom = e.geom;
    rc.sweep.detector = e.detector;
    rc.sweep.photons = e.photons;
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      check_keys(s, {"axis", "values", "model", "z_e_um", "extent_um"}, "sweep");
      rc.has_sweep = true;
      rc.sweep.axis = axis_from_string(s.at("axis").get<std::string>());
      rc.sweep.values = s.at("values").get<std::vector<double>>();
      if (s.contains("model")) rc.sweep.model = model_from_string(s.at("model").get<std::string>());
      rc.sweep.z_e = get_or<double>(s, "z_e_um", 0.0);
      rc.sweep.extent = get_or<double>(s, "extent_um", 0.0);
    }
    e.validate();
    return rc;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::config, std::string("config: ") + ex.what());
  } catch (const Error& ex) {
    if (ex.kind() == ErrorKind::config) throw;
    throw Error(ErrorKind::config, std::string("config: ") + ex.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::config, std::string("config: ") + ex.what());
  }
  return parse_run_config(j);
}

}  // namespace lgloc
