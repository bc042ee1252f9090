#pragma once

// Command-line front end: simulate, fit, crb, sweep, report.
// Exit codes: 0 ok, 2 config or usage, 3 I/O, 4 numerical failure.

#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lgloc/config.hpp"
#include "lgloc/lgis.hpp"

namespace lgloc {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitIo = 3, kExitNumerical = 4 };

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
    case ErrorKind::invalid_argument: return kExitConfig;
    case ErrorKind::io: return kExitIo;
    default: return kExitNumerical;
  }
}

namespace detail {

/// One-line JSON diagnostic for the error stream.
inline void diagnose(std::ostream& err, int code, const std::string& kind, const std::string& message) {
  err << nlohmann::json{{"error", kind}, {"exit", code}, {"message", message}}.dump() << '\n';
}

inline std::string csv_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <class Row>
std::string csv_line(const Row& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s + '\n';
}

inline nlohmann::json to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline nlohmann::json to_json(const Eigen::MatrixXd& m) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
  return a;
}

inline double entry(const Eigen::VectorXd& v, std::size_t i) {
  return static_cast<Eigen::Index>(i) < v.size() ? v(static_cast<Eigen::Index>(i)) : std::numeric_limits<double>::quiet_NaN();
}

/// Writes to --out when given, else to the command's output stream.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : path_(path), fallback_(fallback) {}
  std::ostream& stream() { return path_.empty() ? fallback_ : buffer_; }
  void flush() {
    if (!path_.empty()) write_file(path_, buffer_.str());
  }

 private:
  std::string path_;
  std::ostream& fallback_;
  std::ostringstream buffer_;
};

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "json";
  std::string in;
};

inline RunConfig load_or_default(const CommonFlags& f) {
  RunConfig rc = f.config.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(f.config);
  if (f.seed) rc.experiment.seed = *f.seed;
  return rc;
}

inline LgisStack simulate_stack(const ExperimentConfig& cfg) {
  cfg.validate();
  LgisStack s;
  auto& h = s.header;
  h.rows = cfg.detector.rows;
  h.cols = cfg.detector.cols;
  h.pitch_um = cfg.detector.pixel_pitch;
  h.seed = cfg.seed;
  h.mode = cfg.spec.components();
  h.wavelength_um = cfg.geom.wavelength();
  h.waist_um = cfg.geom.waist();
  h.noise = cfg.detector.noise;
  const std::size_t per_plane = static_cast<std::size_t>(cfg.frames_per_plane);
  h.frame_count = per_plane * cfg.z_planes.size();
  nlohmann::json frame_z = nlohmann::json::array();
  s.payload.resize(h.frame_count * s.frame_size());
  for (std::size_t pi = 0; pi < cfg.z_planes.size(); ++pi) {
    const auto means = source_means(cfg, cfg.x_e, cfg.y_e, cfg.z_planes[pi]);
    detail::parallel_for(per_plane, cfg.threads, [&](std::size_t k) {
      const Frame f = sample_frame(cfg.seed, frame_stream(pi, 0, k), means, cfg.detector.noise);
      std::copy(f.readouts.begin(), f.readouts.end(),
                s.payload.begin() + static_cast<std::ptrdiff_t>((pi * per_plane + k) * s.frame_size()));
    });
    for (std::size_t k = 0; k < per_plane; ++k) frame_z.push_back(cfg.z_planes[pi]);
  }
  h.extra = {{"photons", cfg.photons},
             {"pose", {{"x_e_um", cfg.x_e}, {"y_e_um", cfg.y_e}}},
             {"detector_center_um", {cfg.detector.center_x, cfg.detector.center_y}},
             {"z_planes_um", cfg.z_planes},
             {"frames_per_plane", cfg.frames_per_plane},
             {"frame_z_um", frame_z}};
  return s;
}

inline int cmd_simulate(const CommonFlags& f, std::ostream&) {
  if (f.out.empty()) throw Error(ErrorKind::config, "simulate: --out is required");
  const RunConfig rc = load_or_default(f);
  write_lgis(simulate_stack(rc.experiment), f.out);
  return kExitOk;
}

inline int cmd_fit(const CommonFlags& f, std::ostream& out) {
  if (f.in.empty()) throw Error(ErrorKind::config, "fit: --in is required");
  RunConfig rc = load_or_default(f);
  const LgisStack stack = read_lgis(f.in);
  const auto& h = stack.header;
  // Mode, geometry, grid and noise come from the stack; estimator settings from the config.
  ExperimentConfig& cfg = rc.experiment;
  DetectorModel det;
  det.rows = h.rows;
  det.cols = h.cols;
  det.pixel_pitch = h.pitch_um;
  det.noise = h.noise;
  if (h.extra.contains("detector_center_um")) {
    det.center_x = h.extra["detector_center_um"][0].get<double>();
    det.center_y = h.extra["detector_center_um"][1].get<double>();
  }
  EstimatorOptions opts = cfg.estimator;
  if (f.config.empty() && h.extra.contains("photons")) opts.photons = h.extra["photons"].get<double>();
  const LocalizationProblem problem(ModeSpec(h.mode), BeamGeometry(h.wavelength_um, h.waist_um), det, opts);

  const std::size_t n = static_cast<std::size_t>(h.frame_count);
  std::vector<std::optional<EstimateResult>> fits(n);
  std::vector<std::string> errors(n);
  detail::parallel_for(n, cfg.threads, [&](std::size_t i) {
    const Frame fr = stack.frame(i);
    try {
      fits[i] = problem.fit(fr, problem.initialize(fr));
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });

  Sink sink(f.out, out);
  auto& os = sink.stream();
  const auto labels = problem.labels();
  if (f.format == "csv") {
    std::vector<std::string> head{"frame", "converged", "iterations", "final_loglik"};
    for (const auto& l : labels) head.push_back(l);
    for (const auto& l : labels) head.push_back("crb_" + l);
    os << csv_line(head);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = fits[i];
    Eigen::VectorXd bound = Eigen::VectorXd::Constant(problem.dimension(), std::numeric_limits<double>::quiet_NaN());
    std::string note = errors[i];
    if (r) {
      try {
        bound = crb(r->fisher_at_solution, opts.photons).variances();
      } catch (const Error& e) {
        note = e.what();
      }
    }
    if (f.format == "csv") {
      std::vector<std::string> row{std::to_string(i), r && r->converged ? "1" : "0", std::to_string(r ? r->iterations : 0),
                                   csv_number(r ? r->final_loglik : std::numeric_limits<double>::quiet_NaN())};
      for (std::size_t k = 0; k < labels.size(); ++k)
        row.push_back(csv_number(r ? entry(r->theta_hat, k) : std::numeric_limits<double>::quiet_NaN()));
      for (std::size_t k = 0; k < labels.size(); ++k) row.push_back(csv_number(entry(bound, k)));
      os << csv_line(row);
    } else {
      nlohmann::json j{{"frame", i}, {"labels", labels}};
      if (r) {
        j["theta_hat"] = to_json(r->theta_hat);
        j["converged"] = r->converged;
        j["iterations"] = r->iterations;
        j["final_loglik"] = r->final_loglik;
        j["crb"] = to_json(bound);
        j["standardized_score"] = to_json(r->diagnostics.standardized_score);
        j["message"] = note.empty() ? r->diagnostics.message : note;
      } else {
        j["converged"] = false;
        j["message"] = note;
      }
      os << j.dump() << '\n';
    }
  }
  sink.flush();
  return kExitOk;
}

struct CrbTable {
  std::string kind;
  FisherMatrix fisher;
  std::optional<CrbReport> bound;
  std::string note;
};

inline std::vector<CrbTable> crb_tables(const ExperimentConfig& cfg, double z) {
  std::vector<CrbTable> t;
  auto add = [&](const std::string& kind, auto make) {
    CrbTable row{kind, {}, std::nullopt, ""};
    try {
      row.fisher = make();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::no_closed_form) throw;
      row.note = e.what();
      t.push_back(std::move(row));
      return;
    }
    try {
      row.bound = crb(row.fisher, cfg.photons);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::singular) throw;
      row.note = e.what();
    }
    t.push_back(std::move(row));
  };
  add("QFI", [&] { return qfi(cfg.spec, cfg.geom); });
  add("CFI_ideal", [&] {
    if (cfg.spec.is_single()) {
      const auto& c = cfg.spec.components().front();
      return cfi_ideal_lg(c.l, c.p, cfg.geom, z);
    }
    return cfi_ideal_numeric(cfg.spec, cfg.geom, z);
  });
  add("CFI_pixelated", [&] {
    return cfi_pixelated(PsfModel(cfg.spec, cfg.geom), {cfg.x_e, cfg.y_e, z}, cfg.detector, cfg.estimator.model, cfg.photons);
  });
  return t;
}

inline int cmd_crb(const CommonFlags& f, std::ostream& out) {
  const RunConfig rc = load_or_default(f);
  const auto& cfg = rc.experiment;
  Sink sink(f.out, out);
  auto& os = sink.stream();
  nlohmann::json planes = nlohmann::json::array();
  if (f.format == "csv") {
    os << csv_line(std::vector<std::string>{"z_um", "kind", "parameter", "information_per_photon", "crb_variance"});
  }
  for (double z : cfg.z_planes) {
    const auto tables = crb_tables(cfg, z);
    nlohmann::json pj{{"z_um", z}, {"photons", cfg.photons}, {"tables", nlohmann::json::array()}};
    for (const auto& t : tables) {
      if (f.format == "csv") {
        for (std::size_t k = 0; k < t.fisher.labels.size(); ++k) {
          const double var = t.bound ? entry(t.bound->variances(), k) : std::numeric_limits<double>::quiet_NaN();
          os << csv_line(std::vector<std::string>{csv_number(z), t.fisher.kind == FisherKind::qfi ? "QFI" : to_string(t.fisher.kind),
                                                  t.fisher.labels[k], csv_number(t.fisher.values(Eigen::Index(k), Eigen::Index(k))),
                                                  csv_number(var)});
        }
        continue;
      }
      nlohmann::json tj{{"kind", t.fisher.labels.empty() ? t.kind : std::string(to_string(t.fisher.kind))}};
      if (!t.fisher.labels.empty()) {
        tj["labels"] = t.fisher.labels;
        tj["information_per_photon"] = to_json(t.fisher.values);
      }
      tj["crb_covariance"] = t.bound ? to_json(t.bound->covariance_lower_bound) : nlohmann::json(nullptr);
      if (!t.note.empty()) tj["note"] = t.note;
      pj["tables"].push_back(tj);
    }
    planes.push_back(pj);
  }
  if (f.format != "csv") os << nlohmann::json{{"mode", cfg.spec.describe()}, {"planes", planes}}.dump(2) << '\n';
  sink.flush();
  return kExitOk;
}

inline int cmd_sweep(const CommonFlags& f, std::ostream& out) {
  const RunConfig rc = load_or_default(f);
  if (!rc.has_sweep) throw Error(ErrorKind::config, "sweep: config has no \"sweep\" block");
  const auto rows = sweep(rc.sweep);
  Sink sink(f.out, out);
  auto& os = sink.stream();
  const char* axes[] = {"x", "y", "z"};
  if (f.format == "csv") {
    std::vector<std::string> head{"axis_value", "snr"};
    for (const char* p : {"cfi", "qfi", "ratio"})
      for (const char* a : axes) head.push_back(std::string(p) + "_" + a);
    os << csv_line(head);
    for (const auto& r : rows) {
      std::vector<std::string> cells{csv_number(r.axis_value), csv_number(r.snr)};
      for (const Eigen::Vector3d* v : {&r.cfi, &r.qfi, &r.ratio})
        for (int i = 0; i < 3; ++i) cells.push_back(csv_number((*v)(i)));
      os << csv_line(cells);
    }
  } else {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : rows) {
      a.push_back({{"axis_value", r.axis_value},
                   {"snr", r.snr},
                   {"cfi", to_json(Eigen::VectorXd(r.cfi))},
                   {"qfi", to_json(Eigen::VectorXd(r.qfi))},
                   {"ratio", to_json(Eigen::VectorXd(r.ratio))}});
    }
    os << nlohmann::json{{"axis", to_string(rc.sweep.axis)}, {"rows", a}}.dump(2) << '\n';
  }
  sink.flush();
  return kExitOk;
}

inline int cmd_report(const CommonFlags& f, std::ostream& out) {
  const RunConfig rc = load_or_default(f);
  const auto report = run_experiment(rc.experiment);
  Sink sink(f.out, out);
  auto& os = sink.stream();
  if (f.format == "csv") {
    os << csv_line(std::vector<std::string>{"z_um", "parameter", "truth", "mean_estimate", "variance", "variance_error",
                                            "variance_pooled", "crb_practical", "crb_ideal", "fits", "failures",
                                            "convergence_rate", "degraded"});
    for (const auto& p : report.planes) {
      for (std::size_t k = 0; k < p.labels.size(); ++k) {
        os << csv_line(std::vector<std::string>{
            csv_number(p.z), p.labels[k], csv_number(entry(p.truth, k)), csv_number(entry(p.mean_estimate, k)),
            csv_number(entry(p.variance, k)), csv_number(entry(p.variance_error, k)), csv_number(entry(p.variance_pooled, k)),
            csv_number(entry(p.crb_practical, k)), csv_number(entry(p.crb_ideal, k)), std::to_string(p.fits),
            std::to_string(p.failures), csv_number(p.convergence_rate), p.degraded ? "1" : "0"});
      }
    }
  } else {
    nlohmann::json planes = nlohmann::json::array();
    for (const auto& p : report.planes) {
      nlohmann::json pj{{"z_um", p.z},
                        {"labels", p.labels},
                        {"truth", to_json(p.truth)},
                        {"mean_estimate", to_json(p.mean_estimate)},
                        {"variance", to_json(p.variance)},
                        {"variance_error", to_json(p.variance_error)},
                        {"variance_pooled", to_json(p.variance_pooled)},
                        {"crb_practical", to_json(p.crb_practical)},
                        {"crb_ideal", to_json(p.crb_ideal)},
                        {"fits", p.fits},
                        {"failures", p.failures},
                        {"convergence_rate", p.convergence_rate},
                        {"degraded", p.degraded}};
      if (!p.crb_note.empty()) pj["crb_note"] = p.crb_note;
      planes.push_back(pj);
    }
    os << nlohmann::json{{"mode", rc.experiment.spec.describe()},
                         {"seed", rc.experiment.seed},
                         {"paired", rc.experiment.paired},
                         {"degraded", report.degraded},
                         {"planes", planes}}
              .dump(2)
       << '\n';
  }
  sink.flush();
  return kExitOk;
}

inline constexpr const char* kFitHelp =
    "JSON lines, one object per frame: frame, labels, theta_hat, converged, iterations, final_loglik, crb (CRB "
    "diagonal at the estimate), standardized_score, message. CSV columns: frame, converged, iterations, final_loglik, "
    "one column per parameter, then crb_<parameter>. Lengths in um; Model B adds N and N_b.";
inline constexpr const char* kCrbHelp =
    "Per z plane, tables QFI, CFI_ideal and CFI_pixelated_<model> in (x_e, y_e, z_e) (plus N, N_b for Model B): "
    "information per photon and the CRB covariance for the configured photon count. CSV columns: z_um, kind, "
    "parameter, information_per_photon, crb_variance (nan when the bound does not exist).";
inline constexpr const char* kSweepHelp =
    "Rows along the configured axis (pixel_pitch in um, snr as photon count, z_plane in um). CSV columns: "
    "axis_value, snr, cfi_x, cfi_y, cfi_z, qfi_x, qfi_y, qfi_z, ratio_x, ratio_y, ratio_z (per photon; ratio = cfi/qfi).";
inline constexpr const char* kReportHelp =
    "Monte Carlo variance report. CSV columns: z_um, parameter, truth, mean_estimate, variance (mean of group "
    "variances), variance_error, variance_pooled, crb_practical, crb_ideal, fits, failures, convergence_rate, degraded.";

}  // namespace detail

/// Runs one CLI invocation; returns the process exit code.
inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"LG-beam localization toolkit: simulation, Fisher information, CRBs and maximum-likelihood fits", "lgloc"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 ok, 2 config or usage error, 3 I/O error, 4 numerical failure.");
  CommonFlags flags;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON run configuration");
    sub->add_option("--seed", flags.seed, "override the configured seed");
    sub->add_option("--out", flags.out, "output path (default: standard output)");
    sub->add_option("--format", flags.format, "output format")->check(CLI::IsMember({"json", "csv"}));
  };
  auto* sim = app.add_subcommand("simulate", "Simulate frames of every z plane and write an LGIS stack to --out");
  common(sim);
  auto* fit = app.add_subcommand("fit", "Fit every frame of an LGIS stack");
  common(fit);
  fit->add_option("--in", flags.in, "LGIS stack to fit")->required();
  fit->footer(kFitHelp);
  auto* crbc = app.add_subcommand("crb", "Print QFI, ideal and pixelated CFI and CRB tables");
  common(crbc);
  crbc->footer(kCrbHelp);
  auto* sw = app.add_subcommand("sweep", "Information curves over pixel pitch, SNR or defocus");
  common(sw);
  sw->footer(kSweepHelp);
  auto* rep = app.add_subcommand("report", "Monte Carlo variance report against the CRBs");
  common(rep);
  rep->footer(kReportHelp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << app.help();
    diagnose(err, kExitConfig, "usage", e.what());
    return kExitConfig;
  }

  try {
    if (sim->parsed()) return cmd_simulate(flags, out);
    if (fit->parsed()) return cmd_fit(flags, out);
    if (crbc->parsed()) return cmd_crb(flags, out);
    if (sw->parsed()) return cmd_sweep(flags, out);
    return cmd_report(flags, out);
  } catch (const LgisError& e) {
    diagnose(err, kExitIo, std::string("io.") + to_string(e.code()), e.what());
    return kExitIo;
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    diagnose(err, code, to_string(e.kind()), e.what());
    return code;
  } catch (const std::exception& e) {
    diagnose(err, kExitNumerical, "internal", e.what());
    return kExitNumerical;
  }
}

}  // namespace lgloc
