#pragma once

// LGIS image stacks: the bytes "LGIS1\n", one JSON header line, then frame_count * rows * cols
// little-endian IEEE-754 doubles, row-major, frame after frame.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lgloc/beam.hpp"
#include "lgloc/detector.hpp"
#include "lgloc/error.hpp"

namespace lgloc {

enum class LgisErrorCode { bad_magic, length_mismatch, schema, io };

inline const char* to_string(LgisErrorCode c) {
  switch (c) {
    case LgisErrorCode::bad_magic: return "bad_magic";
    case LgisErrorCode::length_mismatch: return "length_mismatch";
    case LgisErrorCode::schema: return "schema";
    case LgisErrorCode::io: return "io";
  }
  return "?";
}

class LgisError : public Error {
 public:
  LgisError(LgisErrorCode code, const std::string& what)
      : Error(ErrorKind::io, std::string("lgis ") + to_string(code) + ": " + what), code_(code) {}
  LgisErrorCode code() const noexcept { return code_; }

 private:
  LgisErrorCode code_;
};

struct LgisHeader {
  int rows = 0;
  int cols = 0;
  double pitch_um = 0.0;
  std::uint64_t frame_count = 0;
  std::string value_kind = "f64";
  std::uint64_t seed = 0;
  std::vector<ModeComponent> mode;
  double wavelength_um = 0.0;
  double waist_um = 0.0;
  NoiseParams noise{};
  nlohmann::json extra = nlohmann::json::object();  ///< free-form provenance (planes, poses)

  friend bool operator==(const LgisHeader& a, const LgisHeader& b) {
    auto same_mode = [&] {
      if (a.mode.size() != b.mode.size()) return false;
      for (std::size_t i = 0; i < a.mode.size(); ++i)
        if (a.mode[i].l != b.mode[i].l || a.mode[i].p != b.mode[i].p || a.mode[i].weight != b.mode[i].weight) return false;
      return true;
    };
    return a.rows == b.rows && a.cols == b.cols && a.pitch_um == b.pitch_um && a.frame_count == b.frame_count &&
           a.value_kind == b.value_kind && a.seed == b.seed && same_mode() && a.wavelength_um == b.wavelength_um &&
           a.waist_um == b.waist_um && a.noise == b.noise && a.extra == b.extra;
  }
};

struct LgisStack {
  LgisHeader header;
  std::vector<double> payload;

  std::size_t frame_size() const { return static_cast<std::size_t>(header.rows) * static_cast<std::size_t>(header.cols); }

  Frame frame(std::size_t i) const {
    Frame f;
    f.rows = header.rows;
    f.cols = header.cols;
    f.seed = header.seed;
    f.stream = i;
    const auto n = frame_size();
    f.readouts.assign(payload.begin() + static_cast<std::ptrdiff_t>(i * n), payload.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    return f;
  }
};

inline constexpr char kLgisMagic[] = "LGIS1\n";

namespace detail {

inline nlohmann::json header_to_json(const LgisHeader& h) {
  nlohmann::json mode = nlohmann::json::array();
  for (const auto& c : h.mode) mode.push_back({{"l", c.l}, {"p", c.p}, {"weight", {c.weight.real(), c.weight.imag()}}});
  return {{"rows", h.rows},
          {"cols", h.cols},
          {"pitch_um", h.pitch_um},
          {"frame_count", h.frame_count},
          {"value_kind", h.value_kind},
          {"seed", h.seed},
          {"mode", mode},
          {"geometry", {{"wavelength_um", h.wavelength_um}, {"waist_um", h.waist_um}}},
          {"noise",
           {{"b_mean", h.noise.b_mean},
            {"b_sigma", h.noise.b_sigma},
            {"c_alpha", h.noise.c_alpha},
            {"c_beta", h.noise.c_beta},
            {"enabled", h.noise.enabled}}},
          {"extra", h.extra}};
}

inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const char* where) {
  if (!j.is_object()) throw LgisError(LgisErrorCode::schema, std::string(where) + " must be an object");
  for (const char* k : keys)
    if (!j.contains(k)) throw LgisError(LgisErrorCode::schema, std::string(where) + " lacks \"" + k + "\"");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* e : keys) known = known || k == e;
    if (!known) throw LgisError(LgisErrorCode::schema, std::string(where) + " has unknown key \"" + k + "\"");
  }
}

inline LgisHeader header_from_json(const nlohmann::json& j) {
  try {
    require_keys(j, {"rows", "cols", "pitch_um", "frame_count", "value_kind", "seed", "mode", "geometry", "noise", "extra"},
                 "header");
    LgisHeader h;
    h.rows = j.at("rows").get<int>();
    h.cols = j.at("cols").get<int>();
    h.pitch_um = j.at("pitch_um").get<double>();
    h.frame_count = j.at("frame_count").get<std::uint64_t>();
    h.value_kind = j.at("value_kind").get<std::string>();
    h.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& c : j.at("mode")) {
      require_keys(c, {"l", "p", "weight"}, "mode component");
      const auto& w = c.at("weight");
      if (!w.is_array() || w.size() != 2) throw LgisError(LgisErrorCode::schema, "mode weight must be [re, im]");
      h.mode.push_back({c.at("l").get<int>(), c.at("p").get<int>(), {w[0].get<double>(), w[1].get<double>()}});
    }
    const auto& g = j.at("geometry");
    require_keys(g, {"wavelength_um", "waist_um"}, "geometry");
    h.wavelength_um = g.at("wavelength_um").get<double>();
    h.waist_um = g.at("waist_um").get<double>();
    const auto& n = j.at("noise");
    require_keys(n, {"b_mean", "b_sigma", "c_alpha", "c_beta", "enabled"}, "noise");
    h.noise.b_mean = n.at("b_mean").get<double>();
    h.noise.b_sigma = n.at("b_sigma").get<double>();
    h.noise.c_alpha = n.at("c_alpha").get<double>();
    h.noise.c_beta = n.at("c_beta").get<double>();
    h.noise.enabled = n.at("enabled").get<bool>();
    h.extra = j.at("extra");
    if (!h.extra.is_object()) throw LgisError(LgisErrorCode::schema, "extra must be an object");
    if (h.rows < 1 || h.cols < 1) throw LgisError(LgisErrorCode::schema, "rows and cols must be >= 1");
    if (!(h.pitch_um > 0.0)) throw LgisError(LgisErrorCode::schema, "pitch_um must be > 0");
    if (h.value_kind != "f64") throw LgisError(LgisErrorCode::schema, "value_kind must be f64");
    if (h.mode.empty()) throw LgisError(LgisErrorCode::schema, "mode must list at least one component");
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw LgisError(LgisErrorCode::schema, e.what());
  }
}

inline std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
  return r;
}

}  // namespace detail

inline std::string encode_lgis(const LgisStack& s) {
  if (s.payload.size() != s.header.frame_count * s.frame_size()) {
    throw LgisError(LgisErrorCode::length_mismatch, "payload size does not match the header");
  }
  detail::header_from_json(detail::header_to_json(s.header));  // schema check before writing
  std::string out(kLgisMagic);
  out += detail::header_to_json(s.header).dump();
  out += '\n';
  const std::size_t start = out.size();
  out.resize(start + 8 * s.payload.size());
  for (std::size_t i = 0; i < s.payload.size(); ++i) {
    const std::uint64_t v = detail::to_little(std::bit_cast<std::uint64_t>(s.payload[i]));
    std::memcpy(out.data() + start + 8 * i, &v, 8);
  }
  return out;
}

inline LgisStack decode_lgis(const std::string& bytes) {
  const std::size_t magic = sizeof(kLgisMagic) - 1;
  if (bytes.size() < magic || bytes.compare(0, magic, kLgisMagic) != 0) {
    throw LgisError(LgisErrorCode::bad_magic, "file does not start with LGIS1");
  }
  const auto eol = bytes.find('\n', magic);
  if (eol == std::string::npos) throw LgisError(LgisErrorCode::schema, "header line is not terminated");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.substr(magic, eol - magic));
  } catch (const nlohmann::json::exception& e) {
    throw LgisError(LgisErrorCode::schema, e.what());
  }
  LgisStack s;
  s.header = detail::header_from_json(j);
  const std::size_t body = bytes.size() - eol - 1;
  const std::size_t values = s.header.frame_count * s.frame_size();
  if (body != 8 * values) {
    std::ostringstream os;
    os << "payload has " << body << " bytes, header implies " << 8 * values;
    throw LgisError(LgisErrorCode::length_mismatch, os.str());
  }
  s.payload.resize(values);
  for (std::size_t i = 0; i < values; ++i) {
    std::uint64_t v = 0;
    std::memcpy(&v, bytes.data() + eol + 1 + 8 * i, 8);
    s.payload[i] = std::bit_cast<double>(detail::to_little(v));
  }
  return s;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LgisError(LgisErrorCode::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw LgisError(LgisErrorCode::io, "read failed for " + path);
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LgisError(LgisErrorCode::io, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LgisError(LgisErrorCode::io, "write failed for " + path);
}

inline LgisStack read_lgis(const std::string& path) { return decode_lgis(read_file(path)); }

inline void write_lgis(const LgisStack& s, const std::string& path) { write_file(path, encode_lgis(s)); }

/// 64-bit FNV-1a digest, used to compare pipeline outputs.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace lgloc
