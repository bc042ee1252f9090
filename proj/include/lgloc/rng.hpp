#pragma once

#include <cstdint>
#include <limits>

namespace lgloc {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based generator. Each (seed, stream, substream) triple names an independent
/// sequence, so draws do not depend on the order in which streams are consumed.
///
/// Stream-splitting rule used throughout: stream = frame identifier, substream = pixel index.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream) noexcept
      : key_(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ (substream + 0x632BE59BD9B4E019ULL))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return splitmix64(key_ + 0xD1B54A32D192ED03ULL * ++counter_); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Frame identifier for (plane, beam, frame) triples used by the harness.
inline constexpr std::uint64_t frame_stream(std::uint64_t plane, std::uint64_t beam, std::uint64_t frame) noexcept {
  return (plane << 40) ^ (beam << 32) ^ frame;
}

}  // namespace lgloc
