#ifndef CINFER_RNG_HPP
#define CINFER_RNG_HPP

#include <cstdint>
#include <random>

namespace cinfer {

using rng_engine = std::mt19937_64;

// Independent random streams derived from one master seed. Each consumer owns
// its stream so that, e.g., exploration noise never shifts the channel draws.
enum class stream : std::uint32_t {
  channel = 1,
  arrivals = 2,
  exploration = 3,
  replay = 4,
  init = 5,
  evaluation = 6,
  instances = 7,
};

inline rng_engine make_stream(std::uint64_t master_seed, stream id,
                              std::uint64_t salt = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(id),
                    static_cast<std::uint32_t>(salt),
                    static_cast<std::uint32_t>(salt >> 32)};
  return rng_engine(seq);
}

inline double uniform01(rng_engine& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double gaussian(rng_engine& rng, double sigma) {
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

}  // namespace cinfer

#endif  // CINFER_RNG_HPP
