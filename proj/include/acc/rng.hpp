#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace acc {

using Rng = std::mt19937_64;

// FNV-1a, stable across platforms and runs.
constexpr std::uint64_t stable_hash(std::string_view s) noexcept {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

/// Derives an independent generator for a named consumer from a root seed.
/// Adding a new stream name never perturbs existing ones.
inline Rng make_stream(std::uint64_t root_seed, std::string_view name) {
  const std::uint64_t h = stable_hash(name);
  std::seed_seq seq{static_cast<std::uint32_t>(root_seed), static_cast<std::uint32_t>(root_seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

/// Named sub-streams of one run.
struct RunStreams {
  Rng init;     // network initialization
  Rng env;      // training episode resets
  Rng eval;     // evaluation episode resets
  Rng warmup;   // uniform random actions before learning starts
  Rng policy;   // exploration noise and reparameterization samples
  Rng replay;   // minibatch sampling

  explicit RunStreams(std::uint64_t seed)
      : init(make_stream(seed, "init")),
        env(make_stream(seed, "env")),
        eval(make_stream(seed, "eval")),
        warmup(make_stream(seed, "warmup")),
        policy(make_stream(seed, "policy")),
        replay(make_stream(seed, "replay")) {}
};

}  // namespace acc
