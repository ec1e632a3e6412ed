#pragma once

#include <array>
#include <cstdint>

namespace despeckler {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// A (seed, stream) pair selects an independent sequence; the position inside
/// that sequence is a 64-bit block counter. Output depends only on integer
/// arithmetic, so sequences are identical on every platform.
class Philox {
 public:
  struct State {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t counter = 0;
    std::uint32_t lane = 4;  // next unread word of the current block
  };

  Philox(std::uint64_t seed, std::uint64_t stream = 0);
  explicit Philox(const State& state);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  // Standard normal (Box-Muller, cosine branch only; no cached state).
  double normal();
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  State state() const;

  // Raw block function, exposed for known-answer tests.
  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> counter,
                                            std::array<std::uint32_t, 2> key);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  std::uint32_t lane_ = 4;
};

// SplitMix64 finalizer; used to derive child seeds, e.g. one per image.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace despeckler
