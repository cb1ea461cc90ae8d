#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace acs {

/// Philox4x32-10 counter-based block function (Salmon et al., Random123).
/// Stateless: the same (counter, key) always maps to the same 128-bit block.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter counter, Key key);
};

/// Mixes a 64-bit seed with a list of tags into an independent 64-bit seed.
/// Used to split one run seed into per-module, per-stage, per-step streams.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

/// Sequential stream over Philox blocks. The key is the 64-bit seed, the upper
/// half of the counter is the stream id, the lower half is the block index.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; one uniform pair per draw.
  double normal();

 private:
  void refill();

  Philox4x32::Key key_;
  std::uint64_t stream_;
  std::uint64_t block_index_ = 0;
  Philox4x32::Counter buffer_{};
  int used_ = 4;
};

}  // namespace acs
