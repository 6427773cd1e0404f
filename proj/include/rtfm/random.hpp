#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). The 64-bit
// seed is the key; the 128-bit counter is (block index, stream id), so each
// stream is an independent, reproducible sequence.

#include <array>
#include <cstdint>
#include <limits>

namespace rtfm {

class Philox4x32 {
 public:
  using result_type = std::uint32_t;
  using Block = std::array<std::uint32_t, 4>;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  explicit Philox4x32(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}, stream_(stream) {}

  result_type operator()() {
    if (pos_ == 4) {
      out_ = block(index_++);
      pos_ = 0;
    }
    return out_[pos_++];
  }

  void discard(unsigned long long z) {
    for (; z > 0; --z) (*this)();
  }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(key_[0]) | (static_cast<std::uint64_t>(key_[1]) << 32); }
  std::uint64_t stream() const { return stream_; }

  /// Raw 10-round bijection on an explicit counter and key.
  static Block bijection(Block ctr, std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(0xD2511F53u) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(0xCD9E8D57u) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  Block block(std::uint64_t index) const {
    const Block ctr{static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
    return bijection(ctr, key_);
  }

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
  Block out_{};
  int pos_ = 4;
};

/// Stream ids used by the simulators.
namespace streams {
inline constexpr std::uint64_t clean_data = 0;
inline constexpr std::uint64_t outliers = 1;
inline constexpr std::uint64_t forecast = 2;
}  // namespace streams

/// Seed for replication r of a campaign seeded with `base`.
inline std::uint64_t replication_seed(std::uint64_t base, std::uint64_t r) { return base ^ r; }

}  // namespace rtfm
