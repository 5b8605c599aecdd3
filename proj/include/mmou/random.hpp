#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>

namespace mmou {

/// Philox4x32-10 block function (Salmon et al., Random123).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Independent lanes of randomness attached to one path index. Each sampler
/// draws from its own lane so that, e.g., adding Brownian draws never shifts
/// the chain's jump sequence.
enum class Lane : std::uint32_t {
  chain = 0,
  gaussian = 1,
  euler = 2,
  killing = 3,
  initial = 4,
  crude = 5,
};

/// Counter-based random stream for a single (seed, path index, lane).
///
/// The stream is a pure function of its three coordinates, so serial and
/// parallel runs produce identical draws for every path.
class Stream {
 public:
  using result_type = std::uint32_t;

  Stream(std::uint64_t seed, std::uint64_t index, Lane lane = Lane::chain);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1).
  double uniform_open();
  double exponential(double rate);
  double normal();
  /// Index drawn with probability proportional to `weights` (nonnegative).
  int categorical(std::span<const double> weights);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mmou
