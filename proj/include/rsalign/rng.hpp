// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

namespace rsalign {

class Matrix;

// xoshiro256** seeded through SplitMix64.
//
//   seeding:  z += 0x9E3779B97F4A7C15; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//             z = (z ^ z>>27) * 0x94D049BB133111EB; s[i] = z ^ z>>31
//   step:     out = rotl(s1 * 5, 7) * 9; t = s1 << 17;
//             s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45)
//
// The integer stream is identical on every platform. uniform() takes the top
// 53 bits; normal() is Box-Muller on two uniforms and does not cache the
// second variate.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal(double mean = 0.0, double stddev = 1.0);
  std::uint64_t below(std::uint64_t bound);  // [0, bound), bound > 0

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
};

Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

}  // namespace rsalign
