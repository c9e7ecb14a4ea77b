#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace lucid {

/// FNV-1a over parameter values rounded to 1e-9, so that models which
/// differ only below that resolution share a digest.
class Digest {
 public:
  void add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (v >> (8 * i)) & 0xffu;
      h_ *= 0x100000001b3ULL;
    }
  }

  void add(double x) {
    double r = std::nearbyint(x * 1e9);
    if (r == 0.0) r = 0.0;  // fold -0
    add(std::bit_cast<std::uint64_t>(r));
  }

  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace lucid
