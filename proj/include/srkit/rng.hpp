#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "srkit/errors.hpp"

namespace srkit {

// mt19937_64 with explicit sampling transforms. The standard distribution
// classes are implementation-defined, so using them would make seeded runs
// depend on the standard library; these transforms pin the stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform double in [0, 1) using the top 53 bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), debiased by rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw UsageError("uniform_int: empty range");
    const std::uint64_t bound = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= bound);
    return x % n;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    is >> gen_;
    if (is.fail()) throw DataError("invalid RNG state string");
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace srkit
