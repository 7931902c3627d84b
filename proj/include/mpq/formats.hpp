#pragma once

#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mpq/error.hpp"
#include "mpq/rng.hpp"

namespace mpq {

struct FormatSpec {
  std::string name;
  int mantissa_bits = 0;
  int byte_width = 1;
  bool is_baseline = false;
};

// Registry of the numerical formats the target hardware supports. Exactly one
// format is the high-precision baseline the model is otherwise executed in.
class FormatRegistry {
 public:
  explicit FormatRegistry(std::vector<FormatSpec> formats) : formats_(std::move(formats)) {
    if (formats_.size() < 2) fail(Errc::InvalidFormat, "need at least 2 formats");
    std::set<std::string> names;
    for (size_t i = 0; i < formats_.size(); ++i) {
      const auto& f = formats_[i];
      if (f.mantissa_bits < 0 || f.byte_width < 1)
        fail(Errc::InvalidFormat, "bad format spec for " + f.name);
      if (!names.insert(f.name).second) fail(Errc::InvalidFormat, "duplicate format name " + f.name);
      if (f.is_baseline) {
        if (baseline_ >= 0) fail(Errc::InvalidFormat, "multiple baseline formats");
        baseline_ = static_cast<int>(i);
      }
    }
    if (baseline_ < 0) fail(Errc::InvalidFormat, "no baseline format");
  }

  int size() const { return static_cast<int>(formats_.size()); }
  int baseline_index() const { return baseline_; }
  const FormatSpec& at(int f) const {
    if (f < 0 || f >= size()) fail(Errc::IndexOutOfRange, "format index " + std::to_string(f));
    return formats_[static_cast<size_t>(f)];
  }
  const std::vector<FormatSpec>& all() const { return formats_; }

  int index_of(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (formats_[static_cast<size_t>(i)].name == name) return i;
    fail(Errc::InvalidFormat, "unknown format " + name);
  }

 private:
  std::vector<FormatSpec> formats_;
  int baseline_ = -1;
};

// Per-element relative quantization-noise variance: 2^(-2m)/12 for m mantissa
// bits. The baseline format is the reference execution itself and contributes
// no noise, so its alpha is zero.
inline double alpha(const FormatSpec& f) {
  if (f.is_baseline) return 0.0;
  return std::exp2(-2.0 * f.mantissa_bits) / 12.0;
}

// One draw of the noise model: |value| * 2^(-m) * U[-1/2, 1/2].
inline double quant_noise_sample(double value, const FormatSpec& f, std::mt19937_64& rng) {
  if (f.is_baseline) return 0.0;
  return std::abs(value) * std::exp2(-static_cast<double>(f.mantissa_bits)) * uniform_pm_half(rng);
}

inline FormatRegistry default_bf16_fp8_registry() {
  return FormatRegistry({{"bf16", 7, 2, true}, {"fp8_e4m3", 3, 1, false}});
}

}  // namespace mpq
