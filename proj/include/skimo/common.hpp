#pragma once

#include <cstdint>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace skimo {

// ---------------------------------------------------------------------------
// Errors

// Raised when an operation is called with arguments that violate its
// contract (shape mismatch, step after done, missing gradient, ...).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// File / serialization problems. `kind` distinguishes the failure classes
// so callers and tests can tell them apart.
struct FormatError : std::runtime_error {
  enum class Kind { BadMagic, BadVersion, Truncated, DimMismatch, HashMismatch, Malformed };
  Kind kind;
  FormatError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// Non-finite loss or state encountered mid-run.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// splitmix64 core with a polar-method normal sampler. Implemented explicitly
// (instead of std::normal_distribution) so that streams are bit-reproducible
// across standard libraries.
struct Rng {
  uint64_t state;
  double spare = 0.0;
  bool has_spare = false;

  explicit Rng(uint64_t seed = 0) : state(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw UsageError("uniform_int: n must be positive");
    // rejection sampling to avoid modulo bias
    uint64_t bound = ~uint64_t(0) - (~uint64_t(0) % uint64_t(n));
    uint64_t r;
    do { r = next_u64(); } while (r >= bound);
    return int(r % uint64_t(n));
  }

  // Standard normal via Marsaglia's polar method (no trig, fully portable).
  double normal() {
    if (has_spare) { has_spare = false; return spare; }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare = v * m;
    has_spare = true;
    return u * m;
  }

  // Derive an independent stream; deterministic in (seed, stream).
  Rng split(uint64_t stream) const {
    Rng r(state ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
    r.next_u64();
    return r;
  }
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit hash, used for layout/config/parameter fingerprints.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

// ---------------------------------------------------------------------------
// Minimal dense row-major matrix of scalars. Used on gradient-free paths
// (planning, evaluation, data plumbing) where no tape is wanted.
template <class S>
struct Mat {
  int rows = 0, cols = 0;
  std::vector<S> d;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), d(size_t(r) * c, S(0)) {}
  Mat(int r, int c, std::vector<S> data) : rows(r), cols(c), d(std::move(data)) {
    if (d.size() != size_t(r) * c) throw UsageError("Mat: data size mismatch");
  }

  S* row(int i) { return d.data() + size_t(i) * cols; }
  const S* row(int i) const { return d.data() + size_t(i) * cols; }
  S& at(int i, int j) { return d[size_t(i) * cols + j]; }
  S at(int i, int j) const { return d[size_t(i) * cols + j]; }
  size_t size() const { return d.size(); }

  bool all_finite() const {
    for (S v : d)
      if (!std::isfinite(double(v))) return false;
    return true;
  }
};

template <class S>
inline S clampv(S x, S lo, S hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

}  // namespace skimo
