#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace proofkit {

// All recoverable failures carry a short machine-readable code
// (e.g. "format", "io", "invalid_argument") plus a human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Seeded generator with distribution helpers that do not depend on the
// standard library's implementation-defined distributions, so streams are
// identical across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  // Uniform integer in [0, bound). bound must be > 0.
  uint64_t below(uint64_t bound);
  // Uniform integer in [lo, hi].
  int64_t range(int64_t lo, int64_t hi);
  // Uniform real in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// 64-bit FNV-1a.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, size_t n);
  Fnv1a& u64(uint64_t v);
  Fnv1a& i64(int64_t v) { return u64(static_cast<uint64_t>(v)); }
  Fnv1a& str(std::string_view s) { return bytes(s.data(), s.size()); }
  uint64_t value() const { return h_; }

 private:
  uint64_t h_ = 0xcbf29ce484222325ULL;
};

// splitmix64 finalizer; used to derive independent seeds.
uint64_t mix64(uint64_t x);
uint64_t derive_seed(uint64_t seed, std::string_view stage);

std::string hex64(uint64_t v);
uint64_t parse_hex64(std::string_view s);

// Number of workers used by parallel helpers; 0 means hardware concurrency.
void set_thread_count(unsigned n);
unsigned thread_count();

// Runs body(i) for i in [0, n) over the configured worker count. Indices are
// handed out dynamically, so callers that need deterministic reductions write
// per-index results and reduce afterwards. The first exception is rethrown.
void parallel_for(size_t n, const std::function<void(size_t)>& body);

void log_info(const std::string& msg);
void log_warn(const std::string& msg);

}  // namespace proofkit
