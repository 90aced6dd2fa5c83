#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ov {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_name(std::string_view name) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
  for (char c : name) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic named-stream RNG. All randomness derives from a root seed
// through named splits like "pretrain/epoch-3/batch-17", so any worker can
// reconstruct its stream independent of scheduling.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : base_(splitmix64(seed)), eng_(base_) {}
  RngStream(uint64_t root_seed, std::string_view name)
      : base_(splitmix64(root_seed ^ hash_name(name))), eng_(base_) {}

  // Child stream derived from this stream's base seed, not its current state:
  // splitting is order-independent.
  RngStream split(std::string_view name) const {
    RngStream s(0);
    s.base_ = splitmix64(base_ ^ hash_name(name));
    s.eng_.seed(s.base_);
    return s;
  }

  uint64_t next_u64() { return eng_(); }
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }  // [0,1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive
    return lo + static_cast<int64_t>(eng_() % static_cast<uint64_t>(hi - lo + 1));
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }
  std::mt19937_64& engine() { return eng_; }

 private:
  uint64_t base_ = 0;
  std::mt19937_64 eng_;
};

}  // namespace ov
