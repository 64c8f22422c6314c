#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace lindlab {

// splitmix64 step; used to derive independent child seeds from a master seed
// so that per-atom streams are reproducible regardless of evaluation order.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Child seed for (master, stream, index); stable across platforms and
// worker counts.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index) {
  std::uint64_t s = master;
  splitmix64(s);
  s ^= 0x517cc1b727220a95ULL * (stream + 1);
  splitmix64(s);
  s ^= 0x2545f4914f6cdd1dULL * (index + 1);
  return splitmix64(s);
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::uint64_t stream,
                                std::uint64_t index) {
  return std::mt19937_64(derive_seed(master, stream, index));
}

// FNV-1a on bytes; used for config hashes in run manifests.
inline std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// All numeric output goes through this: 17 significant digits round-trips
// IEEE doubles exactly.
std::string fmt17(double v);

}  // namespace lindlab
