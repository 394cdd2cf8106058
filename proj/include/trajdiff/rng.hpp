#ifndef TRAJDIFF_RNG_HPP
#define TRAJDIFF_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace trajdiff {

// splitmix64 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Node of the seed-derivation tree: seed = hash(parent, path...).
// Order of the path components matters.
inline constexpr std::uint64_t derive_seed(std::uint64_t root,
                                           std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = mix64(root);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Domain tags used as the first path component, so independent consumers of
// one root seed never share a stream.
namespace seed_tag {
inline constexpr std::uint64_t kCohort = 0x636f686f7274ULL;
inline constexpr std::uint64_t kMissing = 0x6d697373ULL;
inline constexpr std::uint64_t kSplit = 0x73706c6974ULL;
inline constexpr std::uint64_t kInit = 0x696e6974ULL;
inline constexpr std::uint64_t kTrain = 0x747261696eULL;
inline constexpr std::uint64_t kImpute = 0x696d707574ULL;
inline constexpr std::uint64_t kSample = 0x73616d706c65ULL;
inline constexpr std::uint64_t kScorer = 0x73636f7265ULL;
inline constexpr std::uint64_t kClassifier = 0x636c6173ULL;
}  // namespace seed_tag

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  // Inclusive range.
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace trajdiff

#endif  // TRAJDIFF_RNG_HPP
