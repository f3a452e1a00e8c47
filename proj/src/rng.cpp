#include "chmm/rng.hpp"

#include <string_view>

namespace chmm {

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index) noexcept {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ static_cast<std::uint64_t>(stream));
  return mix64(h ^ index);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  return mix64(mix64(seed) ^ tag);
}

Engine make_engine(std::uint64_t seed, Stream stream, std::uint64_t index) {
  const std::uint64_t s = derive_seed(seed, stream, index);
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
  return Engine(seq);
}

Matrix gaussian_matrix(Index rows, Index cols, std::uint64_t seed, Stream stream,
                       std::uint64_t row_offset) {
  Matrix out(rows, cols);
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < rows; ++i) {
    Engine eng = make_engine(seed, stream, row_offset + static_cast<std::uint64_t>(i));
    std::normal_distribution<double> normal;
    for (Index j = 0; j < cols; ++j) out(i, j) = normal(eng);
  }
  return out;
}

Vector gaussian_vector(Index n, std::uint64_t seed, Stream stream, std::uint64_t index) {
  Engine eng = make_engine(seed, stream, index);
  std::normal_distribution<double> normal;
  Vector out(n);
  for (Index i = 0; i < n; ++i) out(i) = normal(eng);
  return out;
}

std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace chmm
