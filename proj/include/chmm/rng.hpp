#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "chmm/types.hpp"

namespace chmm {

/// Named random streams. Every draw in the library comes from an engine keyed by
/// (seed, stream, index), so two entities sharing a seed never share noise and a
/// value can be regenerated without replaying anything else.
enum class Stream : std::uint64_t {
  SourceFeatures = 1,
  SourceTeacher = 2,
  TargetFeatureNoise = 3,
  TargetTeacherNoise = 4,
  Latent = 5,
  NetworkInit = 6,
  Shuffle = 7,
  Holdout = 8,
  RandomFeatures = 9,
  MonteCarlo = 10,
  Covariates = 11,
  Subsample = 12,
  TestData = 13,
  Readout = 14,
};

using Engine = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate seed words.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Combine (seed, stream, index) into one 64-bit engine seed.
std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0) noexcept;

/// Combine a seed with an arbitrary tag (e.g. a hashed cell key).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept;

Engine make_engine(std::uint64_t seed, Stream stream, std::uint64_t index = 0);

/// rows×cols of i.i.d. N(0,1); row i comes from engine (seed, stream, i + row_offset).
Matrix gaussian_matrix(Index rows, Index cols, std::uint64_t seed, Stream stream,
                       std::uint64_t row_offset = 0);

Vector gaussian_vector(Index n, std::uint64_t seed, Stream stream, std::uint64_t index = 0);

/// 64-bit FNV-1a, for config hashes and string-derived seed tags.
std::uint64_t fnv1a(std::string_view text) noexcept;

}  // namespace chmm
