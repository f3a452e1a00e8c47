#pragma once

// Little-endian array container.
//
//   offset  size  field
//   0       8     magic "CHMMARR\0"
//   8       4     format version (u32, currently 1)
//   12      4     dtype code (u32): 1 = float64, 2 = int32
//   16      4     ndim (u32, 1 or 2)
//   20      8*n   dims (u64 each), row-major order
//   ...           payload, row-major, little-endian
//
// Metadata lives in a JSON sidecar next to the arrays (see write_sidecar).

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "chmm/types.hpp"

namespace chmm {

inline constexpr char kContainerMagic[8] = {'C', 'H', 'M', 'M', 'A', 'R', 'R', '\0'};
inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint32_t { Float64 = 1, Int32 = 2 };

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_matrix(const std::filesystem::path& path, const Matrix& m);
void write_vector(const std::filesystem::path& path, const Vector& v);
void write_ints(const std::filesystem::path& path, const std::vector<std::int32_t>& v);

Matrix read_matrix(const std::filesystem::path& path);
Vector read_vector(const std::filesystem::path& path);
std::vector<std::int32_t> read_ints(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Hash of the raw matrix bytes, used to tie sidecars to the feature map they describe.
std::uint64_t content_hash(const Matrix& m);

}  // namespace chmm
