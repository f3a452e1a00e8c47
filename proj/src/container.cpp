#include "chmm/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>

namespace chmm {

namespace fs = std::filesystem;

namespace {

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

template <typename T>
void put(std::ofstream& out, T value) {
  value = to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const fs::path& path) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw ContainerError("truncated container: " + path.string());
  return to_little(value);
}

struct Header {
  DType dtype;
  std::vector<std::uint64_t> dims;
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContainerError("cannot open for writing: " + path.string());
  return out;
}

void write_header(std::ofstream& out, DType dtype, const std::vector<std::uint64_t>& dims) {
  out.write(kContainerMagic, sizeof(kContainerMagic));
  put<std::uint32_t>(out, kContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dtype));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put<std::uint64_t>(out, d);
}

Header read_header(std::ifstream& in, const fs::path& path) {
  char magic[8];
  if (!in.read(magic, sizeof(magic))) throw ContainerError("truncated container: " + path.string());
  if (std::memcmp(magic, kContainerMagic, sizeof(magic)) != 0)
    throw ContainerError("bad magic in " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != kContainerVersion)
    throw ContainerError("unsupported container version " + std::to_string(version));
  Header h;
  const auto code = get<std::uint32_t>(in, path);
  if (code != 1 && code != 2) throw ContainerError("unknown dtype code " + std::to_string(code));
  h.dtype = static_cast<DType>(code);
  const auto ndim = get<std::uint32_t>(in, path);
  if (ndim < 1 || ndim > 2) throw ContainerError("unsupported rank " + std::to_string(ndim));
  for (std::uint32_t i = 0; i < ndim; ++i) h.dims.push_back(get<std::uint64_t>(in, path));
  return h;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContainerError("cannot open for reading: " + path.string());
  return in;
}

}  // namespace

void write_matrix(const fs::path& path, const Matrix& m) {
  auto out = open_out(path);
  write_header(out, DType::Float64,
               {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())});
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) put<double>(out, m(i, j));
  if (!out) throw ContainerError("write failed: " + path.string());
}

void write_vector(const fs::path& path, const Vector& v) {
  auto out = open_out(path);
  write_header(out, DType::Float64, {static_cast<std::uint64_t>(v.size())});
  for (Index i = 0; i < v.size(); ++i) put<double>(out, v(i));
  if (!out) throw ContainerError("write failed: " + path.string());
}

void write_ints(const fs::path& path, const std::vector<std::int32_t>& v) {
  auto out = open_out(path);
  write_header(out, DType::Int32, {static_cast<std::uint64_t>(v.size())});
  for (auto x : v) put<std::int32_t>(out, x);
  if (!out) throw ContainerError("write failed: " + path.string());
}

Matrix read_matrix(const fs::path& path) {
  auto in = open_in(path);
  const Header h = read_header(in, path);
  if (h.dtype != DType::Float64) throw ContainerError("expected float64 payload: " + path.string());
  const Index rows = static_cast<Index>(h.dims[0]);
  const Index cols = h.dims.size() == 2 ? static_cast<Index>(h.dims[1]) : 1;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = get<double>(in, path);
  return m;
}

Vector read_vector(const fs::path& path) {
  Matrix m = read_matrix(path);
  if (m.cols() != 1) throw ContainerError("expected a vector: " + path.string());
  return Eigen::Map<const Vector>(m.data(), m.rows());
}

std::vector<std::int32_t> read_ints(const fs::path& path) {
  auto in = open_in(path);
  const Header h = read_header(in, path);
  if (h.dtype != DType::Int32 || h.dims.size() != 1)
    throw ContainerError("expected int32 vector: " + path.string());
  std::vector<std::int32_t> v(h.dims[0]);
  for (auto& x : v) x = get<std::int32_t>(in, path);
  return v;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ContainerError("cannot open for writing: " + path.string());
  out << std::setw(2) << j << '\n';
  if (!out) throw ContainerError("write failed: " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ContainerError("cannot open for reading: " + path.string());
  return nlohmann::json::parse(in);
}

std::uint64_t content_hash(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
  const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace chmm
