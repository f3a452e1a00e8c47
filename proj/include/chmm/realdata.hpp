#pragma once

// IDX image datasets (MNIST family) and binary labeling rules.
//
// IDX layout, all integers big-endian:
//   images: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, count·rows·cols u8 pixels
//   labels: u32 magic 0x00000801, u32 count, count u8 labels

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "chmm/generator.hpp"
#include "chmm/types.hpp"

namespace chmm {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IdxMagicError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxTruncatedError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxCountMismatchError : public IdxError {
 public:
  using IdxError::IdxError;
};

struct ImageSet {
  Matrix images;                        // M×D, pixels in [0, 1]
  std::vector<std::int32_t> raw_labels;  // M
  int class_count = 0;                  // max label + 1
  Index rows = 0, cols = 0;

  Index size() const { return images.rows(); }
  Index input_dim() const { return images.cols(); }
};

ImageSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes pixels·255 rounded to u8; used for fixtures and exports.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const ImageSet& set);

struct LabelRule {
  enum class Kind { ClassGroups, EvenOdd, ThresholdGe, Luminosity };
  Kind kind = Kind::EvenOdd;
  std::vector<int> group_a, group_b;  // ClassGroups: A → +1, B → -1, others dropped
  int threshold = 5;                  // ThresholdGe: label ≥ k → +1
  // Luminosity: mean brightness (0–255) inside any open interval → +1, else -1.
  std::vector<std::pair<double, double>> bounds;

  static LabelRule class_groups(std::vector<int> a, std::vector<int> b);
  static LabelRule even_odd();
  static LabelRule threshold_ge(int k);
  static LabelRule luminosity(std::vector<std::pair<double, double>> bounds);
  /// "<20 or (35,59)" convention for MNIST-like sets.
  static LabelRule default_luminosity();

  /// Parses "even_odd", "threshold_ge:5", "groups:0,1,4,11/2,7,9,18", "luminosity:-inf,20;35,59".
  static LabelRule parse(const std::string& text);
  std::string describe() const;

  void validate(int class_count) const;
};

struct LabeledSet {
  Dataset data;  // latents has zero columns
  Index rows_in = 0, rows_kept = 0, rows_dropped = 0;
  std::vector<Index> kept_indices;
};

LabeledSet apply_rule(const ImageSet& set, const LabelRule& rule);

/// M rows without replacement, seeded; order of the original set is preserved.
Dataset subsample(const Dataset& data, Index M, std::uint64_t seed);

/// Letter index for notMNIST-style labels ('A' = 0).
int letter_class(char c);

void save_image_set(const std::filesystem::path& dir, const std::string& name, const ImageSet& set);
ImageSet load_image_set(const std::filesystem::path& dir, const std::string& name);

}  // namespace chmm
