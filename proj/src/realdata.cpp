#include "chmm/realdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "chmm/container.hpp"
#include "chmm/rng.hpp"

namespace chmm {

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const fs::path& path) {
  if (b.size() < off + 4) throw IdxTruncatedError("truncated IDX header: " + path.string());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  out.write(bytes, 4);
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item.size() == 1 && std::isalpha(static_cast<unsigned char>(item[0]))) out.push_back(letter_class(item[0]));
    else out.push_back(std::stoi(item));
  }
  return out;
}

double parse_bound(const std::string& s) {
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  return std::stod(s);
}

}  // namespace

ImageSet load_idx(const fs::path& images_path, const fs::path& labels_path) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);

  const std::uint32_t im = be32(img, 0, images_path);
  if (im != kIdxImageMagic)
    throw IdxMagicError("bad IDX image magic " + hex(im) + " (expected 0x00000803): " + images_path.string());
  const std::uint32_t lm = be32(lab, 0, labels_path);
  if (lm != kIdxLabelMagic)
    throw IdxMagicError("bad IDX label magic " + hex(lm) + " (expected 0x00000801): " + labels_path.string());

  const std::uint64_t n = be32(img, 4, images_path);
  const std::uint64_t rows = be32(img, 8, images_path);
  const std::uint64_t cols = be32(img, 12, images_path);
  const std::uint64_t n_labels = be32(lab, 4, labels_path);
  const std::uint64_t D = rows * cols;
  if (img.size() < 16 + n * D)
    throw IdxTruncatedError("truncated IDX image payload: expected " + std::to_string(n * D) + " bytes, found " +
                            std::to_string(img.size() - 16) + ": " + images_path.string());
  if (lab.size() < 8 + n_labels)
    throw IdxTruncatedError("truncated IDX label payload: expected " + std::to_string(n_labels) + " bytes, found " +
                            std::to_string(lab.size() - 8) + ": " + labels_path.string());
  if (n != n_labels)
    throw IdxCountMismatchError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                                std::to_string(n_labels) + " labels");

  ImageSet set;
  set.rows = static_cast<Index>(rows);
  set.cols = static_cast<Index>(cols);
  set.images.resize(static_cast<Index>(n), static_cast<Index>(D));
  const unsigned char* px = img.data() + 16;
  for (Index i = 0; i < set.images.rows(); ++i)
    for (Index j = 0; j < set.images.cols(); ++j) set.images(i, j) = px[i * static_cast<Index>(D) + j] / 255.0;
  set.raw_labels.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    set.raw_labels[i] = lab[8 + i];
    max_label = std::max(max_label, set.raw_labels[i]);
  }
  set.class_count = max_label + 1;
  return set;
}

void write_idx(const fs::path& images_path, const fs::path& labels_path, const ImageSet& set) {
  if (static_cast<Index>(set.raw_labels.size()) != set.size())
    throw std::invalid_argument("write_idx: label count differs from image count");
  if (set.rows * set.cols != set.input_dim()) throw std::invalid_argument("write_idx: rows·cols differs from D");
  for (const auto& p : {images_path, labels_path})
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream im(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lb(labels_path, std::ios::binary | std::ios::trunc);
  if (!im || !lb) throw IdxError("cannot write IDX files");
  put_be32(im, kIdxImageMagic);
  put_be32(im, static_cast<std::uint32_t>(set.size()));
  put_be32(im, static_cast<std::uint32_t>(set.rows));
  put_be32(im, static_cast<std::uint32_t>(set.cols));
  for (Index i = 0; i < set.size(); ++i)
    for (Index j = 0; j < set.input_dim(); ++j)
      im.put(static_cast<char>(std::clamp(std::lround(set.images(i, j) * 255.0), 0L, 255L)));
  put_be32(lb, kIdxLabelMagic);
  put_be32(lb, static_cast<std::uint32_t>(set.size()));
  for (auto l : set.raw_labels) {
    if (l < 0 || l > 255) throw std::invalid_argument("write_idx: labels must fit in a byte");
    lb.put(static_cast<char>(l));
  }
  if (!im || !lb) throw IdxError("write failed");
}

// ---------------------------------------------------------------------------

int letter_class(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a';
  throw std::invalid_argument(std::string("not a letter: ") + c);
}

LabelRule LabelRule::class_groups(std::vector<int> a, std::vector<int> b) {
  LabelRule r;
  r.kind = Kind::ClassGroups;
  r.group_a = std::move(a);
  r.group_b = std::move(b);
  return r;
}

LabelRule LabelRule::even_odd() { return LabelRule{}; }

LabelRule LabelRule::threshold_ge(int k) {
  LabelRule r;
  r.kind = Kind::ThresholdGe;
  r.threshold = k;
  return r;
}

LabelRule LabelRule::luminosity(std::vector<std::pair<double, double>> bounds) {
  LabelRule r;
  r.kind = Kind::Luminosity;
  r.bounds = std::move(bounds);
  return r;
}

LabelRule LabelRule::default_luminosity() {
  return luminosity({{-std::numeric_limits<double>::infinity(), 20.0}, {35.0, 59.0}});
}

LabelRule LabelRule::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  try {
    if (head == "even_odd" && arg.empty()) return even_odd();
    if (head == "threshold_ge") return threshold_ge(std::stoi(arg));
    if (head == "groups") {
      const auto slash = arg.find('/');
      if (slash == std::string::npos) throw std::invalid_argument("missing '/'");
      return class_groups(parse_int_list(arg.substr(0, slash)), parse_int_list(arg.substr(slash + 1)));
    }
    if (head == "luminosity") {
      if (arg.empty()) return default_luminosity();
      std::vector<std::pair<double, double>> b;
      std::stringstream ss(arg);
      std::string iv;
      while (std::getline(ss, iv, ';')) {
        const auto comma = iv.find(',');
        if (comma == std::string::npos) throw std::invalid_argument("interval needs lo,hi");
        b.emplace_back(parse_bound(iv.substr(0, comma)), parse_bound(iv.substr(comma + 1)));
      }
      return luminosity(std::move(b));
    }
  } catch (const std::exception& e) {
    throw std::invalid_argument("bad label rule '" + text + "': " + e.what());
  }
  throw std::invalid_argument("bad label rule '" + text +
                              "' (expected even_odd, threshold_ge:K, groups:A/B or luminosity[:lo,hi;...])");
}

std::string LabelRule::describe() const {
  std::ostringstream s;
  auto list = [&](const std::vector<int>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  };
  switch (kind) {
    case Kind::EvenOdd: s << "even_odd"; break;
    case Kind::ThresholdGe: s << "threshold_ge:" << threshold; break;
    case Kind::ClassGroups:
      s << "groups:";
      list(group_a);
      s << "/";
      list(group_b);
      break;
    case Kind::Luminosity:
      s << "luminosity:";
      for (std::size_t i = 0; i < bounds.size(); ++i) s << (i ? ";" : "") << bounds[i].first << "," << bounds[i].second;
      break;
  }
  return s.str();
}

void LabelRule::validate(int class_count) const {
  switch (kind) {
    case Kind::EvenOdd:
      break;
    case Kind::ThresholdGe:
      if (threshold <= 0 || threshold >= class_count)
        throw std::invalid_argument("threshold_ge: k must split the classes (0 < k < " + std::to_string(class_count) +
                                    ")");
      break;
    case Kind::ClassGroups: {
      if (group_a.empty() || group_b.empty()) throw std::invalid_argument("class_groups: both groups must be non-empty");
      std::set<int> a(group_a.begin(), group_a.end());
      for (int c : group_a)
        if (c < 0 || c >= class_count) throw std::invalid_argument("class_groups: class " + std::to_string(c) + " out of range");
      for (int c : group_b) {
        if (c < 0 || c >= class_count) throw std::invalid_argument("class_groups: class " + std::to_string(c) + " out of range");
        if (a.count(c)) throw std::invalid_argument("class_groups: class " + std::to_string(c) + " in both groups");
      }
      break;
    }
    case Kind::Luminosity:
      if (bounds.empty()) throw std::invalid_argument("luminosity: no intervals");
      for (const auto& [lo, hi] : bounds)
        if (!(lo < hi)) throw std::invalid_argument("luminosity: empty interval");
      break;
  }
}

LabeledSet apply_rule(const ImageSet& set, const LabelRule& rule) {
  rule.validate(set.class_count);
  LabeledSet out;
  out.rows_in = set.size();
  std::vector<double> labels;
  for (Index i = 0; i < set.size(); ++i) {
    const int c = set.raw_labels[i];
    double y = 0.0;
    switch (rule.kind) {
      case LabelRule::Kind::EvenOdd: y = c % 2 == 0 ? 1.0 : -1.0; break;
      case LabelRule::Kind::ThresholdGe: y = c >= rule.threshold ? 1.0 : -1.0; break;
      case LabelRule::Kind::ClassGroups:
        if (std::find(rule.group_a.begin(), rule.group_a.end(), c) != rule.group_a.end()) y = 1.0;
        else if (std::find(rule.group_b.begin(), rule.group_b.end(), c) != rule.group_b.end()) y = -1.0;
        break;
      case LabelRule::Kind::Luminosity: {
        const double brightness = set.images.row(i).mean() * 255.0;
        y = -1.0;
        for (const auto& [lo, hi] : rule.bounds)
          if (brightness > lo && brightness < hi) y = 1.0;
        break;
      }
    }
    if (y == 0.0) continue;
    out.kept_indices.push_back(i);
    labels.push_back(y);
  }
  out.rows_kept = static_cast<Index>(out.kept_indices.size());
  out.rows_dropped = out.rows_in - out.rows_kept;
  if (out.rows_kept == 0) throw std::runtime_error("label rule " + rule.describe() + " kept no rows");
  out.data.inputs.resize(out.rows_kept, set.input_dim());
  for (Index k = 0; k < out.rows_kept; ++k) out.data.inputs.row(k) = set.images.row(out.kept_indices[k]);
  out.data.labels = Eigen::Map<Vector>(labels.data(), out.rows_kept);
  out.data.latents.resize(out.rows_kept, 0);
  return out;
}

Dataset subsample(const Dataset& data, Index M, std::uint64_t seed) {
  if (M < 1 || M > data.size())
    throw std::invalid_argument("subsample: M=" + std::to_string(M) + " outside [1, " + std::to_string(data.size()) + "]");
  std::vector<Index> all(data.size()), pick;
  std::iota(all.begin(), all.end(), 0);
  auto eng = make_engine(seed, Stream::Subsample);
  std::sample(all.begin(), all.end(), std::back_inserter(pick), M, eng);
  Dataset out;
  out.inputs.resize(M, data.inputs.cols());
  out.labels.resize(M);
  out.latents.resize(M, data.latents.cols());
  for (Index k = 0; k < M; ++k) {
    out.inputs.row(k) = data.inputs.row(pick[k]);
    out.labels(k) = data.labels(pick[k]);
    if (data.latents.cols() > 0) out.latents.row(k) = data.latents.row(pick[k]);
  }
  return out;
}

void save_image_set(const fs::path& dir, const std::string& name, const ImageSet& set) {
  write_matrix(dir / (name + ".images.bin"), set.images);
  write_ints(dir / (name + ".labels.bin"), set.raw_labels);
  write_json(dir / (name + ".json"), {{"rows", set.rows}, {"cols", set.cols}, {"class_count", set.class_count}});
}

ImageSet load_image_set(const fs::path& dir, const std::string& name) {
  ImageSet set;
  set.images = read_matrix(dir / (name + ".images.bin"));
  set.raw_labels = read_ints(dir / (name + ".labels.bin"));
  const auto meta = read_json(dir / (name + ".json"));
  set.rows = meta.at("rows").get<Index>();
  set.cols = meta.at("cols").get<Index>();
  set.class_count = meta.at("class_count").get<int>();
  if (static_cast<Index>(set.raw_labels.size()) != set.size() || set.rows * set.cols != set.input_dim())
    throw ContainerError("inconsistent image set: " + (dir / name).string());
  return set;
}

}  // namespace chmm
