#pragma once

// Labeled image sets: the two-shape synthetic task and IDX files (raw or
// gzip, detected from the stream itself).

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "morphnet/image_io.hpp"
#include "morphnet/tensor.hpp"

namespace morphnet {

struct LabeledSet {
  Tensor<float> images;  // N x C x H x W
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }

  void validate() const {
    if (images.rank() != 4) throw ShapeError("image set must be N x C x H x W");
    if (images.dim(0) != labels.size()) throw ShapeError("image and label counts differ");
    for (auto l : labels)
      if (l >= num_classes()) throw std::out_of_range("label " + std::to_string(l) + " out of range");
  }

  /// Rows [begin, end) of `order`, gathered into a batch.
  Tensor<float> gather(const std::vector<std::size_t>& order, std::size_t begin,
                       std::size_t end, std::vector<std::size_t>* batch_labels = nullptr) const {
    const std::size_t per = images.size() / std::max<std::size_t>(size(), 1);
    Shape s = images.shape();
    s[0] = end - begin;
    Tensor<float> out(s);
    if (batch_labels) batch_labels->clear();
    for (std::size_t i = begin; i < end; ++i) {
      std::copy_n(images.data().begin() + order[i] * per, per, out.data().begin() + (i - begin) * per);
      if (batch_labels) batch_labels->push_back(labels[order[i]]);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Synthetic solid circle vs annular ring

struct SyntheticSpec {
  std::size_t grid = 28;
  std::size_t per_class = 200;
  double noise_sigma = 0.03;
  double disk_radius = 8;
  double ring_outer = 8;
  double ring_inner = 4;
  double center_row = 14;
  double center_col = 14;
};

inline const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names{"solid_circle", "annular_ring"};
  return names;
}

/// Binary disk (label 0) or ring (label 1). Pixel (r, c) is set when the
/// distance d from its center (r + 0.5, c + 0.5) to the shape center satisfies
/// d <= outer, and for the ring also d > inner.
inline Tensor<float> synthetic_base(const SyntheticSpec& s, std::size_t label) {
  const double outer = label == 0 ? s.disk_radius : s.ring_outer;
  const double inner = label == 0 ? 0.0 : s.ring_inner;
  if (label == 1 && !(s.ring_inner < s.ring_outer))
    throw std::invalid_argument("ring inner radius must be smaller than its outer radius");
  if (outer <= 0) throw std::invalid_argument("shape radius must be positive");
  const double g = static_cast<double>(s.grid);
  if (s.center_row - outer < 0 || s.center_row + outer > g || s.center_col - outer < 0 ||
      s.center_col + outer > g)
    throw std::invalid_argument("shape does not fit the grid");
  Tensor<float> img({s.grid, s.grid});
  for (std::size_t r = 0; r < s.grid; ++r)
    for (std::size_t c = 0; c < s.grid; ++c) {
      const double d = std::hypot(r + 0.5 - s.center_row, c + 0.5 - s.center_col);
      img(r, c) = (d <= outer && (inner == 0 || d > inner)) ? 1.0f : 0.0f;
    }
  return img;
}

/// per_class noisy copies of each base shape, class 0 first. Noise is not
/// clipped back into [0, 1].
inline LabeledSet gen_synthetic(const SyntheticSpec& s, Rng& rng) {
  if (s.grid == 0) throw std::invalid_argument("synthetic grid must be positive");
  if (!(s.noise_sigma >= 0)) throw std::invalid_argument("noise sigma must be >= 0");
  const Tensor<float> base[2] = {synthetic_base(s, 0), synthetic_base(s, 1)};
  const std::size_t px = s.grid * s.grid;
  LabeledSet set{Tensor<float>({2 * s.per_class, 1, s.grid, s.grid}), {}, synthetic_class_names()};
  for (std::size_t label = 0; label < 2; ++label)
    for (std::size_t i = 0; i < s.per_class; ++i) {
      float* dst = &set.images[(label * s.per_class + i) * px];
      for (std::size_t p = 0; p < px; ++p)
        dst[p] = base[label][p] + static_cast<float>(s.noise_sigma ? rng.normal(0, s.noise_sigma) : 0);
      set.labels.push_back(label);
    }
  return set;
}

// ---------------------------------------------------------------------------
// IDX

class IdxError : public IoError {
 public:
  using IoError::IoError;
};
class IdxMagicError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxTruncatedError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxCountMismatch : public IdxError {
 public:
  using IdxError::IdxError;
};

inline constexpr std::uint32_t kIdxLabels = 0x00000801;
inline constexpr std::uint32_t kIdxImagesU8 = 0x00000803;
inline constexpr std::uint32_t kIdxImagesF32 = 0x00000D03;

/// Whole file contents, inflated when the file is gzip-compressed.
inline std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("cannot open " + path);
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  int err = Z_OK;
  const char* msg = gzerror(f, &err);
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END))
    throw IdxTruncatedError(path + ": " + (msg ? msg : "decompression failed"));
  return out;
}

inline void write_maybe_gzip(const std::string& path, const std::string& bytes) {
  if (path.size() < 3 || path.compare(path.size() - 3, 3, ".gz") != 0) {
    write_file(path, bytes);
    return;
  }
  gzFile f = gzopen(path.c_str(), "wb9");
  if (!f) throw IoError("cannot write " + path);
  const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  if (gzclose(f) != Z_OK || n != static_cast<int>(bytes.size())) throw IoError("short write to " + path);
}

namespace detail {

inline std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

inline void put_be32(std::string& s, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct IdxHeader {
  std::uint32_t magic;
  std::vector<std::size_t> dims;
  std::size_t offset;
};

inline IdxHeader idx_header(const std::vector<unsigned char>& b, const std::string& path,
                            std::initializer_list<std::uint32_t> accepted) {
  if (b.size() < 4) throw IdxTruncatedError(path + ": file too short for an IDX header");
  IdxHeader h{be32(b.data()), {}, 4};
  if (std::find(accepted.begin(), accepted.end(), h.magic) == accepted.end()) {
    std::ostringstream os;
    os << path << ": unexpected IDX magic 0x" << std::hex << h.magic;
    throw IdxMagicError(os.str());
  }
  const std::size_t rank = h.magic & 0xff;
  if (b.size() < 4 + 4 * rank) throw IdxTruncatedError(path + ": truncated IDX dimensions");
  for (std::size_t i = 0; i < rank; ++i) h.dims.push_back(be32(&b[4 + 4 * i]));
  h.offset = 4 + 4 * rank;
  return h;
}

}  // namespace detail

/// Images as N x 1 x H x W in [0, 1] (u8 files are divided by 255; float32
/// files are taken as stored).
inline Tensor<float> load_idx_images(const std::string& path) {
  const auto b = read_maybe_gzip(path);
  const auto h = detail::idx_header(b, path, {kIdxImagesU8, kIdxImagesF32});
  const std::size_t count = h.dims[0] * h.dims[1] * h.dims[2];
  const std::size_t width = h.magic == kIdxImagesU8 ? 1 : 4;
  if (b.size() - h.offset < count * width)
    throw IdxTruncatedError(path + ": expected " + std::to_string(h.dims[0]) + " images, data ends early");
  Tensor<float> out({h.dims[0], 1, h.dims[1], h.dims[2]});
  const unsigned char* p = b.data() + h.offset;
  for (std::size_t i = 0; i < count; ++i) {
    if (width == 1) {
      out[i] = static_cast<float>(p[i]) / 255.0f;
    } else {
      const std::uint32_t bits = detail::be32(p + 4 * i);
      std::memcpy(&out[i], &bits, 4);
    }
  }
  return out;
}

inline std::vector<std::size_t> load_idx_labels(const std::string& path) {
  const auto b = read_maybe_gzip(path);
  const auto h = detail::idx_header(b, path, {kIdxLabels});
  if (b.size() - h.offset < h.dims[0])
    throw IdxTruncatedError(path + ": expected " + std::to_string(h.dims[0]) + " labels, data ends early");
  return {b.begin() + static_cast<std::ptrdiff_t>(h.offset),
          b.begin() + static_cast<std::ptrdiff_t>(h.offset + h.dims[0])};
}

inline std::vector<std::string> default_class_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::to_string(i));
  return out;
}

inline LabeledSet load_idx(const std::string& images_path, const std::string& labels_path,
                           std::vector<std::string> class_names = {}) {
  LabeledSet set{load_idx_images(images_path), load_idx_labels(labels_path), std::move(class_names)};
  if (set.images.dim(0) != set.labels.size())
    throw IdxCountMismatch(images_path + " holds " + std::to_string(set.images.dim(0)) +
                           " images but " + labels_path + " holds " +
                           std::to_string(set.labels.size()) + " labels");
  if (set.class_names.empty()) {
    std::size_t top = 0;
    for (auto l : set.labels) top = std::max(top, l + 1);
    set.class_names = default_class_names(top);
  }
  set.validate();
  return set;
}

/// Writes images as u8 (rounded, clamped) or float32 (exact) IDX plus a label
/// file. Paths ending in .gz are compressed.
inline void write_idx(const LabeledSet& set, const std::string& images_path,
                      const std::string& labels_path, bool float32 = false) {
  set.validate();
  if (set.images.dim(1) != 1) throw ShapeError("IDX export supports single-channel images only");
  std::string img;
  detail::put_be32(img, float32 ? kIdxImagesF32 : kIdxImagesU8);
  for (std::size_t d : {set.images.dim(0), set.images.dim(2), set.images.dim(3)})
    detail::put_be32(img, static_cast<std::uint32_t>(d));
  for (float v : set.images.data()) {
    if (float32) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_be32(img, bits);
    } else {
      img.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
  }
  std::string lab;
  detail::put_be32(lab, kIdxLabels);
  detail::put_be32(lab, static_cast<std::uint32_t>(set.size()));
  for (auto l : set.labels) {
    if (l > 255) throw std::out_of_range("IDX labels must fit in a byte");
    lab.push_back(static_cast<char>(l));
  }
  write_maybe_gzip(images_path, img);
  write_maybe_gzip(labels_path, lab);
}

// ---------------------------------------------------------------------------
// Data directories: {train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz] plus an
// optional labels.txt with one class name per line.

inline std::string find_split_file(const std::string& dir, const std::string& stem) {
  for (const char* ext : {"", ".gz"}) {
    const auto p = std::filesystem::path(dir) / (stem + ext);
    if (std::filesystem::exists(p)) return p.string();
  }
  throw IoError("no " + stem + "[.gz] in " + dir);
}

inline std::vector<std::string> read_class_names(const std::string& dir) {
  const auto p = std::filesystem::path(dir) / "labels.txt";
  std::vector<std::string> names;
  if (!std::filesystem::exists(p)) return names;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

inline void write_class_names(const std::string& dir, const std::vector<std::string>& names) {
  std::string s;
  for (const auto& n : names) s += n + "\n";
  write_file((std::filesystem::path(dir) / "labels.txt").string(), s);
}

inline LabeledSet load_split(const std::string& dir, bool train) {
  const std::string prefix = train ? "train" : "t10k";
  auto names = read_class_names(dir);
  LabeledSet set = load_idx(find_split_file(dir, prefix + "-images-idx3-ubyte"),
                            find_split_file(dir, prefix + "-labels-idx1-ubyte"), names);
  return set;
}

inline void write_split(const LabeledSet& set, const std::string& dir, bool train, bool float32) {
  const std::string prefix = train ? "train" : "t10k";
  const auto d = std::filesystem::path(dir);
  write_idx(set, (d / (prefix + "-images-idx3-ubyte")).string(),
            (d / (prefix + "-labels-idx1-ubyte")).string(), float32);
}

// ---------------------------------------------------------------------------

/// Class-balanced subset: per_class random samples of each class, kept in
/// their original order. Classes with fewer samples contribute all of them.
inline LabeledSet subset(const LabeledSet& set, std::size_t per_class, Rng& rng) {
  std::vector<std::vector<std::size_t>> by_class(set.num_classes());
  for (std::size_t i = 0; i < set.size(); ++i) by_class[set.labels[i]].push_back(i);
  std::vector<std::size_t> keep;
  for (auto& idx : by_class) {
    rng.shuffle(idx.begin(), idx.end());
    keep.insert(keep.end(), idx.begin(), idx.begin() + std::min(per_class, idx.size()));
  }
  std::sort(keep.begin(), keep.end());
  LabeledSet out;
  out.class_names = set.class_names;
  if (keep.empty()) {
    Shape s = set.images.shape();
    s[0] = 0;
    out.images = Tensor<float>(s);
    return out;
  }
  out.images = set.gather(keep, 0, keep.size(), &out.labels);
  return out;
}

inline double pixel_variance(const LabeledSet& set) {
  return sample_variance<float>(set.images.data());
}

}  // namespace morphnet
