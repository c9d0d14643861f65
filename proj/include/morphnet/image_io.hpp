#pragma once

// PGM images (P2/P5, 8- or 16-bit) scaled to [0,1], structuring-element text
// grids, and shortest round-trip number formatting.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "morphnet/morph_ref.hpp"
#include "morphnet/tensor.hpp"

namespace morphnet {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

template <class T>
std::string format_number(T v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw std::runtime_error("number formatting failed");
  return std::string(buf.data(), end);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

namespace detail {

class PgmReader {
 public:
  explicit PgmReader(const std::vector<unsigned char>& bytes) : b_(bytes) {}

  std::string token() {
    skip_space();
    std::string t;
    while (pos_ < b_.size() && !std::isspace(b_[pos_]) && b_[pos_] != '#')
      t.push_back(static_cast<char>(b_[pos_++]));
    if (t.empty()) throw FormatError("truncated PGM header");
    return t;
  }

  unsigned long number() {
    const std::string t = token();
    unsigned long v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size())
      throw FormatError("bad PGM number '" + t + "'");
    return v;
  }

  void single_space() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw FormatError("malformed PGM header");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Reads a P2 or P5 PGM; samples are divided by maxval.
inline Tensor<double> read_pgm(const std::string& path) {
  const auto bytes = read_file(path);
  detail::PgmReader r(bytes);
  const std::string magic = r.token();
  if (magic != "P2" && magic != "P5") throw FormatError(path + ": not a PGM (magic " + magic + ")");
  const std::size_t w = r.number(), h = r.number();
  const unsigned long maxval = r.number();
  if (w == 0 || h == 0) throw FormatError(path + ": empty image");
  if (maxval == 0 || maxval > 65535) throw FormatError(path + ": bad maxval");

  Tensor<double> img({h, w});
  if (magic == "P2") {
    for (std::size_t i = 0; i < img.size(); ++i) {
      const unsigned long v = r.number();
      if (v > maxval) throw FormatError(path + ": sample exceeds maxval");
      img[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
    return img;
  }
  r.single_space();
  const std::size_t bps = maxval < 256 ? 1 : 2;
  std::size_t p = r.pos();
  if (bytes.size() - p < img.size() * bps) throw FormatError(path + ": truncated PGM raster");
  for (std::size_t i = 0; i < img.size(); ++i) {
    unsigned long v = bytes[p++];
    if (bps == 2) v = (v << 8) | bytes[p++];
    if (v > maxval) throw FormatError(path + ": sample exceeds maxval");
    img[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

/// Writes samples in [0,1] (clamped) as P5 or P2 with the given maxval.
inline void write_pgm(const std::string& path, const Tensor<double>& img,
                      unsigned maxval = 255, bool ascii = false) {
  if (img.rank() != 2) throw ShapeError("write_pgm expects a 2-D image");
  if (maxval == 0 || maxval > 65535) throw std::invalid_argument("bad PGM maxval");
  std::ostringstream os;
  os << (ascii ? "P2" : "P5") << '\n' << img.dim(1) << ' ' << img.dim(0) << '\n' << maxval << '\n';
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img[i], 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(v * maxval));
    if (ascii) {
      os << q << ((i + 1) % img.dim(1) == 0 ? '\n' : ' ');
    } else if (maxval < 256) {
      os.put(static_cast<char>(q));
    } else {
      os.put(static_cast<char>(q >> 8));
      os.put(static_cast<char>(q & 0xff));
    }
  }
  write_file(path, os.str());
}

// ---------------------------------------------------------------------------
// Structuring-element text grids
//
// Whitespace-separated cells, one row per line. `.` marks a don't-care cell,
// numbers are weights, and `@` prefixes the origin cell (`@0.7`, `@.`). Lines
// starting with `#` are comments. Without an `@`, the origin is the center.

struct SEText {
  Tensor<double> weights;
  std::vector<std::uint8_t> dnc;
  Origin origin;
};

inline SEText parse_se(const std::string& text, const std::string& source = "<se>") {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> cells;
    for (std::string c; ls >> c;) cells.push_back(c);
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw FormatError(source + ": empty structuring element");
  const std::size_t kh = rows.size(), kw = rows[0].size();
  for (auto& r : rows)
    if (r.size() != kw) throw FormatError(source + ": ragged structuring element rows");

  SEText se{Tensor<double>({kh, kw}), std::vector<std::uint8_t>(kh * kw, 0), {kh / 2, kw / 2}};
  bool has_origin = false;
  for (std::size_t a = 0; a < kh; ++a)
    for (std::size_t b = 0; b < kw; ++b) {
      std::string tok = rows[a][b];
      if (!tok.empty() && tok[0] == '@') {
        if (has_origin) throw FormatError(source + ": more than one origin marker");
        has_origin = true;
        se.origin = {a, b};
        tok.erase(0, 1);
      }
      if (tok == ".") {
        se.dnc[a * kw + b] = 1;
        continue;
      }
      double v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size())
        throw FormatError(source + ": bad cell '" + rows[a][b] + "'");
      se.weights(a, b) = v;
    }
  return se;
}

inline SEText read_se(const std::string& path) {
  const auto bytes = read_file(path);
  return parse_se(std::string(bytes.begin(), bytes.end()), path);
}

template <class T = double>
GraySE<T> to_gray_se(const SEText& se) {
  bool any_dnc = false;
  for (auto d : se.dnc) any_dnc |= d != 0;
  return {se.weights.cast<T>(), any_dnc ? se.dnc : std::vector<std::uint8_t>{}, se.origin};
}

/// Binary view of an SE grid: cells equal to 1 are members, 0 and `.` are not.
inline BinarySE to_binary_se(const SEText& se) {
  BinaryImage g(se.weights.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = se.weights[i];
    if (se.dnc[i]) continue;
    if (v != 0.0 && v != 1.0) throw FormatError("binary structuring element cells must be 0 or 1");
    g[i] = static_cast<std::uint8_t>(v);
  }
  return {g, se.origin};
}

inline BinaryImage threshold(const Tensor<double>& img, double level = 0.5) {
  BinaryImage out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] >= level ? 1 : 0;
  return out;
}

}  // namespace morphnet
