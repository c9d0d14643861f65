#pragma once

// Filter/SE visualisation: one image or CSV per (parameter, filter, channel)
// plus a manifest.json describing how each file was scaled.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "morphnet/image_io.hpp"
#include "morphnet/model.hpp"

namespace morphnet {

enum class ExportFormat { pgm, csv };

inline ExportFormat parse_export_format(const std::string& s) {
  if (s == "pgm") return ExportFormat::pgm;
  if (s == "csv") return ExportFormat::csv;
  throw std::invalid_argument("unknown export format '" + s + "' (expected pgm or csv)");
}

// In PGM exports of banks with don't-care cells, cared-for values occupy
// [kDncBand, 1] and don't-care cells are drawn at 0.
inline constexpr double kDncBand = 0.25;

/// Otsu threshold over a 256-bin histogram spanning [min, max] of the values.
/// Returns the bin edge that maximises the between-class variance.
inline double otsu_threshold(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("otsu threshold of no values");
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return lo;
  constexpr int bins = 256;
  std::vector<double> hist(bins, 0);
  for (double x : v) hist[std::min(bins - 1, static_cast<int>((x - lo) / (hi - lo) * bins))] += 1;
  double total = 0;
  for (int i = 0; i < bins; ++i) total += i * hist[i];
  double w0 = 0, sum0 = 0, best = -1;
  int cut = 0;
  for (int t = 0; t < bins - 1; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = static_cast<double>(v.size()) - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (total - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) best = between, cut = t;
  }
  return lo + (hi - lo) * (cut + 1) / bins;
}

inline double iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("IoU of masks with different sizes");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Cells at or above the Otsu threshold of the values.
inline std::vector<std::uint8_t> otsu_mask(const std::vector<double>& v) {
  const double t = otsu_threshold(v);
  std::vector<std::uint8_t> m(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] >= t;
  return m;
}

/// Values of filter o, channel c of a bank shaped out x in x s x s.
template <class T>
std::vector<double> filter_slice(const Tensor<T>& bank, std::size_t o, std::size_t c) {
  const std::size_t s2 = bank.dim(2) * bank.dim(3);
  const std::size_t base = (o * bank.dim(1) + c) * s2;
  std::vector<double> out(s2);
  for (std::size_t i = 0; i < s2; ++i) out[i] = static_cast<double>(bank[base + i]);
  return out;
}

/// Writes every filter of the named layer; returns the manifest.
template <class T>
json export_filters(Model<T>& model, const std::string& layer_name, const std::string& out_dir,
                    ExportFormat format) {
  Layer<T>* layer = model.find(layer_name);
  if (!layer) {
    std::string known;
    for (std::size_t i = 0; i < model.size(); ++i)
      if (is_filter_kind(model.layer(i).kind()))
        known += (known.empty() ? "" : ", ") + model.layer(i).name();
    throw std::invalid_argument("no layer named '" + layer_name + "' (filter layers: " + known + ")");
  }
  const auto params = layer->params();
  std::vector<const Param<T>*> banks;
  for (auto* p : params)
    if (p->value.rank() == 4) banks.push_back(p);
  if (banks.empty()) throw std::invalid_argument("layer '" + layer_name + "' has no filter bank");

  // Per-cell don't-care flags for dual-SE layers with DNC enabled.
  std::vector<std::uint8_t> dnc;
  if (auto* dual = dynamic_cast<DualHitMissLayer<T>*>(layer); dual && dual->options().dnc) {
    const HitMissOptions& o = dual->options();
    dnc.resize(banks[0]->value.size());
    for (std::size_t i = 0; i < dnc.size(); ++i)
      dnc[i] = std::max(banks[0]->value[i], banks[1]->value[i]) <= static_cast<T>(o.threshold);
  }

  std::filesystem::create_directories(out_dir);
  json manifest{{"layer", layer_name}, {"kind", layer->kind()}, {"format", format == ExportFormat::pgm ? "pgm" : "csv"},
                {"dnc_band", dnc.empty() ? json(nullptr) : json({0.0, kDncBand})}, {"files", json::array()}};
  for (const auto* bank : banks) {
    const Tensor<T>& w = bank->value;
    const std::size_t rows = w.dim(2), cols = w.dim(3), s2 = rows * cols;
    for (std::size_t o = 0; o < w.dim(0); ++o)
      for (std::size_t c = 0; c < w.dim(1); ++c) {
        const std::vector<double> v = filter_slice(w, o, c);
        const std::size_t base = (o * w.dim(1) + c) * s2;
        std::vector<std::size_t> dnc_cells;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t i = 0; i < s2; ++i) {
          if (!dnc.empty() && dnc[base + i]) {
            dnc_cells.push_back(i);
            continue;
          }
          lo = std::min(lo, v[i]);
          hi = std::max(hi, v[i]);
        }
        const bool all_dnc = dnc_cells.size() == s2;
        const bool degenerate = all_dnc || !(hi > lo);
        const std::string stem = layer_name + "_" + bank->name + "_f" + std::to_string(o) + "_c" + std::to_string(c);
        const std::string file = stem + (format == ExportFormat::pgm ? ".pgm" : ".csv");
        const auto path = (std::filesystem::path(out_dir) / file).string();
        if (format == ExportFormat::pgm) {
          const double floor = dnc.empty() ? 0.0 : kDncBand;
          Tensor<double> img({rows, cols});
          for (std::size_t i = 0; i < s2; ++i) {
            if (!dnc.empty() && dnc[base + i]) img[i] = 0.0;
            else if (degenerate) img[i] = 0.5 * (1 + floor);
            else img[i] = floor + (1 - floor) * (v[i] - lo) / (hi - lo);
          }
          write_pgm(path, img);
        } else {
          std::string csv;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < cols; ++k)
              csv += format_number(static_cast<T>(v[r * cols + k])) + (k + 1 == cols ? "\n" : ",");
          write_file(path, csv);
        }
        manifest["files"].push_back({{"file", file},
                                     {"param", bank->name},
                                     {"filter", o},
                                     {"channel", c},
                                     {"min", all_dnc ? json(nullptr) : json(lo)},
                                     {"max", all_dnc ? json(nullptr) : json(hi)},
                                     {"degenerate", degenerate},
                                     {"dnc_cells", dnc_cells}});
      }
  }
  write_file((std::filesystem::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  return manifest;
}

/// Parses a CSV written by export_filters back into row-major values.
template <class T = float>
std::vector<T> read_filter_csv(const std::string& path) {
  const auto bytes = read_file(path);
  std::vector<T> out;
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    T v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) throw FormatError(path + ": bad value '" + tok + "'");
    out.push_back(v);
    tok.clear();
  };
  for (unsigned char ch : bytes) {
    if (ch == ',' || ch == '\n' || ch == '\r') flush();
    else tok.push_back(static_cast<char>(ch));
  }
  flush();
  return out;
}

}  // namespace morphnet
