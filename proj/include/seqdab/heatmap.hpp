#pragma once

// Motion heat maps from tapped difference-accumulator outputs: per-frame
// channel-mean absolute activation, sequence-shared min-max export to PGM,
// and heat-mass localization against sprite boxes.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "seqdab/errors.hpp"
#include "seqdab/image_io.hpp"
#include "seqdab/network.hpp"
#include "seqdab/sequence.hpp"
#include "seqdab/tensor.hpp"

namespace seqdab {

struct HeatMap {
  Tensor<float> grid;  // (h, w), non-negative
  std::string tag;
  int frame = 0;
};

// One heat map per frame: H_i(y, x) = mean over channels of |F_s[ch, i, y, x]|.
inline std::vector<HeatMap> compute_heatmap(const Tensor<float>& fs, const std::string& tag) {
  check_shape(fs.rank() == 4, "heat map tap must be (c, n, h, w)");
  const int c = fs.dim(0), n = fs.dim(1), h = fs.dim(2), w = fs.dim(3);
  check_shape(c >= 1 && n >= 1, "empty heat map tap");
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<HeatMap> maps(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    HeatMap& m = maps[static_cast<std::size_t>(i)];
    m.tag = tag;
    m.frame = i;
    m.grid = Tensor<float>::zeros({h, w});
    for (int ch = 0; ch < c; ++ch) {
      const float* src = fs.data() + (static_cast<std::int64_t>(ch) * n + i) * plane;
      float* dst = m.grid.data();
      for (std::int64_t p = 0; p < plane; ++p) dst[p] += std::abs(src[p]);
    }
    m.grid.map() /= static_cast<float>(c);
  }
  return maps;
}

// Corner-aligned bilinear upscale: output corners sample input corners
// exactly, so overlays register with the input image.
inline Tensor<float> upscale_corner_aligned(const Tensor<float>& grid, int outH, int outW) {
  check_shape(grid.rank() == 2, "upscale expects a (h, w) grid");
  check_config(outH >= 1 && outW >= 1, "bad upscale target");
  const int h = grid.dim(0), w = grid.dim(1);
  Tensor<float> out = Tensor<float>::uninit({outH, outW});
  const double sy = outH > 1 ? static_cast<double>(h - 1) / (outH - 1) : 0.0;
  const double sx = outW > 1 ? static_cast<double>(w - 1) / (outW - 1) : 0.0;
  for (int y = 0; y < outH; ++y) {
    double fy = y * sy;
    int y0 = std::min(static_cast<int>(fy), h - 1), y1 = std::min(y0 + 1, h - 1);
    double wy = fy - y0;
    for (int x = 0; x < outW; ++x) {
      double fx = x * sx;
      int x0 = std::min(static_cast<int>(fx), w - 1), x1 = std::min(x0 + 1, w - 1);
      double wx = fx - x0;
      double top = (1 - wx) * grid(y0, x0) + wx * grid(y0, x1);
      double bot = (1 - wx) * grid(y1, x0) + wx * grid(y1, x1);
      out(y, x) = static_cast<float>((1 - wy) * top + wy * bot);
    }
  }
  return out;
}

struct ExportResult {
  std::vector<std::string> files;
  bool constant = false;  // degenerate max == min sequence, exported as zeros
};

// Sequence-shared min-max scaling to [0, 255], corner-aligned upscale to
// (H, W), one binary PGM per frame named {tag}_{frame:02}.pgm.
inline ExportResult normalize_and_export(const std::vector<HeatMap>& maps,
                                         const std::string& out_dir, int H, int W) {
  check_config(!maps.empty(), "no heat maps to export");
  std::filesystem::create_directories(out_dir);

  float lo = maps[0].grid.data()[0], hi = lo;
  for (const HeatMap& m : maps)
    for (std::int64_t i = 0; i < m.grid.numel(); ++i) {
      lo = std::min(lo, m.grid.data()[i]);
      hi = std::max(hi, m.grid.data()[i]);
    }

  ExportResult res;
  res.constant = hi == lo;
  if (res.constant)
    std::cerr << "warning: constant heat map sequence for tag \"" << maps[0].tag
              << "\"; exporting zeros\n";
  const float scale = res.constant ? 0.f : 255.f / (hi - lo);

  for (const HeatMap& m : maps) {
    Tensor<float> norm({m.grid.dim(0), m.grid.dim(1)});
    norm.map() = (m.grid.map() - lo) * scale;
    Tensor<float> up = upscale_corner_aligned(norm, H, W);

    ImageU8 img;
    img.height = H;
    img.width = W;
    img.channels = 1;
    img.pixels.resize(static_cast<std::size_t>(H) * W);
    for (std::int64_t i = 0; i < up.numel(); ++i) {
      float v = std::round(up.data()[i]);
      img.pixels[static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>(std::clamp(v, 0.f, 255.f));
    }
    char leaf[32];
    std::snprintf(leaf, sizeof(leaf), "_%02d.pgm", m.frame);
    std::string path = (std::filesystem::path(out_dir) / (m.tag + leaf)).string();
    write_pnm(path, img);
    res.files.push_back(std::move(path));
  }
  return res;
}

// Default progression taps: the stem plus the last block of every stage.
inline std::vector<std::string> progression_tags(const NetworkConfig& cfg) {
  std::vector<std::string> tags = {"conv1"};
  for (std::size_t s = 1; s <= cfg.widths.size(); ++s)
    tags.push_back("layer" + std::to_string(s) + ".last");
  return tags;
}

// Heat maps for one prepared sample at every requested tap, in tag order.
inline std::vector<std::pair<std::string, std::vector<HeatMap>>> progression(
    Network<float>& net, const SequenceSample& prepared, const std::vector<std::string>& tags) {
  check_shape(prepared.frames.rank() == 4, "progression wants one prepared sample");
  TapStore<float> taps;
  net.predict(prepared.frames, &taps);

  std::vector<std::pair<std::string, std::vector<HeatMap>>> out;
  for (const std::string& tag : tags) {
    auto it = taps.find(tag);
    check_config(it != taps.end(), "unknown heat-map tag: " + tag);
    const Tensor<float>& t = it->second;  // (1, c, n, h, w)
    Tensor<float> fs = t.reshaped({t.dim(1), t.dim(2), t.dim(3), t.dim(4)});
    out.emplace_back(tag, compute_heatmap(fs, tag));
  }
  return out;
}

// Doubles a box about its center; half-open, clipped to the canvas.
inline BBox dilate_box(const BBox& b, int factor, int H, int W) {
  check_config(factor >= 1, "dilation factor must be positive");
  double cx = b.cx(), cy = b.cy();
  double hw = 0.5 * factor * (b.x1 - b.x0), hh = 0.5 * factor * (b.y1 - b.y0);
  BBox d;
  d.x0 = std::max(0, static_cast<int>(std::floor(cx - hw)));
  d.y0 = std::max(0, static_cast<int>(std::floor(cy - hh)));
  d.x1 = std::min(W, static_cast<int>(std::ceil(cx + hw)));
  d.y1 = std::min(H, static_cast<int>(std::ceil(cy + hh)));
  return d;
}

// Fraction of the grid's total heat inside the union of dilated boxes.
// The grid is raw (pre-normalization) heat at the boxes' resolution.
inline double heat_mass_ratio(const Tensor<float>& grid, const std::vector<BBox>& boxes,
                              int dilate_factor = 2) {
  check_shape(grid.rank() == 2, "heat mass wants a (h, w) grid");
  const int H = grid.dim(0), W = grid.dim(1);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(H) * W, 0);
  for (const BBox& b : boxes) {
    BBox d = dilate_box(b, dilate_factor, H, W);
    for (int y = d.y0; y < d.y1; ++y)
      for (int x = d.x0; x < d.x1; ++x) mask[static_cast<std::size_t>(y) * W + x] = 1;
  }
  double inside = 0, total = 0;
  for (std::int64_t i = 0; i < grid.numel(); ++i) {
    double v = grid.data()[i];
    total += v;
    if (mask[static_cast<std::size_t>(i)]) inside += v;
  }
  return total > 0 ? inside / total : 0.0;
}

// Per-frame mass ratios for one tap's maps, evaluated at box resolution
// (H, W) via raw-map upscale.
inline std::vector<double> mass_ratios(const std::vector<HeatMap>& maps,
                                       const std::vector<std::vector<BBox>>& boxes, int H, int W,
                                       int dilate_factor = 2) {
  check_shape(maps.size() == boxes.size(), "one box list per heat map frame");
  std::vector<double> out;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    Tensor<float> up = upscale_corner_aligned(maps[i].grid, H, W);
    out.push_back(heat_mass_ratio(up, boxes[i], dilate_factor));
  }
  return out;
}

struct MassRow {
  std::string sequence;
  int frame = 0;
  std::string tag;
  double ratio = 0;
};

inline void write_mass_csv(std::ostream& out, const std::vector<MassRow>& rows) {
  out << "sequence,frame,tag,ratio\n";
  char buf[32];
  for (const MassRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.ratio);
    out << r.sequence << "," << r.frame << "," << r.tag << "," << buf << "\n";
  }
  check_io(out.good(), "mass CSV write failed");
}

}  // namespace seqdab
