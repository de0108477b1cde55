#pragma once

// Sequence-sample plumbing: window slicing from ordered clips, frame-directory
// ingestion, motion-energy filtering, permutation shuffling and labeling, and
// the crop/normalize pipeline applied at batch assembly time.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "seqdab/errors.hpp"
#include "seqdab/image_io.hpp"
#include "seqdab/perm.hpp"
#include "seqdab/rng.hpp"
#include "seqdab/sprites.hpp"
#include "seqdab/tensor.hpp"

namespace seqdab {

// An n-frame sample in presentation order: position j holds the frame whose
// temporal rank is perm.ranks[j]; sorting positions by rank restores capture
// order. Frame values are in [0, 1] until normalize().
struct SequenceSample {
  Tensor<float> frames;  // (3, n, H, W)
  Permutation perm;
  int label = 0;
  std::string source;
  int step = 1;
  int crop_y = 0, crop_x = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<BBox>> boxes;  // optional, per presented position

  int n() const { return frames.empty() ? 0 : static_cast<int>(frames.shape()[1]); }
  int height() const { return frames.empty() ? 0 : static_cast<int>(frames.shape()[2]); }
  int width() const { return frames.empty() ? 0 : static_cast<int>(frames.shape()[3]); }
};

// Valid window starts t, t+s, ..., t+(n-1)s over F frames.
inline int num_windows(int F, int n, int s) {
  check_config(n >= 2 && s >= 1, "window extraction needs n >= 2 and step >= 1");
  return std::max(0, F - (n - 1) * s);
}

// Mean over adjacent frame pairs of the mean absolute pixel difference.
inline double motion_energy(const Tensor<float>& frames) {
  check_shape(frames.rank() == 4 && frames.shape()[0] == 3, "motion_energy wants (3, n, H, W)");
  std::int64_t n = frames.shape()[1];
  check_shape(n >= 2, "motion_energy needs at least two frames");
  std::int64_t hw = frames.shape()[2] * frames.shape()[3];
  double total = 0.0;
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t f = 0; f + 1 < n; ++f) {
      const float* a = frames.data() + (c * n + f) * hw;
      Eigen::Map<const Eigen::ArrayXf> pa(a, hw), pb(a + hw, hw);
      total += (pa - pb).abs().cast<double>().sum();
    }
  }
  return total / (static_cast<double>(n - 1) * 3 * hw);
}

// Copies frames t, t+s, ..., t+(n-1)s of an ordered clip into an ordered
// (identity-permutation) sample, carrying the matching boxes.
inline SequenceSample slice_window(const OrderedClip& clip, int t, int n, int s) {
  check_shape(clip.frames.rank() == 4 && clip.frames.shape()[0] == 3,
              "slice_window wants clip frames (3, F, H, W)");
  int F = static_cast<int>(clip.frames.shape()[1]);
  check_config(n >= 2 && s >= 1 && t >= 0 && t + (n - 1) * s < F,
               "window does not fit the clip");
  std::int64_t H = clip.frames.shape()[2], W = clip.frames.shape()[3];
  std::int64_t hw = H * W;

  SequenceSample out;
  out.frames = Tensor<float>::uninit(
      {3, n, static_cast<int>(H), static_cast<int>(W)});
  out.perm = identity_perm(n);
  out.label = encode(out.perm);
  out.source = clip.source;
  out.step = s;
  for (int c = 0; c < 3; ++c) {
    for (int j = 0; j < n; ++j) {
      const float* src = clip.frames.data() + (static_cast<std::int64_t>(c) * F + t + j * s) * hw;
      std::memcpy(out.frames.data() + (static_cast<std::int64_t>(c) * n + j) * hw, src,
                  static_cast<std::size_t>(hw) * sizeof(float));
    }
  }
  if (!clip.boxes.empty()) {
    check_shape(clip.boxes.size() == static_cast<std::size_t>(F), "clip boxes/frames mismatch");
    for (int j = 0; j < n; ++j)
      out.boxes.push_back(clip.boxes[static_cast<std::size_t>(t + j * s)]);
  }
  return out;
}

// Reorders an ordered sample so position j holds the frame of rank
// perm.ranks[j], and labels it with the permutation's merged class.
inline SequenceSample shuffle_and_label(const SequenceSample& ordered, const Permutation& perm) {
  check_config(ordered.perm == identity_perm(ordered.n()),
               "shuffle_and_label expects a capture-ordered sample");
  check_config(is_valid(perm) && static_cast<int>(perm.size()) == ordered.n(),
               "permutation length does not match the sequence");
  std::int64_t n = ordered.n();
  std::int64_t hw = static_cast<std::int64_t>(ordered.height()) * ordered.width();

  SequenceSample out = ordered;
  out.frames = Tensor<float>::uninit(ordered.frames.shape());
  out.perm = perm;
  out.label = encode(perm);
  out.boxes.clear();
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t j = 0; j < n; ++j) {
      const float* src = ordered.frames.data() + (c * n + perm.ranks[static_cast<std::size_t>(j)]) * hw;
      std::memcpy(out.frames.data() + (c * n + j) * hw,
                  src, static_cast<std::size_t>(hw) * sizeof(float));
    }
  }
  if (!ordered.boxes.empty()) {
    check_shape(ordered.boxes.size() == perm.size(), "sample boxes/frames mismatch");
    for (std::size_t j = 0; j < perm.size(); ++j)
      out.boxes.push_back(ordered.boxes[perm.ranks[j]]);
  }
  return out;
}

namespace detail {

// Center-aligned bilinear resize of every frame to (outH, outW).
inline Tensor<float> resize_frames(const Tensor<float>& frames, int outH, int outW) {
  std::int64_t n = frames.shape()[1], H = frames.shape()[2], W = frames.shape()[3];
  Tensor<float> out = Tensor<float>::uninit({3, static_cast<int>(n), outH, outW});
  double sy = static_cast<double>(H) / outH, sx = static_cast<double>(W) / outW;
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t f = 0; f < n; ++f) {
      const float* src = frames.data() + (c * n + f) * H * W;
      float* dst = out.data() + (c * n + f) * outH * outW;
      for (int y = 0; y < outH; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        std::int64_t y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(fy)), 0, H - 1);
        std::int64_t y1 = std::min(y0 + 1, H - 1);
        double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < outW; ++x) {
          double fx = (x + 0.5) * sx - 0.5;
          std::int64_t x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(fx)), 0, W - 1);
          std::int64_t x1 = std::min(x0 + 1, W - 1);
          double wx = std::clamp(fx - x0, 0.0, 1.0);
          double top = src[y0 * W + x0] * (1 - wx) + src[y0 * W + x1] * wx;
          double bot = src[y1 * W + x0] * (1 - wx) + src[y1 * W + x1] * wx;
          dst[static_cast<std::int64_t>(y) * outW + x] = static_cast<float>(top * (1 - wy) + bot * wy);
        }
      }
    }
  }
  return out;
}

}  // namespace detail

// Scales the shorter edge to S (bilinear), then crops C x C: a random offset
// shared by all n frames in train mode, the center crop in eval mode. Boxes
// follow the same transform.
inline SequenceSample augment(const SequenceSample& sample, int S, int C, bool train, Rng& rng) {
  check_config(S >= C && C >= 1, "augment needs shorter-edge size >= crop size");
  std::int64_t n = sample.n();
  check_shape(n >= 1, "augment on an empty sample");
  int H = sample.height(), W = sample.width();

  Tensor<float> frames = sample.frames;
  double box_sy = 1.0, box_sx = 1.0;
  if (std::min(H, W) != S) {
    int outH, outW;
    if (H <= W) {
      outH = S;
      outW = static_cast<int>(std::lround(static_cast<double>(W) * S / H));
    } else {
      outW = S;
      outH = static_cast<int>(std::lround(static_cast<double>(H) * S / W));
    }
    frames = detail::resize_frames(frames, outH, outW);
    box_sy = static_cast<double>(outH) / H;
    box_sx = static_cast<double>(outW) / W;
    H = outH;
    W = outW;
  }
  check_config(H >= C && W >= C, "frame smaller than the crop");

  int oy, ox;
  if (train) {
    oy = std::uniform_int_distribution<int>(0, H - C)(rng);
    ox = std::uniform_int_distribution<int>(0, W - C)(rng);
  } else {
    oy = (H - C) / 2;
    ox = (W - C) / 2;
  }

  SequenceSample out = sample;
  out.crop_y = oy;
  out.crop_x = ox;
  out.frames = Tensor<float>::uninit({3, static_cast<int>(n), C, C});
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t f = 0; f < n; ++f) {
      const float* src = frames.data() + (c * n + f) * H * W;
      float* dst = out.frames.data() + (c * n + f) * C * C;
      for (int y = 0; y < C; ++y)
        std::memcpy(dst + static_cast<std::int64_t>(y) * C, src + (oy + y) * static_cast<std::int64_t>(W) + ox,
                    static_cast<std::size_t>(C) * sizeof(float));
    }
  }
  for (std::vector<BBox>& frame : out.boxes) {
    for (BBox& b : frame) {
      b.x0 = static_cast<int>(std::floor(b.x0 * box_sx)) - ox;
      b.x1 = static_cast<int>(std::ceil(b.x1 * box_sx)) - ox;
      b.y0 = static_cast<int>(std::floor(b.y0 * box_sy)) - oy;
      b.y1 = static_cast<int>(std::ceil(b.y1 * box_sy)) - oy;
    }
  }
  return out;
}

inline constexpr double kNormMean[3] = {0.485, 0.456, 0.406};
inline constexpr double kNormStd[3] = {0.229, 0.224, 0.225};

// Per-channel (x - mean) / std, in place.
inline void normalize(SequenceSample& sample) {
  check_shape(sample.frames.rank() == 4 && sample.frames.shape()[0] == 3,
              "normalize wants frames (3, n, H, W)");
  std::int64_t plane = sample.frames.numel() / 3;
  for (int c = 0; c < 3; ++c) {
    Eigen::Map<Eigen::ArrayXf> p(sample.frames.data() + c * plane, plane);
    p = (p - static_cast<float>(kNormMean[c])) / static_cast<float>(kNormStd[c]);
  }
}

// Loads a directory of PNG/PPM/PGM frames (lexicographic order = capture
// order) as one ordered clip in [0, 1], gray replicated to 3 channels.
inline OrderedClip load_frame_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  check_io(fs::is_directory(dir), "not a directory: " + dir);
  std::vector<std::string> files;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  check_io(!files.empty(), "no PNG/PPM/PGM frames in: " + dir);

  OrderedClip clip;
  clip.source = fs::path(dir).filename().string();
  int F = static_cast<int>(files.size());
  int H = 0, W = 0;
  for (int f = 0; f < F; ++f) {
    ImageU8 img = read_image(files[static_cast<std::size_t>(f)]);
    if (f == 0) {
      H = img.height;
      W = img.width;
      clip.frames = Tensor<float>::uninit({3, F, H, W});
    }
    check_io(img.height == H && img.width == W,
             "frame extents differ within: " + dir);
    std::int64_t hw = static_cast<std::int64_t>(H) * W;
    for (int c = 0; c < 3; ++c) {
      float* dst = clip.frames.data() + (static_cast<std::int64_t>(c) * F + f) * hw;
      int sc = img.channels == 3 ? c : 0;
      for (std::int64_t i = 0; i < hw; ++i)
        dst[i] = static_cast<float>(img.pixels[static_cast<std::size_t>(i * img.channels + sc)]) / 255.0f;
    }
  }
  return clip;
}

// Sliding windows (t, t+s, ..., t+(n-1)s) over an ordered clip; windows whose
// motion energy falls below energy_min are dropped. A clip shorter than
// (n-1)s + 1 frames yields no windows.
inline std::vector<SequenceSample> extract_from_clip(const OrderedClip& clip, int n, int s,
                                                     double energy_min) {
  int F = static_cast<int>(clip.frames.shape()[1]);
  int count = num_windows(F, n, s);
  std::vector<SequenceSample> out;
  for (int t = 0; t < count; ++t) {
    SequenceSample sample = slice_window(clip, t, n, s);
    if (motion_energy(sample.frames) < energy_min) continue;
    out.push_back(std::move(sample));
  }
  return out;
}

inline std::vector<SequenceSample> extract_sequences(const std::string& frame_dir, int n, int s,
                                                     double energy_min) {
  return extract_from_clip(load_frame_dir(frame_dir), n, s, energy_min);
}

}  // namespace seqdab
