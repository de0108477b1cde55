#pragma once

// Synthetic moving-sprite scene generator: 1-3 antialiased discs/rects with
// per-frame velocity jitter drift over a smooth value-noise background, global
// camera jitter, and photometric noise. Grayscale scenes replicated to 3
// channels; analytic per-frame bounding boxes recorded for every sprite.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "seqdab/errors.hpp"
#include "seqdab/rng.hpp"
#include "seqdab/tensor.hpp"

namespace seqdab {

struct SpriteSceneConfig {
  int height = 40;
  int width = 48;
  int frames = 4;
  int min_sprites = 1;
  int max_sprites = 3;
  double radius_min = 3.0;   // half-extent in px
  double radius_max = 6.0;
  double intensity_min = 0.6;
  double intensity_max = 1.0;
  double speed_min = 0.25;   // px/frame
  double speed_max = 1.5;
  double accel_std = 0.05;   // per-frame velocity jitter
  double camera_std = 0.25;  // per-frame global translation jitter
  double texture_scale = 8.0;  // background value-noise cell size in px
  double noise_std = 0.02;   // photometric noise

  void validate() const {
    check_config(height > 0 && width > 0, "sprite canvas extents must be positive");
    check_config(frames >= 1, "sprite clip needs at least one frame");
    check_config(1 <= min_sprites && min_sprites <= max_sprites && max_sprites <= 3,
                 "sprite count range must satisfy 1 <= min <= max <= 3");
    check_config(0.5 <= radius_min && radius_min <= radius_max, "bad sprite radius range");
    check_config(2.0 * (radius_max + 1.0) < std::min(height, width),
                 "sprite cannot fit the canvas");
    check_config(0.0 <= intensity_min && intensity_min <= intensity_max && intensity_max <= 1.0,
                 "sprite intensity range must lie in [0, 1]");
    check_config(0.0 <= speed_min && speed_min <= speed_max, "bad sprite speed range");
    check_config(accel_std >= 0 && camera_std >= 0 && noise_std >= 0,
                 "jitter and noise stds must be non-negative");
    check_config(texture_scale >= 1.0, "texture scale must be at least 1 px");
  }
};

// Half-open pixel bounds [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool operator==(const BBox&) const = default;
};

// One sprite's geometry at frame 0; discs use rx as the radius.
struct SpriteState {
  bool disc = true;
  double rx = 3.0, ry = 3.0;
  double intensity = 1.0;
  double x = 0.0, y = 0.0;    // center at frame 0
  double vx = 0.0, vy = 0.0;  // px/frame
};

// Capture-ordered clip: frames (3, F, H, W) in [0, 1] plus per-frame boxes.
struct OrderedClip {
  Tensor<float> frames;
  std::vector<std::vector<BBox>> boxes;  // [frame][sprite]
  std::string source;
};

namespace detail {

// Bounds of the 1 px antialiasing ramp support |p + 0.5 - c| < r + 0.5.
inline BBox sprite_bbox(double cx, double cy, double rx, double ry) {
  BBox b;
  b.x0 = static_cast<int>(std::floor(cx - rx - 1.0)) + 1;
  b.x1 = static_cast<int>(std::ceil(cx + rx));
  b.y0 = static_cast<int>(std::floor(cy - ry - 1.0)) + 1;
  b.y1 = static_cast<int>(std::ceil(cy + ry));
  return b;
}

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Smooth random texture: bilinear value noise over a jittered lattice,
// sampled at world coordinates so camera offsets scroll it coherently.
struct ValueNoise {
  int gw = 0, gh = 0;
  double cell = 8.0, margin = 8.0;
  std::vector<float> grid;

  ValueNoise(const SpriteSceneConfig& cfg, Rng& rng) {
    cell = cfg.texture_scale;
    gw = static_cast<int>(std::ceil((cfg.width + 2 * margin) / cell)) + 2;
    gh = static_cast<int>(std::ceil((cfg.height + 2 * margin) / cell)) + 2;
    grid.resize(static_cast<std::size_t>(gw) * gh);
    std::uniform_real_distribution<double> dist(0.2, 0.5);
    for (float& v : grid) v = static_cast<float>(dist(rng));
  }

  double at(double wx, double wy) const {
    double gx = (wx + margin) / cell, gy = (wy + margin) / cell;
    int ix = static_cast<int>(std::floor(gx)), iy = static_cast<int>(std::floor(gy));
    double fx = smoothstep(gx - ix), fy = smoothstep(gy - iy);
    ix = std::clamp(ix, 0, gw - 2);
    iy = std::clamp(iy, 0, gh - 2);
    double v00 = grid[static_cast<std::size_t>(iy) * gw + ix];
    double v01 = grid[static_cast<std::size_t>(iy) * gw + ix + 1];
    double v10 = grid[static_cast<std::size_t>(iy + 1) * gw + ix];
    double v11 = grid[static_cast<std::size_t>(iy + 1) * gw + ix + 1];
    return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
  }
};

inline double edge_alpha(double half, double d) {
  return std::clamp(half + 0.5 - std::abs(d), 0.0, 1.0);
}

}  // namespace detail

// Renders the given sprites over cfg.frames frames. Sprites integrate
// cfg.accel_std velocity jitter, the camera offset follows a random walk of
// step std cfg.camera_std, and cfg.noise_std photometric noise is added
// before replication to 3 channels. Boxes are the analytic antialiased
// supports in image coordinates; they are not clamped to the canvas.
inline OrderedClip render_clip(const SpriteSceneConfig& cfg, std::vector<SpriteState> sprites,
                               Rng& rng) {
  cfg.validate();
  int F = cfg.frames, H = cfg.height, W = cfg.width;
  std::normal_distribution<double> accel(0.0, cfg.accel_std > 0 ? cfg.accel_std : 1.0);
  std::normal_distribution<double> cam(0.0, cfg.camera_std > 0 ? cfg.camera_std : 1.0);
  std::normal_distribution<double> photo(0.0, cfg.noise_std > 0 ? cfg.noise_std : 1.0);

  // Trajectories first: per-frame effective centers (world minus camera).
  std::vector<std::vector<SpriteState>> traj(static_cast<std::size_t>(F));
  traj[0] = sprites;
  double tx = 0.0, ty = 0.0;
  std::vector<double> cam_x(static_cast<std::size_t>(F), 0.0), cam_y(static_cast<std::size_t>(F), 0.0);
  for (int f = 1; f < F; ++f) {
    for (SpriteState& s : sprites) {
      if (cfg.accel_std > 0) {
        s.vx += accel(rng);
        s.vy += accel(rng);
      }
      s.x += s.vx;
      s.y += s.vy;
    }
    if (cfg.camera_std > 0) {
      tx += cam(rng);
      ty += cam(rng);
    }
    traj[static_cast<std::size_t>(f)] = sprites;
    cam_x[static_cast<std::size_t>(f)] = tx;
    cam_y[static_cast<std::size_t>(f)] = ty;
  }

  detail::ValueNoise noise(cfg, rng);

  OrderedClip clip;
  clip.frames = Tensor<float>::uninit({3, F, H, W});
  clip.boxes.resize(static_cast<std::size_t>(F));
  std::vector<float> plane(static_cast<std::size_t>(H) * W);
  for (int f = 0; f < F; ++f) {
    double ox = cam_x[static_cast<std::size_t>(f)], oy = cam_y[static_cast<std::size_t>(f)];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        plane[static_cast<std::size_t>(y) * W + x] =
            static_cast<float>(noise.at(x + ox, y + oy));

    for (const SpriteState& s : traj[static_cast<std::size_t>(f)]) {
      double cx = s.x - ox, cy = s.y - oy;
      BBox b = detail::sprite_bbox(cx, cy, s.rx, s.ry);
      clip.boxes[static_cast<std::size_t>(f)].push_back(b);
      int px0 = std::max(b.x0, 0), px1 = std::min(b.x1, W);
      int py0 = std::max(b.y0, 0), py1 = std::min(b.y1, H);
      for (int y = py0; y < py1; ++y) {
        for (int x = px0; x < px1; ++x) {
          double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          double a;
          if (s.disc) {
            a = detail::edge_alpha(s.rx, std::sqrt(dx * dx + dy * dy));
          } else {
            a = detail::edge_alpha(s.rx, dx) * detail::edge_alpha(s.ry, dy);
          }
          if (a <= 0) continue;
          float& p = plane[static_cast<std::size_t>(y) * W + x];
          p = static_cast<float>(p * (1 - a) + s.intensity * a);
        }
      }
    }

    if (cfg.noise_std > 0)
      for (float& p : plane) p = static_cast<float>(p + photo(rng));
    for (float& p : plane) p = std::clamp(p, 0.0f, 1.0f);

    std::size_t hw = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < 3; ++c)
      std::copy(plane.begin(), plane.end(),
                clip.frames.data() + (static_cast<std::size_t>(c) * F + f) * hw);
  }
  return clip;
}

namespace detail {

inline std::vector<SpriteState> sample_sprites(const SpriteSceneConfig& cfg, Rng& rng) {
  std::uniform_int_distribution<int> count_dist(cfg.min_sprites, cfg.max_sprites);
  std::uniform_real_distribution<double> radius(cfg.radius_min, cfg.radius_max);
  std::uniform_real_distribution<double> intensity(cfg.intensity_min, cfg.intensity_max);
  std::uniform_real_distribution<double> speed(cfg.speed_min, cfg.speed_max);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  int k = count_dist(rng);
  std::vector<SpriteState> sprites(static_cast<std::size_t>(k));
  for (SpriteState& s : sprites) {
    s.disc = unit(rng) < 0.5;
    s.rx = radius(rng);
    s.ry = s.disc ? s.rx : radius(rng);
    s.intensity = intensity(rng);
    double sp = speed(rng), th = angle(rng);
    s.vx = sp * std::cos(th);
    s.vy = sp * std::sin(th);
    double mx = s.rx + 1.5, my = s.ry + 1.5;
    s.x = mx + (cfg.width - 2 * mx) * unit(rng);
    s.y = my + (cfg.height - 2 * my) * unit(rng);
  }
  return sprites;
}

}  // namespace detail

// Deterministic under (cfg, seed): clip i draws from its own derived stream.
// Scenes whose sprites would leave the canvas are rejection-resampled.
inline void gen_synthetic(const SpriteSceneConfig& cfg, int count, std::uint64_t seed,
                          const std::function<void(OrderedClip&&)>& sink) {
  cfg.validate();
  check_config(count >= 0, "clip count must be non-negative");
  for (int i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, "sprite-clip", static_cast<std::uint64_t>(i));
    constexpr int kMaxAttempts = 200;
    bool done = false;
    for (int attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
      Rng probe = rng;  // keep draws consumed by a rejected attempt
      std::vector<SpriteState> sprites = detail::sample_sprites(cfg, probe);
      OrderedClip clip = render_clip(cfg, sprites, probe);
      bool inside = true;
      for (const std::vector<BBox>& frame : clip.boxes)
        for (const BBox& b : frame)
          inside = inside && b.x0 >= 0 && b.y0 >= 0 && b.x1 <= cfg.width && b.y1 <= cfg.height;
      if (inside) {
        rng = probe;
        clip.source = "synth-" + std::to_string(seed) + "-" + std::to_string(i);
        sink(std::move(clip));
        done = true;
      } else {
        rng();  // perturb the stream for the next attempt
      }
    }
    check_config(done, "sprite cannot fit the canvas after repeated resampling; "
                       "reduce radius or speed ranges");
  }
}

inline std::vector<OrderedClip> gen_synthetic(const SpriteSceneConfig& cfg, int count,
                                              std::uint64_t seed) {
  std::vector<OrderedClip> clips;
  clips.reserve(static_cast<std::size_t>(count));
  gen_synthetic(cfg, count, seed, [&](OrderedClip&& c) { clips.push_back(std::move(c)); });
  return clips;
}

}  // namespace seqdab
