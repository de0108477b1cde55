#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <filesystem>
#include <random>

#include "doctest.h"
#include "seqdab/heatmap.hpp"
#include "seqdab/sprites.hpp"
#include "seqdab/trainer.hpp"

using namespace seqdab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("seqdab-heat-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

Tensor<float> random_tap(int c, int n, int h, int w, unsigned seed) {
  Tensor<float> t = Tensor<float>::uninit({c, n, h, w});
  std::mt19937 rng(seed);
  std::normal_distribution<float> nd(0.f, 1.f);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = nd(rng);
  return t;
}

SequenceSample prepared_sample(int n, int hw, std::uint64_t seed) {
  SpriteSceneConfig scene;
  scene.frames = n;
  OrderedClip clip = gen_synthetic(scene, 1, seed)[0];
  SequenceSample s = slice_window(clip, 0, n, 1);
  Rng rng = make_rng(seed, "crop");
  s = augment(s, 40, hw, false, rng);
  normalize(s);
  return s;
}

}  // namespace

TEST_CASE("channel mean of absolutes") {
  Tensor<float> fs({2, 1, 1, 1});
  fs.data()[0] = -2.f;
  fs.data()[1] = 2.f;
  std::vector<HeatMap> maps = compute_heatmap(fs, "t");
  REQUIRE(maps.size() == 1);
  CHECK(maps[0].grid(0, 0) == 2.f);
  CHECK(maps[0].tag == "t");
}

TEST_CASE("random tap equals the loop oracle") {
  Tensor<float> fs = random_tap(5, 3, 7, 6, 42);
  std::vector<HeatMap> maps = compute_heatmap(fs, "t");
  REQUIRE(maps.size() == 3);
  for (int i = 0; i < 3; ++i) {
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 6; ++x) {
        double acc = 0;
        for (int ch = 0; ch < 5; ++ch) acc += std::abs(fs(ch, i, y, x));
        CHECK(maps[static_cast<std::size_t>(i)].grid(y, x) ==
              doctest::Approx(acc / 5).epsilon(1e-6));
      }
  }
}

TEST_CASE("heat maps are channel permutation invariant and 1-homogeneous") {
  Tensor<float> fs = random_tap(6, 2, 5, 5, 7);
  std::vector<HeatMap> base = compute_heatmap(fs, "t");

  Tensor<float> permuted = Tensor<float>::uninit({6, 2, 5, 5});
  std::vector<int> order = {3, 0, 5, 1, 4, 2};
  std::int64_t plane = 2 * 5 * 5;
  for (int ch = 0; ch < 6; ++ch)
    std::memcpy(permuted.data() + ch * plane, fs.data() + order[static_cast<std::size_t>(ch)] * plane,
                static_cast<std::size_t>(plane) * sizeof(float));
  std::vector<HeatMap> perm = compute_heatmap(permuted, "t");
  for (std::size_t i = 0; i < base.size(); ++i)
    for (std::int64_t p = 0; p < base[i].grid.numel(); ++p)
      CHECK(perm[i].grid.data()[p] == doctest::Approx(base[i].grid.data()[p]).epsilon(1e-6));

  Tensor<float> scaled = Tensor<float>::uninit(fs.shape());
  for (std::int64_t i = 0; i < fs.numel(); ++i) scaled.data()[i] = 2.f * fs.data()[i];
  std::vector<HeatMap> twice = compute_heatmap(scaled, "t");
  for (std::size_t i = 0; i < base.size(); ++i)
    for (std::int64_t p = 0; p < base[i].grid.numel(); ++p)
      CHECK(twice[i].grid.data()[p] == 2.f * base[i].grid.data()[p]);
}

TEST_CASE("exported ramp spans the 8 bit range and corners are preserved") {
  TempDir dir;
  HeatMap m;
  m.tag = "ramp";
  m.frame = 0;
  m.grid = Tensor<float>::uninit({8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) m.grid(y, x) = static_cast<float>(y * 8 + x);

  ExportResult res = normalize_and_export({m}, dir / "out", 32, 32);
  CHECK_FALSE(res.constant);
  REQUIRE(res.files.size() == 1);
  CHECK(fs::path(res.files[0]).filename() == "ramp_00.pgm");

  ImageU8 img = read_image(res.files[0]);
  CHECK(img.height == 32);
  CHECK(img.width == 32);
  CHECK(img.channels == 1);
  std::uint8_t lo = 255, hi = 0;
  for (std::uint8_t p : img.pixels) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  CHECK(lo == 0);
  CHECK(hi == 255);
  CHECK(img.at(0, 0, 0) == 0);
  CHECK(img.at(31, 31, 0) == 255);
  // Normalized corner values: 0 and 63 map to 0 and 255.
  CHECK(img.at(0, 31, 0) == static_cast<int>(std::round(7.0 / 63.0 * 255)));
  CHECK(img.at(31, 0, 0) == static_cast<int>(std::round(56.0 / 63.0 * 255)));
}

TEST_CASE("constant sequence exports zeros with a warning flag") {
  TempDir dir;
  HeatMap a, b;
  a.tag = b.tag = "flat";
  a.frame = 0;
  b.frame = 1;
  a.grid = Tensor<float>::full({4, 4}, 3.5f);
  b.grid = Tensor<float>::full({4, 4}, 3.5f);
  ExportResult res = normalize_and_export({a, b}, dir / "out", 8, 8);
  CHECK(res.constant);
  REQUIRE(res.files.size() == 2);
  for (const std::string& f : res.files) {
    ImageU8 img = read_image(f);
    for (std::uint8_t p : img.pixels) CHECK(p == 0);
  }
}

TEST_CASE("export then re-read stays within one quantization level") {
  TempDir dir;
  Tensor<float> fs = random_tap(4, 2, 6, 6, 99);
  std::vector<HeatMap> maps = compute_heatmap(fs, "rt");
  ExportResult res = normalize_and_export(maps, dir / "out", 6, 6);

  float lo = maps[0].grid.data()[0], hi = lo;
  for (const HeatMap& m : maps)
    for (std::int64_t i = 0; i < m.grid.numel(); ++i) {
      lo = std::min(lo, m.grid.data()[i]);
      hi = std::max(hi, m.grid.data()[i]);
    }
  for (std::size_t k = 0; k < maps.size(); ++k) {
    ImageU8 img = read_image(res.files[k]);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        float expect = (maps[k].grid(y, x) - lo) / (hi - lo) * 255.f;
        CHECK(std::abs(static_cast<float>(img.at(y, x, 0)) - expect) <= 1.f);
      }
  }
}

TEST_CASE("progression covers stem plus stages at stage resolutions") {
  NetworkConfig cfg;
  cfg.seq_len = 3;
  cfg.input_hw = 16;
  Network<float> net = Network<float>::build(cfg, 5);
  SequenceSample s = prepared_sample(3, 16, 7);

  std::vector<std::string> tags = progression_tags(cfg);
  CHECK(tags == std::vector<std::string>{"conv1", "layer1.last", "layer2.last", "layer3.last"});

  auto groups = progression(net, s, tags);
  REQUIRE(groups.size() == 4);
  std::vector<int> expect_hw = {16, 16, 8, 4};
  for (std::size_t g = 0; g < groups.size(); ++g) {
    CHECK(groups[g].first == tags[g]);
    REQUIRE(groups[g].second.size() == 3);
    CHECK(groups[g].second[0].grid.dim(0) == expect_hw[g]);
    CHECK(groups[g].second[0].grid.dim(1) == expect_hw[g]);
  }

  CHECK_THROWS_AS(progression(net, s, {"layer9.last"}), ConfigError);
}

TEST_CASE("identical frames heat only the copied last slice") {
  NetworkConfig cfg;
  cfg.seq_len = 4;
  cfg.input_hw = 16;
  Network<float> net = Network<float>::build(cfg, 5);

  SequenceSample s = prepared_sample(4, 16, 11);
  std::int64_t plane = 16 * 16;
  // Overwrite every frame with frame 0 in all three channels.
  for (int c = 0; c < 3; ++c)
    for (int f = 1; f < 4; ++f)
      std::memcpy(s.frames.data() + (static_cast<std::int64_t>(c) * 4 + f) * plane,
                  s.frames.data() + static_cast<std::int64_t>(c) * 4 * plane,
                  static_cast<std::size_t>(plane) * sizeof(float));

  // At the first accumulator identical frames difference away to float
  // rounding residue; only the copied last slice carries real heat.
  auto groups = progression(net, s, {"conv1"});
  const std::vector<HeatMap>& maps = groups[0].second;
  REQUIRE(maps.size() == 4);
  double moving = 0;
  for (int i = 0; i < 3; ++i)
    for (std::int64_t p = 0; p < maps[static_cast<std::size_t>(i)].grid.numel(); ++p)
      moving = std::max(moving,
                        static_cast<double>(maps[static_cast<std::size_t>(i)].grid.data()[p]));
  double last = 0;
  for (std::int64_t p = 0; p < maps[3].grid.numel(); ++p)
    last = std::max(last, static_cast<double>(maps[3].grid.data()[p]));
  CHECK(last > 0.01);
  CHECK(moving < 1e-5 * last);
}

TEST_CASE("disabled accumulator taps are all zero heat") {
  NetworkConfig cfg;
  cfg.seq_len = 3;
  cfg.input_hw = 16;
  cfg.dab = parse_dab_config("disabled");
  Network<float> net = Network<float>::build(cfg, 5);
  SequenceSample s = prepared_sample(3, 16, 13);
  for (const auto& [tag, maps] : progression(net, s, progression_tags(cfg)))
    for (const HeatMap& m : maps)
      for (std::int64_t p = 0; p < m.grid.numel(); ++p) CHECK(m.grid.data()[p] == 0.f);
}

TEST_CASE("dilated boxes and mass ratios") {
  BBox b{4, 6, 8, 10};  // 4x4 box centered at (6, 8)
  BBox d = dilate_box(b, 2, 32, 32);
  CHECK(d.x0 == 2);
  CHECK(d.x1 == 10);
  CHECK(d.y0 == 4);
  CHECK(d.y1 == 12);
  BBox clipped = dilate_box(BBox{0, 0, 10, 10}, 2, 12, 12);
  CHECK(clipped.x0 == 0);
  CHECK(clipped.y0 == 0);
  CHECK(clipped.x1 == 12);
  CHECK(clipped.y1 == 12);

  // All heat inside the box: ratio 1. Uniform heat: ratio = mask area / total.
  Tensor<float> grid = Tensor<float>::zeros({32, 32});
  for (int y = 6; y < 10; ++y)
    for (int x = 4; x < 8; ++x) grid(y, x) = 1.f;
  CHECK(heat_mass_ratio(grid, {b}) == doctest::Approx(1.0));

  Tensor<float> uniform = Tensor<float>::full({32, 32}, 1.f);
  double area = (d.x1 - d.x0) * (d.y1 - d.y0);
  CHECK(heat_mass_ratio(uniform, {b}) == doctest::Approx(area / (32.0 * 32.0)));

  CHECK(heat_mass_ratio(Tensor<float>::zeros({8, 8}), {b}) == 0.0);

  std::vector<HeatMap> maps(2);
  maps[0].grid = grid;
  maps[1].grid = uniform;
  std::vector<std::vector<BBox>> boxes = {{b}, {b}};
  std::vector<double> ratios = mass_ratios(maps, boxes, 32, 32);
  REQUIRE(ratios.size() == 2);
  CHECK(ratios[0] == doctest::Approx(1.0));
  CHECK(ratios[1] == doctest::Approx(area / (32.0 * 32.0)));
}

TEST_CASE("mass csv format") {
  std::ostringstream out;
  write_mass_csv(out, {{"synth-1-0", 0, "conv1", 0.25}, {"synth-1-0", 1, "layer3.last", 0.75}});
  CHECK(out.str() ==
        "sequence,frame,tag,ratio\n"
        "synth-1-0,0,conv1,0.250000\n"
        "synth-1-0,1,layer3.last,0.750000\n");
}
