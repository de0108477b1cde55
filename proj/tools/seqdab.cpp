// seqdab: difference-accumulator sequencing pipeline in one executable.
// Subcommands cover synthetic data generation, window extraction, training,
// evaluation, gradient checking, heat-map export, kernel benchmarks, and the
// accumulator-mode ablation sweep.
//
// Exit codes: 0 ok, 1 assertion or numeric failure, 2 config error, 3 IO
// error. All execution is sequential; --sequential is accepted everywhere
// and names the only (bit-reproducible) mode.

#include <malloc.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqdab/checkpoint.hpp"
#include "seqdab/dab.hpp"
#include "seqdab/finite_diff.hpp"
#include "seqdab/heatmap.hpp"
#include "seqdab/sequence.hpp"
#include "seqdab/shard.hpp"
#include "seqdab/sprites.hpp"
#include "seqdab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqdab;

namespace {

// ---------------------------------------------------------------- plumbing

// Relative output paths resolve under $SEQDAB_OUT when it is set.
std::string resolve_out(const std::string& path) {
  check_config(!path.empty(), "empty output path");
  const char* root = std::getenv("SEQDAB_OUT");
  if (root != nullptr && *root != '\0' && fs::path(path).is_relative())
    return (fs::path(root) / path).string();
  return path;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  check_io(in.good(), "cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }
  return j;
}

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  check_config(j.is_object(), where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    check_config(allowed.count(it.key()) != 0, "unknown key \"" + it.key() + "\" in " + where);
}

// The task discriminator, when present, must match the subcommand.
json take_config(const std::string& path, const std::string& task) {
  if (path.empty()) return json::object();
  json j = load_json_file(path);
  check_config(j.is_object(), "config root must be a JSON object");
  if (j.contains("task")) {
    check_config(j["task"].is_string() && j["task"].get<std::string>() == task,
                 "config task \"" + j.value("task", std::string()) +
                     "\" does not match subcommand \"" + task + "\"");
    j.erase("task");
  }
  return j;
}

void echo_config(const json& resolved, const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  check_io(out.good(), "cannot write resolved config: " + path);
  out << resolved.dump(2) << "\n";
  check_io(out.good(), "config echo failed: " + path);
}

std::vector<SequenceSample> load_shard_samples(const std::string& path) {
  ShardReader reader(path);
  return reader.read_all();
}

// ---------------------------------------------------------------- scene cfg

const std::set<std::string>& scene_keys() {
  static const std::set<std::string> keys = {
      "height",       "width",     "frames",        "min_sprites", "max_sprites",
      "radius_min",   "radius_max", "intensity_min", "intensity_max", "speed_min",
      "speed_max",    "accel_std", "camera_std",    "texture_scale", "noise_std"};
  return keys;
}

SpriteSceneConfig scene_from_json(const json& j) {
  reject_unknown(j, scene_keys(), "scene config");
  SpriteSceneConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.frames = j.value("frames", c.frames);
  c.min_sprites = j.value("min_sprites", c.min_sprites);
  c.max_sprites = j.value("max_sprites", c.max_sprites);
  c.radius_min = j.value("radius_min", c.radius_min);
  c.radius_max = j.value("radius_max", c.radius_max);
  c.intensity_min = j.value("intensity_min", c.intensity_min);
  c.intensity_max = j.value("intensity_max", c.intensity_max);
  c.speed_min = j.value("speed_min", c.speed_min);
  c.speed_max = j.value("speed_max", c.speed_max);
  c.accel_std = j.value("accel_std", c.accel_std);
  c.camera_std = j.value("camera_std", c.camera_std);
  c.texture_scale = j.value("texture_scale", c.texture_scale);
  c.noise_std = j.value("noise_std", c.noise_std);
  return c;
}

json scene_to_json(const SpriteSceneConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"frames", c.frames},
          {"min_sprites", c.min_sprites},
          {"max_sprites", c.max_sprites},
          {"radius_min", c.radius_min},
          {"radius_max", c.radius_max},
          {"intensity_min", c.intensity_min},
          {"intensity_max", c.intensity_max},
          {"speed_min", c.speed_min},
          {"speed_max", c.speed_max},
          {"accel_std", c.accel_std},
          {"camera_std", c.camera_std},
          {"texture_scale", c.texture_scale},
          {"noise_std", c.noise_std}};
}

// ---------------------------------------------------------------- gen-data

struct GenDataOpts {
  std::string config, out;
  std::uint64_t seed = 0;
  int count = 1000;
  bool seed_set = false, count_set = false, out_set = false;
};

int run_gen_data(const GenDataOpts& opt) {
  json file = take_config(opt.config, "gen-data");
  reject_unknown(file, {"scene", "count", "seed", "out"}, "gen-data config");
  SpriteSceneConfig scene = scene_from_json(file.value("scene", json::object()));
  int count = opt.count_set ? opt.count : file.value("count", opt.count);
  std::uint64_t seed = opt.seed_set ? opt.seed : file.value("seed", opt.seed);
  std::string out = opt.out_set ? opt.out : file.value("out", std::string());
  check_config(!out.empty(), "gen-data needs --out (or \"out\" in the config)");
  out = resolve_out(out);
  check_config(count >= 0, "count must be non-negative");
  scene.validate();

  json resolved = {{"task", "gen-data"},
                   {"scene", scene_to_json(scene)},
                   {"count", count},
                   {"seed", seed},
                   {"out", out}};
  echo_config(resolved, out + ".config.json");

  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  ShardWriter writer(out, scene.frames, scene.height, scene.width);
  gen_synthetic(scene, count, seed, [&](OrderedClip&& clip) {
    writer.add(slice_window(clip, 0, scene.frames, 1));
  });
  writer.close();
  std::cout << "wrote " << count << " sequences to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------- extract

struct ExtractOpts {
  std::string frames, out;
  int len = 4, step = 1;
  double energy_min = 0.0;
};

int run_extract(const ExtractOpts& opt) {
  check_config(!opt.frames.empty(), "extract needs --frames");
  check_config(!opt.out.empty(), "extract needs --out");
  check_config(opt.len >= 2 && opt.step >= 1, "extract needs --len >= 2 and --step >= 1");
  std::string out = resolve_out(opt.out);

  std::vector<std::string> clip_dirs;
  check_io(fs::is_directory(opt.frames), "not a directory: " + opt.frames);
  for (const auto& entry : fs::directory_iterator(opt.frames))
    if (entry.is_directory()) clip_dirs.push_back(entry.path().string());
  std::sort(clip_dirs.begin(), clip_dirs.end());
  if (clip_dirs.empty()) clip_dirs.push_back(opt.frames);

  json resolved = {{"task", "extract"}, {"frames", opt.frames}, {"len", opt.len},
                   {"step", opt.step},  {"energy_min", opt.energy_min}, {"out", out}};
  echo_config(resolved, out + ".config.json");

  const int need = (opt.len - 1) * opt.step + 1;
  std::vector<SequenceSample> windows;
  int height = 0, width = 0;
  for (const std::string& dir : clip_dirs) {
    OrderedClip clip = load_frame_dir(dir);
    const int f = static_cast<int>(clip.frames.shape()[1]);
    check_config(f >= need, "clip \"" + clip.source + "\" has " + std::to_string(f) +
                                " frames; --len " + std::to_string(opt.len) + " --step " +
                                std::to_string(opt.step) + " needs at least " +
                                std::to_string(need));
    int h = clip.frames.dim(2), w = clip.frames.dim(3);
    if (height == 0) {
      height = h;
      width = w;
    }
    check_config(h == height && w == width, "clip extents differ across the input set");
    for (SequenceSample& s : extract_from_clip(clip, opt.len, opt.step, opt.energy_min))
      windows.push_back(std::move(s));
  }

  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  ShardWriter writer(out, opt.len, height, width);
  for (const SequenceSample& s : windows) writer.add(s);
  writer.close();
  std::cout << windows.size() << " windows\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOpts {
  std::string config, data, out, dab, preset, resume;
  std::uint64_t seed = 0;
  int epochs = -1, batch = -1, n = -1, perm_cap = -1, short_edge = -1;
  double lr = -1, val_fraction = -1;
  bool seed_set = false;
};

const std::set<std::string>& net_keys() {
  static const std::set<std::string> keys = {"preset",      "seq_len",     "input_hw",
                                            "block",       "widths",      "blocks",
                                            "stem_width",  "stem_kernel", "stem_stride",
                                            "stem_pool",   "dab"};
  return keys;
}

const std::set<std::string>& train_keys() {
  static const std::set<std::string> keys = {
      "net",       "lr0",        "momentum",  "weight_decay", "lr_factor",
      "patience",  "min_delta",  "batch",     "epochs",       "seed",
      "perm_cap",  "val_fraction", "short_edge", "train_shard", "out_dir"};
  return keys;
}

json resolve_train_json(const TrainOpts& opt) {
  json merged = to_json(TrainConfig{});
  json file = take_config(opt.config, "train");
  reject_unknown(file, train_keys(), "train config");
  if (file.contains("net")) reject_unknown(file["net"], net_keys(), "net config");
  for (auto it = file.begin(); it != file.end(); ++it) {
    if (it.key() == "net")
      for (auto nit = it.value().begin(); nit != it.value().end(); ++nit)
        merged["net"][nit.key()] = nit.value();
    else
      merged[it.key()] = it.value();
  }

  if (!opt.preset.empty()) {
    DabConfig dab = parse_dab_config(merged["net"]["dab"].get<std::string>());
    NetworkConfig base =
        NetworkConfig::preset_config(opt.preset, merged["net"]["seq_len"].get<int>(), dab);
    merged["net"] = to_json(base);
  }
  if (opt.n > 0) merged["net"]["seq_len"] = opt.n;
  if (!opt.dab.empty()) merged["net"]["dab"] = to_string(parse_dab_config(opt.dab));
  if (!opt.data.empty()) merged["train_shard"] = opt.data;
  if (!opt.out.empty()) merged["out_dir"] = resolve_out(opt.out);
  if (opt.seed_set) merged["seed"] = opt.seed;
  if (opt.epochs >= 0) merged["epochs"] = opt.epochs;
  if (opt.batch > 0) merged["batch"] = opt.batch;
  if (opt.perm_cap >= 0) merged["perm_cap"] = opt.perm_cap;
  if (opt.short_edge > 0) merged["short_edge"] = opt.short_edge;
  if (opt.lr > 0) merged["lr0"] = opt.lr;
  if (opt.val_fraction >= 0) merged["val_fraction"] = opt.val_fraction;
  return merged;
}

int run_train(const TrainOpts& opt) {
  json resolved = resolve_train_json(opt);
  TrainConfig cfg = train_config_from_json(resolved);
  check_config(!cfg.train_shard.empty(), "train needs --data (or \"train_shard\" in the config)");
  check_config(!cfg.out_dir.empty(), "train needs --out (or \"out_dir\" in the config)");

  resolved["task"] = "train";
  fs::create_directories(cfg.out_dir);
  echo_config(resolved, cfg.out_dir + "/config.json");

  Trainer trainer(cfg, load_shard_samples(cfg.train_shard));
  std::vector<EpochMetrics> history = trainer.run(opt.resume);
  if (!history.empty()) {
    const EpochMetrics& last = history.back();
    json row = {{"epoch", last.epoch},
                {"train_loss", last.train_loss},
                {"val_loss", last.val_loss},
                {"val_acc", last.val_acc},
                {"lr", last.lr}};
    std::cout << row.dump() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
  std::string ckpt, data, out;
  bool all_perms = false;
  int batch = -1;
};

int run_eval(const EvalOpts& opt) {
  check_config(!opt.ckpt.empty() && !opt.data.empty(), "eval needs --ckpt and --data");
  check_config(!opt.out.empty(), "eval needs --out");
  std::string out = resolve_out(opt.out);

  json resolved = {{"task", "eval"},
                   {"ckpt", opt.ckpt},
                   {"data", opt.data},
                   {"out", out},
                   {"all_perms", opt.all_perms}};
  fs::create_directories(out);
  echo_config(resolved, out + "/config.json");

  Checkpoint ck = load_checkpoint(opt.ckpt);
  check_config(ck.config.contains("net") && ck.config.contains("train"),
               "checkpoint lacks embedded configs: " + opt.ckpt);
  TrainConfig cfg = train_config_from_json(ck.config["train"]);
  if (opt.batch > 0) cfg.batch = opt.batch;
  Network<float> net = Network<float>::build(cfg.net, cfg.seed);
  unpack_network(ck, net);

  EvalMetrics m = evaluate(net, load_shard_samples(opt.data), cfg, opt.all_perms);
  json report = {{"loss", m.loss},
                 {"accuracy", m.accuracy},
                 {"count", m.count},
                 {"all_perms", opt.all_perms}};
  std::ofstream file(out + "/eval.json", std::ios::trunc);
  check_io(file.good(), "cannot write eval report");
  file << report.dump(2) << "\n";
  check_io(file.good(), "eval report write failed");
  std::cout << report.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- gradcheck

// Compact finite-difference sweep: every accumulator mode end to end
// through a conv block, then sampled parameters of a small double network.
int run_gradcheck(std::uint64_t seed) {
  Rng rng = make_rng(seed, "gradcheck");
  std::normal_distribution<double> nd(0.0, 1.0);
  auto randn = [&](Shape shape) {
    Tensor<double> t = Tensor<double>::uninit(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = nd(rng);
    return t;
  };
  bool ok = true;
  auto report = [&](const std::string& name, const FdReport& rep) {
    std::cout << (rep.passed ? "[pass] " : "[FAIL] ") << name << "  max_rel=" << rep.max_rel
              << "\n";
    if (!rep.passed) {
      std::cout << "       " << rep.worst << "\n";
      ok = false;
    }
  };

  for (const std::string& mode : {"signed", "magnitude", "disabled", "windowed:0", "windowed:2"}) {
    DabConfig cfg = parse_dab_config(mode);
    Tensor<double> x = randn({3, 4, 5, 5});
    if (cfg.mode == DabMode::Magnitude)  // keep |.| kinks away from the FD step
      for (std::int64_t i = 0; i < x.numel(); ++i)
        x.data()[i] += x.data()[i] < 0 ? -0.5 : 0.5;
    Tensor<double> w = randn(x.shape());
    Tensor<double> w_side = randn(x.shape());
    FdReport rep =
        fd_check({x}, [&](Tape<double>&, const std::vector<Var<double>>& in) {
          // Disabled/windowed:0 zero out most slices; a side branch keeps
          // the loss input-dependent everywhere.
          return add(weighted_sum(dab(in[0], cfg), w), weighted_sum(in[0], w_side));
        });
    report("dab-" + mode, rep);
  }

  NetworkConfig ncfg;
  ncfg.seq_len = 3;
  ncfg.input_hw = 8;
  ncfg.widths = {4, 6, 8};
  Network<double> net = Network<double>::build(ncfg, seed);
  Tensor<double> x = randn({2, 3, 3, 8, 8});
  std::vector<int> labels = {0, 2};

  Tape<double> tape;
  Var<double> loss = softmax_ce(net.forward(tape, x, true), labels);
  tape.backward(loss.id);
  std::vector<Tensor<double>> grads;
  for (std::size_t i = 0; i < net.params().size(); ++i) grads.push_back(net.param_grad(tape, i));

  const double h = 1e-5, tol = 1e-3;
  double worst = 0;
  std::string worst_at = "none";
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    Tensor<double>& p = net.params()[i].value;
    std::int64_t step = std::max<std::int64_t>(1, p.numel() / 4);
    for (std::int64_t e = 0; e < p.numel(); e += step) {
      const double keep = p[e];
      auto eval = [&](double v) {
        p[e] = v;
        Tape<double> t;
        t.set_recording(false);
        return softmax_ce(net.forward(t, x, true), labels).value()[0];
      };
      double num = (eval(keep + h) - eval(keep - h)) / (2 * h);
      p[e] = keep;
      double ana = i < grads.size() && grads[i].numel() > 0 ? grads[i][e] : 0.0;
      double rel = std::abs(ana - num) / std::max(std::abs(ana) + std::abs(num), 1e-6);
      if (rel > worst) {
        worst = rel;
        worst_at = net.params()[i].name + "[" + std::to_string(e) + "]";
      }
    }
  }
  std::cout << (worst < tol ? "[pass] " : "[FAIL] ") << "network-parameters  max_rel=" << worst
            << "  at " << worst_at << "\n";
  if (worst >= tol) ok = false;

  std::cout << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------- heatmap

struct HeatmapOpts {
  std::string ckpt, data, out, csv;
  int index = 0, limit = -1;
};

SequenceSample prepare_identity(const SequenceSample& raw, const TrainConfig& cfg) {
  SequenceSample s = raw;
  Rng rng = make_rng(cfg.seed, "heatmap-noop");
  s = augment(s, cfg.short_edge, cfg.net.input_hw, false, rng);
  normalize(s);
  return s;
}

int run_heatmap(const HeatmapOpts& opt) {
  check_config(!opt.ckpt.empty() && !opt.data.empty(), "heatmap needs --ckpt and --data");
  check_config(!opt.out.empty(), "heatmap needs --out");
  std::string out = resolve_out(opt.out);

  json resolved = {{"task", "heatmap"}, {"ckpt", opt.ckpt}, {"data", opt.data},
                   {"out", out},        {"index", opt.index}, {"csv", opt.csv},
                   {"limit", opt.limit}};
  fs::create_directories(out);
  echo_config(resolved, out + "/config.json");

  Checkpoint ck = load_checkpoint(opt.ckpt);
  TrainConfig cfg = train_config_from_json(ck.config.at("train"));
  Network<float> net = Network<float>::build(cfg.net, cfg.seed);
  unpack_network(ck, net);

  ShardReader reader(opt.data);
  std::vector<SequenceSample> samples = reader.read_all();
  auto boxes = reader.read_boxes();
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (i < boxes.size()) samples[i].boxes = boxes[i];
  check_config(opt.index >= 0 && opt.index < static_cast<int>(samples.size()),
               "--index out of range");

  const int hw = cfg.net.input_hw;
  std::vector<std::string> tags = progression_tags(cfg.net);

  // Progression export for the chosen sequence, capture order.
  SequenceSample chosen = prepare_identity(samples[static_cast<std::size_t>(opt.index)], cfg);
  int files = 0;
  for (const auto& [tag, maps] : progression(net, chosen, tags))
    files += static_cast<int>(normalize_and_export(maps, out, hw, hw).files.size());
  std::cout << "wrote " << files << " heat maps to " << out << "\n";

  if (!opt.csv.empty()) {
    bool have_boxes = false;
    for (const auto& b : samples[0].boxes)
      if (!b.empty()) have_boxes = true;
    check_config(have_boxes, "--csv needs a shard with a bounding-box sidecar");
    std::size_t limit = opt.limit > 0
                            ? std::min(samples.size(), static_cast<std::size_t>(opt.limit))
                            : samples.size();
    std::vector<MassRow> rows;
    for (std::size_t i = 0; i < limit; ++i) {
      SequenceSample s = prepare_identity(samples[i], cfg);
      for (const auto& [tag, maps] : progression(net, s, tags)) {
        std::vector<double> ratios = mass_ratios(maps, s.boxes, hw, hw);
        for (std::size_t f = 0; f < ratios.size(); ++f)
          rows.push_back({s.source, static_cast<int>(f), tag, ratios[f]});
      }
    }
    std::string csv_path = resolve_out(opt.csv);
    std::ofstream csv(csv_path, std::ios::trunc);
    check_io(csv.good(), "cannot write mass CSV: " + csv_path);
    write_mass_csv(csv, rows);
    std::cout << "wrote " << rows.size() << " mass rows to " << csv_path << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- bench

int run_bench(const std::string& out) {
  using clock = std::chrono::steady_clock;
  Rng rng = make_rng(1, "bench");
  std::normal_distribution<float> nd(0.f, 1.f);
  std::cout << "n  naive_ms  fast_ms  speedup\n";
  std::string csv = "n,naive_ms,fast_ms,speedup\n";
  for (int n = 2; n <= 6; ++n) {
    Tensor<float> fc = Tensor<float>::uninit({64, n, 28, 28});
    for (std::int64_t i = 0; i < fc.numel(); ++i) fc.data()[i] = nd(rng);
    DabConfig cfg;  // signed

    auto time_ms = [&](auto&& fn) {
      fn();  // warm up
      int reps = 30;
      auto t0 = clock::now();
      for (int r = 0; r < reps; ++r) fn();
      auto t1 = clock::now();
      return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
    };
    volatile float guard = 0;
    double naive = time_ms([&] {
      Tensor<float> o = dab_forward_naive(fc, cfg);
      guard = guard + o.data()[0];
    });
    double fast = time_ms([&] {
      Tensor<float> o = dab_forward(fc, cfg);
      guard = guard + o.data()[0];
    });
    char line[96];
    std::snprintf(line, sizeof(line), "%d  %8.3f  %7.3f  %6.2fx\n", n, naive, fast,
                  naive / fast);
    std::cout << line;
    std::snprintf(line, sizeof(line), "%d,%.3f,%.3f,%.2f\n", n, naive, fast, naive / fast);
    csv += line;
  }
  if (!out.empty()) {
    std::string path = resolve_out(out);
    fs::create_directories(path);
    std::ofstream f(path + "/bench.csv", std::ios::trunc);
    check_io(f.good(), "cannot write bench CSV");
    f << csv;
  }
  return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateOpts {
  std::string data, test, out;
  std::uint64_t seed = 0;
  int epochs = 30, batch = 16, perm_cap = 24;
};

int run_ablate(const AblateOpts& opt) {
  check_config(!opt.data.empty() && !opt.test.empty(), "ablate needs --data and --test");
  check_config(!opt.out.empty(), "ablate needs --out");
  std::string out = resolve_out(opt.out);

  ShardReader probe(opt.data);
  const int n = static_cast<int>(probe.header().n);

  json resolved = {{"task", "ablate"}, {"data", opt.data},   {"test", opt.test},
                   {"out", out},       {"seed", opt.seed},   {"epochs", opt.epochs},
                   {"batch", opt.batch}, {"perm_cap", opt.perm_cap}, {"n", n}};
  fs::create_directories(out);
  echo_config(resolved, out + "/config.json");

  std::vector<SequenceSample> train_samples = load_shard_samples(opt.data);
  std::vector<SequenceSample> test_samples = load_shard_samples(opt.test);

  struct Row {
    std::string mode, m;
    DabConfig dab;
  };
  std::vector<Row> rows = {{"signed", "-", parse_dab_config("signed")},
                           {"magnitude", "-", parse_dab_config("magnitude")},
                           {"windowed", "0", parse_dab_config("windowed:0")},
                           {"windowed", "1", parse_dab_config("windowed:1")},
                           {"windowed", "2", parse_dab_config("windowed:2")},
                           {"windowed", std::to_string(n),
                            parse_dab_config("windowed:" + std::to_string(n))},
                           {"disabled", "-", parse_dab_config("disabled")}};

  std::string csv = "mode,m,accuracy\n";
  for (const Row& row : rows) {
    TrainConfig cfg;
    cfg.net.seq_len = n;
    cfg.net.dab = row.dab;
    cfg.seed = opt.seed;
    cfg.epochs = opt.epochs;
    cfg.batch = opt.batch;
    cfg.perm_cap = opt.perm_cap;
    cfg.train_shard = opt.data;
    std::string tag = row.mode + (row.m == "-" ? "" : "-m" + row.m);
    cfg.out_dir = out + "/" + tag;

    std::cout << "=== " << tag << "\n";
    Trainer trainer(cfg, train_samples);
    trainer.run();
    std::string best = cfg.out_dir + "/best.dsqc";
    if (fs::exists(best)) trainer.restore(best);
    EvalMetrics m = evaluate(trainer.network(), test_samples, cfg, true);
    char line[80];
    std::snprintf(line, sizeof(line), "%s,%s,%.4f\n", row.mode.c_str(), row.m.c_str(),
                  m.accuracy);
    csv += line;
    std::cout << row.mode << " m=" << row.m << " accuracy " << m.accuracy << "\n";
  }

  std::ofstream f(out + "/ablate.csv", std::ios::trunc);
  check_io(f.good(), "cannot write ablation CSV");
  f << csv;
  check_io(f.good(), "ablation CSV write failed");
  std::cout << "wrote " << out << "/ablate.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Glibc's default arena behavior returns large conv buffers to the OS on
  // every free; keeping them mapped is worth ~2x on training throughput.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, -1);

  CLI::App app{"difference-accumulator temporal sequencing pipeline"};
  app.require_subcommand(1);
  bool sequential = false;
  app.add_flag("--sequential", sequential,
               "bit-reproducible sequential mode (the only execution mode)");

  GenDataOpts gen;
  CLI::App* c_gen = app.add_subcommand("gen-data", "generate a synthetic sprite shard");
  c_gen->add_option("--config", gen.config, "JSON config file");
  CLI::Option* gen_out = c_gen->add_option("--out", gen.out, "output shard path");
  CLI::Option* gen_seed = c_gen->add_option("--seed", gen.seed, "generator seed");
  CLI::Option* gen_count = c_gen->add_option("--count", gen.count, "number of sequences");

  ExtractOpts ext;
  CLI::App* c_ext = app.add_subcommand("extract", "slice frame directories into a window shard");
  c_ext->add_option("--frames", ext.frames, "clip directory (or directory of clip directories)")
      ->required();
  c_ext->add_option("--len", ext.len, "window length n")->required();
  c_ext->add_option("--step", ext.step, "frame step s");
  c_ext->add_option("--energy-min", ext.energy_min, "minimum motion energy");
  c_ext->add_option("--out", ext.out, "output shard path")->required();

  TrainOpts tr;
  CLI::App* c_tr = app.add_subcommand("train", "train a sequencing network");
  c_tr->add_option("--config", tr.config, "JSON config file");
  c_tr->add_option("--data", tr.data, "training shard");
  c_tr->add_option("--out", tr.out, "run directory");
  CLI::Option* tr_seed = c_tr->add_option("--seed", tr.seed, "training seed");
  c_tr->add_option("--epochs", tr.epochs, "epoch count");
  c_tr->add_option("--batch", tr.batch, "batch size");
  c_tr->add_option("--lr", tr.lr, "initial learning rate");
  c_tr->add_option("--n", tr.n, "sequence length");
  c_tr->add_option("--dab", tr.dab, "accumulator mode: signed|magnitude|disabled|windowed:<m>");
  c_tr->add_option("--preset", tr.preset, "network preset: desk-10|paper-18|paper-50");
  c_tr->add_option("--perm-cap", tr.perm_cap, "presentation pool size per sequence");
  c_tr->add_option("--val-fraction", tr.val_fraction, "validation fraction");
  c_tr->add_option("--short-edge", tr.short_edge, "resize target before cropping");
  c_tr->add_option("--resume", tr.resume, "checkpoint to resume from");

  EvalOpts ev;
  CLI::App* c_ev = app.add_subcommand("eval", "evaluate a checkpoint on a shard");
  c_ev->add_option("--ckpt", ev.ckpt, "checkpoint file")->required();
  c_ev->add_option("--data", ev.data, "evaluation shard")->required();
  c_ev->add_option("--out", ev.out, "output directory")->required();
  c_ev->add_flag("--all-perms", ev.all_perms, "expand every sequence over all n! orders");
  c_ev->add_option("--batch", ev.batch, "evaluation batch size");

  std::uint64_t gc_seed = 0;
  CLI::App* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  c_gc->add_option("--seed", gc_seed, "sampling seed");

  HeatmapOpts hm;
  CLI::App* c_hm = app.add_subcommand("heatmap", "export motion heat maps");
  c_hm->add_option("--ckpt", hm.ckpt, "checkpoint file")->required();
  c_hm->add_option("--data", hm.data, "shard with sequences")->required();
  c_hm->add_option("--out", hm.out, "output directory")->required();
  c_hm->add_option("--index", hm.index, "sequence index to export");
  c_hm->add_option("--csv", hm.csv, "write per-frame heat-mass-in-bbox ratios to this CSV");
  c_hm->add_option("--limit", hm.limit, "max sequences for the CSV");

  std::string bench_out;
  CLI::App* c_bn = app.add_subcommand("bench", "naive vs fast accumulator timing");
  c_bn->add_option("--out", bench_out, "directory for bench.csv");

  AblateOpts ab;
  CLI::App* c_ab = app.add_subcommand("ablate", "accumulator-mode ablation sweep");
  c_ab->add_option("--data", ab.data, "training shard")->required();
  c_ab->add_option("--test", ab.test, "evaluation shard")->required();
  c_ab->add_option("--out", ab.out, "output directory")->required();
  c_ab->add_option("--seed", ab.seed, "training seed");
  c_ab->add_option("--epochs", ab.epochs, "epochs per mode");
  c_ab->add_option("--batch", ab.batch, "batch size");
  c_ab->add_option("--perm-cap", ab.perm_cap, "presentation pool size per sequence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  gen.out_set = gen_out->count() > 0;
  gen.seed_set = gen_seed->count() > 0;
  gen.count_set = gen_count->count() > 0;
  tr.seed_set = tr_seed->count() > 0;

  try {
    if (app.got_subcommand(c_gen)) return run_gen_data(gen);
    if (app.got_subcommand(c_ext)) return run_extract(ext);
    if (app.got_subcommand(c_tr)) return run_train(tr);
    if (app.got_subcommand(c_ev)) return run_eval(ev);
    if (app.got_subcommand(c_gc)) return run_gradcheck(gc_seed);
    if (app.got_subcommand(c_hm)) return run_heatmap(hm);
    if (app.got_subcommand(c_bn)) return run_bench(bench_out);
    if (app.got_subcommand(c_ab)) return run_ablate(ab);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
