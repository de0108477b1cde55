#pragma once

// Binary sample shards. Layout: magic "DSQ1", version u16 LE, then u32 LE
// count/n/H/W/channels and a dtype tag u8 (0 = float32 LE); per sample:
// label u32 LE, perm as n x u8, source-id length u16 LE + UTF-8 bytes, frame
// payload float32 LE in (channels, n, H, W) row-major order. A JSONL sidecar
// at <path>.idx.jsonl indexes samples ({"i","offset","label","source","step"});
// ground-truth boxes, when present, go to <path>.boxes.jsonl.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqdab/errors.hpp"
#include "seqdab/perm.hpp"
#include "seqdab/sequence.hpp"

namespace seqdab {

struct ShardHeader {
  std::uint16_t version = 1;
  std::uint32_t count = 0;
  std::uint32_t n = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 3;
  std::uint8_t dtype = 0;  // 0 = float32 LE
};

namespace detail {

inline constexpr char kShardMagic[4] = {'D', 'S', 'Q', '1'};
inline constexpr std::streamoff kCountOffset = 6;  // magic + version
inline constexpr std::streamoff kHeaderSize = 4 + 2 + 5 * 4 + 1;

inline void put_u16(std::ostream& out, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>(v >> 24)};
  out.write(b, 4);
}

inline std::uint16_t get_u16(std::istream& in, const std::string& what) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  check_io(in.good(), "truncated shard (" + what + ")");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check_io(in.good(), "truncated shard (" + what + ")");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline std::string shard_index_path(const std::string& path) { return path + ".idx.jsonl"; }
inline std::string shard_boxes_path(const std::string& path) { return path + ".boxes.jsonl"; }

// Single-writer append stream; the header's count field is patched on close.
class ShardWriter {
 public:
  ShardWriter(const std::string& path, int n, int height, int width)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc),
        index_(shard_index_path(path), std::ios::trunc) {
    check_config(n >= 2 && height > 0 && width > 0, "shard extents must be positive, n >= 2");
    check_io(out_.good(), "cannot open shard for writing: " + path);
    check_io(index_.good(), "cannot open shard index for writing: " + shard_index_path(path));
    header_.n = static_cast<std::uint32_t>(n);
    header_.height = static_cast<std::uint32_t>(height);
    header_.width = static_cast<std::uint32_t>(width);
    out_.write(detail::kShardMagic, 4);
    detail::put_u16(out_, header_.version);
    detail::put_u32(out_, 0);  // count, patched on close
    detail::put_u32(out_, header_.n);
    detail::put_u32(out_, header_.height);
    detail::put_u32(out_, header_.width);
    detail::put_u32(out_, header_.channels);
    out_.put(static_cast<char>(header_.dtype));
    check_io(out_.good(), "write failed: " + path);
  }

  ShardWriter(const ShardWriter&) = delete;
  ShardWriter& operator=(const ShardWriter&) = delete;
  ~ShardWriter() {
    try {
      close();
    } catch (...) {
    }
  }

  void add(const SequenceSample& sample) {
    check_io(!closed_, "shard already closed: " + path_);
    check_shape(sample.frames.rank() == 4 &&
                    sample.frames.shape()[0] == static_cast<std::int64_t>(header_.channels) &&
                    sample.frames.shape()[1] == static_cast<std::int64_t>(header_.n) &&
                    sample.frames.shape()[2] == static_cast<std::int64_t>(header_.height) &&
                    sample.frames.shape()[3] == static_cast<std::int64_t>(header_.width),
                "sample extents do not match the shard header");
    check_config(is_valid(sample.perm) && sample.perm.size() == header_.n,
                 "sample permutation does not match the shard's n");
    check_config(sample.source.size() <= 0xffff, "source id longer than 65535 bytes");

    std::streamoff offset = out_.tellp();
    detail::put_u32(out_, static_cast<std::uint32_t>(sample.label));
    out_.write(reinterpret_cast<const char*>(sample.perm.ranks.data()),
               static_cast<std::streamsize>(header_.n));
    detail::put_u16(out_, static_cast<std::uint16_t>(sample.source.size()));
    out_.write(sample.source.data(), static_cast<std::streamsize>(sample.source.size()));
    out_.write(reinterpret_cast<const char*>(sample.frames.data()),
               static_cast<std::streamsize>(sample.frames.numel() * sizeof(float)));
    check_io(out_.good(), "write failed: " + path_);

    nlohmann::json line = {{"i", header_.count},
                           {"offset", static_cast<std::int64_t>(offset)},
                           {"label", sample.label},
                           {"source", sample.source},
                           {"step", sample.step}};
    index_ << line.dump() << "\n";
    check_io(index_.good(), "write failed: " + shard_index_path(path_));

    if (!sample.boxes.empty()) {
      if (!boxes_.is_open()) {
        boxes_.open(shard_boxes_path(path_), std::ios::trunc);
        check_io(boxes_.good(), "cannot open box sidecar: " + shard_boxes_path(path_));
      }
      nlohmann::json frames = nlohmann::json::array();
      for (const std::vector<BBox>& frame : sample.boxes) {
        nlohmann::json per = nlohmann::json::array();
        for (const BBox& b : frame) per.push_back({b.x0, b.y0, b.x1, b.y1});
        frames.push_back(per);
      }
      boxes_ << nlohmann::json{{"i", header_.count}, {"frames", frames}}.dump() << "\n";
      check_io(boxes_.good(), "write failed: " + shard_boxes_path(path_));
    }
    ++header_.count;
  }

  std::uint32_t count() const { return header_.count; }

  void close() {
    if (closed_) return;
    closed_ = true;
    out_.seekp(detail::kCountOffset);
    detail::put_u32(out_, header_.count);
    out_.flush();
    check_io(out_.good(), "write failed: " + path_);
    out_.close();
    index_.close();
    if (boxes_.is_open()) boxes_.close();
  }

 private:
  std::string path_;
  std::ofstream out_;
  std::ofstream index_;
  std::ofstream boxes_;
  ShardHeader header_;
  bool closed_ = false;
};

// Streaming reader; random access goes through the offsets scan.
class ShardReader {
 public:
  explicit ShardReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    check_io(in_.good(), "cannot open shard: " + path);
    char magic[4];
    in_.read(magic, 4);
    check_io(in_.good() && std::memcmp(magic, detail::kShardMagic, 4) == 0,
             "bad shard magic: " + path);
    header_.version = detail::get_u16(in_, "version");
    check_io(header_.version == 1, "shard version mismatch (want 1, got " +
                                       std::to_string(header_.version) + "): " + path);
    header_.count = detail::get_u32(in_, "count");
    header_.n = detail::get_u32(in_, "n");
    header_.height = detail::get_u32(in_, "height");
    header_.width = detail::get_u32(in_, "width");
    header_.channels = detail::get_u32(in_, "channels");
    int dtype = in_.get();
    check_io(dtype != EOF, "truncated shard (dtype): " + path);
    header_.dtype = static_cast<std::uint8_t>(dtype);
    check_io(header_.dtype == 0, "unsupported shard dtype: " + path);
    check_io(header_.n >= 2 && header_.height > 0 && header_.width > 0 && header_.channels == 3,
             "bad shard header extents: " + path);
    steps_.assign(header_.count, 1);
    load_index();
  }

  const ShardHeader& header() const { return header_; }
  std::uint32_t count() const { return header_.count; }

  // Reads the next sample in file order; false once count samples were read.
  bool next(SequenceSample& out) {
    if (cursor_ >= header_.count) return false;
    read_record(out, cursor_);
    ++cursor_;
    return true;
  }

  void rewind() {
    in_.clear();
    in_.seekg(detail::kHeaderSize);
    cursor_ = 0;
  }

  SequenceSample read(std::uint32_t i) {
    check_config(i < header_.count, "sample index out of range");
    ensure_offsets();
    in_.clear();
    in_.seekg(offsets_[i]);
    SequenceSample out;
    read_record(out, i);
    cursor_ = i + 1;
    return out;
  }

  std::vector<SequenceSample> read_all() {
    rewind();
    std::vector<SequenceSample> all(header_.count);
    for (std::uint32_t i = 0; i < header_.count; ++i) read_record(all[i], i);
    cursor_ = header_.count;
    return all;
  }

  // Box sidecar rows for the samples that have them, keyed by sample index.
  std::vector<std::vector<std::vector<BBox>>> read_boxes() {
    std::vector<std::vector<std::vector<BBox>>> by_sample(header_.count);
    std::ifstream side(shard_boxes_path(path_));
    if (!side.good()) return by_sample;
    std::string line;
    while (std::getline(side, line)) {
      if (line.empty()) continue;
      nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
      check_io(!row.is_discarded(), "malformed box sidecar line: " + shard_boxes_path(path_));
      std::uint32_t i = row.at("i").get<std::uint32_t>();
      check_io(i < header_.count, "box sidecar index out of range: " + shard_boxes_path(path_));
      std::vector<std::vector<BBox>> frames;
      for (const nlohmann::json& per : row.at("frames")) {
        std::vector<BBox> fb;
        for (const nlohmann::json& b : per)
          fb.push_back(BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                            b.at(3).get<int>()});
        frames.push_back(std::move(fb));
      }
      by_sample[i] = std::move(frames);
    }
    return by_sample;
  }

 private:
  void load_index() {
    std::ifstream side(shard_index_path(path_));
    if (!side.good()) return;
    offsets_.clear();
    std::string line;
    while (std::getline(side, line)) {
      if (line.empty()) continue;
      nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
      check_io(!row.is_discarded(), "malformed shard index line: " + shard_index_path(path_));
      std::uint32_t i = row.at("i").get<std::uint32_t>();
      if (i < header_.count) {
        if (offsets_.size() == i) offsets_.push_back(row.at("offset").get<std::streamoff>());
        steps_[i] = row.at("step").get<int>();
      }
    }
    if (offsets_.size() != header_.count) offsets_.clear();
  }

  void ensure_offsets() {
    if (offsets_.size() == header_.count) return;
    // No usable sidecar: scan record headers to rebuild offsets.
    offsets_.assign(header_.count, 0);
    in_.clear();
    in_.seekg(0, std::ios::end);
    std::streamoff file_size = in_.tellg();
    in_.seekg(detail::kHeaderSize);
    std::streamoff payload = static_cast<std::streamoff>(header_.channels) * header_.n *
                             header_.height * header_.width *
                             static_cast<std::streamoff>(sizeof(float));
    for (std::uint32_t i = 0; i < header_.count; ++i) {
      std::streamoff at = in_.tellg();
      offsets_[i] = at;
      check_io(at + 4 + header_.n + 2 <= file_size, "truncated shard: " + path_);
      in_.seekg(4 + header_.n, std::ios::cur);
      std::uint16_t src_len = detail::get_u16(in_, "source length");
      std::streamoff end = static_cast<std::streamoff>(in_.tellg()) + src_len + payload;
      check_io(end <= file_size, "truncated shard: " + path_);
      in_.seekg(end);
    }
    rewind();
  }

  void read_record(SequenceSample& out, std::uint32_t i) {
    out.label = static_cast<int>(detail::get_u32(in_, "label"));
    out.perm.ranks.assign(header_.n, 0);
    in_.read(reinterpret_cast<char*>(out.perm.ranks.data()),
             static_cast<std::streamsize>(header_.n));
    check_io(in_.good(), "truncated shard (perm): " + path_);
    check_io(is_valid(out.perm), "corrupt shard permutation: " + path_);
    std::uint16_t src_len = detail::get_u16(in_, "source length");
    out.source.assign(src_len, '\0');
    if (src_len > 0) in_.read(out.source.data(), src_len);
    check_io(in_.good(), "truncated shard (source): " + path_);
    out.frames = Tensor<float>::uninit({static_cast<int>(header_.channels),
                                        static_cast<int>(header_.n),
                                        static_cast<int>(header_.height),
                                        static_cast<int>(header_.width)});
    in_.read(reinterpret_cast<char*>(out.frames.data()),
             static_cast<std::streamsize>(out.frames.numel() * sizeof(float)));
    check_io(in_.good(), "truncated shard (frames): " + path_);
    out.step = steps_[i];
    out.crop_y = out.crop_x = 0;
    out.seed = 0;
    out.boxes.clear();
  }

  std::string path_;
  std::ifstream in_;
  ShardHeader header_;
  std::vector<std::streamoff> offsets_;
  std::vector<int> steps_;
  std::uint32_t cursor_ = 0;
};

}  // namespace seqdab
