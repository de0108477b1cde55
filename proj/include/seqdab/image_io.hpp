#pragma once

// 8-bit image file IO: PNG (gray / RGB, via zlib) and binary PPM/PGM.
// Pixels are row-major (height, width, channels) with channels 1 or 3.

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "seqdab/errors.hpp"

namespace seqdab {

struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;  // height * width * channels

  std::uint8_t& at(int y, int x, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32_be(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char* type,
                         const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32_be(out, crc);
}

inline std::uint8_t paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_io(in.good(), "cannot open file: " + path);
  in.seekg(0, std::ios::end);
  std::streamoff len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
  if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), len);
  check_io(in.good(), "short read: " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, const void* data, std::size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check_io(out.good(), "cannot open file for writing: " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  out.flush();
  check_io(out.good(), "write failed: " + path);
}

}  // namespace detail

inline void write_png(const std::string& path, const ImageU8& img) {
  check_config(img.channels == 1 || img.channels == 3, "write_png: channels must be 1 or 3");
  check_shape(img.height > 0 && img.width > 0 &&
                  img.pixels.size() == static_cast<std::size_t>(img.height) * img.width * img.channels,
              "write_png: pixel buffer does not match extents");

  // Raw scanlines, filter byte 0 per row.
  std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw((row + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    std::uint8_t* dst = raw.data() + static_cast<std::size_t>(y) * (row + 1);
    dst[0] = 0;
    std::memcpy(dst + 1, img.pixels.data() + static_cast<std::size_t>(y) * row, row);
  }

  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> deflated(bound);
  int rc = ::compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6);
  check_io(rc == Z_OK, "write_png: deflate failed");
  deflated.resize(bound);

  std::vector<std::uint8_t> ihdr;
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                          // bit depth
  ihdr.push_back(img.channels == 3 ? 2 : 0);                  // color type
  ihdr.push_back(0);                                          // compression
  ihdr.push_back(0);                                          // filter
  ihdr.push_back(0);                                          // interlace

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  detail::append_chunk(out, "IHDR", ihdr);
  detail::append_chunk(out, "IDAT", deflated);
  detail::append_chunk(out, "IEND", {});
  detail::write_file_bytes(path, out.data(), out.size());
}

inline ImageU8 decode_png(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  static const std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  check_io(bytes.size() >= 8 && std::memcmp(bytes.data(), kSig, 8) == 0,
           "not a PNG file: " + path);

  ImageU8 img;
  std::vector<std::uint8_t> deflated;
  std::size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= bytes.size() && !saw_iend) {
    std::uint32_t len = detail::get_u32_be(bytes.data() + pos);
    check_io(pos + 12 + len <= bytes.size(), "truncated PNG chunk: " + path);
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const std::uint8_t* payload = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      check_io(len == 13, "bad IHDR length: " + path);
      img.width = static_cast<int>(detail::get_u32_be(payload));
      img.height = static_cast<int>(detail::get_u32_be(payload + 4));
      int depth = payload[8], color = payload[9], interlace = payload[12];
      check_io(depth == 8, "unsupported PNG bit depth (want 8): " + path);
      check_io(color == 0 || color == 2, "unsupported PNG color type (want gray or RGB): " + path);
      check_io(interlace == 0, "interlaced PNG not supported: " + path);
      img.channels = color == 2 ? 3 : 1;
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      check_io(saw_ihdr, "IDAT before IHDR: " + path);
      deflated.insert(deflated.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  check_io(saw_ihdr && saw_iend && !deflated.empty(), "incomplete PNG stream: " + path);
  check_io(img.width > 0 && img.height > 0, "bad PNG extents: " + path);

  std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw((row + 1) * img.height);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int rc = ::uncompress(raw.data(), &raw_len, deflated.data(), static_cast<uLong>(deflated.size()));
  check_io(rc == Z_OK && raw_len == raw.size(), "PNG inflate failed: " + path);

  // Undo per-row filters in place, then strip filter bytes.
  int bpp = img.channels;
  img.pixels.assign(row * img.height, 0);
  for (int y = 0; y < img.height; ++y) {
    const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (row + 1);
    std::uint8_t filter = src[0];
    std::uint8_t* cur = img.pixels.data() + static_cast<std::size_t>(y) * row;
    const std::uint8_t* up = y > 0 ? cur - row : nullptr;
    for (std::size_t i = 0; i < row; ++i) {
      int x = src[1 + i];
      int a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
      int b = up ? up[i] : 0;
      int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += detail::paeth(a, b, c); break;
        default: throw IoError("bad PNG filter type: " + path);
      }
      cur[i] = static_cast<std::uint8_t>(x);
    }
  }
  return img;
}

namespace detail {

// Reads one whitespace-delimited token, skipping '#' comments to end of line.
inline std::string pnm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {}
    } else if (!std::isspace(ch)) {
      tok.push_back(static_cast<char>(ch));
      while ((ch = in.get()) != EOF && !std::isspace(ch)) tok.push_back(static_cast<char>(ch));
      break;
    }
  }
  return tok;
}

}  // namespace detail

// Binary PGM (P5, channels == 1) or PPM (P6, channels == 3), maxval 255.
inline void write_pnm(const std::string& path, const ImageU8& img) {
  check_config(img.channels == 1 || img.channels == 3, "write_pnm: channels must be 1 or 3");
  check_shape(img.height > 0 && img.width > 0 &&
                  img.pixels.size() == static_cast<std::size_t>(img.height) * img.width * img.channels,
              "write_pnm: pixel buffer does not match extents");
  std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" +
                       std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  detail::write_file_bytes(path, out.data(), out.size());
}

inline ImageU8 decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  check_io(bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'),
           "not a binary PGM/PPM file: " + path);
  ImageU8 img;
  img.channels = bytes[1] == '6' ? 3 : 1;

  std::string text(reinterpret_cast<const char*>(bytes.data()),
                   std::min<std::size_t>(bytes.size(), 4096));
  std::istringstream head(text);
  detail::pnm_token(head);  // magic
  try {
    img.width = std::stoi(detail::pnm_token(head));
    img.height = std::stoi(detail::pnm_token(head));
    int maxval = std::stoi(detail::pnm_token(head));
    check_io(maxval == 255, "unsupported PNM maxval (want 255): " + path);
  } catch (const std::logic_error&) {
    throw IoError("malformed PNM header: " + path);
  }
  check_io(img.width > 0 && img.height > 0, "bad PNM extents: " + path);

  std::size_t need = static_cast<std::size_t>(img.height) * img.width * img.channels;
  std::streamoff at = head.tellg();  // one byte past maxval's whitespace
  check_io(at > 0, "malformed PNM header: " + path);
  std::size_t data_at = static_cast<std::size_t>(at);
  check_io(data_at <= bytes.size() && bytes.size() - data_at >= need,
           "truncated PNM payload: " + path);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_at),
                    bytes.begin() + static_cast<std::ptrdiff_t>(data_at + need));
  return img;
}

// Dispatches on the file's magic bytes: PNG, P5, or P6.
inline ImageU8 read_image(const std::string& path) {
  std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
    return decode_pnm(bytes, path);
  return decode_png(bytes, path);
}

}  // namespace seqdab
