/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "core/errors.hpp"
#include "core/kernels.hpp"

namespace medden {

namespace {

unsigned char quantize(double v) {
  v = std::min(std::max(v, 0.0), 1.0);
  // Round half away from zero; values here are non-negative.
  const double q = std::floor(v * 255.0 + 0.5);
  return static_cast<unsigned char>(std::min(q, 255.0));
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// ---- PGM (P5, maxval 255) ----

int next_pgm_token(const std::vector<unsigned char>& bytes, std::size_t& pos, std::string& token) {
  // Skip whitespace and '#' comments.
  while (pos < bytes.size()) {
    const unsigned char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(c)) {
      ++pos;
    } else {
      break;
    }
  }
  token.clear();
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') {
    token.push_back(static_cast<char>(bytes[pos++]));
  }
  return token.empty() ? -1 : 0;
}

}  // namespace

ImageRecord decode_pgm(const std::vector<unsigned char>& bytes, const std::string& origin) {
  std::size_t pos = 0;
  std::string tok;
  if (next_pgm_token(bytes, pos, tok) != 0 || tok != "P5") {
    throw FormatError(origin + ": not a P5 PGM");
  }
  std::int64_t w = 0, h = 0, maxval = 0;
  try {
    if (next_pgm_token(bytes, pos, tok) != 0) throw FormatError("");
    w = std::stoll(tok);
    if (next_pgm_token(bytes, pos, tok) != 0) throw FormatError("");
    h = std::stoll(tok);
    if (next_pgm_token(bytes, pos, tok) != 0) throw FormatError("");
    maxval = std::stoll(tok);
  } catch (...) {
    throw FormatError(origin + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0) throw FormatError(origin + ": bad PGM dimensions");
  if (maxval != 255) throw FormatError(origin + ": only 8-bit PGM is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError(origin + ": missing PGM data separator");
  }
  ++pos;  // single whitespace byte before the raster

  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos < need) throw FormatError(origin + ": truncated PGM data");

  ImageRecord rec;
  rec.width = w;
  rec.height = h;
  rec.pixels.resize(need);
  for (std::size_t i = 0; i < need; ++i) {
    rec.pixels[i] = static_cast<double>(bytes[pos + i]) / 255.0;
  }
  return rec;
}

std::vector<unsigned char> encode_pgm(const ImageRecord& rec) {
  std::string header = "P5\n" + std::to_string(rec.width) + " " + std::to_string(rec.height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + rec.pixels.size());
  for (double v : rec.pixels) out.push_back(quantize(v));
  return out;
}

// ---- PNG (8-bit grayscale, non-interlaced) ----

namespace {

constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

std::uint32_t read_u32be(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void push_u32be(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
  out.push_back(static_cast<unsigned char>(v & 0xFF));
}

void push_chunk(std::vector<unsigned char>& out, const char type[4],
                const std::vector<unsigned char>& data) {
  push_u32be(out, static_cast<std::uint32_t>(data.size()));
  std::vector<unsigned char> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  const auto crc = crc32(0L, body.data(), static_cast<uInt>(body.size()));
  push_u32be(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

ImageRecord decode_png(const std::vector<unsigned char>& bytes, const std::string& origin) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0) {
    throw FormatError(origin + ": not a PNG");
  }

  std::int64_t w = 0, h = 0;
  bool have_ihdr = false, have_iend = false;
  std::vector<unsigned char> idat;

  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = read_u32be(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw FormatError(origin + ": truncated PNG chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const unsigned char* data = bytes.data() + pos + 8;
    const std::uint32_t stored_crc = read_u32be(bytes.data() + pos + 8 + len);
    const auto crc = crc32(0L, bytes.data() + pos + 4, static_cast<uInt>(4 + len));
    if (static_cast<std::uint32_t>(crc) != stored_crc) {
      throw FormatError(origin + ": PNG chunk CRC mismatch");
    }

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw FormatError(origin + ": bad IHDR");
      w = read_u32be(data);
      h = read_u32be(data + 4);
      const int bitdepth = data[8], colortype = data[9], interlace = data[12];
      if (bitdepth != 8 || colortype != 0) {
        throw FormatError(origin + ": only 8-bit grayscale PNG is supported");
      }
      if (interlace != 0) throw FormatError(origin + ": interlaced PNG is not supported");
      have_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      have_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!have_ihdr || !have_iend || w <= 0 || h <= 0) {
    throw FormatError(origin + ": incomplete PNG");
  }

  const std::size_t stride = static_cast<std::size_t>(w) + 1;
  std::vector<unsigned char> raw(stride * static_cast<std::size_t>(h));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  const int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || raw_len != raw.size()) {
    throw FormatError(origin + ": PNG inflate failed");
  }

  ImageRecord rec;
  rec.width = w;
  rec.height = h;
  rec.pixels.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  std::vector<unsigned char> cur(static_cast<std::size_t>(w)), prev(static_cast<std::size_t>(w), 0);
  for (std::int64_t y = 0; y < h; ++y) {
    const unsigned char* row = raw.data() + static_cast<std::size_t>(y) * stride;
    const int filter = row[0];
    for (std::int64_t x = 0; x < w; ++x) {
      const int rx = row[1 + x];
      const int a = x > 0 ? cur[static_cast<std::size_t>(x - 1)] : 0;
      const int b = prev[static_cast<std::size_t>(x)];
      const int c = x > 0 ? prev[static_cast<std::size_t>(x - 1)] : 0;
      int v;
      switch (filter) {
        case 0: v = rx; break;
        case 1: v = rx + a; break;
        case 2: v = rx + b; break;
        case 3: v = rx + (a + b) / 2; break;
        case 4: v = rx + paeth(a, b, c); break;
        default: throw FormatError(origin + ": unknown PNG filter");
      }
      cur[static_cast<std::size_t>(x)] = static_cast<unsigned char>(v & 0xFF);
      rec.pixels[static_cast<std::size_t>(y * w + x)] =
          static_cast<double>(cur[static_cast<std::size_t>(x)]) / 255.0;
    }
    std::swap(cur, prev);
  }
  return rec;
}

std::vector<unsigned char> encode_png(const ImageRecord& rec) {
  const std::int64_t w = rec.width, h = rec.height;
  std::vector<unsigned char> filtered(static_cast<std::size_t>((w + 1) * h));
  for (std::int64_t y = 0; y < h; ++y) {
    unsigned char* row = filtered.data() + static_cast<std::size_t>(y * (w + 1));
    row[0] = 0;  // filter: none
    for (std::int64_t x = 0; x < w; ++x) {
      row[1 + x] = quantize(rec.pixels[static_cast<std::size_t>(y * w + x)]);
    }
  }

  uLongf bound = compressBound(static_cast<uLong>(filtered.size()));
  std::vector<unsigned char> compressed(bound);
  // Fixed compression level keeps encoded bytes reproducible.
  const int zrc = compress2(compressed.data(), &bound, filtered.data(),
                            static_cast<uLong>(filtered.size()), 6);
  if (zrc != Z_OK) throw IoError("PNG deflate failed");
  compressed.resize(bound);

  std::vector<unsigned char> out(kPngSig, kPngSig + 8);
  std::vector<unsigned char> ihdr;
  push_u32be(ihdr, static_cast<std::uint32_t>(w));
  push_u32be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // deflate
  ihdr.push_back(0);   // adaptive filtering
  ihdr.push_back(0);   // no interlace
  push_chunk(out, "IHDR", ihdr);
  push_chunk(out, "IDAT", compressed);
  push_chunk(out, "IEND", {});
  return out;
}

// ---- file front-ends ----

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path);
}

ImageRecord decode_image(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  ImageRecord rec;
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) {
    rec = decode_png(bytes, path);
  } else if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
    rec = decode_pgm(bytes, path);
  } else {
    throw FormatError(path + ": unsupported image format (need P5 PGM or grayscale PNG)");
  }
  rec.path = path;
  return rec;
}

void encode_image(const ImageRecord& rec, const std::string& path) {
  if (rec.width <= 0 || rec.height <= 0 ||
      rec.pixels.size() != static_cast<std::size_t>(rec.width * rec.height)) {
    throw SizeError("encode_image: inconsistent image record");
  }
  if (has_suffix(path, ".png")) {
    write_file_bytes(path, encode_png(rec));
  } else if (has_suffix(path, ".pgm")) {
    write_file_bytes(path, encode_pgm(rec));
  } else {
    throw ConfigError("encode_image: unsupported extension (use .pgm or .png): " + path);
  }
}

ImageRecord resize_bilinear(const ImageRecord& rec, std::int64_t to) {
  if (to < 1) throw DomainError("resize_bilinear: target size must be positive");
  if (rec.width == to && rec.height == to) return rec;

  ImageRecord out;
  out.id = rec.id;
  out.width = to;
  out.height = to;
  out.pixels.resize(static_cast<std::size_t>(to * to));
  bilinear_resample_plane(rec.pixels.data(), rec.height, rec.width, out.pixels.data(), to, to);
  for (double& v : out.pixels) v = std::min(std::max(v, 0.0), 1.0);
  return out;
}

}  // namespace medden
