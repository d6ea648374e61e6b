/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace medden {

// Single-channel image with pixels in [0,1], row-major.
struct ImageRecord {
  std::string id;
  std::string path;
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<double> pixels;
};

// Reads an 8-bit grayscale PGM (P5) or non-interlaced 8-bit grayscale PNG.
// Bytes map to [0,1] as v/255. The record id is left empty.
ImageRecord decode_image(const std::string& path);

// Writes by extension (.pgm or .png). Values are clamped to [0,1] and
// quantized with round-half-away-from-zero, so decode(encode(x)) equals the
// quantized x.
void encode_image(const ImageRecord& rec, const std::string& path);

// In-memory codecs used by the file front-ends and the tests.
ImageRecord decode_pgm(const std::vector<unsigned char>& bytes, const std::string& origin);
ImageRecord decode_png(const std::vector<unsigned char>& bytes, const std::string& origin);
std::vector<unsigned char> encode_pgm(const ImageRecord& rec);
std::vector<unsigned char> encode_png(const ImageRecord& rec);

// Bilinear resize to a square using the half-pixel-center rule shared with
// the upsampling kernel.
ImageRecord resize_bilinear(const ImageRecord& rec, std::int64_t to);

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes);

}  // namespace medden
