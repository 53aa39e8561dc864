#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchforge/image.hpp"

namespace patchforge {

enum class Codec { Raw, Png, Jpeg };

std::string_view codec_name(Codec codec);
Codec parse_codec(std::string_view name);
// File extension used for inline-file chunks.
std::string_view codec_extension(Codec codec);

// Raw: interleaved RGB8 bytes, width * height * 3, no header. Dimensions are
// carried by the caller (tile geometry).
std::vector<std::uint8_t> encode(const Image& image, Codec codec, int jpeg_quality = 90);
Image decode(std::span<const std::uint8_t> bytes, Codec codec, int expected_width,
             int expected_height);

// Standalone PNG helpers for masks and ingest sources. Grayscale and alpha
// inputs are expanded to RGB.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& image);
void write_png_gray(const std::string& path, std::span<const std::uint8_t> gray, int width,
                    int height);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace patchforge
