#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffuforge/raster.hpp"

namespace diffuforge {

// PNG encoding is deterministic for identical input (fixed zlib settings).
std::vector<std::uint8_t> encode_png_rgb(const ImageRaster& image);
/// 8-bit grayscale; used for masks (0 background, 255 foreground) and
/// class-id label maps.
std::vector<std::uint8_t> encode_png_gray(int width, int height, std::span<const std::uint8_t> gray);

/// Decodes any PNG into 8-bit RGB.
ImageRaster decode_png_rgb(std::span<const std::uint8_t> png);
/// Decodes any PNG into 8-bit gray; writes dimensions to width/height.
std::vector<std::uint8_t> decode_png_gray(std::span<const std::uint8_t> png, int& width, int& height);

std::vector<std::uint8_t> mask_to_png(const BinaryMask& mask);
/// Any nonzero pixel is foreground.
BinaryMask mask_from_png(std::span<const std::uint8_t> png);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Strict decoding; throws FormatError on malformed or truncated input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_text(const std::filesystem::path& path, std::string_view text);

}  // namespace diffuforge
