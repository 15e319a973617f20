#include "diffuforge/codec.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <png.h>
#include <sodium.h>

#include "diffuforge/error.hpp"

namespace diffuforge {

namespace {

std::vector<std::uint8_t> write_png(int width, int height, png_uint_32 format, const void* data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, data, 0, nullptr)) {
    throw FormatError(fmt::format("png sizing failed: {}", image.message));
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, data, 0, nullptr)) {
    throw FormatError(fmt::format("png encoding failed: {}", image.message));
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> read_png(std::span<const std::uint8_t> png, png_uint_32 format,
                                   int& width, int& height) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, png.data(), png.size())) {
    throw FormatError(fmt::format("png decoding failed: {}", image.message));
  }
  image.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError(fmt::format("png decoding failed: {}", image.message));
  }
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  return pixels;
}

struct SodiumInit {
  SodiumInit() {
    if (sodium_init() < 0) throw Error("libsodium initialization failed");
  }
};

void ensure_sodium() { static const SodiumInit init; }

}  // namespace

std::vector<std::uint8_t> encode_png_rgb(const ImageRaster& image) {
  return write_png(image.width(), image.height(), PNG_FORMAT_RGB, image.bytes().data());
}

std::vector<std::uint8_t> encode_png_gray(int width, int height, std::span<const std::uint8_t> gray) {
  if (gray.size() != static_cast<std::size_t>(width) * height) {
    throw ValidationError("gray buffer size does not match dimensions");
  }
  return write_png(width, height, PNG_FORMAT_GRAY, gray.data());
}

ImageRaster decode_png_rgb(std::span<const std::uint8_t> png) {
  int width = 0;
  int height = 0;
  auto pixels = read_png(png, PNG_FORMAT_RGB, width, height);
  return ImageRaster(width, height, std::move(pixels));
}

std::vector<std::uint8_t> decode_png_gray(std::span<const std::uint8_t> png, int& width, int& height) {
  return read_png(png, PNG_FORMAT_GRAY, width, height);
}

std::vector<std::uint8_t> mask_to_png(const BinaryMask& mask) {
  std::vector<std::uint8_t> gray(mask.bits().size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.bits()[i] ? 255 : 0;
  return encode_png_gray(mask.width(), mask.height(), gray);
}

BinaryMask mask_from_png(std::span<const std::uint8_t> png) {
  int width = 0;
  int height = 0;
  const auto gray = decode_png_gray(png, width, height);
  BinaryMask mask(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) mask.set(x, y, gray[static_cast<std::size_t>(y) * width + x] != 0);
  }
  return mask;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  ensure_sodium();
  const std::size_t len = sodium_base64_ENCODED_LEN(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(len, '\0');
  sodium_bin2base64(out.data(), len, bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(len - 1);  // drop the terminator
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  ensure_sodium();
  std::vector<std::uint8_t> out(text.size() / 4 * 3 + 3);
  std::size_t out_len = 0;
  const char* end = nullptr;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &out_len, &end,
                        sodium_base64_VARIANT_ORIGINAL) != 0 ||
      end != text.data() + text.size()) {
    throw FormatError("invalid or truncated base64 payload");
  }
  out.resize(out_len);
  return out;
}

std::string sha256_hex(std::string_view data) {
  ensure_sodium();
  unsigned char digest[crypto_hash_sha256_BYTES];
  crypto_hash_sha256(digest, reinterpret_cast<const unsigned char*>(data.data()), data.size());
  char hex[crypto_hash_sha256_BYTES * 2 + 1];
  sodium_bin2hex(hex, sizeof hex, digest, sizeof digest);
  return std::string(hex);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot open {} for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(fmt::format("failed writing {}", path.string()));
}

void write_file_text(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace diffuforge
