#pragma once

#include "dosgan/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace dosgan {

/// Declared pixel range of normalized images.
struct PixelRange {
  float low = -1.0f;
  float high = 1.0f;
};

/// Decodes an image file, resizes it to h x w, and returns normalized CHW
/// pixels (8-bit value v maps to 2v/255 - 1). Returns nullopt when the file
/// cannot be decoded.
std::optional<std::vector<float>> decode_image(const std::filesystem::path& path, int h, int w, int channels);

/// Normalized value back to 8 bits, rounding half to even.
std::uint8_t to_uint8(float value);

/// 8-bit interleaved (HWC, RGB order) pixels of image `index` of a batch.
std::vector<std::uint8_t> to_bytes(const Tensor<float>& batch, int index);

/// Writes image `index` of a normalized batch as PNG.
void write_png(const std::filesystem::path& path, const Tensor<float>& batch, int index);

/// Writes several single images side by side as one PNG.
void write_png_row(const std::filesystem::path& path, const std::vector<Tensor<float>>& images);

/// Writes raw 8-bit RGB (or gray) interleaved pixels as PNG.
void write_png_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, int h, int w,
                     int channels);

}  // namespace dosgan
