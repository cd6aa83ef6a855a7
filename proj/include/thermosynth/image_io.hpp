#pragma once

// 8-bit RGB images and PNG/JPEG encoding.

#include "thermosynth/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace thermosynth {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved RGB, row-major.
struct Rgb8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3
};

/// Sample `n` of a (N, 3, H, W) tensor in [-1, 1] to 8-bit.
Rgb8 to_rgb8(const TensorF& image, int n = 0);

enum class ImageCodec { png, jpeg };
ImageCodec codec_from_string(const std::string& s);

std::vector<std::uint8_t> encode_png(const Rgb8& image);
std::vector<std::uint8_t> encode_jpeg(const Rgb8& image, int quality = 90);
std::vector<std::uint8_t> encode(const Rgb8& image, ImageCodec codec);

Rgb8 decode_png(const std::vector<std::uint8_t>& bytes);

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace thermosynth
