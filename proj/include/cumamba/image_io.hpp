#pragma once

#include <stdexcept>
#include <string>

#include "cumamba/data.hpp"

namespace cumamba {

/// Unsupported, unreadable or truncated image files.
class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ImageFormat { kPpm, kPng };

/// Format from the file extension (.ppm or .png, case-insensitive).
ImageFormat format_from_path(const std::string& path);

/// 8-bit RGB to [H, W, 3] via v / 255. PPM must be binary P6 with maxval 255;
/// PNG inputs of any colour type are converted to 8-bit RGB.
Image load_image(const std::string& path);

/// Writes round(v * 255) with values clamped to [0, 1]. Expects [H, W, 3].
void save_image(const std::string& path, const Image& image);

/// 8-bit quantization used by save_image.
unsigned char quantize(float v);

}  // namespace cumamba
