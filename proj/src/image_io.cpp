#include "cumamba/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <vector>

namespace cumamba {

ImageFormat format_from_path(const std::string& path) {
    const auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == "ppm") return ImageFormat::kPpm;
    if (ext == "png") return ImageFormat::kPng;
    throw ImageIoError("unsupported image format for '" + path + "' (expected .ppm or .png)");
}

unsigned char quantize(float v) {
    const float c = std::clamp(std::isnan(v) ? 0.0f : v, 0.0f, 1.0f);
    return static_cast<unsigned char>(std::lround(c * 255.0f));
}

namespace {

Image from_bytes(const std::vector<unsigned char>& bytes, std::size_t h, std::size_t w) {
    Image img({h, w, 3});
    auto dst = img.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(bytes[i]) / 255.0f;
    return img;
}

std::vector<unsigned char> to_bytes(const Image& image) {
    if (image.dim() != 3 || image.size(2) != 3) {
        throw ImageIoError("images are written as [H, W, 3], got " + shape_str(image.shape()));
    }
    std::vector<unsigned char> bytes(image.numel());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize(image[i]);
    return bytes;
}

// Next header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw ImageIoError("'" + path + "': truncated PPM header");
    return tok;
}

std::size_t ppm_number(std::istream& in, const std::string& path) {
    const std::string tok = ppm_token(in, path);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c); }) ||
        tok.size() > 9) {
        throw ImageIoError("'" + path + "': malformed PPM header field '" + tok + "'");
    }
    return std::stoul(tok);
}

Image load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot open '" + path + "'");
    if (ppm_token(in, path) != "P6") throw ImageIoError("'" + path + "': only binary PPM (P6) is supported");
    const std::size_t w = ppm_number(in, path);
    const std::size_t h = ppm_number(in, path);
    const std::size_t maxval = ppm_number(in, path);
    if (w == 0 || h == 0) throw ImageIoError("'" + path + "': empty image");
    if (maxval != 255) throw ImageIoError("'" + path + "': only 8-bit PPM (maxval 255) is supported");
    std::vector<unsigned char> bytes(h * w * 3);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw ImageIoError("'" + path + "': truncated PPM data");
    }
    return from_bytes(bytes, h, w);
}

void save_ppm(const std::string& path, const Image& image) {
    const auto bytes = to_bytes(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageIoError("cannot write '" + path + "'");
    out << "P6\n" << image.size(1) << " " << image.size(0) << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageIoError("failed writing '" + path + "'");
}

Image load_png(const std::string& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw ImageIoError("'" + path + "': " + msg);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw ImageIoError("'" + path + "': " + msg);
    }
    return from_bytes(bytes, img.height, img.width);
}

void save_png(const std::string& path, const Image& image) {
    const auto bytes = to_bytes(image);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.size(1));
    img.height = static_cast<png_uint_32>(image.size(0));
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw ImageIoError("cannot write '" + path + "': " + msg);
    }
}

}  // namespace

Image load_image(const std::string& path) {
    return format_from_path(path) == ImageFormat::kPpm ? load_ppm(path) : load_png(path);
}

void save_image(const std::string& path, const Image& image) {
    if (format_from_path(path) == ImageFormat::kPpm) {
        save_ppm(path, image);
    } else {
        save_png(path, image);
    }
}

}  // namespace cumamba
