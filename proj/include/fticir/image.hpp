#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fticir {

// 8-bit interleaved RGB, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    std::uint8_t& at(int x, int y, int channel) {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
    }
    std::uint8_t at(int x, int y, int channel) const {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
    }

    static Image filled(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

// Binary/ASCII PPM always; PNG and JPEG when built with libpng/libjpeg.
// Throws ErrorKind::input on anything it cannot decode.
Image decode_image(std::span<const std::uint8_t> bytes);
Image load_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_ppm(const Image& image);
void save_ppm(const std::filesystem::path& path, const Image& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
struct ImageFile {
    std::string id;  // file stem
    std::filesystem::path path;
};

// Files with an image extension (.ppm .pnm .png .jpg .jpeg), sorted by id.
// Duplicate stems are a data error.
std::vector<ImageFile> list_image_files(const std::filesystem::path& dir);

// Writes `<path>.tmp` then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace fticir
