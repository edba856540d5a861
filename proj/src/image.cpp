#include "fticir/image.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <string>

#ifdef FTICIR_HAVE_PNG
#include <png.h>
#endif
#ifdef FTICIR_HAVE_JPEG
#include <csetjmp>
#include <cstdio>
#include <jpeglib.h>
#endif

#include "fticir/errors.hpp"

namespace fticir {

Image Image::filled(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Image img;
    img.width = width;
    img.height = height;
    img.rgb.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
        img.rgb[i] = r;
        img.rgb[i + 1] = g;
        img.rgb[i + 2] = b;
    }
    return img;
}

namespace {

class PnmReader {
public:
    explicit PnmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    long next_int() {
        skip_space_and_comments();
        long value = 0;
        bool any = false;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > 1'000'000) fail(ErrorKind::input, "ppm: header value too large");
            ++pos_;
            any = true;
        }
        if (!any) fail(ErrorKind::input, "ppm: malformed header");
        return value;
    }

    void skip_single_space() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail(ErrorKind::input, "ppm: malformed header");
        ++pos_;
    }

    std::size_t pos() const { return pos_; }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 2;
};

Image decode_ppm(std::span<const std::uint8_t> bytes) {
    const bool binary = bytes[1] == '6';
    PnmReader reader(bytes);
    Image img;
    img.width = static_cast<int>(reader.next_int());
    img.height = static_cast<int>(reader.next_int());
    const long maxval = reader.next_int();
    if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 255) {
        fail(ErrorKind::input, "ppm: unsupported dimensions or maxval");
    }
    const std::size_t count = static_cast<std::size_t>(img.width) * img.height * 3;
    img.rgb.resize(count);
    if (binary) {
        reader.skip_single_space();
        if (bytes.size() - reader.pos() < count) fail(ErrorKind::input, "ppm: truncated pixel data");
        std::memcpy(img.rgb.data(), bytes.data() + reader.pos(), count);
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            long v = reader.next_int();
            if (v > maxval) fail(ErrorKind::input, "ppm: sample exceeds maxval");
            img.rgb[i] = static_cast<std::uint8_t>(v);
        }
    }
    if (maxval != 255) {
        for (auto& v : img.rgb) v = static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
    }
    return img;
}

#ifdef FTICIR_HAVE_PNG
Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
        fail(ErrorKind::input, std::string("png: ") + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    Image img;
    img.width = static_cast<int>(png.width);
    img.height = static_cast<int>(png.height);
    img.rgb.resize(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr)) {
        std::string msg = png.message;
        png_image_free(&png);
        fail(ErrorKind::input, "png: " + msg);
    }
    return img;
}
#endif

#ifdef FTICIR_HAVE_JPEG
struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr info) {
    auto* mgr = reinterpret_cast<JpegErrorManager*>(info->err);
    std::longjmp(mgr->jump, 1);
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
    jpeg_decompress_struct info;
    JpegErrorManager err;
    info.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    Image img;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&info);
        fail(ErrorKind::input, "jpeg: decode failed");
    }
    jpeg_create_decompress(&info);
    jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&info, TRUE);
    info.out_color_space = JCS_RGB;
    jpeg_start_decompress(&info);
    img.width = static_cast<int>(info.output_width);
    img.height = static_cast<int>(info.output_height);
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    while (info.output_scanline < info.output_height) {
        JSAMPROW row = img.rgb.data() + static_cast<std::size_t>(info.output_scanline) * img.width * 3;
        jpeg_read_scanlines(&info, &row, 1);
    }
    jpeg_finish_decompress(&info);
    jpeg_destroy_decompress(&info);
    return img;
}
#endif

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '3')) {
        return decode_ppm(bytes);
    }
#ifdef FTICIR_HAVE_PNG
    if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') {
        return decode_png(bytes);
    }
#endif
#ifdef FTICIR_HAVE_JPEG
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
        return decode_jpeg(bytes);
    }
#endif
    fail(ErrorKind::input, "undecodable image: unrecognized format");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "cannot open " + path.string());
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Image load_image(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_image(bytes);
    } catch (const Error& e) {
        fail(ErrorKind::input, path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
    std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.rgb.begin(), image.rgb.end());
    return out;
}

void save_ppm(const std::filesystem::path& path, const Image& image) {
    const auto bytes = encode_ppm(image);
    write_file_atomic(path, bytes);
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail(ErrorKind::io, "cannot write " + tmp.string());
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            fail(ErrorKind::io, "short write to " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        fail(ErrorKind::io, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::vector<ImageFile> list_image_files(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) {
        fail(ErrorKind::io, "not a directory: " + dir.string());
    }
    std::vector<ImageFile> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (ext == ".ppm" || ext == ".pnm" || ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
            files.push_back({entry.path().stem().string(), entry.path()});
        }
    }
    std::sort(files.begin(), files.end(), [](const ImageFile& a, const ImageFile& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < files.size(); ++i) {
        if (files[i].id == files[i - 1].id) {
            fail(ErrorKind::data, "two image files share the id " + files[i].id);
        }
    }
    return files;
}

}  // namespace fticir
