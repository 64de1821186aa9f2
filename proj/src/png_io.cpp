#include "wsod/png_io.hpp"

#include <png.h>

#include <cstring>
#include <stdexcept>

namespace wsod {

void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<unsigned char>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
        throw std::invalid_argument("write_png_rgb: buffer size mismatch");
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr)) {
        throw std::runtime_error("write_png_rgb: " + path + ": " + image.message);
    }
}

std::vector<unsigned char> read_png_rgb(const std::string& path, int& width, int& height) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw std::runtime_error("read_png_rgb: " + path + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
        png_image_free(&image);
        throw std::runtime_error("read_png_rgb: " + path + ": " + image.message);
    }
    width = static_cast<int>(image.width);
    height = static_cast<int>(image.height);
    return rgb;
}

}  // namespace wsod
