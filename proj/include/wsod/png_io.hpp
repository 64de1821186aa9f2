#pragma once

#include <string>
#include <vector>

namespace wsod {

/// 8-bit RGB PNG write; pixels row-major, 3 bytes per pixel.
void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<unsigned char>& rgb);

/// Read an RGB PNG written by write_png_rgb (or any PNG, converted to RGB8).
std::vector<unsigned char> read_png_rgb(const std::string& path, int& width, int& height);

}  // namespace wsod
