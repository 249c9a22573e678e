#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dssl/augment.hpp"

namespace dssl {

// Binary P5 (grayscale) or P6 (RGB) with maxval 255; pixels scaled by 1/255.
Frame parse_netpbm(std::span<const unsigned char> bytes, const std::string& name);
Frame read_netpbm(const std::filesystem::path& path);

struct ImageDirectory {
  std::vector<Frame> frames;
  std::vector<std::string> files;
  // Filled when images live in per-class subdirectories; class index = sorted subdirectory rank.
  std::vector<int> labels;
  std::vector<std::string> class_names;
};

// Loads *.pgm / *.ppm / *.pnm in lexicographic order, resized to height×width.
ImageDirectory load_image_directory(const std::filesystem::path& dir, std::size_t height, std::size_t width);

}  // namespace dssl
