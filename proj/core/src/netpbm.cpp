#include "dssl/netpbm.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>

#include "dssl/errors.hpp"

namespace dssl {
namespace fs = std::filesystem;

namespace {

class HeaderReader {
 public:
  HeaderReader(std::span<const unsigned char> bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  std::size_t next_uint() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("malformed header");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > (1u << 24)) fail("header value too large");
      ++pos_;
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("malformed header");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(name_ + ": " + what); }

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

  std::span<const unsigned char> bytes_;
  const std::string& name_;
  std::size_t pos_ = 2;
};

bool is_image_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path()))) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

}  // namespace

Frame parse_netpbm(std::span<const unsigned char> bytes, const std::string& name) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw ParseError(name + ": not a Netpbm file");
  std::size_t channels = 0;
  if (bytes[1] == '5') {
    channels = 1;
  } else if (bytes[1] == '6') {
    channels = 3;
  } else {
    throw ParseError(name + ": unsupported Netpbm format P" + std::string(1, static_cast<char>(bytes[1])) +
                     " (only binary P5/P6)");
  }
  HeaderReader reader(bytes, name);
  const std::size_t width = reader.next_uint();
  const std::size_t height = reader.next_uint();
  const std::size_t maxval = reader.next_uint();
  if (width == 0 || height == 0) reader.fail("zero image extent");
  if (maxval != 255) reader.fail("unsupported maxval " + std::to_string(maxval) + " (expected 255)");
  const std::size_t start = reader.raster_start();
  const std::size_t needed = width * height * channels;
  if (bytes.size() < start + needed) {
    reader.fail("short pixel data: " + std::to_string(bytes.size() - std::min(bytes.size(), start)) + " of " +
                std::to_string(needed) + " bytes");
  }
  Frame f(channels, height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        f.at(c, y, x) = static_cast<double>(bytes[start + (y * width + x) * channels + c]) / 255.0;
      }
    }
  }
  return f;
}

Frame read_netpbm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_netpbm(bytes, path.string());
}

ImageDirectory load_image_directory(const fs::path& dir, std::size_t height, std::size_t width) {
  if (!fs::is_directory(dir)) throw ParseError(dir.string() + ": not a directory");
  ImageDirectory out;
  auto load_into = [&](const fs::path& p, int label) {
    Frame f = read_netpbm(p);
    out.frames.push_back(crop_resize(f, CropBox{0, 0, f.height(), f.width()}, height, width));
    out.files.push_back(p.string());
    if (label >= 0) out.labels.push_back(label);
  };
  for (const auto& p : sorted_entries(dir, false)) load_into(p, -1);
  const auto classes = sorted_entries(dir, true);
  if (!classes.empty() && out.frames.empty()) {
    for (std::size_t c = 0; c < classes.size(); ++c) {
      out.class_names.push_back(classes[c].filename().string());
      for (const auto& p : sorted_entries(classes[c], false)) load_into(p, static_cast<int>(c));
    }
  }
  return out;
}

}  // namespace dssl
