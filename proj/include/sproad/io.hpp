#pragma once

// Raster file formats: 8-bit PNG, binary PPM (P6) and PGM (P5, 8 or 16 bit),
// the native {0,128,255} mask encoding and the KITTI colour ground truth.

#include <png.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "sproad/error.hpp"
#include "sproad/grid.hpp"
#include "sproad/image.hpp"

namespace sproad::imaging {

namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return bytes;
}

// Writes through a sibling temporary and renames it into place.
inline void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      fs::remove(tmp, ignored);
      throw IoError("write failure on '" + path.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move temporary file onto '" + path.string() + "'");
  }
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline std::string lower_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

namespace detail {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

inline bool is_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0;
}

struct PngHeader {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  int bit_depth = 0;
  int color_type = 0;
};

inline PngHeader png_header(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (bytes.size() < 33 || std::memcmp(bytes.data() + 12, "IHDR", 4) != 0)
    throw FormatError("'" + name + "': truncated PNG header");
  auto be32 = [&](std::size_t at) {
    return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
           (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
  };
  PngHeader h;
  h.width = be32(16);
  h.height = be32(20);
  h.bit_depth = bytes[24];
  h.color_type = bytes[25];
  return h;
}

// Decodes to 8-bit channels of the requested layout (PNG_FORMAT_*).
inline std::vector<std::uint8_t> decode_png(std::span<const std::uint8_t> bytes, const std::string& name,
                                            std::uint32_t format, int& width, int& height) {
  const PngHeader h = png_header(bytes, name);
  if (h.bit_depth != 8 && h.color_type != PNG_COLOR_TYPE_PALETTE)
    throw FormatError("'" + name + "': unsupported PNG bit depth " + std::to_string(h.bit_depth) +
                      " (only 8-bit images are supported)");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw FormatError("'" + name + "': " + img.message);
  img.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw FormatError("'" + name + "': " + msg);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return pixels;
}

inline std::vector<std::uint8_t> encode_png(const std::uint8_t* pixels, int width, int height, std::uint32_t format,
                                            const std::string& name) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels, 0, nullptr))
    throw IoError("'" + name + "': PNG encoding failed: " + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels, 0, nullptr))
    throw IoError("'" + name + "': PNG encoding failed: " + img.message);
  out.resize(size);
  return out;
}

// Netpbm header tokenizer: whitespace separated, '#' starts a comment.
class PnmReader {
 public:
  PnmReader(std::span<const std::uint8_t> bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::string magic() {
    if (bytes_.size() < 2) throw FormatError("'" + name_ + "': truncated netpbm header");
    pos_ = 2;
    return std::string{static_cast<char>(bytes_[0]), static_cast<char>(bytes_[1])};
  }

  unsigned long number(const char* field) {
    skip_space_and_comments();
    unsigned long value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 0xFFFFFFul) throw FormatError("'" + name_ + "': " + field + " out of range");
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw FormatError("'" + name_ + "': truncated netpbm header (missing " + field + ")");
    return value;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::span<const std::uint8_t> raster(std::size_t expected) {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw FormatError("'" + name_ + "': truncated netpbm header");
    ++pos_;
    if (bytes_.size() - pos_ < expected) throw FormatError("'" + name_ + "': truncated netpbm raster");
    return bytes_.subspan(pos_, expected);
  }

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
  std::string name_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> pnm_header(const char* magic, int width, int height, int maxval) {
  const std::string h = std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n" +
                        std::to_string(maxval) + "\n";
  return {h.begin(), h.end()};
}

struct Gray8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;
};

inline Gray8 decode_pgm8(std::span<const std::uint8_t> bytes, const std::string& name) {
  PnmReader reader(bytes, name);
  if (reader.magic() != "P5") throw FormatError("'" + name + "': not a binary PGM (P5) file");
  Gray8 g;
  g.width = static_cast<int>(reader.number("width"));
  g.height = static_cast<int>(reader.number("height"));
  const unsigned long maxval = reader.number("maxval");
  if (maxval != 255) throw FormatError("'" + name + "': unsupported PGM maxval " + std::to_string(maxval) + " (need 255)");
  if (g.width <= 0 || g.height <= 0) throw FormatError("'" + name + "': empty image");
  auto raster = reader.raster(static_cast<std::size_t>(g.width) * g.height);
  g.values.assign(raster.begin(), raster.end());
  return g;
}

// Reads an 8-bit single-channel raster from PGM or PNG. Colour PNGs are
// accepted only when every pixel is achromatic.
inline Gray8 read_gray8(const fs::path& path) {
  const auto bytes = read_file(path);
  const std::string name = path.string();
  if (is_png(bytes)) {
    Gray8 g;
    const PngHeader h = png_header(bytes, name);
    if (h.color_type == PNG_COLOR_TYPE_GRAY) {
      g.values = decode_png(bytes, name, PNG_FORMAT_GRAY, g.width, g.height);
      return g;
    }
    if (h.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      auto ga = decode_png(bytes, name, PNG_FORMAT_GA, g.width, g.height);
      g.values.resize(ga.size() / 2);
      for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = ga[2 * i];
      return g;
    }
    auto rgba = decode_png(bytes, name, PNG_FORMAT_RGBA, g.width, g.height);
    g.values.resize(static_cast<std::size_t>(g.width) * g.height);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      const std::uint8_t* p = &rgba[4 * i];
      if (p[0] != p[1] || p[1] != p[2]) throw FormatError("'" + name + "': expected a grayscale image");
      g.values[i] = p[0];
    }
    return g;
  }
  return decode_pgm8(bytes, name);
}

inline void write_gray8(const fs::path& path, int width, int height, std::span<const std::uint8_t> values) {
  std::vector<std::uint8_t> out;
  if (lower_extension(path) == ".png") {
    out = encode_png(values.data(), width, height, PNG_FORMAT_GRAY, path.string());
  } else {
    out = pnm_header("P5", width, height, 255);
    out.insert(out.end(), values.begin(), values.end());
  }
  write_file_atomic(path, out);
}

}  // namespace detail

// Decodes PNG (8-bit, alpha dropped), binary PPM or 8-bit PGM. Gray inputs
// are replicated into three channels.
inline Image decode_image(std::span<const std::uint8_t> bytes, const std::string& name) {
  Image image;
  if (detail::is_png(bytes)) {
    const auto h = detail::png_header(bytes, name);
    const bool gray = h.color_type == PNG_COLOR_TYPE_GRAY || h.color_type == PNG_COLOR_TYPE_GRAY_ALPHA;
    // Alpha is decoded alongside the colour samples and dropped here.
    const std::uint32_t format = gray ? PNG_FORMAT_GA : PNG_FORMAT_RGBA;
    const std::size_t stride = gray ? 2 : 4;
    auto pixels = detail::decode_png(bytes, name, format, image.width, image.height);
    image.data.resize(image.pixel_count() * 3);
    for (std::size_t i = 0; i < image.pixel_count(); ++i) {
      for (int k = 0; k < 3; ++k) image.data[3 * i + k] = pixels[stride * i + (gray ? 0 : k)];
    }
    return image;
  }
  detail::PnmReader reader(bytes, name);
  const std::string magic = reader.magic();
  if (magic != "P6" && magic != "P5") throw FormatError("'" + name + "': unrecognised image format");
  image.width = static_cast<int>(reader.number("width"));
  image.height = static_cast<int>(reader.number("height"));
  const unsigned long maxval = reader.number("maxval");
  if (maxval != 255)
    throw FormatError("'" + name + "': unsupported bit depth (maxval " + std::to_string(maxval) + ", need 255)");
  if (image.width <= 0 || image.height <= 0) throw FormatError("'" + name + "': empty image");
  const std::size_t n = image.pixel_count();
  if (magic == "P6") {
    auto raster = reader.raster(n * 3);
    image.data.assign(raster.begin(), raster.end());
  } else {
    auto raster = reader.raster(n);
    image.data.resize(n * 3);
    for (std::size_t i = 0; i < n; ++i) image.data[3 * i] = image.data[3 * i + 1] = image.data[3 * i + 2] = raster[i];
  }
  return image;
}

inline Image load_image(const fs::path& path) { return decode_image(read_file(path), path.string()); }

// PNG when the extension is .png, binary PPM otherwise.
inline void save_image(const Image& image, const fs::path& path) {
  std::vector<std::uint8_t> out;
  if (lower_extension(path) == ".png") {
    out = detail::encode_png(image.data.data(), image.width, image.height, PNG_FORMAT_RGB, path.string());
  } else {
    out = detail::pnm_header("P6", image.width, image.height, 255);
    out.insert(out.end(), image.data.begin(), image.data.end());
  }
  write_file_atomic(path, out);
}

// True when the file is a PNG whose colour type carries chroma.
inline bool is_color_png(const fs::path& path) {
  const auto bytes = read_file(path);
  if (!detail::is_png(bytes)) return false;
  const int ct = detail::png_header(bytes, path.string()).color_type;
  return ct == PNG_COLOR_TYPE_RGB || ct == PNG_COLOR_TYPE_RGB_ALPHA || ct == PNG_COLOR_TYPE_PALETTE;
}

// KITTI road ground truth: magenta is road, red is non-road, anything else
// is unlabeled and excluded from scoring.
inline LabelMap kitti_labels(const Image& gt) {
  LabelMap map(gt.width, gt.height);
  for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
    const Rgb p = gt.pixel(i);
    if (p == Rgb{255, 0, 255}) {
      map.labels[i] = Label::Road;
      map.valid[i] = 1;
    } else if (p == Rgb{255, 0, 0}) {
      map.labels[i] = Label::NonRoad;
      map.valid[i] = 1;
    } else {
      map.labels[i] = Label::Unlabeled;
      map.valid[i] = 0;
    }
  }
  return map;
}

inline LabelMap load_kitti_gt(const fs::path& path) { return kitti_labels(load_image(path)); }

// Native mask encoding: 0 non-road, 255 road, 128 unlabeled.
inline LabelMap load_mask(const fs::path& path) {
  const detail::Gray8 g = detail::read_gray8(path);
  LabelMap map(g.width, g.height);
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    switch (g.values[i]) {
      case 0: map.labels[i] = Label::NonRoad; map.valid[i] = 1; break;
      case 255: map.labels[i] = Label::Road; map.valid[i] = 1; break;
      case 128: map.labels[i] = Label::Unlabeled; map.valid[i] = 0; break;
      default:
        throw FormatError("'" + path.string() + "': mask value " + std::to_string(g.values[i]) +
                          " is not one of 0, 128, 255");
    }
  }
  return map;
}

inline void save_mask(const LabelMap& map, const fs::path& path) {
  std::vector<std::uint8_t> values(map.pixel_count());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = map.labels[i] == Label::Road ? 255 : map.labels[i] == Label::NonRoad ? 0 : 128;
  }
  detail::write_gray8(path, map.width, map.height, values);
}

// Mask (.pgm / grayscale .png) or KITTI colour ground truth, by content.
inline LabelMap load_ground_truth(const fs::path& path) {
  return is_color_png(path) ? load_kitti_gt(path) : load_mask(path);
}

// 16-bit P5 with maxval 65535, big-endian samples.
inline void save_pgm16(const fs::path& path, int width, int height, std::span<const std::uint16_t> values) {
  auto out = detail::pnm_header("P5", width, height, 65535);
  out.reserve(out.size() + values.size() * 2);
  for (std::uint16_t v : values) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  write_file_atomic(path, out);
}

inline Grid<std::uint16_t> load_pgm16(const fs::path& path) {
  const auto bytes = read_file(path);
  detail::PnmReader reader(bytes, path.string());
  if (reader.magic() != "P5") throw FormatError("'" + path.string() + "': not a binary PGM (P5) file");
  const int width = static_cast<int>(reader.number("width"));
  const int height = static_cast<int>(reader.number("height"));
  const unsigned long maxval = reader.number("maxval");
  if (maxval != 65535) throw FormatError("'" + path.string() + "': expected a 16-bit PGM (maxval 65535)");
  if (width <= 0 || height <= 0) throw FormatError("'" + path.string() + "': empty image");
  auto raster = reader.raster(static_cast<std::size_t>(width) * height * 2);
  Grid<std::uint16_t> grid(height, width, 1);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid.values()[i] = static_cast<std::uint16_t>((raster[2 * i] << 8) | raster[2 * i + 1]);
  }
  return grid;
}

// Probability maps are stored as 16-bit PGM with value / 65535.
inline void save_probability_map(const fs::path& path, const Grid<double>& prob) {
  std::vector<std::uint16_t> q(prob.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double p = std::clamp(prob.values()[i], 0.0, 1.0);
    q[i] = static_cast<std::uint16_t>(p * 65535.0 + 0.5);
  }
  save_pgm16(path, prob.cols(), prob.rows(), q);
}

inline Grid<double> load_probability_map(const fs::path& path) {
  const auto q = load_pgm16(path);
  Grid<double> prob(q.rows(), q.cols(), 1);
  for (std::size_t i = 0; i < q.size(); ++i) prob.values()[i] = q.values()[i] / 65535.0;
  return prob;
}

}  // namespace sproad::imaging
