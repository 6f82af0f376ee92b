#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "metricgrids/errors.hpp"
#include "metricgrids/signals.hpp"

namespace metricgrids {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const void* data,
                std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

unsigned char quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::round(c * 255.0f));
}

ImageField decode_png(const std::vector<unsigned char>& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("malformed PNG: " + msg, 8);
  }
  const png_uint_32 fmt = image.format;
  if (fmt & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw FormatError("unsupported PNG bit depth (16-bit)", 24);
  }
  if (fmt & PNG_FORMAT_FLAG_ALPHA) {
    png_image_free(&image);
    throw FormatError("unsupported PNG color type (alpha channel)", 25);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("corrupt PNG data: " + msg, 33);
  }
  ImageField f(static_cast<int>(image.width), static_cast<int>(image.height));
  std::transform(rgb.begin(), rgb.end(), f.data.begin(),
                 [](unsigned char v) { return float(v) / 255.0f; });
  return f;
}

// P6 reader with byte offsets in every error.
ImageField decode_ppm(const std::vector<unsigned char>& bytes) {
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1 << 24)) throw FormatError(std::string("PPM ") + what + " too large", (long long)start);
      ++pos;
    }
    if (pos == start) {
      throw FormatError(std::string("PPM header: expected ") + what, (long long)pos);
    }
    return static_cast<int>(v);
  };
  const int w = read_int("width");
  const int h = read_int("height");
  const std::size_t maxval_pos = pos;
  const int maxval = read_int("maxval");
  if (maxval != 255) {
    throw FormatError("unsupported PPM maxval " + std::to_string(maxval) +
                          " (only 8-bit supported)",
                      (long long)maxval_pos);
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError("PPM header: missing separator before raster", (long long)pos);
  }
  ++pos;
  if (w <= 0 || h <= 0) throw FormatError("PPM has empty dimensions", 2);
  const std::size_t need = std::size_t(w) * std::size_t(h) * 3;
  if (bytes.size() - pos < need) {
    throw FormatError("PPM raster truncated", (long long)bytes.size());
  }
  ImageField f(w, h);
  for (std::size_t k = 0; k < need; ++k) f.data[k] = float(bytes[pos + k]) / 255.0f;
  return f;
}

void encode_png(const std::filesystem::path& path, int width, int height,
                const std::vector<unsigned char>& pixels, bool gray) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0,
                                 nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<unsigned char> buffer(size);
  if (!png_image_write_to_memory(&image, buffer.data(), &size, 0, pixels.data(),
                                 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  write_file(path, buffer.data(), size);
}

bool has_extension(const std::filesystem::path& p, const char* ext) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

}  // namespace

ImageField load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  static constexpr unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G',
                                                 '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, bytes.begin())) {
    return decode_png(bytes);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
    return decode_ppm(bytes);
  }
  throw FormatError("'" + path.string() + "' is neither PNG nor binary PPM (bad magic)", 0);
}

void save_image(const ImageField& field, const std::filesystem::path& path) {
  std::vector<unsigned char> px(field.data.size());
  std::transform(field.data.begin(), field.data.end(), px.begin(), quantize);
  if (has_extension(path, ".ppm")) {
    const std::string header = "P6\n" + std::to_string(field.width) + " " +
                               std::to_string(field.height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.insert(out.end(), px.begin(), px.end());
    write_file(path, out.data(), out.size());
    return;
  }
  encode_png(path, field.width, field.height, px, false);
}

void save_gray_png(int width, int height, const std::vector<float>& values,
                   const std::filesystem::path& path) {
  if (values.size() != std::size_t(width) * std::size_t(height)) {
    throw ShapeError("save_gray_png: value count does not match dimensions");
  }
  std::vector<unsigned char> px(values.size());
  std::transform(values.begin(), values.end(), px.begin(), quantize);
  encode_png(path, width, height, px, true);
}

}  // namespace metricgrids
