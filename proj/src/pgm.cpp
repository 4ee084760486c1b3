#include "mammoseg/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

namespace mammoseg {
namespace {

struct Cursor {
  const std::vector<unsigned char>& bytes;
  std::size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }
  unsigned char peek() const { return bytes[pos]; }

  void skip_space_and_comments() {
    while (!eof()) {
      unsigned char c = peek();
      if (c == '#') {
        while (!eof() && peek() != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        return;
      }
    }
  }

  long parse_int(const char* what) {
    skip_space_and_comments();
    if (eof() || peek() < '0' || peek() > '9')
      throw ParseError(std::string("expected ") + what, pos);
    long v = 0;
    while (!eof() && peek() >= '0' && peek() <= '9') {
      v = v * 10 + (peek() - '0');
      if (v > 1 << 30) throw ParseError(std::string(what) + " out of range", pos);
      ++pos;
    }
    return v;
  }
};

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path, "cannot open for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  const std::vector<unsigned char> bytes = slurp(path);
  Cursor cur{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    std::string magic = bytes.size() >= 2 ? std::string(bytes.begin(), bytes.begin() + 2) : "";
    throw ParseError("unsupported magic '" + magic + "' (binary P5 required)", 0);
  }
  cur.pos = 2;
  const long w = cur.parse_int("width");
  const long h = cur.parse_int("height");
  const std::size_t maxval_at = cur.pos;
  const long maxval = cur.parse_int("maxval");
  if (w < 1 || h < 1) throw ParseError("image extents must be positive", maxval_at);
  if (maxval != 255 && maxval != 65535)
    throw ParseError("maxval must be 255 or 65535, got " + std::to_string(maxval), maxval_at);
  if (cur.eof()) throw ParseError("missing whitespace after maxval", cur.pos);
  ++cur.pos;  // exactly one whitespace byte before the payload

  const std::size_t pixels = std::size_t(w) * std::size_t(h);
  const std::size_t need = pixels * (maxval == 255 ? 1 : 2);
  if (bytes.size() - cur.pos < need)
    throw ParseError("truncated payload: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - cur.pos),
                     bytes.size());

  GrayImage img(static_cast<int>(w), static_cast<int>(h));
  const unsigned char* p = bytes.data() + cur.pos;
  if (maxval == 255) {
    for (std::size_t i = 0; i < pixels; ++i) img.values[i] = double(p[i]) / 255.0;
  } else {
    for (std::size_t i = 0; i < pixels; ++i) {
      unsigned v = (unsigned(p[2 * i]) << 8) | unsigned(p[2 * i + 1]);
      img.values[i] = double(v) / 65535.0;
    }
  }
  return img;
}

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(path, "cannot open for writing");
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(std::size_t(img.width));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double v = std::clamp(img.at(x, y), 0.0, 1.0);
      row[std::size_t(x)] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
    }
    f.write(reinterpret_cast<const char*>(row.data()), img.width);
  }
  if (!f) throw IoError(path, "short write");
}

BinaryMask read_pgm_mask(const std::string& path) {
  GrayImage img = read_pgm(path);
  BinaryMask mask(img.width, img.height);
  for (std::size_t i = 0; i < img.values.size(); ++i)
    mask.values[i] = img.values[i] >= 0.5 ? 1 : 0;
  return mask;
}

void write_pgm_mask(const BinaryMask& mask, const std::string& path) {
  GrayImage img(mask.width, mask.height);
  for (std::size_t i = 0; i < mask.values.size(); ++i)
    img.values[i] = mask.values[i] ? 1.0 : 0.0;
  write_pgm(img, path);
}

}  // namespace mammoseg
