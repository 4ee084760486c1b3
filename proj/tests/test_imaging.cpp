#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mammoseg/image.hpp"
#include "mammoseg/pgm.hpp"
#include "mammoseg/rng.hpp"

using namespace mammoseg;

namespace {

GrayImage random_image(Rng& rng, int w, int h) {
  GrayImage img(w, h);
  for (double& v : img.values) v = rng.uniform();
  return img;
}

BinaryMask random_mask(Rng& rng, int w, int h, double p = 0.5) {
  BinaryMask m(w, h);
  for (auto& v : m.values) v = rng.uniform() < p ? 1 : 0;
  return m;
}

// Direct per-definition morphology: scan the structuring element at every
// pixel, out-of-image positions are background.
BinaryMask naive_morph(const BinaryMask& in, int k, int ax, int ay, bool dilatation) {
  BinaryMask out(in.width, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      std::uint8_t acc = dilatation ? 0 : 1;
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          const int sx = x - ax + dx, sy = y - ay + dy;
          std::uint8_t v = 0;
          if (sx >= 0 && sx < in.width && sy >= 0 && sy < in.height) v = in.at(sx, sy);
          if (dilatation)
            acc = std::max(acc, v);
          else
            acc = std::min(acc, v);
        }
      out.at(x, y) = acc;
    }
  return out;
}

BinaryMask naive_cleanup(const BinaryMask& m) {
  BinaryMask r = naive_morph(m, 3, 1, 1, true);    // closing: dilation...
  r = naive_morph(r, 3, 1, 1, false);              // ...then erosion
  r = naive_morph(r, 2, 0, 0, false);              // 2x2 erosion, top-left anchor
  return naive_morph(r, 3, 1, 1, true);            // 3x3 dilation
}

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "mammoseg_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("gaussian smoothing") {
  SUBCASE("constant image is unchanged") {
    GrayImage img(9, 7);
    for (double& v : img.values) v = 0.42;
    GrayImage out = gaussian_smooth(img, 0.5);
    for (double v : out.values) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));
  }
  SUBCASE("impulse response is the normalized kernel") {
    GrayImage img(11, 11);
    img.at(5, 5) = 1.0;
    GrayImage out = gaussian_smooth(img, 0.5);
    double s = 0;
    for (double v : out.values) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-9);
    // center weight of the normalized 3x3 kernel at sigma 0.5:
    // (1 / (1 + 2 exp(-2)))^2
    const double c1 = 1.0 / (1.0 + 2.0 * std::exp(-2.0));
    CHECK(out.at(5, 5) == doctest::Approx(c1 * c1).epsilon(1e-9));
    CHECK(out.at(5, 5) == doctest::Approx(0.6193).epsilon(1e-4));
    // support is 3x3: nothing two pixels away
    CHECK(out.at(3, 5) == 0.0);
    CHECK(out.at(5, 3) == 0.0);
  }
  SUBCASE("sigma must be positive") {
    GrayImage img(4, 4);
    CHECK_THROWS_AS(gaussian_smooth(img, 0.0), ContractError);
  }
}

TEST_CASE("histogram equalization") {
  SUBCASE("constant image maps to zero") {
    GrayImage img(8, 8);
    for (double& v : img.values) v = 0.7;
    GrayImage out = equalize_histogram(img);
    for (double v : out.values) CHECK(v == 0.0);
  }
  SUBCASE("uniform histogram is near-identity") {
    GrayImage img(16, 16);  // exactly one pixel per level
    for (int i = 0; i < 256; ++i) img.values[std::size_t(i)] = (i + 0.5) / 256.0;
    GrayImage out = equalize_histogram(img, 256);
    for (std::size_t i = 0; i < img.values.size(); ++i)
      CHECK(std::abs(out.values[i] - img.values[i]) <= 1.0 / 256.0);
  }
  SUBCASE("two-level image maps to the CDF values") {
    GrayImage img(10, 10);
    for (int i = 0; i < 100; ++i) img.values[std::size_t(i)] = i < 25 ? 0.2 : 0.8;
    GrayImage out = equalize_histogram(img);
    CHECK(out.values[0] == doctest::Approx(0.25));
    CHECK(out.values[99] == doctest::Approx(1.0));
  }
  SUBCASE("monotone in the input levels") {
    Rng rng(3);
    GrayImage img = random_image(rng, 32, 32);
    GrayImage out = equalize_histogram(img);
    for (std::size_t i = 0; i < img.values.size(); ++i)
      for (std::size_t j = 0; j < img.values.size(); j += 97)
        if (img.values[i] <= img.values[j]) CHECK(out.values[i] <= out.values[j]);
  }
}

TEST_CASE("bilinear resize") {
  SUBCASE("same size is the identity") {
    Rng rng(5);
    GrayImage img = random_image(rng, 13, 9);
    GrayImage out = resize_bilinear(img, 13, 9);
    for (std::size_t i = 0; i < img.values.size(); ++i) CHECK(out.values[i] == img.values[i]);
  }
  SUBCASE("column averages preserved on 2x2 -> 2x1") {
    GrayImage img(2, 2);
    img.at(0, 0) = 0.0;
    img.at(1, 0) = 1.0;
    img.at(0, 1) = 0.0;
    img.at(1, 1) = 1.0;
    GrayImage out = resize_bilinear(img, 2, 1);
    REQUIRE(out.width == 2);
    REQUIRE(out.height == 1);
    CHECK(out.at(0, 0) == doctest::Approx(0.0));
    CHECK(out.at(1, 0) == doctest::Approx(1.0));
  }
  SUBCASE("mask downsampling stays two-valued") {
    Rng rng(6);
    BinaryMask m(256, 256);
    for (int y = 100; y < 180; ++y)
      for (int x = 60; x < 200; ++x) m.at(x, y) = 1;
    BinaryMask out = resize_bilinear(m, 64, 64);
    REQUIRE(out.width == 64);
    REQUIRE(out.height == 64);
    bool has_fg = false;
    for (auto v : out.values) {
      CHECK((v == 0 || v == 1));
      has_fg = has_fg || v == 1;
    }
    CHECK(has_fg);
  }
  SUBCASE("outputs stay within [0,1]") {
    Rng rng(7);
    GrayImage img = random_image(rng, 17, 23);
    for (auto [w, h] : {std::pair{40, 11}, std::pair{5, 64}, std::pair{17, 23}}) {
      GrayImage out = resize_bilinear(img, w, h);
      for (double v : out.values) CHECK((v >= 0.0 && v <= 1.0));
    }
  }
}

TEST_CASE("loose frame from tight") {
  SUBCASE("plain doubling") {
    BoundingBox loose = loose_frame_from_tight({100, 100, 40, 60}, 512, 512);
    CHECK(loose.center_x == 100);
    CHECK(loose.center_y == 100);
    CHECK(loose.width == 80);
    CHECK(loose.height == 120);
  }
  SUBCASE("corner box is clipped inside the image") {
    BoundingBox tight{10, 12, 40, 40};
    BoundingBox loose = loose_frame_from_tight(tight, 256, 256);
    const int x0 = loose.center_x - loose.width / 2;
    const int y0 = loose.center_y - loose.height / 2;
    CHECK(x0 >= 0);
    CHECK(y0 >= 0);
    CHECK(x0 + loose.width <= 256);
    CHECK(y0 + loose.height <= 256);
    CHECK(loose.width * loose.height <= 4 * tight.width * tight.height);
  }
  SUBCASE("doubling then halving recovers the box when unclipped") {
    BoundingBox tight{77, 90, 30, 50};
    BoundingBox loose = loose_frame_from_tight(tight, 512, 512);
    CHECK(loose.width / 2 == tight.width);
    CHECK(loose.height / 2 == tight.height);
    CHECK(loose.center_x == tight.center_x);
    CHECK(loose.center_y == tight.center_y);
  }
  SUBCASE("box outside the image is rejected") {
    CHECK_THROWS_AS(loose_frame_from_tight({600, 600, 10, 10}, 256, 256), ContractError);
  }
}

TEST_CASE("morphological cleanup") {
  SUBCASE("all-zero mask stays empty") {
    BinaryMask m(16, 16);
    BinaryMask out = morph_cleanup(m);
    for (auto v : out.values) CHECK(v == 0);
  }
  SUBCASE("single isolated pixel is removed") {
    BinaryMask m(16, 16);
    m.at(8, 8) = 1;
    BinaryMask out = morph_cleanup(m);
    for (auto v : out.values) CHECK(v == 0);
  }
  SUBCASE("solid square survives within a one-pixel band") {
    BinaryMask m(32, 32);
    for (int y = 6; y < 26; ++y)
      for (int x = 6; x < 26; ++x) m.at(x, y) = 1;
    BinaryMask out = morph_cleanup(m);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const bool inner = x >= 7 && x < 25 && y >= 7 && y < 25;
        const bool outer = x >= 5 && x < 27 && y >= 5 && y < 27;
        if (inner) CHECK(out.at(x, y) == 1);
        if (!outer) CHECK(out.at(x, y) == 0);
      }
  }
  SUBCASE("matches the double-loop oracle exactly on 200 random masks") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      BinaryMask m = random_mask(rng, 32, 32, 0.2 + 0.6 * (trial % 5) / 4.0);
      BinaryMask fast = morph_cleanup(m);
      BinaryMask slow = naive_cleanup(m);
      REQUIRE(fast.values == slow.values);
    }
  }
}

TEST_CASE("pgm round trip") {
  Rng rng(13);
  GrayImage img(31, 17);
  for (double& v : img.values) v = double(rng.below(256)) / 255.0;
  auto path = temp_file("roundtrip.pgm");
  write_pgm(img, path.string());
  GrayImage back = read_pgm(path.string());
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  for (std::size_t i = 0; i < img.values.size(); ++i) CHECK(back.values[i] == img.values[i]);

  // byte-identical on rewrite
  auto path2 = temp_file("roundtrip2.pgm");
  write_pgm(back, path2.string());
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("pgm rejects what it cannot parse") {
  SUBCASE("P6 color file") {
    auto path = temp_file("color.ppm");
    std::ofstream f(path, std::ios::binary);
    f << "P6\n2 2\n255\n";
    f.write("aaabbbcccddd", 12);
    f.close();
    CHECK_THROWS_AS(read_pgm(path.string()), ParseError);
  }
  SUBCASE("truncated payload reports the byte offset") {
    auto path = temp_file("trunc.pgm");
    std::ofstream f(path, std::ios::binary);
    f << "P5\n4 4\n255\n";
    f.write("abc", 3);  // 13 bytes missing
    f.close();
    try {
      read_pgm(path.string());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.byte_offset() == 14);  // 11 header bytes + 3 payload bytes
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
  }
  SUBCASE("unusual maxval is rejected") {
    auto path = temp_file("maxval.pgm");
    std::ofstream f(path, std::ios::binary);
    f << "P5\n1 1\n128\n";
    f.put('\x40');
    f.close();
    CHECK_THROWS_AS(read_pgm(path.string()), ParseError);
  }
  SUBCASE("missing file is an IoError") {
    CHECK_THROWS_AS(read_pgm("/nonexistent/nope.pgm"), IoError);
  }
}

TEST_CASE("pgm 16-bit scaling") {
  auto path = temp_file("wide.pgm");
  std::ofstream f(path, std::ios::binary);
  f << "P5\n1 1\n65535\n";
  f.put('\x80');  // big-endian 0x8000 = 32768
  f.put('\x00');
  f.close();
  GrayImage img = read_pgm(path.string());
  CHECK(img.values[0] == doctest::Approx(32768.0 / 65535.0).epsilon(1e-12));
  CHECK(img.values[0] == doctest::Approx(0.50000763).epsilon(1e-7));
}

TEST_CASE("mask pgm encodes as 0/255") {
  Rng rng(17);
  BinaryMask m = random_mask(rng, 9, 9);
  auto path = temp_file("mask.pgm");
  write_pgm_mask(m, path.string());
  GrayImage raw = read_pgm(path.string());
  for (std::size_t i = 0; i < m.values.size(); ++i)
    CHECK(raw.values[i] == (m.values[i] ? 1.0 : 0.0));
  BinaryMask back = read_pgm_mask(path.string());
  CHECK(back.values == m.values);
}
