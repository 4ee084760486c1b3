#include "mammoseg/image.hpp"

#include <algorithm>
#include <cmath>

namespace mammoseg {
namespace {

// Mirror with edge repeat: -1 -> 0, -2 -> 1, n -> n-1.
int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

void box_check(const BoundingBox& b, int img_w, int img_h) {
  if (b.width <= 0 || b.height <= 0) throw ContractError("bounding box extents must be positive");
  const int x0 = b.center_x - b.width / 2;
  const int y0 = b.center_y - b.height / 2;
  if (x0 >= img_w || y0 >= img_h || x0 + b.width <= 0 || y0 + b.height <= 0)
    throw ContractError("bounding box does not intersect the image");
}

template <typename Img, typename Value>
Img resize_bilinear_impl(const Img& in, int out_w, int out_h, Value quantize) {
  if (out_w < 1 || out_h < 1) throw ContractError("resize extents must be >= 1");
  Img out(out_w, out_h);
  const double sx = double(in.width) / out_w;
  const double sy = double(in.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, double(in.height - 1));
    const int y0 = int(fy);
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, double(in.width - 1));
      const int x0 = int(fx);
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - x0;
      const double v = (1 - wy) * ((1 - wx) * in.at(x0, y0) + wx * in.at(x1, y0)) +
                       wy * ((1 - wx) * in.at(x0, y1) + wx * in.at(x1, y1));
      out.at(x, y) = quantize(v);
    }
  }
  return out;
}

// Running min/max over k consecutive samples per row/column; positions
// outside the raster read as `fill`.
enum class Reduce { min_of, max_of };

BinaryMask window_pass(const BinaryMask& in, int k, int anchor, bool horizontal, Reduce op) {
  BinaryMask out(in.width, in.height);
  const int n_outer = horizontal ? in.height : in.width;
  const int n_inner = horizontal ? in.width : in.height;
  for (int o = 0; o < n_outer; ++o) {
    for (int i = 0; i < n_inner; ++i) {
      std::uint8_t acc = op == Reduce::min_of ? 1 : 0;
      for (int d = 0; d < k; ++d) {
        const int j = i - anchor + d;
        std::uint8_t v = 0;
        if (j >= 0 && j < n_inner) v = horizontal ? in.at(j, o) : in.at(o, j);
        if (op == Reduce::min_of)
          acc = std::min(acc, v);
        else
          acc = std::max(acc, v);
      }
      if (horizontal)
        out.at(i, o) = acc;
      else
        out.at(o, i) = acc;
    }
  }
  return out;
}

BinaryMask square_morph(const BinaryMask& in, int k, int anchor, Reduce op) {
  return window_pass(window_pass(in, k, anchor, true, op), k, anchor, false, op);
}

}  // namespace

GrayImage gaussian_smooth(const GrayImage& img, double sigma) {
  if (!(sigma > 0.0)) throw ContractError("gaussian sigma must be positive");
  const int radius = std::max(1, int(std::floor(3.0 * sigma)));
  std::vector<double> kernel(std::size_t(2 * radius + 1));
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[std::size_t(i + radius)] = std::exp(-(double(i) * i) / (2.0 * sigma * sigma));
    s += kernel[std::size_t(i + radius)];
  }
  for (double& kv : kernel) kv /= s;

  GrayImage tmp(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[std::size_t(i + radius)] * img.at(reflect(x + i, img.width), y);
      tmp.at(x, y) = acc;
    }
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[std::size_t(i + radius)] * tmp.at(x, reflect(y + i, img.height));
      out.at(x, y) = std::clamp(acc, 0.0, 1.0);
    }
  return out;
}

GrayImage equalize_histogram(const GrayImage& img, int bins) {
  if (bins < 2) throw ContractError("histogram equalization needs at least 2 bins");
  std::vector<std::int64_t> hist(std::size_t(bins), 0);
  auto level = [&](double v) {
    int idx = int(std::floor(v * bins));
    return std::clamp(idx, 0, bins - 1);
  };
  for (double v : img.values) ++hist[std::size_t(level(v))];

  int lo = 0, hi = bins - 1;
  while (lo < bins && hist[std::size_t(lo)] == 0) ++lo;
  while (hi >= 0 && hist[std::size_t(hi)] == 0) --hi;
  GrayImage out(img.width, img.height);
  if (lo >= hi) return out;  // single occupied level: degenerate CDF maps to 0

  std::vector<double> cdf(std::size_t(bins), 0.0);
  const double total = double(img.values.size());
  std::int64_t run = 0;
  for (int i = 0; i < bins; ++i) {
    run += hist[std::size_t(i)];
    cdf[std::size_t(i)] = double(run) / total;
  }
  for (std::size_t i = 0; i < img.values.size(); ++i)
    out.values[i] = cdf[std::size_t(level(img.values[i]))];
  return out;
}

GrayImage resize_bilinear(const GrayImage& img, int out_w, int out_h) {
  return resize_bilinear_impl(img, out_w, out_h,
                              [](double v) { return std::clamp(v, 0.0, 1.0); });
}

BinaryMask resize_bilinear(const BinaryMask& mask, int out_w, int out_h) {
  return resize_bilinear_impl(mask, out_w, out_h,
                              [](double v) { return std::uint8_t(v >= 0.5 ? 1 : 0); });
}

BoundingBox loose_frame_from_tight(const BoundingBox& tight, int img_w, int img_h) {
  box_check(tight, img_w, img_h);
  const int w2 = std::min(2 * tight.width, img_w);
  const int h2 = std::min(2 * tight.height, img_h);
  int x0 = std::clamp(tight.center_x - w2 / 2, 0, img_w - w2);
  int y0 = std::clamp(tight.center_y - h2 / 2, 0, img_h - h2);
  return BoundingBox{x0 + w2 / 2, y0 + h2 / 2, w2, h2};
}

namespace {

template <typename Img>
Img crop_impl(const Img& in, const BoundingBox& box) {
  box_check(box, in.width, in.height);
  const int x0 = std::max(0, box.center_x - box.width / 2);
  const int y0 = std::max(0, box.center_y - box.height / 2);
  const int x1 = std::min(in.width, box.center_x - box.width / 2 + box.width);
  const int y1 = std::min(in.height, box.center_y - box.height / 2 + box.height);
  Img out(x1 - x0, y1 - y0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) out.at(x - x0, y - y0) = in.at(x, y);
  return out;
}

}  // namespace

GrayImage crop(const GrayImage& img, const BoundingBox& box) { return crop_impl(img, box); }
BinaryMask crop(const BinaryMask& mask, const BoundingBox& box) { return crop_impl(mask, box); }

BinaryMask dilate3(const BinaryMask& mask) { return square_morph(mask, 3, 1, Reduce::max_of); }
BinaryMask erode3(const BinaryMask& mask) { return square_morph(mask, 3, 1, Reduce::min_of); }
BinaryMask erode2_topleft(const BinaryMask& mask) {
  return square_morph(mask, 2, 0, Reduce::min_of);
}

BinaryMask morph_cleanup(const BinaryMask& mask) {
  for (std::uint8_t v : mask.values)
    if (v > 1) throw ContractError("morph_cleanup input must be two-valued");
  return dilate3(erode2_topleft(erode3(dilate3(mask))));
}

}  // namespace mammoseg
