#pragma once

#include <cstdint>
#include <vector>

#include "mammoseg/error.hpp"

namespace mammoseg {

/// Grayscale raster, row-major, values in [0,1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  GrayImage() = default;
  GrayImage(int w, int h) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw ContractError("image extents must be positive");
    values.assign(std::size_t(w) * std::size_t(h), 0.0);
  }
  double at(int x, int y) const { return values[std::size_t(y) * width + x]; }
  double& at(int x, int y) { return values[std::size_t(y) * width + x]; }
};

/// Two-valued raster, row-major, values in {0,1}.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw ContractError("mask extents must be positive");
    values.assign(std::size_t(w) * std::size_t(h), 0);
  }
  std::uint8_t at(int x, int y) const { return values[std::size_t(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return values[std::size_t(y) * width + x]; }
};

/// Center-anchored crop frame in pixel coordinates.
struct BoundingBox {
  int center_x = 0;
  int center_y = 0;
  int width = 0;
  int height = 0;
};

// Separable Gaussian, kernel radius max(1, floor(3*sigma)) (3x3 at the
// default sigma 0.5), weights normalized to sum 1, mirrored edges.
GrayImage gaussian_smooth(const GrayImage& img, double sigma = 0.5);

// CDF remapping over `bins` levels; a single-level image maps to all zeros.
GrayImage equalize_histogram(const GrayImage& img, int bins = 256);

// Bilinear with half-pixel centers. The mask overload re-thresholds the
// interpolated values at 0.5 to stay two-valued.
GrayImage resize_bilinear(const GrayImage& img, int out_w, int out_h);
BinaryMask resize_bilinear(const BinaryMask& mask, int out_w, int out_h);

// Same center, doubled extents, clipped to the image; clipping shifts the
// center just enough to keep the doubled size when it fits.
BoundingBox loose_frame_from_tight(const BoundingBox& tight, int img_w, int img_h);

// Intersection of the frame with the image.
GrayImage crop(const GrayImage& img, const BoundingBox& box);
BinaryMask crop(const BinaryMask& mask, const BoundingBox& box);

// 3x3 closing, 2x2 erosion (anchor at the window's top-left), 3x3 dilation.
// Out-of-image neighborhood counts as background.
BinaryMask morph_cleanup(const BinaryMask& mask);

// Square structuring elements; 3x3 variants are center-anchored.
BinaryMask dilate3(const BinaryMask& mask);
BinaryMask erode3(const BinaryMask& mask);
BinaryMask erode2_topleft(const BinaryMask& mask);

}  // namespace mammoseg
