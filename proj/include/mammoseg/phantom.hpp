#pragma once

#include <array>
#include <string>

#include "mammoseg/image.hpp"
#include "mammoseg/rng.hpp"

namespace mammoseg {

/// Synthetic dataset plan. Class order follows ShapeLabel:
/// irregular, lobular, oval, round.
struct PhantomSpec {
  int image_size = 256;
  double contrast = 0.35;     // tumor-to-background intensity lift, (0,1]
  double noise_sigma = 0.05;  // additive Gaussian noise
  std::array<int, 4> class_counts{50, 50, 50, 50};
  std::uint64_t seed = 1234;

  void validate() const;
};

// Rasterized ground-truth shape for one class, centered within the middle
// third of the image. Identical (label, size, rng) always yields the same
// mask.
BinaryMask sample_shape_mask(int label, int size, Rng& rng);

// Low-frequency background in [0.3, 0.6], tumor interior lifted by the
// contrast with a 2-px blurred boundary, additive noise, clamped to [0,1].
GrayImage render_phantom_roi(const BinaryMask& mask, const PhantomSpec& spec, Rng& rng);

struct PhantomSample {
  GrayImage roi;
  BinaryMask mask;
  int label = 0;
};

// Sample index `index` of the dataset; randomness derives from
// hash(spec.seed, index) so samples can be generated independently.
PhantomSample make_phantom_sample(const PhantomSpec& spec, int label, std::uint64_t index);

// Writes <out_dir>/images/*.pgm, masks/*.pgm, labels.csv and manifest.json.
// Regeneration with the same spec is byte-identical.
void generate_phantom_dataset(const PhantomSpec& spec, const std::string& out_dir);

// Shape statistics (used to verify the class geometry separates).
double mask_area(const BinaryMask& mask);
double mask_perimeter(const BinaryMask& mask);  // marching-squares contour length
double circularity(const BinaryMask& mask);     // 4*pi*A / P^2

}  // namespace mammoseg
