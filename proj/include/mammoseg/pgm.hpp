#pragma once

#include <string>

#include "mammoseg/image.hpp"

namespace mammoseg {

// Binary PGM (P5), maxval 255 or 65535 (16-bit payloads are big-endian per
// the format). Values scale to [0,1] on read; writes emit maxval 255 with
// round-half-up quantization, so write-then-read of an 8-bit-quantized image
// is bit-exact.
GrayImage read_pgm(const std::string& path);
void write_pgm(const GrayImage& img, const std::string& path);

// Masks travel as 0/255 grayscale; read re-thresholds at 0.5.
BinaryMask read_pgm_mask(const std::string& path);
void write_pgm_mask(const BinaryMask& mask, const std::string& path);

}  // namespace mammoseg
