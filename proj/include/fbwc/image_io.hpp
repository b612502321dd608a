#pragma once

#include <string>

#include "fbwc/tensor.hpp"

namespace fbwc {

// Loads an 8-bit PGM (P5), PPM (P6), or PNG image into a (1, 1|3, h, w)
// tensor scaled to [0, 1]. Errors name their cause distinctly: missing file,
// unsupported bit depth, unsupported/corrupt format.
Tensor load_image(const std::string& path);

// Writers for (1,1,h,w) grayscale and (1,3,h,w) color tensors with values in
// [0,1]; values are clamped and quantized to 8 bits.
void save_pgm(const std::string& path, const Tensor& t);
void save_ppm(const std::string& path, const Tensor& t);
void save_png(const std::string& path, const Tensor& t);  // gray or RGB by channel count

// Dispatch on extension: .pgm/.ppm/.png.
void save_image(const std::string& path, const Tensor& t);

// Writes a (1,1,h,w) probability or binary map as 8-bit grayscale
// (so a {0,1} mask lands on {0,255}). Extension picks the container.
void save_mask(const std::string& path, const Tensor& probs);

}  // namespace fbwc
