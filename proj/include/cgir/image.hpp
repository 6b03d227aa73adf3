#pragma once

#include <string>

#include "cgir/tensor.hpp"

namespace cgir {

// Images are (3, H, W) tensors with values in [0, 1].

// Reads an 8-bit PNG. Grayscale and palette files are expanded to RGB; an
// alpha channel is dropped. Failures raise IoError.
Tensor load_png(const std::string& path);

// Writes an 8-bit RGB PNG. Values are clipped to [0, 1] and rounded.
void save_png(const std::string& path, const Tensor& img);

// Enforces the restrictions the network puts on full images: values in
// [0, 1], both sides at least 32 and divisible by 16 (four dyadic halvings).
void check_image_dims(const Tensor& img, const char* who);

// Deterministic structured test image: smooth gradients plus a few
// rectangles, disks, and sinusoidal textures keyed off `index`. Stands in
// for a clean-image corpus so experiments need no bundled data.
Tensor procedural_clean(int64_t index, int64_t h, int64_t w);

}  // namespace cgir
