#pragma once

#include <cstdint>

#include "patchforge/image.hpp"

namespace patchforge {

// Dark, stain-coloured blobs on a white background; deterministic in seed.
Image make_blob_image(int width, int height, std::uint64_t seed, int blobs = 12);

// Textured tissue on the left half (x < width / 2), white on the right.
Image make_half_image(int width, int height, std::uint64_t seed);

// Every pixel distinct enough to catch off-by-one errors in region reads.
Image make_gradient_image(int width, int height, std::uint64_t seed);

}  // namespace patchforge
