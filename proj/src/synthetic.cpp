#include "patchforge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "patchforge/rng.hpp"

namespace patchforge {

namespace {

std::uint8_t noise(std::uint64_t key, int x, int y) {
  const std::uint64_t h =
      CounterRng::mix(key ^ (static_cast<std::uint64_t>(x) << 32) ^ static_cast<std::uint32_t>(y));
  return static_cast<std::uint8_t>(h & 0x1F);
}

}  // namespace

Image make_blob_image(int width, int height, std::uint64_t seed, int blobs) {
  Image img(width, height, 255);
  CounterRng rng = CounterRng::substream(seed, "blobs");
  struct Blob {
    double cx, cy, rx, ry;
  };
  std::vector<Blob> shapes;
  const double base = std::min(width, height);
  for (int i = 0; i < blobs; ++i) {
    shapes.push_back({rng.uniform() * width, rng.uniform() * height,
                      base * (0.05 + 0.12 * rng.uniform()), base * (0.05 + 0.12 * rng.uniform())});
  }
  const std::uint64_t key = CounterRng::mix(seed);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (const Blob& b : shapes) {
        const double dx = (x + 0.5 - b.cx) / b.rx;
        const double dy = (y + 0.5 - b.cy) / b.ry;
        if (dx * dx + dy * dy <= 1.0) {
          const std::uint8_t n = noise(key, x, y);
          img.at(x, y, 0) = static_cast<std::uint8_t>(150 + n);
          img.at(x, y, 1) = static_cast<std::uint8_t>(60 + n);
          img.at(x, y, 2) = static_cast<std::uint8_t>(140 + n);
          break;
        }
      }
    }
  }
  return img;
}

Image make_half_image(int width, int height, std::uint64_t seed) {
  Image img(width, height, 255);
  const std::uint64_t key = CounterRng::mix(seed);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width / 2; ++x) {
      const std::uint8_t n = noise(key, x, y);
      img.at(x, y, 0) = static_cast<std::uint8_t>(120 + n);
      img.at(x, y, 1) = static_cast<std::uint8_t>(50 + n);
      img.at(x, y, 2) = static_cast<std::uint8_t>(110 + n);
    }
  }
  return img;
}

Image make_gradient_image(int width, int height, std::uint64_t seed) {
  Image img(width, height);
  const std::uint64_t key = CounterRng::mix(seed);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      img.at(x, y, 0) = static_cast<std::uint8_t>(x * 7 + y);
      img.at(x, y, 1) = static_cast<std::uint8_t>(y * 5 + x * 3);
      img.at(x, y, 2) = static_cast<std::uint8_t>(CounterRng::mix(key + x * 131 + y) & 0xFF);
    }
  }
  return img;
}

}  // namespace patchforge
