#include "patchforge/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace patchforge {

void blit(const Image& src, int x, int y, int w, int h, Image& dst, int dx, int dy) {
  if (x < 0 || y < 0 || x + w > src.width() || y + h > src.height() || dx < 0 ||
      dy < 0 || dx + w > dst.width() || dy + h > dst.height()) {
    throw OutOfBoundsError("blit window outside image");
  }
  const std::size_t row_bytes = static_cast<std::size_t>(w) * Image::kChannels;
  for (int r = 0; r < h; ++r) {
    std::memcpy(&dst.at(dx, dy + r, 0), &src.at(x, y + r, 0), row_bytes);
  }
}

Image crop_replicate(const Image& src, int x, int y, int w, int h) {
  if (src.empty()) {
    throw ValidationError("cannot crop an empty image");
  }
  Image out(w, h);
  for (int r = 0; r < h; ++r) {
    const int sy = std::clamp(y + r, 0, src.height() - 1);
    for (int c = 0; c < w; ++c) {
      const int sx = std::clamp(x + c, 0, src.width() - 1);
      for (int ch = 0; ch < Image::kChannels; ++ch) {
        out.at(c, r, ch) = src.at(sx, sy, ch);
      }
    }
  }
  return out;
}

Image box_downsample(const Image& src, int factor) {
  if (factor < 1) {
    throw ValidationError("downsample factor must be >= 1");
  }
  const int ow = (src.width() + factor - 1) / factor;
  const int oh = (src.height() + factor - 1) / factor;
  Image out(ow, oh);
  for (int oy = 0; oy < oh; ++oy) {
    const int y0 = oy * factor;
    const int y1 = std::min(y0 + factor, src.height());
    for (int ox = 0; ox < ow; ++ox) {
      const int x0 = ox * factor;
      const int x1 = std::min(x0 + factor, src.width());
      const unsigned count = static_cast<unsigned>((y1 - y0) * (x1 - x0));
      for (int ch = 0; ch < Image::kChannels; ++ch) {
        unsigned sum = 0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            sum += src.at(x, y, ch);
          }
        }
        out.at(ox, oy, ch) = static_cast<std::uint8_t>((sum + count / 2) / count);
      }
    }
  }
  return out;
}

Image resize_bilinear(const Image& src, int out_width, int out_height) {
  if (out_width < 1 || out_height < 1) {
    throw ValidationError("resize target must be at least 1x1");
  }
  if (src.empty()) {
    throw ValidationError("cannot resize an empty image");
  }
  if (out_width == src.width() && out_height == src.height()) {
    return src;
  }
  const double sx = static_cast<double>(src.width()) / out_width;
  const double sy = static_cast<double>(src.height()) / out_height;

  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int out_n, int in_n, double scale) {
    std::vector<Tap> t(static_cast<std::size_t>(out_n));
    for (int o = 0; o < out_n; ++o) {
      double s = (o + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
      const int i0 = static_cast<int>(std::floor(s));
      const int i1 = std::min(i0 + 1, in_n - 1);
      t[static_cast<std::size_t>(o)] = {i0, i1, s - i0};
    }
    return t;
  };
  const auto tx = taps(out_width, src.width(), sx);
  const auto ty = taps(out_height, src.height(), sy);

  Image out(out_width, out_height);
  for (int oy = 0; oy < out_height; ++oy) {
    const Tap& y = ty[static_cast<std::size_t>(oy)];
    for (int ox = 0; ox < out_width; ++ox) {
      const Tap& x = tx[static_cast<std::size_t>(ox)];
      for (int ch = 0; ch < Image::kChannels; ++ch) {
        const double top = src.at(x.i0, y.i0, ch) * (1.0 - x.w1) + src.at(x.i1, y.i0, ch) * x.w1;
        const double bot = src.at(x.i0, y.i1, ch) * (1.0 - x.w1) + src.at(x.i1, y.i1, ch) * x.w1;
        const double v = top * (1.0 - y.w1) + bot * y.w1;
        out.at(ox, oy, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace patchforge
