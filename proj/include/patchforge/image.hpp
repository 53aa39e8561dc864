#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "patchforge/error.hpp"

namespace patchforge {

// Interleaved RGB raster, row-major, 3 channels.
template <typename Scalar>
class BasicImage {
 public:
  static constexpr int kChannels = 3;

  BasicImage() = default;
  BasicImage(int width, int height, Scalar fill = Scalar{})
      : width_(width), height_(height) {
    if (width < 0 || height < 0) {
      throw ValidationError("image dimensions must be non-negative");
    }
    data_.assign(static_cast<std::size_t>(width) * height * kChannels, fill);
  }
  BasicImage(int width, int height, std::vector<Scalar> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(width) * height * kChannels) {
      throw ValidationError("image buffer size does not match dimensions");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }
  std::size_t size() const { return data_.size(); }

  Scalar& at(int x, int y, int c) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  const Scalar& at(int x, int y, int c) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }

  std::span<Scalar> row(int y) {
    return {data_.data() + static_cast<std::size_t>(y) * width_ * kChannels,
            static_cast<std::size_t>(width_) * kChannels};
  }
  std::span<const Scalar> row(int y) const {
    return {data_.data() + static_cast<std::size_t>(y) * width_ * kChannels,
            static_cast<std::size_t>(width_) * kChannels};
  }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  std::vector<Scalar>& buffer() { return data_; }
  const std::vector<Scalar>& buffer() const { return data_; }

  friend bool operator==(const BasicImage&, const BasicImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Scalar> data_;
};

using Image = BasicImage<std::uint8_t>;

// Copies the w x h window at (x, y) of src into dst at (dx, dy). Window must
// lie inside both images.
void blit(const Image& src, int x, int y, int w, int h, Image& dst, int dx, int dy);

// Crop with edge replication for coordinates outside src.
Image crop_replicate(const Image& src, int x, int y, int w, int h);

// Box-filter downsample by an integer factor. Output dims are
// ceil(dim / factor); partial edge blocks average the pixels they cover.
Image box_downsample(const Image& src, int factor);

// Bilinear resize with pixel-center alignment. Same-size resize is the
// identity.
Image resize_bilinear(const Image& src, int out_width, int out_height);

}  // namespace patchforge
