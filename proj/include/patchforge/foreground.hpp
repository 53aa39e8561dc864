#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchforge/error.hpp"
#include "patchforge/image.hpp"
#include "patchforge/store.hpp"

namespace patchforge {

class EmptyForegroundError : public Error {
 public:
  using Error::Error;
};

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

// Closed ring; the closing edge from back() to front() is implicit.
using Ring = std::vector<Point>;

struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

// Shoelace area; positive for counter-clockwise rings.
double signed_area(const Ring& ring);

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1
  double scale = 1.0;              // mask px per level-0 px

  BinaryMask() = default;
  BinaryMask(int w, int h, double scale_ = 1.0);

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;
};

// Tissue outline in level-0 pixels. Outer rings are stored counter-clockwise
// (positive shoelace area) and holes clockwise, whatever orientation the input
// used; nesting depth decides which is which.
class ForegroundPolygon {
 public:
  ForegroundPolygon() = default;
  // Drops a duplicated closing point, rejects rings with fewer than 3
  // points, and normalizes orientation. Throws ValidationError when the
  // total area is not positive.
  ForegroundPolygon(std::vector<Ring> rings, double source_scale, std::string slide_id = {});

  static ForegroundPolygon rectangle(double x, double y, double w, double h,
                                     std::string slide_id = {});

  const std::vector<Ring>& rings() const { return rings_; }
  double source_scale() const { return source_scale_; }
  const std::string& slide_id() const { return slide_id_; }
  void set_slide_id(std::string id) { slide_id_ = std::move(id); }

  bool empty() const { return rings_.empty(); }
  double area() const;
  Box bounds() const { return bounds_; }
  std::size_t vertex_count() const;

  // Even-odd point containment.
  bool contains(Point p) const;

 private:
  friend double overlap_fraction(const ForegroundPolygon&, const Rect&);
  friend double raster_overlap_fraction(const ForegroundPolygon&, const Rect&, int);

  std::vector<Ring> rings_;
  std::vector<Box> ring_bounds_;
  std::vector<double> ring_areas_;  // signed
  Box bounds_;
  double source_scale_ = 1.0;
  std::string slide_id_;
};

inline constexpr double kDefaultLuminanceThreshold = 0.9;
inline constexpr double kDefaultMinRegionPx = 64.0;

// Foreground where (0.2126 R + 0.7152 G + 0.0722 B) / 255 < threshold.
BinaryMask mask_from_rgb(const Image& thumbnail, double luminance_threshold = kDefaultLuminanceThreshold,
                         double scale = 1.0);

// Mask image where any nonzero pixel is foreground.
BinaryMask mask_from_image(const Image& mask_image, double scale = 1.0);
BinaryMask read_mask_png(const std::string& path, double scale = 1.0);
void write_mask_png(const std::string& path, const BinaryMask& mask);

// Removes 8-connected foreground components with fewer than min_region_px
// pixels.
BinaryMask drop_small_regions(const BinaryMask& mask, double min_region_px);

// Marching-squares contours of the mask (sampled at pixel centers, threshold
// 0.5, diagonal neighbours connected), after dropping small regions, scaled
// to level-0 by 1 / mask.scale. Throws EmptyForegroundError when nothing
// survives.
ForegroundPolygon polygon_from_mask(const BinaryMask& mask,
                                    double min_region_px = kDefaultMinRegionPx);

// area(poly ∩ rect) / area(rect), computed exactly by clipping every ring to
// the rect. Used for patch admission.
double overlap_fraction(const ForegroundPolygon& poly, const Rect& rect);

// Supersampled estimate of overlap_fraction on a grid x grid lattice of
// sample points (grid >= 32).
double raster_overlap_fraction(const ForegroundPolygon& poly, const Rect& rect, int grid = 64);

std::string to_json(const ForegroundPolygon& poly);
ForegroundPolygon polygon_from_json(const std::string& text);
ForegroundPolygon read_polygon(const std::string& path);
void write_polygon(const std::string& path, const ForegroundPolygon& poly);

}  // namespace patchforge
