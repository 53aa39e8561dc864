#include "patchforge/foreground.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "patchforge/codec.hpp"

namespace patchforge {

using nlohmann::json;

double signed_area(const Ring& ring) {
  double twice = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = ring[i];
    const Point& b = ring[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * twice;
}

namespace {

Box ring_box(const Ring& ring) {
  Box b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
        -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const Point& p : ring) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

bool ring_contains(const Ring& ring, Point p) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = ring[i];
    const Point& b = ring[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) {
        inside = !inside;
      }
    }
  }
  return inside;
}

// One Sutherland-Hodgman pass against the half-plane where keep(p) holds.
template <typename Keep, typename Cross>
Ring clip_half_plane(const Ring& in, Keep keep, Cross intersect) {
  Ring out;
  if (in.empty()) {
    return out;
  }
  out.reserve(in.size() + 4);
  Point prev = in.back();
  bool prev_in = keep(prev);
  for (const Point& cur : in) {
    const bool cur_in = keep(cur);
    if (cur_in != prev_in) {
      out.push_back(intersect(prev, cur));
    }
    if (cur_in) {
      out.push_back(cur);
    }
    prev = cur;
    prev_in = cur_in;
  }
  return out;
}

double clipped_area(const Ring& ring, double x0, double y0, double x1, double y1) {
  auto at_x = [](double x) {
    return [x](Point a, Point b) { return Point{x, a.y + (x - a.x) * (b.y - a.y) / (b.x - a.x)}; };
  };
  auto at_y = [](double y) {
    return [y](Point a, Point b) { return Point{a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y), y}; };
  };
  Ring r = clip_half_plane(ring, [x0](Point p) { return p.x >= x0; }, at_x(x0));
  r = clip_half_plane(r, [x1](Point p) { return p.x <= x1; }, at_x(x1));
  r = clip_half_plane(r, [y0](Point p) { return p.y >= y0; }, at_y(y0));
  r = clip_half_plane(r, [y1](Point p) { return p.y <= y1; }, at_y(y1));
  return r.size() < 3 ? 0.0 : signed_area(r);
}

bool boxes_disjoint(const Box& b, double x0, double y0, double x1, double y1) {
  return b.x1 <= x0 || b.x0 >= x1 || b.y1 <= y0 || b.y0 >= y1;
}

}  // namespace

BinaryMask::BinaryMask(int w, int h, double scale_)
    : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0), scale(scale_) {
  if (w < 1 || h < 1) {
    throw ValidationError("mask dimensions must be at least 1x1");
  }
  if (!(scale_ > 0.0)) {
    throw ValidationError("mask scale must be positive");
  }
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

ForegroundPolygon::ForegroundPolygon(std::vector<Ring> rings, double source_scale,
                                     std::string slide_id)
    : source_scale_(source_scale), slide_id_(std::move(slide_id)) {
  if (!(source_scale > 0.0)) {
    throw ValidationError("polygon source_scale must be positive");
  }
  for (Ring& ring : rings) {
    if (ring.size() >= 2 && ring.front() == ring.back()) {
      ring.pop_back();
    }
    if (ring.size() < 3) {
      throw ValidationError("polygon ring has fewer than 3 points");
    }
    for (const Point& p : ring) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw ValidationError("polygon has a non-finite coordinate");
      }
    }
  }
  // Nesting depth via a probe point just inside the first edge's midpoint.
  for (std::size_t i = 0; i < rings.size(); ++i) {
    const Ring& ring = rings[i];
    const Point mid{(ring[0].x + ring[1].x) / 2, (ring[0].y + ring[1].y) / 2};
    int depth = 0;
    for (std::size_t j = 0; j < rings.size(); ++j) {
      if (j != i && ring_contains(rings[j], mid)) {
        ++depth;
      }
    }
    const bool hole = depth % 2 == 1;
    const double a = signed_area(ring);
    if ((hole && a > 0) || (!hole && a < 0)) {
      std::reverse(rings[i].begin(), rings[i].end());
    }
  }
  rings_ = std::move(rings);
  bounds_ = Box{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const Ring& ring : rings_) {
    const Box b = ring_box(ring);
    ring_bounds_.push_back(b);
    ring_areas_.push_back(signed_area(ring));
    bounds_.x0 = std::min(bounds_.x0, b.x0);
    bounds_.y0 = std::min(bounds_.y0, b.y0);
    bounds_.x1 = std::max(bounds_.x1, b.x1);
    bounds_.y1 = std::max(bounds_.y1, b.y1);
  }
  if (!rings_.empty() && !(area() > 0.0)) {
    throw ValidationError("polygon total area must be positive");
  }
  if (rings_.empty()) {
    bounds_ = Box{};
  }
}

ForegroundPolygon ForegroundPolygon::rectangle(double x, double y, double w, double h,
                                               std::string slide_id) {
  return ForegroundPolygon({{{x, y}, {x + w, y}, {x + w, y + h}, {x, y + h}}}, 1.0,
                           std::move(slide_id));
}

double ForegroundPolygon::area() const {
  double a = 0.0;
  for (double r : ring_areas_) {
    a += r;
  }
  return a;
}

std::size_t ForegroundPolygon::vertex_count() const {
  std::size_t n = 0;
  for (const Ring& r : rings_) {
    n += r.size();
  }
  return n;
}

bool ForegroundPolygon::contains(Point p) const {
  bool inside = false;
  for (const Ring& r : rings_) {
    if (ring_contains(r, p)) {
      inside = !inside;
    }
  }
  return inside;
}

BinaryMask mask_from_rgb(const Image& thumbnail, double luminance_threshold, double scale) {
  BinaryMask mask(thumbnail.width(), thumbnail.height(), scale);
  for (int y = 0; y < thumbnail.height(); ++y) {
    for (int x = 0; x < thumbnail.width(); ++x) {
      const double lum = (0.2126 * thumbnail.at(x, y, 0) + 0.7152 * thumbnail.at(x, y, 1) +
                          0.0722 * thumbnail.at(x, y, 2)) /
                         255.0;
      mask.set(x, y, lum < luminance_threshold);
    }
  }
  return mask;
}

BinaryMask mask_from_image(const Image& mask_image, double scale) {
  BinaryMask mask(mask_image.width(), mask_image.height(), scale);
  for (int y = 0; y < mask_image.height(); ++y) {
    for (int x = 0; x < mask_image.width(); ++x) {
      mask.set(x, y,
               mask_image.at(x, y, 0) != 0 || mask_image.at(x, y, 1) != 0 ||
                   mask_image.at(x, y, 2) != 0);
    }
  }
  return mask;
}

BinaryMask read_mask_png(const std::string& path, double scale) {
  return mask_from_image(read_png(path), scale);
}

void write_mask_png(const std::string& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> gray(mask.bits.size());
  std::transform(mask.bits.begin(), mask.bits.end(), gray.begin(),
                 [](std::uint8_t b) { return static_cast<std::uint8_t>(b ? 255 : 0); });
  write_png_gray(path, gray, mask.width, mask.height);
}

BinaryMask drop_small_regions(const BinaryMask& mask, double min_region_px) {
  BinaryMask out = mask;
  std::vector<std::uint8_t> seen(mask.bits.size(), 0);
  std::vector<int> component;
  std::vector<int> stack;
  for (int start = 0; start < static_cast<int>(mask.bits.size()); ++start) {
    if (!mask.bits[static_cast<std::size_t>(start)] || seen[static_cast<std::size_t>(start)]) {
      continue;
    }
    component.clear();
    stack.assign(1, start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      component.push_back(idx);
      const int x = idx % mask.width;
      const int y = idx / mask.width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) {
            continue;
          }
          const int n = ny * mask.width + nx;
          if (mask.bits[static_cast<std::size_t>(n)] && !seen[static_cast<std::size_t>(n)]) {
            seen[static_cast<std::size_t>(n)] = 1;
            stack.push_back(n);
          }
        }
      }
    }
    if (static_cast<double>(component.size()) < min_region_px) {
      for (int idx : component) {
        out.bits[static_cast<std::size_t>(idx)] = 0;
      }
    }
  }
  return out;
}

namespace {

// Contour vertices live on a doubled integer lattice: sample (sx, sy) sits at
// (2 sx + 1, 2 sy + 1) and edge midpoints fall on even/odd mixes.
struct LatticePoint {
  int x;
  int y;
  friend bool operator==(const LatticePoint&, const LatticePoint&) = default;
};

std::int64_t lattice_key(LatticePoint p) {
  return (static_cast<std::int64_t>(p.x) << 32) ^ static_cast<std::uint32_t>(p.y);
}

std::int64_t cross(LatticePoint o, LatticePoint a, LatticePoint b) {
  return static_cast<std::int64_t>(a.x - o.x) * (b.y - o.y) -
         static_cast<std::int64_t>(a.y - o.y) * (b.x - o.x);
}

std::vector<LatticePoint> drop_collinear(std::vector<LatticePoint> ring) {
  bool changed = true;
  while (changed && ring.size() > 3) {
    changed = false;
    std::vector<LatticePoint> kept;
    kept.reserve(ring.size());
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i < n; ++i) {
      const LatticePoint& prev = ring[(i + n - 1) % n];
      const LatticePoint& next = ring[(i + 1) % n];
      if (cross(prev, ring[i], next) == 0) {
        changed = true;
        continue;
      }
      kept.push_back(ring[i]);
    }
    if (kept.size() < 3) {
      break;
    }
    ring = std::move(kept);
  }
  return ring;
}

}  // namespace

ForegroundPolygon polygon_from_mask(const BinaryMask& mask, double min_region_px) {
  if (mask.width < 1 || mask.height < 1 ||
      mask.bits.size() != static_cast<std::size_t>(mask.width) * mask.height) {
    throw ValidationError("degenerate mask");
  }
  const BinaryMask filtered = drop_small_regions(mask, min_region_px);
  if (filtered.count() == 0) {
    throw EmptyForegroundError("no foreground region of at least " +
                               std::to_string(min_region_px) + " px survives");
  }

  auto sample = [&](int sx, int sy) {
    return sx >= 0 && sy >= 0 && sx < filtered.width && sy < filtered.height && filtered.at(sx, sy);
  };

  std::unordered_map<std::int64_t, LatticePoint> next;
  std::vector<LatticePoint> starts;
  for (int cy = -1; cy < filtered.height; ++cy) {
    for (int cx = -1; cx < filtered.width; ++cx) {
      // Corners in cycle order TL, TR, BR, BL; edge k joins corner k and k+1.
      const std::array<bool, 4> v{sample(cx, cy), sample(cx + 1, cy), sample(cx + 1, cy + 1),
                                  sample(cx, cy + 1)};
      const int fg = v[0] + v[1] + v[2] + v[3];
      if (fg == 0 || fg == 4) {
        continue;
      }
      const std::array<LatticePoint, 4> corner{LatticePoint{2 * cx + 1, 2 * cy + 1},
                                               LatticePoint{2 * cx + 3, 2 * cy + 1},
                                               LatticePoint{2 * cx + 3, 2 * cy + 3},
                                               LatticePoint{2 * cx + 1, 2 * cy + 3}};
      auto mid = [&](int edge) {
        const LatticePoint& a = corner[static_cast<std::size_t>(edge)];
        const LatticePoint& b = corner[static_cast<std::size_t>((edge + 1) % 4)];
        return LatticePoint{(a.x + b.x) / 2, (a.y + b.y) / 2};
      };
      // Segment from edge e1 to edge e2, oriented with the given background
      // corner on its right so outer boundaries come out counter-clockwise.
      auto emit = [&](int e1, int e2, int bg_corner) {
        LatticePoint a = mid(e1);
        LatticePoint b = mid(e2);
        if (cross(a, b, corner[static_cast<std::size_t>(bg_corner)]) > 0) {
          std::swap(a, b);
        }
        next.emplace(lattice_key(a), b);
        starts.push_back(a);
      };
      const bool saddle = fg == 2 && v[0] == v[2];
      if (saddle) {
        // Diagonal foreground is connected: cut off each background corner.
        for (int k = 0; k < 4; ++k) {
          if (!v[static_cast<std::size_t>(k)]) {
            emit((k + 3) % 4, k, k);
          }
        }
        continue;
      }
      std::array<int, 2> crossing{};
      int nc = 0;
      int bg_corner = 0;
      for (int k = 0; k < 4; ++k) {
        if (v[static_cast<std::size_t>(k)] != v[static_cast<std::size_t>((k + 1) % 4)]) {
          crossing[static_cast<std::size_t>(nc++)] = k;
        }
        if (!v[static_cast<std::size_t>(k)]) {
          bg_corner = k;
        }
      }
      emit(crossing[0], crossing[1], bg_corner);
    }
  }

  const double to_level0 = 0.5 / mask.scale;
  std::vector<Ring> rings;
  for (const LatticePoint& start : starts) {
    auto it = next.find(lattice_key(start));
    if (it == next.end()) {
      continue;  // already consumed by an earlier ring
    }
    std::vector<LatticePoint> lattice;
    LatticePoint cur = start;
    while (it != next.end()) {
      lattice.push_back(cur);
      const LatticePoint nxt = it->second;
      next.erase(it);
      cur = nxt;
      it = next.find(lattice_key(cur));
    }
    lattice = drop_collinear(std::move(lattice));
    if (lattice.size() < 3) {
      continue;
    }
    Ring ring;
    ring.reserve(lattice.size());
    for (const LatticePoint& p : lattice) {
      ring.push_back({p.x * to_level0, p.y * to_level0});
    }
    rings.push_back(std::move(ring));
  }
  if (rings.empty()) {
    throw EmptyForegroundError("mask produced no contour");
  }
  return ForegroundPolygon(std::move(rings), mask.scale);
}

double overlap_fraction(const ForegroundPolygon& poly, const Rect& rect) {
  if (rect.w <= 0 || rect.h <= 0) {
    throw ValidationError("overlap rect must have positive size");
  }
  const double x0 = rect.x;
  const double y0 = rect.y;
  const double x1 = x0 + rect.w;
  const double y1 = y0 + rect.h;
  double area = 0.0;
  for (std::size_t i = 0; i < poly.rings_.size(); ++i) {
    const Box& b = poly.ring_bounds_[i];
    if (boxes_disjoint(b, x0, y0, x1, y1)) {
      continue;
    }
    if (b.x0 >= x0 && b.x1 <= x1 && b.y0 >= y0 && b.y1 <= y1) {
      area += poly.ring_areas_[i];
    } else {
      area += clipped_area(poly.rings_[i], x0, y0, x1, y1);
    }
  }
  return std::clamp(area / (static_cast<double>(rect.w) * rect.h), 0.0, 1.0);
}

double raster_overlap_fraction(const ForegroundPolygon& poly, const Rect& rect, int grid) {
  if (rect.w <= 0 || rect.h <= 0) {
    throw ValidationError("overlap rect must have positive size");
  }
  if (grid < 32) {
    throw ValidationError("raster grid must be at least 32x32");
  }
  const double dx = static_cast<double>(rect.w) / grid;
  const double dy = static_cast<double>(rect.h) / grid;
  const double y_lo = rect.y;
  const double y_hi = rect.y + static_cast<double>(rect.h);

  // Rings whose vertical extent meets the rect; horizontal position does not
  // matter for crossing parity.
  std::vector<const Ring*> active;
  for (std::size_t i = 0; i < poly.rings_.size(); ++i) {
    const Box& b = poly.ring_bounds_[i];
    if (b.y1 > y_lo && b.y0 < y_hi) {
      active.push_back(&poly.rings_[i]);
    }
  }
  // Number of sample columns strictly left of t.
  auto columns_before = [&](double t) {
    const double c = std::ceil((t - rect.x) / dx - 0.5);
    return static_cast<long>(std::clamp(c, 0.0, static_cast<double>(grid)));
  };

  long inside = 0;
  std::vector<double> xs;
  for (int r = 0; r < grid; ++r) {
    const double y = rect.y + (r + 0.5) * dy;
    xs.clear();
    for (const Ring* ring : active) {
      const std::size_t n = ring->size();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = (*ring)[i];
        const Point& b = (*ring)[j];
        if ((a.y > y) != (b.y > y)) {
          xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
        }
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      inside += columns_before(xs[k + 1]) - columns_before(xs[k]);
    }
  }
  return static_cast<double>(inside) / (static_cast<double>(grid) * grid);
}

std::string to_json(const ForegroundPolygon& poly) {
  json rings = json::array();
  for (const Ring& ring : poly.rings()) {
    json pts = json::array();
    for (const Point& p : ring) {
      pts.push_back({p.x, p.y});
    }
    rings.push_back(std::move(pts));
  }
  json j{{"slide_id", poly.slide_id()}, {"source_scale", poly.source_scale()},
         {"rings", std::move(rings)}};
  return j.dump();
}

ForegroundPolygon polygon_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    std::vector<Ring> rings;
    for (const json& r : j.at("rings")) {
      Ring ring;
      for (const json& p : r) {
        ring.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      }
      rings.push_back(std::move(ring));
    }
    return ForegroundPolygon(std::move(rings), j.at("source_scale").get<double>(),
                             j.value("slide_id", std::string{}));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed polygon JSON: ") + e.what());
  }
}

ForegroundPolygon read_polygon(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return polygon_from_json(std::string(bytes.begin(), bytes.end()));
}

void write_polygon(const std::string& path, const ForegroundPolygon& poly) {
  const std::string text = to_json(poly);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace patchforge
