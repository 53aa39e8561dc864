#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "patchforge/byte_source.hpp"
#include "patchforge/codec.hpp"
#include "patchforge/image.hpp"
#include "patchforge/tile_cache.hpp"

namespace patchforge {

enum class LocatorKind { InlineFile, ByteRange };

struct ChunkLocator {
  LocatorKind kind = LocatorKind::InlineFile;
  std::string path;  // relative to the store root, or an http:// URL
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  Codec codec = Codec::Raw;
};

struct ChunkKey {
  int level = 0;
  int tx = 0;
  int ty = 0;

  friend auto operator<=>(const ChunkKey&, const ChunkKey&) = default;
};

struct LevelInfo {
  int width = 0;
  int height = 0;
  double mpp = 0.0;
  double downsample = 1.0;
};

// Level-0 pixel rectangle.
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  friend bool operator==(const Rect&, const Rect&) = default;
};

struct SlideRecord {
  std::string slide_id;
  double base_mpp = 0.0;
  int tile_size = 0;
  std::vector<LevelInfo> levels;
  std::map<ChunkKey, ChunkLocator> chunks;

  int tiles_x(int level) const;
  int tiles_y(int level) const;
  // Actual pixel extent of a tile; edge tiles are cropped to the level.
  int tile_width(int level, int tx) const;
  int tile_height(int level, int ty) const;
  const LevelInfo& level0() const { return levels.front(); }

  // Throws IntegrityError naming the first violated invariant.
  void validate() const;
};

struct StoreIndex {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  std::vector<std::string> slides;
  std::map<std::string, std::string> documents;  // slide_id -> relative path

  void validate() const;
};

enum class ChunkLayout {
  Files,  // one file per chunk, inline-file locators
  Blob,   // all chunks of a slide appended to one file, byte-range locators
};

struct IngestOptions {
  double base_mpp = 0.25;
  int tile_size = 256;
  int downsample_factor = 2;
  Codec codec = Codec::Raw;
  ChunkLayout layout = ChunkLayout::Files;
  int jpeg_quality = 90;
};

// Level dimensions the ingest path builds for a w x h image: repeated
// ceil-division by `factor` until the longest side is at most tile_size / 2.
std::vector<LevelInfo> pyramid_levels(int width, int height, double base_mpp, int tile_size,
                                      int factor);

// Writes a slide into a local store (creating it if needed) and registers it
// in the store index. Replaces an existing slide with the same id.
SlideRecord ingest_image(const Image& source, const std::string& store_root,
                         const std::string& slide_id, const IngestOptions& options);

// JSON (de)serialization of the store documents.
std::string to_json(const SlideRecord& record);
SlideRecord slide_record_from_json(const std::string& text);
std::string to_json(const StoreIndex& index);
StoreIndex store_index_from_json(const std::string& text);

StoreIndex read_store_index(ByteSource& source);
SlideRecord open_slide(ByteSource& source, const std::string& slide_id);
SlideRecord open_slide(const std::string& store_root, const std::string& slide_id);

// Level whose mpp is closest to target_mpp in log space; ties go to the finer
// level.
int select_level(const SlideRecord& record, double target_mpp);

TilePtr fetch_chunk(const SlideRecord& record, const ChunkKey& key, ByteSource& source,
                    TileCache& cache);

// Pixels of the w x h window at (x, y) of `level`, assembled from tiles.
// Coordinates outside the level replicate the nearest edge pixel.
Image read_level_window(const SlideRecord& record, int level, int x, int y, int w, int h,
                        ByteSource& source, TileCache& cache);

// Source window side at `level_mpp` for an out_size patch at target_mpp,
// rounded half away from zero.
int source_window_size(int out_size, double target_mpp, double level_mpp);

// Patch of out_size x out_size covering rect at target_mpp.
Image read_region(const SlideRecord& record, const Rect& rect_level0, double target_mpp,
                  int out_size, ByteSource& source, TileCache& cache);

// A slide bound to its byte source and a (possibly shared) tile cache.
class SlideReader {
 public:
  SlideReader(SlideRecord record, std::shared_ptr<ByteSource> source,
              std::shared_ptr<TileCache> cache);

  const SlideRecord& record() const { return record_; }
  ByteSource& source() const { return *source_; }
  TileCache& cache() const { return *cache_; }

  TilePtr fetch_chunk(const ChunkKey& key) const;
  Image read_region(const Rect& rect_level0, double target_mpp, int out_size) const;

 private:
  SlideRecord record_;
  std::shared_ptr<ByteSource> source_;
  std::shared_ptr<TileCache> cache_;
};

}  // namespace patchforge
