#include "patchforge/store.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "patchforge/error.hpp"

namespace patchforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string key_name(const ChunkKey& k) {
  return "(level " + std::to_string(k.level) + ", tx " + std::to_string(k.tx) + ", ty " +
         std::to_string(k.ty) + ")";
}

std::string locator_kind_name(LocatorKind kind) {
  return kind == LocatorKind::InlineFile ? "inline-file" : "byte-range";
}

LocatorKind parse_locator_kind(const std::string& s) {
  if (s == "inline-file") return LocatorKind::InlineFile;
  if (s == "byte-range") return LocatorKind::ByteRange;
  throw IntegrityError("unknown chunk locator kind '" + s + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot write '" + path.string() + "'");
  }
  out << text;
  if (!out) {
    throw Error("write failed for '" + path.string() + "'");
  }
}

std::string as_text(const std::vector<std::uint8_t>& bytes) {
  return {bytes.begin(), bytes.end()};
}

}  // namespace

int SlideRecord::tiles_x(int level) const {
  const int w = levels.at(static_cast<std::size_t>(level)).width;
  return (w + tile_size - 1) / tile_size;
}

int SlideRecord::tiles_y(int level) const {
  const int h = levels.at(static_cast<std::size_t>(level)).height;
  return (h + tile_size - 1) / tile_size;
}

int SlideRecord::tile_width(int level, int tx) const {
  return std::min(tile_size, levels.at(static_cast<std::size_t>(level)).width - tx * tile_size);
}

int SlideRecord::tile_height(int level, int ty) const {
  return std::min(tile_size, levels.at(static_cast<std::size_t>(level)).height - ty * tile_size);
}

void SlideRecord::validate() const {
  const std::string where = "slide '" + slide_id + "': ";
  if (slide_id.empty()) {
    throw IntegrityError("slide record has an empty slide_id");
  }
  if (!(base_mpp > 0.0) || !std::isfinite(base_mpp)) {
    throw IntegrityError(where + "base_mpp must be positive");
  }
  if (tile_size < 1) {
    throw IntegrityError(where + "tile_size must be positive");
  }
  if (levels.empty()) {
    throw IntegrityError(where + "no levels");
  }
  const LevelInfo& l0 = levels.front();
  if (l0.downsample != 1.0) {
    throw IntegrityError(where + "level 0 downsample must be 1");
  }
  if (std::abs(l0.mpp - base_mpp) > 1e-9 * base_mpp) {
    throw IntegrityError(where + "level 0 mpp differs from base_mpp");
  }
  if (l0.width < 1 || l0.height < 1) {
    throw IntegrityError(where + "level 0 is empty");
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const LevelInfo& l = levels[i];
    const std::string lw = where + "level " + std::to_string(i) + ": ";
    if (!(l.downsample >= 1.0)) {
      throw IntegrityError(lw + "downsample must be >= 1");
    }
    if (i > 0 && !(l.mpp > levels[i - 1].mpp)) {
      throw IntegrityError(lw + "levels must be sorted by increasing mpp");
    }
    if (std::abs(l.mpp - base_mpp * l.downsample) > 1e-9 * l.mpp) {
      throw IntegrityError(lw + "mpp must equal base_mpp * downsample");
    }
    const double ew = std::ceil(l0.width / l.downsample);
    const double eh = std::ceil(l0.height / l.downsample);
    if (std::abs(l.width - ew) > 1.0 || std::abs(l.height - eh) > 1.0) {
      throw IntegrityError(lw + "dimensions inconsistent with downsample");
    }
  }
  for (int lv = 0; lv < static_cast<int>(levels.size()); ++lv) {
    for (int ty = 0; ty < tiles_y(lv); ++ty) {
      for (int tx = 0; tx < tiles_x(lv); ++tx) {
        const ChunkKey key{lv, tx, ty};
        auto it = chunks.find(key);
        if (it == chunks.end()) {
          throw IntegrityError(where + "missing chunk " + key_name(key));
        }
        const ChunkLocator& loc = it->second;
        if (loc.path.empty()) {
          throw IntegrityError(where + "chunk " + key_name(key) + " has an empty path");
        }
        if (loc.kind == LocatorKind::ByteRange) {
          if (loc.length < 1) {
            throw IntegrityError(where + "chunk " + key_name(key) + " has zero length");
          }
          if (loc.codec == Codec::Raw &&
              loc.length != static_cast<std::uint64_t>(tile_width(lv, tx)) *
                                static_cast<std::uint64_t>(tile_height(lv, ty)) * 3) {
            throw IntegrityError(where + "raw chunk " + key_name(key) +
                                 " length does not match tile geometry");
          }
        }
      }
    }
  }
  for (const auto& [key, loc] : chunks) {
    if (key.level < 0 || key.level >= static_cast<int>(levels.size()) || key.tx < 0 ||
        key.ty < 0 || key.tx >= tiles_x(key.level) || key.ty >= tiles_y(key.level)) {
      throw IntegrityError(where + "chunk " + key_name(key) + " lies outside the tile grid");
    }
  }
}

void StoreIndex::validate() const {
  if (format_version != kFormatVersion) {
    throw IntegrityError("unsupported store format_version " + std::to_string(format_version));
  }
  std::vector<std::string> sorted = slides;
  std::sort(sorted.begin(), sorted.end());
  if (auto dup = std::adjacent_find(sorted.begin(), sorted.end()); dup != sorted.end()) {
    throw IntegrityError("duplicate slide id '" + *dup + "' in store index");
  }
}

std::vector<LevelInfo> pyramid_levels(int width, int height, double base_mpp, int tile_size,
                                      int factor) {
  std::vector<LevelInfo> levels;
  levels.push_back({width, height, base_mpp, 1.0});
  double downsample = 1.0;
  while (std::max(levels.back().width, levels.back().height) * 2 > tile_size) {
    downsample *= factor;
    const LevelInfo& prev = levels.back();
    levels.push_back({(prev.width + factor - 1) / factor, (prev.height + factor - 1) / factor,
                      base_mpp * downsample, downsample});
  }
  return levels;
}

std::string to_json(const SlideRecord& record) {
  json j;
  j["slide_id"] = record.slide_id;
  j["base_mpp"] = record.base_mpp;
  j["tile_size"] = record.tile_size;
  json levels = json::array();
  for (const LevelInfo& l : record.levels) {
    levels.push_back(
        {{"width", l.width}, {"height", l.height}, {"mpp", l.mpp}, {"downsample", l.downsample}});
  }
  j["levels"] = std::move(levels);
  json chunks = json::array();
  for (const auto& [key, loc] : record.chunks) {
    json c{{"level", key.level},
           {"tx", key.tx},
           {"ty", key.ty},
           {"kind", locator_kind_name(loc.kind)},
           {"path", loc.path},
           {"codec", std::string(codec_name(loc.codec))}};
    if (loc.kind == LocatorKind::ByteRange) {
      c["offset"] = loc.offset;
      c["length"] = loc.length;
    }
    chunks.push_back(std::move(c));
  }
  j["chunks"] = std::move(chunks);
  return j.dump(1);
}

SlideRecord slide_record_from_json(const std::string& text) {
  SlideRecord r;
  try {
    const json j = json::parse(text);
    r.slide_id = j.at("slide_id").get<std::string>();
    r.base_mpp = j.at("base_mpp").get<double>();
    r.tile_size = j.at("tile_size").get<int>();
    for (const json& l : j.at("levels")) {
      r.levels.push_back({l.at("width").get<int>(), l.at("height").get<int>(),
                          l.at("mpp").get<double>(), l.at("downsample").get<double>()});
    }
    for (const json& c : j.at("chunks")) {
      ChunkKey key{c.at("level").get<int>(), c.at("tx").get<int>(), c.at("ty").get<int>()};
      ChunkLocator loc;
      loc.kind = parse_locator_kind(c.at("kind").get<std::string>());
      loc.path = c.at("path").get<std::string>();
      loc.codec = parse_codec(c.at("codec").get<std::string>());
      if (loc.kind == LocatorKind::ByteRange) {
        if (c.at("offset").get<std::int64_t>() < 0) {
          throw IntegrityError("chunk " + key_name(key) + " has a negative offset");
        }
        loc.offset = c.at("offset").get<std::uint64_t>();
        loc.length = c.at("length").get<std::uint64_t>();
      }
      if (!r.chunks.emplace(key, std::move(loc)).second) {
        throw IntegrityError("duplicate chunk " + key_name(key));
      }
    }
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed slide metadata: ") + e.what());
  } catch (const ValidationError& e) {
    throw IntegrityError(std::string("malformed slide metadata: ") + e.what());
  }
  return r;
}

std::string to_json(const StoreIndex& index) {
  json j;
  j["format_version"] = index.format_version;
  j["slides"] = index.slides;
  j["documents"] = index.documents;
  return j.dump(1);
}

StoreIndex store_index_from_json(const std::string& text) {
  StoreIndex idx;
  try {
    const json j = json::parse(text);
    idx.format_version = j.at("format_version").get<int>();
    idx.slides = j.at("slides").get<std::vector<std::string>>();
    if (j.contains("documents")) {
      idx.documents = j.at("documents").get<std::map<std::string, std::string>>();
    }
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed store index: ") + e.what());
  }
  idx.validate();
  return idx;
}

SlideRecord ingest_image(const Image& source, const std::string& store_root,
                         const std::string& slide_id, const IngestOptions& options) {
  if (source.empty()) {
    throw ValidationError("cannot ingest a zero-sized image");
  }
  if (options.tile_size < 16) {
    throw ValidationError("tile_size must be >= 16");
  }
  if (options.downsample_factor < 2) {
    throw ValidationError("downsample_factor must be >= 2");
  }
  if (!(options.base_mpp > 0.0)) {
    throw ValidationError("base_mpp must be positive");
  }
  if (slide_id.empty() || slide_id.find_first_of("/\\") != std::string::npos) {
    throw ValidationError("slide id must be non-empty and contain no path separators");
  }

  const fs::path root(store_root);
  std::error_code ec;
  fs::create_directories(root / "slides", ec);
  fs::create_directories(root / "chunks", ec);
  if (ec || !fs::is_directory(root / "slides")) {
    throw Error("store root '" + store_root + "' is not writable");
  }
  const fs::path chunk_dir = root / "chunks" / slide_id;
  fs::remove_all(chunk_dir, ec);

  SlideRecord record;
  record.slide_id = slide_id;
  record.base_mpp = options.base_mpp;
  record.tile_size = options.tile_size;
  record.levels = pyramid_levels(source.width(), source.height(), options.base_mpp,
                                 options.tile_size, options.downsample_factor);

  const std::string blob_rel = "chunks/" + slide_id + ".blob";
  std::ofstream blob;
  std::uint64_t blob_offset = 0;
  if (options.layout == ChunkLayout::Blob) {
    blob.open(root / blob_rel, std::ios::binary | std::ios::trunc);
    if (!blob) {
      throw Error("cannot write '" + (root / blob_rel).string() + "'");
    }
  }

  Image level_image = source;
  for (int lv = 0; lv < static_cast<int>(record.levels.size()); ++lv) {
    if (lv > 0) {
      level_image = box_downsample(level_image, options.downsample_factor);
    }
    const fs::path level_dir = chunk_dir / std::to_string(lv);
    if (options.layout == ChunkLayout::Files) {
      fs::create_directories(level_dir, ec);
      if (ec) {
        throw Error("cannot create '" + level_dir.string() + "'");
      }
    }
    for (int ty = 0; ty < record.tiles_y(lv); ++ty) {
      for (int tx = 0; tx < record.tiles_x(lv); ++tx) {
        const int tw = record.tile_width(lv, tx);
        const int th = record.tile_height(lv, ty);
        Image tile(tw, th);
        blit(level_image, tx * options.tile_size, ty * options.tile_size, tw, th, tile, 0, 0);
        const auto bytes = encode(tile, options.codec, options.jpeg_quality);

        ChunkLocator loc;
        loc.codec = options.codec;
        if (options.layout == ChunkLayout::Files) {
          const std::string name = std::to_string(tx) + "_" + std::to_string(ty) + "." +
                                   std::string(codec_extension(options.codec));
          loc.kind = LocatorKind::InlineFile;
          loc.path = "chunks/" + slide_id + "/" + std::to_string(lv) + "/" + name;
          write_file_bytes((level_dir / name).string(), bytes);
        } else {
          loc.kind = LocatorKind::ByteRange;
          loc.path = blob_rel;
          loc.offset = blob_offset;
          loc.length = bytes.size();
          blob.write(reinterpret_cast<const char*>(bytes.data()),
                     static_cast<std::streamsize>(bytes.size()));
          blob_offset += bytes.size();
        }
        record.chunks.emplace(ChunkKey{lv, tx, ty}, std::move(loc));
      }
    }
  }
  if (blob.is_open()) {
    blob.close();
    if (!blob) {
      throw Error("write failed for '" + (root / blob_rel).string() + "'");
    }
  }
  record.validate();

  const std::string doc_rel = "slides/" + slide_id + ".json";
  write_text(root / doc_rel, to_json(record));

  StoreIndex index;
  if (fs::exists(root / "index.json")) {
    index = store_index_from_json(as_text(read_file_bytes((root / "index.json").string())));
  }
  if (std::find(index.slides.begin(), index.slides.end(), slide_id) == index.slides.end()) {
    index.slides.push_back(slide_id);
  }
  index.documents[slide_id] = doc_rel;
  write_text(root / "index.json", to_json(index));
  return record;
}

StoreIndex read_store_index(ByteSource& source) {
  return store_index_from_json(as_text(source.read_all("index.json")));
}

SlideRecord open_slide(ByteSource& source, const std::string& slide_id) {
  const StoreIndex index = read_store_index(source);
  if (std::find(index.slides.begin(), index.slides.end(), slide_id) == index.slides.end()) {
    throw NotFoundError("slide '" + slide_id + "' not found in store " + source.describe());
  }
  auto doc = index.documents.find(slide_id);
  const std::string doc_path = doc != index.documents.end() ? doc->second
                                                            : "slides/" + slide_id + ".json";
  SlideRecord record = slide_record_from_json(as_text(source.read_all(doc_path)));
  if (record.slide_id != slide_id) {
    throw IntegrityError("document '" + doc_path + "' describes slide '" + record.slide_id +
                         "', expected '" + slide_id + "'");
  }
  record.validate();
  return record;
}

SlideRecord open_slide(const std::string& store_root, const std::string& slide_id) {
  auto source = open_source(store_root);
  return open_slide(*source, slide_id);
}

int select_level(const SlideRecord& record, double target_mpp) {
  if (!(target_mpp > 0.0)) {
    throw ValidationError("target_mpp must be positive");
  }
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(record.levels.size()); ++i) {
    const double dist = std::abs(std::log(record.levels[static_cast<std::size_t>(i)].mpp / target_mpp));
    // Levels are sorted fine-to-coarse, so keeping the earlier level on a
    // near-tie prefers the finer one.
    if (dist < best_dist - 1e-12) {
      best = i;
      best_dist = dist;
    }
  }
  return best;
}

TilePtr fetch_chunk(const SlideRecord& record, const ChunkKey& key, ByteSource& source,
                    TileCache& cache) {
  if (key.level < 0 || key.level >= static_cast<int>(record.levels.size()) || key.tx < 0 ||
      key.ty < 0 || key.tx >= record.tiles_x(key.level) || key.ty >= record.tiles_y(key.level)) {
    throw OutOfBoundsError("chunk " + key_name(key) + " outside the tile grid of '" +
                           record.slide_id + "'");
  }
  const ChunkLocator& loc = record.chunks.at(key);
  return cache.get_or_load(TileKey{record.slide_id, key.level, key.tx, key.ty}, [&]() -> TilePtr {
    const auto bytes = loc.kind == LocatorKind::InlineFile
                           ? source.read_all(loc.path)
                           : source.read_range(loc.path, loc.offset, loc.length);
    return std::make_shared<const Image>(decode(bytes, loc.codec,
                                                record.tile_width(key.level, key.tx),
                                                record.tile_height(key.level, key.ty)));
  });
}

Image read_level_window(const SlideRecord& record, int level, int x, int y, int w, int h,
                        ByteSource& source, TileCache& cache) {
  const LevelInfo& info = record.levels.at(static_cast<std::size_t>(level));
  // Clamp to the level, read exactly, then replicate edges outward.
  const int cx0 = std::clamp(x, 0, info.width - 1);
  const int cy0 = std::clamp(y, 0, info.height - 1);
  const int cx1 = std::clamp(x + w, cx0 + 1, info.width);
  const int cy1 = std::clamp(y + h, cy0 + 1, info.height);
  Image inner(cx1 - cx0, cy1 - cy0);
  const int ts = record.tile_size;
  for (int ty = cy0 / ts; ty <= (cy1 - 1) / ts; ++ty) {
    for (int tx = cx0 / ts; tx <= (cx1 - 1) / ts; ++tx) {
      const TilePtr tile = fetch_chunk(record, {level, tx, ty}, source, cache);
      const int ox = tx * ts;
      const int oy = ty * ts;
      const int sx0 = std::max(cx0, ox);
      const int sy0 = std::max(cy0, oy);
      const int sx1 = std::min(cx1, ox + tile->width());
      const int sy1 = std::min(cy1, oy + tile->height());
      blit(*tile, sx0 - ox, sy0 - oy, sx1 - sx0, sy1 - sy0, inner, sx0 - cx0, sy0 - cy0);
    }
  }
  if (cx0 == x && cy0 == y && inner.width() == w && inner.height() == h) {
    return inner;
  }
  return crop_replicate(inner, x - cx0, y - cy0, w, h);
}

int source_window_size(int out_size, double target_mpp, double level_mpp) {
  return static_cast<int>(std::lround(out_size * target_mpp / level_mpp));
}

Image read_region(const SlideRecord& record, const Rect& rect, double target_mpp, int out_size,
                  ByteSource& source, TileCache& cache) {
  if (out_size < 1) {
    throw ValidationError("out_size must be >= 1");
  }
  const LevelInfo& l0 = record.level0();
  if (rect.w < 1 || rect.h < 1 || rect.x < 0 || rect.y < 0 || rect.x + rect.w > l0.width ||
      rect.y + rect.h > l0.height) {
    throw OutOfBoundsError("rect (" + std::to_string(rect.x) + ", " + std::to_string(rect.y) +
                           ", " + std::to_string(rect.w) + ", " + std::to_string(rect.h) +
                           ") outside slide '" + record.slide_id + "' (" +
                           std::to_string(l0.width) + "x" + std::to_string(l0.height) + ")");
  }
  const int level = select_level(record, target_mpp);
  const LevelInfo& info = record.levels[static_cast<std::size_t>(level)];
  const int side = std::max(1, source_window_size(out_size, target_mpp, info.mpp));
  const int x = static_cast<int>(std::floor(rect.x / info.downsample));
  const int y = static_cast<int>(std::floor(rect.y / info.downsample));
  if (x + side > info.width + 1 || y + side > info.height + 1) {
    throw OutOfBoundsError("source window of " + std::to_string(side) + " px at level " +
                           std::to_string(level) + " overruns slide '" + record.slide_id + "'");
  }
  const Image window = read_level_window(record, level, x, y, side, side, source, cache);
  return resize_bilinear(window, out_size, out_size);
}

SlideReader::SlideReader(SlideRecord record, std::shared_ptr<ByteSource> source,
                         std::shared_ptr<TileCache> cache)
    : record_(std::move(record)), source_(std::move(source)), cache_(std::move(cache)) {}

TilePtr SlideReader::fetch_chunk(const ChunkKey& key) const {
  return patchforge::fetch_chunk(record_, key, *source_, *cache_);
}

Image SlideReader::read_region(const Rect& rect_level0, double target_mpp, int out_size) const {
  return patchforge::read_region(record_, rect_level0, target_mpp, out_size, *source_, *cache_);
}

}  // namespace patchforge
