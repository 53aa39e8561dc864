#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "patchforge/image.hpp"

namespace patchforge {

struct TileKey {
  std::string slide_id;
  int level = 0;
  int tx = 0;
  int ty = 0;

  friend bool operator==(const TileKey&, const TileKey&) = default;
};

struct TileKeyHash {
  std::size_t operator()(const TileKey& k) const noexcept;
};

using TilePtr = std::shared_ptr<const Image>;

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  // Misses that waited on another worker's in-flight load of the same key.
  std::uint64_t coalesced = 0;
  std::size_t bytes = 0;
  std::size_t entries = 0;

  double hit_rate() const {
    const auto total = hits + misses;
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
  }
};

// Byte-bounded LRU over decoded tiles. Thread-safe. Concurrent get_or_load
// calls for one key share a single load.
class TileCache {
 public:
  explicit TileCache(std::size_t byte_capacity);

  TileCache(const TileCache&) = delete;
  TileCache& operator=(const TileCache&) = delete;

  // Returns the cached tile and refreshes its recency, or nullptr.
  TilePtr get(const TileKey& key);
  // Inserts or replaces, evicting least-recently-used entries until the
  // budget holds. Tiles larger than the whole budget are not retained.
  void put(const TileKey& key, TilePtr tile);
  TilePtr get_or_load(const TileKey& key, const std::function<TilePtr()>& load);

  bool contains(const TileKey& key) const;
  void clear();

  std::size_t capacity() const { return capacity_; }
  CacheStats stats() const;

 private:
  using Entry = std::pair<TileKey, TilePtr>;
  using LruList = std::list<Entry>;

  void insert_locked(const TileKey& key, TilePtr tile);
  static std::size_t cost(const TilePtr& tile) { return tile ? tile->size() : 0; }

  std::size_t capacity_;
  mutable std::mutex mutex_;
  LruList lru_;  // front = most recent
  std::unordered_map<TileKey, LruList::iterator, TileKeyHash> index_;
  std::unordered_map<TileKey, std::shared_future<TilePtr>, TileKeyHash> inflight_;
  std::size_t bytes_ = 0;
  CacheStats stats_;
};

}  // namespace patchforge
