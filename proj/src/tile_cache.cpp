#include "patchforge/tile_cache.hpp"

namespace patchforge {

std::size_t TileKeyHash::operator()(const TileKey& k) const noexcept {
  std::size_t h = std::hash<std::string>{}(k.slide_id);
  auto combine = [&h](std::size_t v) { h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2); };
  combine(static_cast<std::size_t>(k.level));
  combine(static_cast<std::size_t>(k.tx));
  combine(static_cast<std::size_t>(k.ty));
  return h;
}

TileCache::TileCache(std::size_t byte_capacity) : capacity_(byte_capacity) {}

TilePtr TileCache::get(const TileKey& key) {
  std::lock_guard lock(mutex_);
  auto it = index_.find(key);
  if (it == index_.end()) {
    ++stats_.misses;
    return nullptr;
  }
  ++stats_.hits;
  lru_.splice(lru_.begin(), lru_, it->second);
  return it->second->second;
}

void TileCache::put(const TileKey& key, TilePtr tile) {
  std::lock_guard lock(mutex_);
  insert_locked(key, std::move(tile));
}

void TileCache::insert_locked(const TileKey& key, TilePtr tile) {
  if (auto it = index_.find(key); it != index_.end()) {
    bytes_ -= cost(it->second->second);
    lru_.erase(it->second);
    index_.erase(it);
  }
  const std::size_t need = cost(tile);
  if (need > capacity_) {
    return;
  }
  while (bytes_ + need > capacity_ && !lru_.empty()) {
    auto& victim = lru_.back();
    bytes_ -= cost(victim.second);
    index_.erase(victim.first);
    lru_.pop_back();
  }
  lru_.emplace_front(key, std::move(tile));
  index_.emplace(key, lru_.begin());
  bytes_ += need;
}

TilePtr TileCache::get_or_load(const TileKey& key, const std::function<TilePtr()>& load) {
  std::promise<TilePtr> promise;
  {
    std::unique_lock lock(mutex_);
    if (auto it = index_.find(key); it != index_.end()) {
      ++stats_.hits;
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
    ++stats_.misses;
    if (auto it = inflight_.find(key); it != inflight_.end()) {
      ++stats_.coalesced;
      auto pending = it->second;
      lock.unlock();
      return pending.get();
    }
    inflight_.emplace(key, promise.get_future().share());
  }

  TilePtr tile;
  try {
    tile = load();
  } catch (...) {
    std::lock_guard lock(mutex_);
    inflight_.erase(key);
    promise.set_exception(std::current_exception());
    throw;
  }
  std::lock_guard lock(mutex_);
  insert_locked(key, tile);
  inflight_.erase(key);
  promise.set_value(tile);
  return tile;
}

bool TileCache::contains(const TileKey& key) const {
  std::lock_guard lock(mutex_);
  return index_.count(key) != 0;
}

void TileCache::clear() {
  std::lock_guard lock(mutex_);
  lru_.clear();
  index_.clear();
  bytes_ = 0;
}

CacheStats TileCache::stats() const {
  std::lock_guard lock(mutex_);
  CacheStats s = stats_;
  s.bytes = bytes_;
  s.entries = index_.size();
  return s;
}

}  // namespace patchforge
