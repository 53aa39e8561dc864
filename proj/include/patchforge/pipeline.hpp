#pragma once

#include <Eigen/Core>

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "patchforge/byte_source.hpp"
#include "patchforge/image.hpp"
#include "patchforge/sampler.hpp"
#include "patchforge/store.hpp"
#include "patchforge/tile_cache.hpp"

namespace patchforge {

inline constexpr std::size_t kDefaultCacheBytes = std::size_t{512} << 20;

enum class ErrorPolicy { FailFast, SkipAndReport };

struct LoaderConfig {
  int concurrency = 4;
  int prefetch_depth = 16;
  bool ordered = true;
  std::size_t cache_bytes = kDefaultCacheBytes;
  ErrorPolicy error_policy = ErrorPolicy::SkipAndReport;

  void validate() const;
};

// Slides of one store sharing a byte source and tile cache. Records are
// opened on first use; safe for concurrent use.
class SlideCatalog {
 public:
  SlideCatalog(std::shared_ptr<ByteSource> source, std::shared_ptr<TileCache> cache);

  // Store at `root` behind a RetryingSource; latency > 0 wraps the transport
  // in a LatencySource (benchmarking).
  static std::shared_ptr<SlideCatalog> open(const std::string& root, std::size_t cache_bytes,
                                            RetryPolicy retry = {},
                                            std::chrono::microseconds latency = {});

  const SlideRecord& record(const std::string& slide_id) const;
  Image read(const PatchSpec& spec) const;

  ByteSource& source() const { return *source_; }
  TileCache& cache() const { return *cache_; }

 private:
  std::shared_ptr<ByteSource> source_;
  std::shared_ptr<TileCache> cache_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::unique_ptr<SlideRecord>> records_;
};

struct LoadedPatch {
  PatchSpec spec;
  Image pixels;
  double latency_ms = 0.0;
};

struct PatchFailure {
  PatchSpec spec;
  std::string message;
};

using SpecSource = std::function<std::optional<PatchSpec>()>;

SpecSource spec_source(std::vector<PatchSpec> specs);
SpecSource spec_source(EpochStream stream);
SpecSource spec_source(CappedStream stream);

// Bounded-prefetch concurrent patch assembly. Workers pull specs from the
// source one at a time; at most prefetch_depth patches are in flight or
// buffered. Ordered mode emits in input order, otherwise in completion order.
class Loader {
 public:
  Loader(SpecSource specs, std::shared_ptr<const SlideCatalog> catalog, LoaderConfig config);
  ~Loader();

  Loader(const Loader&) = delete;
  Loader& operator=(const Loader&) = delete;

  // Next patch, or nullopt once every spec has been delivered. Under
  // FailFast, a failed patch throws here; under SkipAndReport it is recorded
  // in failures() and skipped.
  std::optional<LoadedPatch> next();

  std::vector<PatchFailure> failures() const;
  // Largest number of finished patches waiting for the consumer at any time.
  std::size_t peak_buffered() const;

 private:
  struct Result {
    std::optional<LoadedPatch> patch;
    std::optional<PatchFailure> failure;
  };

  void worker();
  void shutdown();

  SpecSource specs_;
  std::shared_ptr<const SlideCatalog> catalog_;
  LoaderConfig config_;

  mutable std::mutex mutex_;
  std::condition_variable work_cv_;
  std::condition_variable result_cv_;
  std::map<std::uint64_t, Result> results_;  // keyed by input index
  std::uint64_t pulled_ = 0;
  std::uint64_t next_emit_ = 0;  // ordered mode
  std::size_t in_flight_ = 0;
  std::size_t peak_buffered_ = 0;
  bool input_done_ = false;
  bool stop_ = false;
  std::exception_ptr source_error_;
  std::vector<PatchFailure> failures_;
  std::vector<std::thread> workers_;
};

// Convenience: drains a Loader into a vector.
std::vector<LoadedPatch> load_all(SpecSource specs, std::shared_ptr<const SlideCatalog> catalog,
                                  const LoaderConfig& config);

// v -> (v / 255 - 0.5) / 0.5 per channel, i.e. into [-1, 1]. Layout matches
// the image buffer (interleaved HWC).
template <typename Scalar = float>
Eigen::Array<Scalar, Eigen::Dynamic, 1> normalize_patch(const Image& pixels) {
  const auto raw = pixels.data();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> out(static_cast<Eigen::Index>(raw.size()));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] =
        static_cast<Scalar>((static_cast<double>(raw[i]) / 255.0 - 0.5) / 0.5);
  }
  return out;
}

// ---- PatchPack ------------------------------------------------------------
//
// Little-endian layout:
//   char[4] magic "KPB1"
//   u32 count, u32 out_size, u32 channels (= 3), u32 dtype (0 = u8, 1 = f32)
//   u32 manifest_path_length, manifest_path bytes (UTF-8, may be empty)
//   payload: count * out_size^2 * 3 values, row-major HWC per patch

enum class PackDtype : std::uint32_t { U8 = 0, F32 = 1 };

struct PatchPack {
  std::uint32_t count = 0;
  std::uint32_t out_size = 0;
  PackDtype dtype = PackDtype::U8;
  std::string manifest_path;
  std::vector<std::uint8_t> u8;  // dtype U8
  std::vector<float> f32;        // dtype F32

  std::size_t values_per_patch() const {
    return static_cast<std::size_t>(out_size) * out_size * 3;
  }
  // Patch i as an image (U8 only).
  Image patch(std::size_t i) const;
};

// Streams patches to disk; the header count is patched in on finish().
class PatchPackWriter {
 public:
  PatchPackWriter(const std::string& path, int out_size, PackDtype dtype,
                  std::string manifest_path = {});
  ~PatchPackWriter();

  void append(const Image& pixels);
  // Flushes and finalizes the header; returns the patch count.
  std::uint32_t finish();

 private:
  std::string path_;
  int out_size_;
  PackDtype dtype_;
  std::FILE* file_ = nullptr;
  std::uint32_t count_ = 0;
};

PatchPack write_patch_pack(const std::string& path, const std::vector<Image>& patches,
                           PackDtype dtype = PackDtype::U8, std::string manifest_path = {});
PatchPack read_patch_pack(const std::string& path);

// ---- Benchmark harness ------------------------------------------------------

struct BenchConfig {
  int tiles = 200;
  int tile_size = 64;
  double latency_ms = 10.0;
  int concurrency = 8;
  int prefetch_depth = 16;
  bool ordered = true;
  std::uint64_t seed = 0;
};

struct BenchReport {
  std::size_t patches = 0;
  double wall_seconds = 0.0;
  double patches_per_sec = 0.0;
  double p50_latency_ms = 0.0;
  double p99_latency_ms = 0.0;
  double cache_hit_rate = 0.0;
};

// Builds a procedural store under scratch_dir (one patch per tile, each tile
// fetched once through an injected per-read latency) and times the loader.
BenchReport run_benchmark(const std::string& scratch_dir, const BenchConfig& config);
std::string to_json(const BenchReport& report);

}  // namespace patchforge
