#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchforge/error.hpp"
#include "patchforge/foreground.hpp"
#include "patchforge/rng.hpp"
#include "patchforge/store.hpp"

namespace patchforge {

// One "ImageNet epoch".
inline constexpr std::uint64_t kDefaultEpochSize = 1'280'000;

class ExhaustedAttemptsError : public Error {
 public:
  using Error::Error;
};

struct MppWeight {
  double mpp = 0.5;
  double weight = 1.0;
};

enum class SlideStrategy { Uniform, Weighted };

struct SamplerConfig {
  int patch_size = 256;
  double min_foreground = 0.40;
  std::vector<MppWeight> target_mpps{{0.5, 1.0}};
  SlideStrategy slide_strategy = SlideStrategy::Uniform;
  std::vector<double> slide_weights;  // aligned with the slide list; Weighted only
  std::uint64_t epoch_size = kDefaultEpochSize;
  std::uint64_t seed = 0;
  int max_attempts_per_slide = 100;

  void validate() const;
};

struct PatchSpec {
  std::string slide_id;
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  double target_mpp = 0.0;
  int out_size = 0;
  std::uint64_t seq = 0;

  Rect rect() const { return {x, y, width, height}; }
  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

// Independent substreams, one per sampling decision.
struct SamplerStreams {
  CounterRng slide;
  CounterRng coords;
  CounterRng mpp;
  CounterRng cache;

  static SamplerStreams from_seed(std::uint64_t seed);
};

// Level-0 side of a patch of out_size px at target_mpp.
int footprint_size(int out_size, double target_mpp, double base_mpp);

// Index into a slide list of n slides.
std::size_t sample_slide(const SamplerConfig& config, std::size_t n_slides, CounterRng& rng);
const std::string& sample_slide(const SamplerConfig& config,
                                std::span<const std::string> slide_ids, CounterRng& rng);

// Rejection-samples one patch whose overlap with the polygon is at least
// min_foreground. seq is left at 0. Throws ExhaustedAttemptsError.
PatchSpec sample_patch(const SlideRecord& record, const ForegroundPolygon& poly,
                       const SamplerConfig& config, SamplerStreams& rng);

// Offsets 0, stride, 2 stride, ... while offset + size <= extent.
std::vector<int> grid_positions(int extent, int size, int stride);

// Grid of patches over a slide for inference, keeping those whose foreground
// overlap reaches min_foreground (all of them when poly is null).
// stride is expressed in output pixels.
std::vector<PatchSpec> grid_specs(const SlideRecord& record, const ForegroundPolygon* poly,
                                  int out_size, int stride, double target_mpp,
                                  double min_foreground);

struct SamplableSlide {
  SlideRecord record;
  ForegroundPolygon polygon;
};

// Deterministic stream of exactly config.epoch_size accepted patches.
class EpochStream {
 public:
  EpochStream(SamplerConfig config, std::vector<SamplableSlide> slides);

  std::optional<PatchSpec> next();

  const SamplerConfig& config() const { return config_; }
  std::uint64_t emitted() const { return emitted_; }
  // Slide draws that failed and were redrawn.
  std::uint64_t rejected_slide_draws() const { return rejected_; }

 private:
  SamplerConfig config_;
  std::vector<SamplableSlide> slides_;
  SamplerStreams rng_;
  std::uint64_t emitted_ = 0;
  std::uint64_t rejected_ = 0;
};

// First `cap` items pass through and are stored; afterwards each item is a
// uniform draw from the stored set. No cap means pass-through.
template <typename Item>
class CappedCache {
 public:
  CappedCache(std::optional<std::size_t> cap, CounterRng rng) : cap_(cap), rng_(rng) {
    if (cap_ && *cap_ < 1) {
      throw ValidationError("cache cap must be >= 1");
    }
  }

  bool full() const { return cap_ && stored_.size() >= *cap_; }

  // Calls produce() only while the cache is filling.
  template <typename Produce>
  Item next(Produce&& produce) {
    if (!cap_) {
      return produce();
    }
    if (stored_.size() < *cap_) {
      stored_.push_back(produce());
      return stored_.back();
    }
    return stored_[static_cast<std::size_t>(rng_.below(stored_.size()))];
  }

  const std::vector<Item>& stored() const { return stored_; }
  std::optional<std::size_t> cap() const { return cap_; }

 private:
  std::optional<std::size_t> cap_;
  CounterRng rng_;
  std::vector<Item> stored_;
};

// epoch_size draws through a CappedCache of PatchSpecs.
class CappedStream {
 public:
  CappedStream(EpochStream inner, std::optional<std::size_t> cap);

  std::optional<PatchSpec> next();
  const CappedCache<PatchSpec>& cache() const { return cache_; }

 private:
  EpochStream inner_;
  CappedCache<PatchSpec> cache_;
  std::uint64_t emitted_ = 0;
};

// Manifest: JSONL, one PatchSpec object per line.
std::string to_json_line(const PatchSpec& spec);
PatchSpec patch_spec_from_json(const std::string& line);
void write_manifest(std::ostream& out, std::span<const PatchSpec> specs);
void write_manifest(const std::string& path, std::span<const PatchSpec> specs);
std::vector<PatchSpec> read_manifest(const std::string& path);

}  // namespace patchforge
