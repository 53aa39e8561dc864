#include "patchforge/sampler.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

namespace patchforge {

using nlohmann::json;

void SamplerConfig::validate() const {
  if (patch_size < 1) {
    throw ValidationError("patch_size must be >= 1");
  }
  if (!(min_foreground >= 0.0 && min_foreground <= 1.0)) {
    throw ValidationError("min_foreground must lie in [0, 1]");
  }
  if (target_mpps.empty()) {
    throw ValidationError("at least one target mpp is required");
  }
  double total = 0.0;
  for (const MppWeight& m : target_mpps) {
    if (!(m.mpp > 0.0)) {
      throw ValidationError("target mpp must be positive");
    }
    if (!(m.weight >= 0.0)) {
      throw ValidationError("mpp weights must be non-negative");
    }
    total += m.weight;
  }
  if (total <= 0.0) {
    throw ValidationError("mpp weights are all zero");
  }
  if (slide_strategy == SlideStrategy::Weighted) {
    double wsum = 0.0;
    for (double w : slide_weights) {
      if (!(w >= 0.0)) {
        throw ValidationError("slide weights must be non-negative");
      }
      wsum += w;
    }
    if (wsum <= 0.0) {
      throw ValidationError("slide weights are all zero");
    }
  }
  if (epoch_size < 1) {
    throw ValidationError("epoch_size must be >= 1");
  }
  if (max_attempts_per_slide < 1) {
    throw ValidationError("max_attempts_per_slide must be >= 1");
  }
}

SamplerStreams SamplerStreams::from_seed(std::uint64_t seed) {
  return {CounterRng::substream(seed, "slide"), CounterRng::substream(seed, "coords"),
          CounterRng::substream(seed, "mpp"), CounterRng::substream(seed, "cache")};
}

int footprint_size(int out_size, double target_mpp, double base_mpp) {
  return static_cast<int>(std::lround(out_size * target_mpp / base_mpp));
}

std::size_t sample_slide(const SamplerConfig& config, std::size_t n_slides, CounterRng& rng) {
  if (n_slides == 0) {
    throw ValidationError("no slides to sample from");
  }
  if (config.slide_strategy == SlideStrategy::Uniform) {
    return static_cast<std::size_t>(rng.below(n_slides));
  }
  if (config.slide_weights.size() != n_slides) {
    throw ValidationError("slide_weights has " + std::to_string(config.slide_weights.size()) +
                          " entries for " + std::to_string(n_slides) + " slides");
  }
  return rng.weighted(config.slide_weights);
}

const std::string& sample_slide(const SamplerConfig& config,
                                std::span<const std::string> slide_ids, CounterRng& rng) {
  return slide_ids[sample_slide(config, slide_ids.size(), rng)];
}

PatchSpec sample_patch(const SlideRecord& record, const ForegroundPolygon& poly,
                       const SamplerConfig& config, SamplerStreams& rng) {
  if (poly.empty()) {
    throw ExhaustedAttemptsError("slide '" + record.slide_id + "' has no foreground");
  }
  std::vector<double> weights;
  weights.reserve(config.target_mpps.size());
  for (const MppWeight& m : config.target_mpps) {
    weights.push_back(m.weight);
  }
  const double mpp = config.target_mpps[rng.mpp.weighted(weights)].mpp;
  const int fp = footprint_size(config.patch_size, mpp, record.base_mpp);
  const LevelInfo& l0 = record.level0();
  if (fp < 1 || fp > l0.width || fp > l0.height) {
    throw ExhaustedAttemptsError("patch footprint " + std::to_string(fp) +
                                 " px does not fit slide '" + record.slide_id + "'");
  }

  const Box b = poly.bounds();
  // Top-left corner uniform over the bounding box, clamped so the footprint
  // stays on the slide. Candidates may hang past the box; admission decides.
  auto range = [fp](double lo_edge, double hi_edge, int extent) {
    const int lo = std::clamp(static_cast<int>(std::floor(lo_edge)), 0, extent - fp);
    const int hi = std::clamp(static_cast<int>(std::ceil(hi_edge)), 0, extent - fp);
    return std::pair{lo, std::max(lo, hi)};
  };
  const auto [x_lo, x_hi] = range(b.x0, b.x1, l0.width);
  const auto [y_lo, y_hi] = range(b.y0, b.y1, l0.height);

  for (int attempt = 0; attempt < config.max_attempts_per_slide; ++attempt) {
    const int x = static_cast<int>(rng.coords.between(x_lo, x_hi));
    const int y = static_cast<int>(rng.coords.between(y_lo, y_hi));
    const Rect rect{x, y, fp, fp};
    if (overlap_fraction(poly, rect) >= config.min_foreground) {
      return {record.slide_id, x, y, fp, fp, mpp, config.patch_size, 0};
    }
  }
  throw ExhaustedAttemptsError("no candidate on slide '" + record.slide_id + "' reached " +
                               std::to_string(config.min_foreground) + " foreground in " +
                               std::to_string(config.max_attempts_per_slide) + " attempts");
}

std::vector<int> grid_positions(int extent, int size, int stride) {
  if (stride < 1) {
    throw ValidationError("grid stride must be >= 1");
  }
  if (size < 1 || size > extent) {
    throw ValidationError("grid size must lie in [1, extent]");
  }
  std::vector<int> out;
  for (long offset = 0; offset + size <= extent; offset += stride) {
    out.push_back(static_cast<int>(offset));
  }
  return out;
}

std::vector<PatchSpec> grid_specs(const SlideRecord& record, const ForegroundPolygon* poly,
                                  int out_size, int stride, double target_mpp,
                                  double min_foreground) {
  const int fp = footprint_size(out_size, target_mpp, record.base_mpp);
  const int fp_stride = std::max(1, footprint_size(stride, target_mpp, record.base_mpp));
  const LevelInfo& l0 = record.level0();
  std::vector<PatchSpec> out;
  if (fp < 1 || fp > l0.width || fp > l0.height) {
    return out;
  }
  const auto xs = grid_positions(l0.width, fp, fp_stride);
  const auto ys = grid_positions(l0.height, fp, fp_stride);
  for (int y : ys) {
    for (int x : xs) {
      const Rect rect{x, y, fp, fp};
      if (poly != nullptr && overlap_fraction(*poly, rect) < min_foreground) {
        continue;
      }
      out.push_back({record.slide_id, x, y, fp, fp, target_mpp, out_size, out.size()});
    }
  }
  return out;
}

EpochStream::EpochStream(SamplerConfig config, std::vector<SamplableSlide> slides)
    : config_(std::move(config)), slides_(std::move(slides)), rng_(SamplerStreams::from_seed(config_.seed)) {
  config_.validate();
  if (slides_.empty()) {
    throw ValidationError("epoch stream needs at least one slide");
  }
  if (config_.slide_strategy == SlideStrategy::Weighted &&
      config_.slide_weights.size() != slides_.size()) {
    throw ValidationError("slide_weights must have one entry per slide");
  }
  bool any = false;
  for (std::size_t i = 0; i < slides_.size(); ++i) {
    const bool weighted_in = config_.slide_strategy == SlideStrategy::Uniform ||
                             config_.slide_weights[i] > 0.0;
    any = any || (weighted_in && !slides_[i].polygon.empty());
  }
  if (!any) {
    throw Error("no samplable slide: every selectable slide has an empty foreground polygon");
  }
}

std::optional<PatchSpec> EpochStream::next() {
  if (emitted_ >= config_.epoch_size) {
    return std::nullopt;
  }
  const std::uint64_t give_up = std::max<std::uint64_t>(1000, 50 * slides_.size());
  for (std::uint64_t failures = 0;; ++failures) {
    if (failures >= give_up) {
      throw Error("no samplable slide: " + std::to_string(failures) +
                  " consecutive slide draws failed to yield a patch");
    }
    const std::size_t idx = sample_slide(config_, slides_.size(), rng_.slide);
    const SamplableSlide& slide = slides_[idx];
    try {
      PatchSpec spec = sample_patch(slide.record, slide.polygon, config_, rng_);
      spec.seq = emitted_++;
      return spec;
    } catch (const ExhaustedAttemptsError&) {
      ++rejected_;
    }
  }
}

CappedStream::CappedStream(EpochStream inner, std::optional<std::size_t> cap)
    : inner_(std::move(inner)),
      cache_(cap, SamplerStreams::from_seed(inner_.config().seed).cache) {}

std::optional<PatchSpec> CappedStream::next() {
  if (emitted_ >= inner_.config().epoch_size) {
    return std::nullopt;
  }
  ++emitted_;
  return cache_.next([this] {
    auto spec = inner_.next();
    if (!spec) {
      throw Error("inner stream ended while filling the patch cache");
    }
    return *spec;
  });
}

std::string to_json_line(const PatchSpec& spec) {
  json j;
  j["slide_id"] = spec.slide_id;
  j["x"] = spec.x;
  j["y"] = spec.y;
  j["width"] = spec.width;
  j["height"] = spec.height;
  j["target_mpp"] = spec.target_mpp;
  j["out_size"] = spec.out_size;
  j["seq"] = spec.seq;
  return j.dump();
}

PatchSpec patch_spec_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    PatchSpec s;
    s.slide_id = j.at("slide_id").get<std::string>();
    s.x = j.at("x").get<int>();
    s.y = j.at("y").get<int>();
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.target_mpp = j.at("target_mpp").get<double>();
    s.out_size = j.at("out_size").get<int>();
    s.seq = j.at("seq").get<std::uint64_t>();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest line: ") + e.what());
  }
}

void write_manifest(std::ostream& out, std::span<const PatchSpec> specs) {
  for (const PatchSpec& s : specs) {
    out << to_json_line(s) << '\n';
  }
}

void write_manifest(const std::string& path, std::span<const PatchSpec> specs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot write manifest '" + path + "'");
  }
  write_manifest(out, specs);
  if (!out) {
    throw Error("write failed for manifest '" + path + "'");
  }
}

std::vector<PatchSpec> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw NotFoundError("cannot open manifest '" + path + "'");
  }
  std::vector<PatchSpec> specs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      specs.push_back(patch_spec_from_json(line));
    } catch (const FormatError& e) {
      throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return specs;
}

}  // namespace patchforge
