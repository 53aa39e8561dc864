#include "patchforge/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "patchforge/codec.hpp"
#include "patchforge/synthetic.hpp"

namespace patchforge {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

void LoaderConfig::validate() const {
  if (concurrency < 1) {
    throw ValidationError("concurrency must be >= 1");
  }
  if (prefetch_depth < concurrency) {
    throw ValidationError("prefetch_depth must be >= concurrency");
  }
}

SlideCatalog::SlideCatalog(std::shared_ptr<ByteSource> source, std::shared_ptr<TileCache> cache)
    : source_(std::move(source)), cache_(std::move(cache)) {}

std::shared_ptr<SlideCatalog> SlideCatalog::open(const std::string& root,
                                                 std::size_t cache_bytes, RetryPolicy retry,
                                                 std::chrono::microseconds latency) {
  std::shared_ptr<ByteSource> source = open_source(root);
  if (latency.count() > 0) {
    source = std::make_shared<LatencySource>(std::move(source), latency);
  }
  source = std::make_shared<RetryingSource>(std::move(source), retry);
  return std::make_shared<SlideCatalog>(std::move(source),
                                        std::make_shared<TileCache>(cache_bytes));
}

const SlideRecord& SlideCatalog::record(const std::string& slide_id) const {
  std::lock_guard lock(mutex_);
  auto it = records_.find(slide_id);
  if (it == records_.end()) {
    it = records_.emplace(slide_id, std::make_unique<SlideRecord>(open_slide(*source_, slide_id)))
             .first;
  }
  return *it->second;
}

Image SlideCatalog::read(const PatchSpec& spec) const {
  return read_region(record(spec.slide_id), spec.rect(), spec.target_mpp, spec.out_size,
                     *source_, *cache_);
}

SpecSource spec_source(std::vector<PatchSpec> specs) {
  auto shared = std::make_shared<std::vector<PatchSpec>>(std::move(specs));
  auto pos = std::make_shared<std::size_t>(0);
  return [shared, pos]() -> std::optional<PatchSpec> {
    if (*pos >= shared->size()) {
      return std::nullopt;
    }
    return (*shared)[(*pos)++];
  };
}

SpecSource spec_source(EpochStream stream) {
  auto shared = std::make_shared<EpochStream>(std::move(stream));
  return [shared] { return shared->next(); };
}

SpecSource spec_source(CappedStream stream) {
  auto shared = std::make_shared<CappedStream>(std::move(stream));
  return [shared] { return shared->next(); };
}

Loader::Loader(SpecSource specs, std::shared_ptr<const SlideCatalog> catalog, LoaderConfig config)
    : specs_(std::move(specs)), catalog_(std::move(catalog)), config_(config) {
  config_.validate();
  workers_.reserve(static_cast<std::size_t>(config_.concurrency));
  for (int i = 0; i < config_.concurrency; ++i) {
    workers_.emplace_back([this] { worker(); });
  }
}

Loader::~Loader() { shutdown(); }

void Loader::shutdown() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  work_cv_.notify_all();
  result_cv_.notify_all();
  for (std::thread& t : workers_) {
    if (t.joinable()) {
      t.join();
    }
  }
}

void Loader::worker() {
  const auto depth = static_cast<std::size_t>(config_.prefetch_depth);
  for (;;) {
    std::uint64_t index = 0;
    PatchSpec spec;
    {
      std::unique_lock lock(mutex_);
      work_cv_.wait(lock, [&] {
        return stop_ || input_done_ || in_flight_ + results_.size() < depth;
      });
      if (stop_ || input_done_) {
        return;
      }
      std::optional<PatchSpec> pulled;
      try {
        pulled = specs_();
      } catch (...) {
        source_error_ = std::current_exception();
        input_done_ = true;
        work_cv_.notify_all();
        result_cv_.notify_all();
        return;
      }
      if (!pulled) {
        input_done_ = true;
        work_cv_.notify_all();
        result_cv_.notify_all();
        return;
      }
      index = pulled_++;
      spec = std::move(*pulled);
      ++in_flight_;
    }

    Result result;
    const auto start = Clock::now();
    try {
      Image pixels = catalog_->read(spec);
      const double ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      result.patch = LoadedPatch{spec, std::move(pixels), ms};
    } catch (const std::exception& e) {
      result.failure = PatchFailure{spec, e.what()};
    }

    {
      std::lock_guard lock(mutex_);
      --in_flight_;
      results_.emplace(index, std::move(result));
      peak_buffered_ = std::max(peak_buffered_, results_.size());
    }
    result_cv_.notify_all();
  }
}

std::optional<LoadedPatch> Loader::next() {
  std::unique_lock lock(mutex_);
  for (;;) {
    auto ready = [&] {
      if (config_.ordered) {
        return results_.count(next_emit_) != 0;
      }
      return !results_.empty();
    };
    result_cv_.wait(lock, [&] {
      return ready() || stop_ || (input_done_ && in_flight_ == 0 && results_.empty());
    });
    if (!ready()) {
      if (source_error_) {
        std::rethrow_exception(source_error_);
      }
      return std::nullopt;
    }
    auto it = config_.ordered ? results_.find(next_emit_) : results_.begin();
    Result result = std::move(it->second);
    results_.erase(it);
    ++next_emit_;
    work_cv_.notify_all();
    if (result.patch) {
      return std::move(result.patch);
    }
    if (config_.error_policy == ErrorPolicy::FailFast) {
      const PatchFailure f = *result.failure;
      failures_.push_back(f);
      throw Error("patch seq " + std::to_string(f.spec.seq) + " on slide '" + f.spec.slide_id +
                  "' failed: " + f.message);
    }
    failures_.push_back(std::move(*result.failure));
  }
}

std::vector<PatchFailure> Loader::failures() const {
  std::lock_guard lock(mutex_);
  return failures_;
}

std::size_t Loader::peak_buffered() const {
  std::lock_guard lock(mutex_);
  return peak_buffered_;
}

std::vector<LoadedPatch> load_all(SpecSource specs, std::shared_ptr<const SlideCatalog> catalog,
                                  const LoaderConfig& config) {
  Loader loader(std::move(specs), std::move(catalog), config);
  std::vector<LoadedPatch> out;
  while (auto p = loader.next()) {
    out.push_back(std::move(*p));
  }
  return out;
}

// ---- PatchPack --------------------------------------------------------------

namespace {

constexpr char kPackMagic[4] = {'K', 'P', 'B', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<std::uint8_t> pack_header(std::uint32_t count, int out_size, PackDtype dtype,
                                      const std::string& manifest_path) {
  std::vector<std::uint8_t> h(kPackMagic, kPackMagic + 4);
  put_u32(h, count);
  put_u32(h, static_cast<std::uint32_t>(out_size));
  put_u32(h, 3);
  put_u32(h, static_cast<std::uint32_t>(dtype));
  put_u32(h, static_cast<std::uint32_t>(manifest_path.size()));
  h.insert(h.end(), manifest_path.begin(), manifest_path.end());
  return h;
}

std::vector<std::uint8_t> patch_payload(const Image& pixels, PackDtype dtype) {
  if (dtype == PackDtype::U8) {
    return pixels.buffer();
  }
  const auto values = normalize_patch<float>(pixels);
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(values.size()) * 4);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    put_u32(out, std::bit_cast<std::uint32_t>(values[i]));
  }
  return out;
}

}  // namespace

Image PatchPack::patch(std::size_t i) const {
  if (dtype != PackDtype::U8) {
    throw ValidationError("patch() needs a u8 pack");
  }
  if (i >= count) {
    throw OutOfBoundsError("patch index " + std::to_string(i) + " >= count " +
                           std::to_string(count));
  }
  const std::size_t n = values_per_patch();
  return Image(static_cast<int>(out_size), static_cast<int>(out_size),
               std::vector<std::uint8_t>(u8.begin() + static_cast<std::ptrdiff_t>(i * n),
                                         u8.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
}

PatchPackWriter::PatchPackWriter(const std::string& path, int out_size, PackDtype dtype,
                                 std::string manifest_path)
    : path_(path), out_size_(out_size), dtype_(dtype) {
  if (out_size < 1) {
    throw ValidationError("pack out_size must be >= 1");
  }
  file_ = std::fopen(path.c_str(), "wb");
  if (file_ == nullptr) {
    throw Error("cannot write patch pack '" + path + "'");
  }
  const auto header = pack_header(0, out_size, dtype, manifest_path);
  std::fwrite(header.data(), 1, header.size(), file_);
}

PatchPackWriter::~PatchPackWriter() {
  if (file_ != nullptr) {
    std::fclose(file_);
  }
}

void PatchPackWriter::append(const Image& pixels) {
  if (file_ == nullptr) {
    throw Error("patch pack writer already finished");
  }
  if (pixels.width() != out_size_ || pixels.height() != out_size_) {
    throw ValidationError("patch is " + std::to_string(pixels.width()) + "x" +
                          std::to_string(pixels.height()) + ", pack expects " +
                          std::to_string(out_size_) + "x" + std::to_string(out_size_));
  }
  const auto payload = patch_payload(pixels, dtype_);
  if (std::fwrite(payload.data(), 1, payload.size(), file_) != payload.size()) {
    throw Error("write failed for patch pack '" + path_ + "'");
  }
  ++count_;
}

std::uint32_t PatchPackWriter::finish() {
  if (file_ == nullptr) {
    return count_;
  }
  std::vector<std::uint8_t> count_bytes;
  put_u32(count_bytes, count_);
  const bool ok = std::fseek(file_, 4, SEEK_SET) == 0 &&
                  std::fwrite(count_bytes.data(), 1, 4, file_) == 4;
  const bool closed = std::fclose(file_) == 0;
  file_ = nullptr;
  if (!ok || !closed) {
    throw Error("cannot finalize patch pack '" + path_ + "'");
  }
  return count_;
}

PatchPack write_patch_pack(const std::string& path, const std::vector<Image>& patches,
                           PackDtype dtype, std::string manifest_path) {
  if (patches.empty()) {
    throw ValidationError("cannot infer out_size from an empty patch list");
  }
  const int size = patches.front().width();
  for (const Image& p : patches) {
    if (p.width() != size || p.height() != size) {
      throw ValidationError("patch pack requires a uniform square out_size");
    }
  }
  PatchPackWriter writer(path, size, dtype, manifest_path);
  for (const Image& p : patches) {
    writer.append(p);
  }
  writer.finish();
  return read_patch_pack(path);
}

PatchPack read_patch_pack(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  constexpr std::size_t kFixed = 4 + 5 * 4;
  if (bytes.size() < kFixed) {
    throw FormatError("'" + path + "' is too short for a patch pack header");
  }
  if (std::memcmp(bytes.data(), kPackMagic, 4) != 0) {
    throw FormatError("'" + path + "' has bad magic (expected KPB1)");
  }
  PatchPack pack;
  pack.count = get_u32(bytes.data() + 4);
  pack.out_size = get_u32(bytes.data() + 8);
  const std::uint32_t channels = get_u32(bytes.data() + 12);
  const std::uint32_t dtype = get_u32(bytes.data() + 16);
  const std::uint32_t path_len = get_u32(bytes.data() + 20);
  if (channels != 3) {
    throw FormatError("'" + path + "' declares " + std::to_string(channels) +
                      " channels, expected 3");
  }
  if (dtype > 1) {
    throw FormatError("'" + path + "' has unknown dtype tag " + std::to_string(dtype));
  }
  pack.dtype = static_cast<PackDtype>(dtype);
  if (bytes.size() < kFixed + path_len) {
    throw FormatError("'" + path + "' is truncated inside the manifest path");
  }
  pack.manifest_path.assign(bytes.begin() + kFixed, bytes.begin() + kFixed + path_len);
  const std::size_t value_size = pack.dtype == PackDtype::U8 ? 1 : 4;
  const std::uint64_t want = static_cast<std::uint64_t>(pack.count) * pack.values_per_patch() * value_size;
  const std::uint64_t have = bytes.size() - kFixed - path_len;
  if (have < want) {
    throw FormatError("'" + path + "' is truncated: header declares " +
                      std::to_string(pack.count) + " patches (" + std::to_string(want) +
                      " payload bytes), file holds " + std::to_string(have));
  }
  if (have > want) {
    throw FormatError("'" + path + "' has " + std::to_string(have - want) +
                      " trailing bytes beyond the declared payload");
  }
  const std::uint8_t* payload = bytes.data() + kFixed + path_len;
  if (pack.dtype == PackDtype::U8) {
    pack.u8.assign(payload, payload + want);
  } else {
    pack.f32.resize(want / 4);
    for (std::size_t i = 0; i < pack.f32.size(); ++i) {
      pack.f32[i] = std::bit_cast<float>(get_u32(payload + 4 * i));
    }
  }
  return pack;
}

// ---- Benchmark ----------------------------------------------------------------

BenchReport run_benchmark(const std::string& scratch_dir, const BenchConfig& config) {
  if (config.tiles < 1 || config.tile_size < 16) {
    throw ValidationError("benchmark needs >= 1 tile of >= 16 px");
  }
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(config.tiles))));
  const int rows = (config.tiles + cols - 1) / cols;
  const std::string root = (fs::path(scratch_dir) / "bench_store").string();
  const std::string slide_id = "bench";
  IngestOptions ingest;
  ingest.tile_size = config.tile_size;
  ingest.layout = ChunkLayout::Blob;
  const SlideRecord record =
      ingest_image(make_blob_image(cols * config.tile_size, rows * config.tile_size, config.seed),
                   root, slide_id, ingest);

  std::vector<PatchSpec> specs;
  for (int i = 0; i < config.tiles; ++i) {
    const int tx = i % cols;
    const int ty = i / cols;
    specs.push_back({slide_id, tx * config.tile_size, ty * config.tile_size, config.tile_size,
                     config.tile_size, record.base_mpp, config.tile_size,
                     static_cast<std::uint64_t>(i)});
  }

  const auto latency = std::chrono::microseconds(static_cast<std::int64_t>(config.latency_ms * 1000));
  auto catalog = SlideCatalog::open(root, kDefaultCacheBytes, RetryPolicy{}, latency);
  catalog->record(slide_id);  // metadata reads stay outside the timed region

  LoaderConfig lc;
  lc.concurrency = config.concurrency;
  lc.prefetch_depth = std::max(config.prefetch_depth, config.concurrency);
  lc.ordered = config.ordered;
  lc.error_policy = ErrorPolicy::FailFast;

  const auto start = Clock::now();
  const auto patches = load_all(spec_source(std::move(specs)), catalog, lc);
  const double wall = std::chrono::duration<double>(Clock::now() - start).count();

  std::vector<double> lat;
  lat.reserve(patches.size());
  for (const LoadedPatch& p : patches) {
    lat.push_back(p.latency_ms);
  }
  std::sort(lat.begin(), lat.end());
  auto percentile = [&](double q) {
    if (lat.empty()) {
      return 0.0;
    }
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(lat.size())));
    return lat[std::clamp<std::size_t>(rank, 1, lat.size()) - 1];
  };

  BenchReport report;
  report.patches = patches.size();
  report.wall_seconds = wall;
  report.patches_per_sec = wall > 0 ? static_cast<double>(patches.size()) / wall : 0.0;
  report.p50_latency_ms = percentile(0.50);
  report.p99_latency_ms = percentile(0.99);
  report.cache_hit_rate = catalog->cache().stats().hit_rate();
  return report;
}

std::string to_json(const BenchReport& report) {
  nlohmann::json j{{"patches_per_sec", report.patches_per_sec},
                   {"p50_latency_ms", report.p50_latency_ms},
                   {"p99_latency_ms", report.p99_latency_ms},
                   {"cache_hit_rate", report.cache_hit_rate}};
  return j.dump();
}

}  // namespace patchforge
