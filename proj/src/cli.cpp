#include "patchforge/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "patchforge/codec.hpp"
#include "patchforge/embed_metrics.hpp"
#include "patchforge/foreground.hpp"
#include "patchforge/pipeline.hpp"
#include "patchforge/probe.hpp"
#include "patchforge/sampler.hpp"
#include "patchforge/store.hpp"

namespace patchforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') {
      c = ' ';
    }
  }
  return s;
}

// JSON config files: {"key": value} applies to the invoked subcommand,
// {"subcommand": {"key": value}} targets one explicitly.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::vector<std::string> section) : section_(std::move(section)) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw CLI::ConversionError("config", std::string("invalid JSON config: ") + e.what());
    }
    if (!doc.is_object()) {
      throw CLI::ConversionError("config", "JSON config must be an object");
    }
    std::vector<CLI::ConfigItem> items;
    collect(doc, {}, items);
    return items;
  }

 private:
  void collect(const json& obj, std::vector<std::string> parents,
               std::vector<CLI::ConfigItem>& items) const {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        collect(value, nested, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents.empty() ? section_ : parents;
      item.name = key;
      if (value.is_array()) {
        for (const json& v : value) {
          item.inputs.push_back(scalar(v));
        }
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }

  static std::string scalar(const json& v) {
    if (v.is_string()) {
      return v.get<std::string>();
    }
    if (v.is_boolean()) {
      return v.get<bool>() ? "true" : "false";
    }
    return v.dump();
  }

  std::vector<std::string> section_;
};

// "0.5" or "0.5:2" (mpp with optional weight).
MppWeight parse_mpp(const std::string& text) {
  MppWeight mw;
  const auto colon = text.find(':');
  try {
    mw.mpp = std::stod(text.substr(0, colon));
    mw.weight = colon == std::string::npos ? 1.0 : std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("bad --mpp value '" + text + "' (expected MPP or MPP:WEIGHT)");
  }
  return mw;
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ValidationError("bad split fraction '" + part + "'");
    }
  }
  if (out.size() < 2 || out.size() > 3) {
    throw ValidationError("--split takes 2 (train,val) or 3 (train,val,test) fractions");
  }
  return out;
}

// Threshold mask of the coarsest level, traced into a polygon.
ForegroundPolygon threshold_polygon(const SlideRecord& record, ByteSource& source,
                                    TileCache& cache, double threshold, double min_region_px) {
  const int level = static_cast<int>(record.levels.size()) - 1;
  const LevelInfo& info = record.levels[static_cast<std::size_t>(level)];
  const Image thumb = read_level_window(record, level, 0, 0, info.width, info.height, source, cache);
  const BinaryMask mask = mask_from_rgb(thumb, threshold, 1.0 / info.downsample);
  ForegroundPolygon poly = polygon_from_mask(mask, min_region_px);
  poly.set_slide_id(record.slide_id);
  return poly;
}

// Stored polygon when the store has one, otherwise the threshold fallback.
// Slides without any foreground get an empty polygon.
ForegroundPolygon slide_polygon(const SlideRecord& record, ByteSource& source, TileCache& cache,
                                double threshold, std::ostream& err) {
  try {
    const auto bytes = source.read_all("polygons/" + record.slide_id + ".json");
    return polygon_from_json(std::string(bytes.begin(), bytes.end()));
  } catch (const NotFoundError&) {
  }
  try {
    return threshold_polygon(record, source, cache, threshold, kDefaultMinRegionPx);
  } catch (const EmptyForegroundError&) {
    err << "warning: slide '" << record.slide_id << "' has no foreground\n";
    return ForegroundPolygon();
  }
}

std::vector<std::string> resolve_slides(ByteSource& source, std::vector<std::string> requested) {
  if (!requested.empty()) {
    return requested;
  }
  std::vector<std::string> ids = read_store_index(source).slides;
  if (ids.empty()) {
    throw ValidationError("store at " + source.describe() + " has no slides");
  }
  return ids;
}

std::size_t cache_bytes_or_default(std::optional<std::size_t> v) {
  return v.value_or(kDefaultCacheBytes);
}

std::string stem(const std::string& path) { return fs::path(path).stem().string(); }

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"patchforge: online patch extraction from tiled slide stores"};
  app.name("patchforge");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "JSON config; explicit flags take precedence");

  std::function<int()> action;

  // ---- ingest
  auto* ingest = app.add_subcommand("ingest", "Ingest a PNG image into a store");
  std::string ingest_image_path, ingest_store, ingest_id, ingest_codec = "raw",
                                                           ingest_layout = "files";
  IngestOptions ingest_opts;
  ingest->add_option("--image", ingest_image_path, "Source PNG")->required();
  ingest->add_option("--store", ingest_store, "Store root")->required();
  ingest->add_option("--slide-id", ingest_id, "Slide id (default: image file stem)");
  ingest->add_option("--base-mpp", ingest_opts.base_mpp, "Level-0 microns per pixel")
      ->capture_default_str();
  ingest->add_option("--tile-size", ingest_opts.tile_size)->capture_default_str();
  ingest->add_option("--factor", ingest_opts.downsample_factor, "Downsample factor per level")
      ->capture_default_str();
  ingest->add_option("--codec", ingest_codec)
      ->check(CLI::IsMember({"raw", "png", "jpeg"}))
      ->capture_default_str();
  ingest->add_option("--layout", ingest_layout, "files: one file per chunk; blob: byte ranges")
      ->check(CLI::IsMember({"files", "blob"}))
      ->capture_default_str();
  ingest->add_option("--jpeg-quality", ingest_opts.jpeg_quality)->capture_default_str();
  ingest->callback([&] {
    action = [&] {
      ingest_opts.codec = parse_codec(ingest_codec);
      ingest_opts.layout = ingest_layout == "blob" ? ChunkLayout::Blob : ChunkLayout::Files;
      const std::string id = ingest_id.empty() ? stem(ingest_image_path) : ingest_id;
      const SlideRecord record = ingest_image(read_png(ingest_image_path), ingest_store, id,
                                              ingest_opts);
      out << "slide=" << record.slide_id << " levels=" << record.levels.size()
          << " chunks=" << record.chunks.size() << '\n';
      return 0;
    };
  });

  // ---- mask
  auto* mask_cmd = app.add_subcommand("mask", "Threshold tissue mask from an RGB thumbnail");
  std::string mask_image, mask_store, mask_slide, mask_out;
  double mask_threshold = kDefaultLuminanceThreshold;
  mask_cmd->add_option("--image", mask_image, "Thumbnail PNG");
  mask_cmd->add_option("--store", mask_store, "Store root (uses the coarsest level of --slide)");
  mask_cmd->add_option("--slide", mask_slide, "Slide id in --store");
  mask_cmd->add_option("--threshold", mask_threshold, "Relative luminance threshold")
      ->capture_default_str();
  mask_cmd->add_option("--out", mask_out, "Output mask PNG")->required();
  mask_cmd->callback([&] {
    action = [&] {
      Image thumb;
      if (!mask_image.empty()) {
        thumb = read_png(mask_image);
      } else if (!mask_store.empty() && !mask_slide.empty()) {
        auto source = open_source(mask_store);
        TileCache cache(kDefaultCacheBytes);
        const SlideRecord record = open_slide(*source, mask_slide);
        const int level = static_cast<int>(record.levels.size()) - 1;
        const LevelInfo& info = record.levels.back();
        thumb = read_level_window(record, level, 0, 0, info.width, info.height, *source, cache);
      } else {
        throw CLI::ValidationError("mask", "give --image, or --store with --slide");
      }
      const BinaryMask mask = mask_from_rgb(thumb, mask_threshold);
      write_mask_png(mask_out, mask);
      out << "foreground_px=" << mask.count() << " width=" << mask.width
          << " height=" << mask.height << '\n';
      return 0;
    };
  });

  // ---- polygon
  auto* poly_cmd = app.add_subcommand("polygon", "Trace a mask PNG into a foreground polygon");
  std::string poly_mask, poly_store, poly_slide, poly_out;
  std::optional<double> poly_scale;
  double poly_min_region = kDefaultMinRegionPx;
  poly_cmd->add_option("--mask", poly_mask, "Mask PNG (nonzero = tissue)")->required();
  poly_cmd->add_option("--scale", poly_scale,
                       "Mask px per level-0 px (default: derived from --store/--slide, else 1)");
  poly_cmd->add_option("--store", poly_store, "Store root; the polygon is saved under polygons/");
  poly_cmd->add_option("--slide", poly_slide, "Slide id");
  poly_cmd->add_option("--min-region", poly_min_region, "Drop regions below this many mask px")
      ->capture_default_str();
  poly_cmd->add_option("--out", poly_out, "Output polygon JSON");
  poly_cmd->callback([&] {
    action = [&] {
      double scale = poly_scale.value_or(1.0);
      BinaryMask mask = read_mask_png(poly_mask);
      if (!poly_scale && !poly_store.empty() && !poly_slide.empty()) {
        const SlideRecord record = open_slide(poly_store, poly_slide);
        scale = static_cast<double>(mask.width) / record.level0().width;
      }
      mask.scale = scale;
      ForegroundPolygon poly = polygon_from_mask(mask, poly_min_region);
      poly.set_slide_id(poly_slide);
      std::string target = poly_out;
      if (target.empty()) {
        if (poly_store.empty() || poly_slide.empty()) {
          throw CLI::ValidationError("polygon", "give --out, or --store with --slide");
        }
        fs::create_directories(fs::path(poly_store) / "polygons");
        target = (fs::path(poly_store) / "polygons" / (poly_slide + ".json")).string();
      }
      write_polygon(target, poly);
      out << "rings=" << poly.rings().size() << " vertices=" << poly.vertex_count()
          << " area=" << fixed6(poly.area()) << '\n';
      return 0;
    };
  });

  // ---- sample
  auto* sample = app.add_subcommand("sample", "Write a deterministic patch manifest");
  std::string sample_store, sample_out;
  std::vector<std::string> sample_slides, sample_mpps{"0.5"};
  std::vector<double> sample_weights;
  std::optional<std::uint64_t> sample_count, sample_epoch;
  std::optional<std::size_t> sample_cap;
  SamplerConfig sample_cfg;
  double sample_threshold = kDefaultLuminanceThreshold;
  bool sample_dry = false;
  sample->add_option("--store", sample_store, "Store root or http:// URL")->required();
  sample->add_option("--slides", sample_slides, "Slide ids (default: every slide in the store)");
  sample->add_option("--slide-weights", sample_weights,
                     "Slide sampling weights aligned with --slides");
  sample->add_option("--count", sample_count, "Number of patches (alias of --epoch-size)");
  sample->add_option("--epoch-size", sample_epoch, "Patches per epoch (default 1280000)");
  sample->add_option("--mpp", sample_mpps, "Target mpp, optionally MPP:WEIGHT; repeatable")
      ->capture_default_str();
  sample->add_option("--size", sample_cfg.patch_size, "Output patch side in px")
      ->capture_default_str();
  sample->add_option("--min-foreground", sample_cfg.min_foreground)->capture_default_str();
  sample->add_option("--max-attempts", sample_cfg.max_attempts_per_slide)->capture_default_str();
  sample->add_option("--cap", sample_cap, "Distinct-patch cap (default: unlimited)");
  sample->add_option("--threshold", sample_threshold,
                     "Luminance threshold for slides without a stored polygon")
      ->capture_default_str();
  sample->add_option("--seed", sample_cfg.seed)->capture_default_str();
  sample->add_option("--out", sample_out, "Manifest JSONL");
  sample->add_flag("--dry-run", sample_dry, "Validate inputs without emitting patches");
  sample->callback([&] {
    action = [&] {
      if (sample_count && sample_epoch && *sample_count != *sample_epoch) {
        throw CLI::ValidationError("sample", "--count and --epoch-size disagree");
      }
      if (!sample_dry && sample_out.empty()) {
        throw CLI::ValidationError("sample", "--out is required unless --dry-run");
      }
      sample_cfg.epoch_size = sample_count.value_or(sample_epoch.value_or(kDefaultEpochSize));
      sample_cfg.target_mpps.clear();
      for (const auto& m : sample_mpps) {
        sample_cfg.target_mpps.push_back(parse_mpp(m));
      }
      if (!sample_weights.empty()) {
        sample_cfg.slide_strategy = SlideStrategy::Weighted;
        sample_cfg.slide_weights = sample_weights;
      }
      sample_cfg.validate();

      auto source = open_source(sample_store);
      TileCache cache(kDefaultCacheBytes);
      std::vector<SamplableSlide> slides;
      for (const auto& id : resolve_slides(*source, sample_slides)) {
        SlideRecord record = open_slide(*source, id);
        ForegroundPolygon poly = slide_polygon(record, *source, cache, sample_threshold, err);
        slides.push_back({std::move(record), std::move(poly)});
      }
      const std::size_t n_slides = slides.size();
      CappedStream stream(EpochStream(sample_cfg, std::move(slides)), sample_cap);
      if (sample_dry) {
        out << "dry_run slides=" << n_slides << " epoch_size=" << sample_cfg.epoch_size
            << " patches=0\n";
        return 0;
      }
      const std::string tmp = sample_out + ".partial";
      std::ofstream file(tmp, std::ios::trunc | std::ios::binary);
      if (!file) {
        throw Error("cannot write manifest '" + sample_out + "'");
      }
      std::uint64_t written = 0;
      while (auto spec = stream.next()) {
        file << to_json_line(*spec) << '\n';
        ++written;
      }
      file.close();
      if (!file) {
        throw Error("failed writing manifest '" + sample_out + "'");
      }
      fs::rename(tmp, sample_out);
      out << "patches=" << written << " slides=" << n_slides << '\n';
      return 0;
    };
  });

  // ---- grid
  auto* grid = app.add_subcommand("grid", "Write the inference grid of one slide");
  std::string grid_store, grid_slide, grid_out;
  int grid_size = 224, grid_stride = 194;
  std::optional<double> grid_mpp;
  double grid_min_fg = 0.0, grid_threshold = kDefaultLuminanceThreshold;
  grid->add_option("--store", grid_store)->required();
  grid->add_option("--slide", grid_slide)->required();
  grid->add_option("--size", grid_size, "Patch side in output px")->capture_default_str();
  grid->add_option("--stride", grid_stride, "Stride in output px")->capture_default_str();
  grid->add_option("--mpp", grid_mpp, "Target mpp (default: level-0 mpp)");
  grid->add_option("--min-foreground", grid_min_fg, "0 keeps every grid cell")
      ->capture_default_str();
  grid->add_option("--threshold", grid_threshold)->capture_default_str();
  grid->add_option("--out", grid_out, "Manifest JSONL")->required();
  grid->callback([&] {
    action = [&] {
      auto source = open_source(grid_store);
      TileCache cache(kDefaultCacheBytes);
      const SlideRecord record = open_slide(*source, grid_slide);
      std::optional<ForegroundPolygon> poly;
      if (grid_min_fg > 0.0) {
        poly = slide_polygon(record, *source, cache, grid_threshold, err);
      }
      const auto specs = grid_specs(record, poly ? &*poly : nullptr, grid_size, grid_stride,
                                    grid_mpp.value_or(record.base_mpp), grid_min_fg);
      write_manifest(grid_out, specs);
      out << "patches=" << specs.size() << '\n';
      return 0;
    };
  });

  // ---- load
  auto* load = app.add_subcommand("load", "Assemble a manifest's patches into a PatchPack");
  std::string load_manifest, load_store, load_out, load_dtype = "u8";
  LoaderConfig load_cfg;
  std::optional<std::size_t> load_cache;
  bool load_unordered = false, load_fail_fast = false, load_dry = false;
  load->add_option("--manifest", load_manifest)->required();
  load->add_option("--store", load_store, "Store root or http:// URL")->required();
  load->add_option("--out", load_out, "PatchPack output");
  load->add_option("--dtype", load_dtype)->check(CLI::IsMember({"u8", "f32"}))->capture_default_str();
  load->add_option("--concurrency", load_cfg.concurrency)->capture_default_str();
  load->add_option("--prefetch", load_cfg.prefetch_depth)->capture_default_str();
  load->add_option("--cache-bytes", load_cache, "Tile cache capacity (default 512 MiB)")
      ->envname("PATCHFORGE_CACHE_BYTES");
  load->add_flag("--unordered", load_unordered, "Emit in completion order");
  load->add_flag("--fail-fast", load_fail_fast, "Abort on the first failed patch");
  load->add_flag("--dry-run", load_dry, "Validate inputs without emitting patches");
  load->callback([&] {
    action = [&] {
      if (!load_dry && load_out.empty()) {
        throw CLI::ValidationError("load", "--out is required unless --dry-run");
      }
      load_cfg.ordered = !load_unordered;
      load_cfg.error_policy = load_fail_fast ? ErrorPolicy::FailFast : ErrorPolicy::SkipAndReport;
      load_cfg.cache_bytes = cache_bytes_or_default(load_cache);
      load_cfg.validate();
      const auto specs = read_manifest(load_manifest);
      auto catalog = SlideCatalog::open(load_store, load_cfg.cache_bytes);
      int out_size = 0;
      for (const auto& spec : specs) {
        catalog->record(spec.slide_id);
        if (out_size != 0 && spec.out_size != out_size) {
          throw ValidationError("manifest mixes patch sizes " + std::to_string(out_size) +
                                " and " + std::to_string(spec.out_size));
        }
        out_size = spec.out_size;
      }
      if (load_dry) {
        out << "dry_run specs=" << specs.size() << " patches=0\n";
        return 0;
      }
      if (specs.empty()) {
        throw ValidationError("manifest '" + load_manifest + "' is empty");
      }
      PatchPackWriter writer(load_out, out_size,
                             load_dtype == "f32" ? PackDtype::F32 : PackDtype::U8,
                             load_manifest);
      Loader loader(spec_source(specs), catalog, load_cfg);
      while (auto patch = loader.next()) {
        writer.append(patch->pixels);
      }
      const auto written = writer.finish();
      for (const auto& f : loader.failures()) {
        err << "warning: patch seq " << f.spec.seq << " (" << f.spec.slide_id
            << ") failed: " << one_line(f.message) << '\n';
      }
      out << "patches=" << written << " failures=" << loader.failures().size()
          << " cache_hit_rate=" << fixed6(catalog->cache().stats().hit_rate()) << '\n';
      return 0;
    };
  });

  // ---- bench
  auto* bench = app.add_subcommand("bench", "Loader throughput benchmark with injected latency");
  BenchConfig bench_cfg;
  std::string bench_scratch, bench_out;
  bench->add_option("--scratch", bench_scratch, "Scratch directory (default: a temp dir)");
  bench->add_option("--tiles", bench_cfg.tiles)->capture_default_str();
  bench->add_option("--tile-size", bench_cfg.tile_size)->capture_default_str();
  bench->add_option("--latency-ms", bench_cfg.latency_ms)->capture_default_str();
  bench->add_option("--concurrency", bench_cfg.concurrency)->capture_default_str();
  bench->add_option("--prefetch", bench_cfg.prefetch_depth)->capture_default_str();
  bench->add_option("--seed", bench_cfg.seed)->capture_default_str();
  bench->add_option("--out", bench_out, "Also write the JSON report here");
  bench->callback([&] {
    action = [&] {
      fs::path scratch = bench_scratch;
      bool cleanup = false;
      if (scratch.empty()) {
        scratch = fs::temp_directory_path() /
                  ("patchforge-bench-" + std::to_string(bench_cfg.seed) + "-" +
                   std::to_string(std::hash<std::string>{}(fs::current_path().string())));
        cleanup = true;
      }
      const BenchReport report = run_benchmark(scratch.string(), bench_cfg);
      if (cleanup) {
        std::error_code ec;
        fs::remove_all(scratch, ec);
      }
      const std::string text = to_json(report);
      if (!bench_out.empty()) {
        std::ofstream(bench_out, std::ios::trunc) << text << '\n';
      }
      out << text << '\n';
      return 0;
    };
  });

  // ---- metrics
  auto* metrics = app.add_subcommand("metrics", "Embedding quality metrics");
  metrics->require_subcommand(1);
  std::string metrics_path;
  for (const char* name : {"odcorr", "rankme"}) {
    auto* sub = metrics->add_subcommand(name, std::string(name) + " of a KEM1 embedding file");
    sub->add_option("--embeddings", metrics_path, "KEM1 file")->required();
    const std::string metric = name;
    sub->callback([&, metric] {
      action = [&, metric] {
        const EmbeddingMatrixf z = read_embeddings(metrics_path);
        const double v = metric == "odcorr" ? odcorr(z) : rankme(z);
        out << metric << '=' << fixed6(v) << '\n';
        return 0;
      };
    });
  }

  // ---- probe
  auto* probe = app.add_subcommand("probe", "Linear probe over frozen embeddings");
  std::string probe_emb, probe_labels, probe_split = "0.6,0.2,0.2", probe_out;
  std::uint64_t probe_seed = 0;
  int probe_runs = 5;
  std::optional<int> probe_steps, probe_batch;
  probe->add_option("--embeddings", probe_emb, "KEM1 file")->required();
  probe->add_option("--labels", probe_labels, "Labels JSONL {row, label, group}")->required();
  probe->add_option("--split", probe_split, "train,val[,test] fractions")->capture_default_str();
  probe->add_option("--runs", probe_runs)->capture_default_str();
  probe->add_option("--total-steps", probe_steps, "Training steps (default 12500)");
  probe->add_option("--batch-size", probe_batch,
                    "Batch size (default: largest power of two <= min(N_train, 4096))");
  probe->add_option("--seed", probe_seed)->capture_default_str();
  probe->add_option("--out", probe_out, "Result JSON");
  probe->callback([&] {
    action = [&] {
      const EmbeddingMatrixf z = read_embeddings(probe_emb);
      const LabelSet labels = read_labels(probe_labels, static_cast<std::size_t>(z.rows()));
      const auto fractions = parse_fractions(probe_split);
      const SplitAssignment split =
          split_stratified_grouped(labels.labels, labels.groups, fractions, probe_seed);
      for (const auto& w : split.warnings) {
        err << "warning: " << w << '\n';
      }
      std::vector<std::vector<Eigen::Index>> rows(fractions.size());
      for (std::size_t i = 0; i < split.split.size(); ++i) {
        rows[static_cast<std::size_t>(split.split[i])].push_back(static_cast<Eigen::Index>(i));
      }
      auto take = [&](std::size_t s, Eigen::MatrixXf& x, std::vector<int>& y) {
        x.resize(static_cast<Eigen::Index>(rows[s].size()), z.cols());
        y.clear();
        for (std::size_t r = 0; r < rows[s].size(); ++r) {
          x.row(static_cast<Eigen::Index>(r)) = z.row(rows[s][r]);
          y.push_back(labels.labels[static_cast<std::size_t>(rows[s][r])]);
        }
      };
      Eigen::MatrixXf train_x, val_x, test_x;
      std::vector<int> train_y, val_y, test_y;
      take(0, train_x, train_y);
      take(1, val_x, val_y);
      const bool has_test = fractions.size() == 3 && !rows[2].empty();
      if (has_test) {
        take(2, test_x, test_y);
      }
      if (train_x.rows() == 0) {
        throw ValidationError("training split is empty");
      }
      ProbeConfig cfg = ProbeConfig::for_dataset(static_cast<std::size_t>(train_x.rows()));
      if (probe_batch) {
        cfg.batch_size = *probe_batch;
      }
      if (probe_steps) {
        cfg.total_steps = *probe_steps;
      }
      const ProbeResult result = run_probe(train_x, train_y, val_x, val_y, cfg, probe_seed,
                                           probe_runs, has_test ? &test_x : nullptr, test_y);
      if (!probe_out.empty()) {
        std::ofstream file(probe_out, std::ios::trunc);
        if (!file) {
          throw Error("cannot write '" + probe_out + "'");
        }
        file << to_json(result) << '\n';
      }
      for (std::size_t r = 0; r < result.runs.size(); ++r) {
        out << "run=" << r << " seed=" << result.runs[r].seed
            << " balanced_accuracy=" << fixed6(result.runs[r].balanced_accuracy);
        if (result.runs[r].test_balanced_accuracy) {
          out << " test_balanced_accuracy=" << fixed6(*result.runs[r].test_balanced_accuracy);
        }
        out << " steps=" << result.runs[r].steps
            << " early_stopped=" << (result.runs[r].early_stopped ? 1 : 0) << '\n';
      }
      out << "mean=" << fixed6(result.mean) << " std=" << fixed6(result.std) << '\n';
      return 0;
    };
  });

  // Flat config keys go to whichever subcommand the command line names.
  std::vector<std::string> section;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (section.empty() ? app.get_subcommand_no_throw(arg) != nullptr
                        : (section.size() == 1 && section[0] == "metrics" &&
                           (arg == "odcorr" || arg == "rankme"))) {
      section.push_back(arg);
    }
  }
  app.config_formatter(std::make_shared<JsonConfig>(section));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    return action ? action() : 2;
  } catch (const CLI::ValidationError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
}

}  // namespace patchforge
