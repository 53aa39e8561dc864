#include <gtest/gtest.h>
#include <gmock/gmock.h>

#include <httplib.h>
#include <json.hpp>

#include <cmath>
#include <thread>

#include "patchforge/byte_source.hpp"
#include "patchforge/codec.hpp"
#include "patchforge/error.hpp"
#include "patchforge/store.hpp"
#include "patchforge/synthetic.hpp"
#include "test_util.hpp"

using namespace patchforge;
using patchforge::testing::noise_image;
using patchforge::testing::TempDir;
using ::testing::HasSubstr;

namespace {

SlideRecord ingest(const Image& img, const std::string& root, int tile,
                   Codec codec = Codec::Raw, ChunkLayout layout = ChunkLayout::Files,
                   const std::string& id = "s1") {
  IngestOptions opts;
  opts.tile_size = tile;
  opts.codec = codec;
  opts.layout = layout;
  return ingest_image(img, root, id, opts);
}

Image crop(const Image& img, int x, int y, int w, int h) {
  Image out(w, h);
  blit(img, x, y, w, h, out, 0, 0);
  return out;
}

SlideRecord record_with_mpps(std::vector<double> mpps) {
  SlideRecord r;
  r.slide_id = "m";
  r.base_mpp = mpps[0];
  r.tile_size = 256;
  for (double m : mpps) {
    const double ds = m / mpps[0];
    r.levels.push_back({static_cast<int>(std::ceil(4096 / ds)),
                        static_cast<int>(std::ceil(4096 / ds)), m, ds});
  }
  return r;
}

}  // namespace

TEST(PyramidLevels, ThousandByEightHundred) {
  const auto levels = pyramid_levels(1000, 800, 0.25, 256, 2);
  ASSERT_EQ(levels.size(), 4u);
  const int dims[4][2] = {{1000, 800}, {500, 400}, {250, 200}, {125, 100}};
  const double mpps[4] = {0.25, 0.5, 1.0, 2.0};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(levels[i].width, dims[i][0]);
    EXPECT_EQ(levels[i].height, dims[i][1]);
    EXPECT_DOUBLE_EQ(levels[i].mpp, mpps[i]);
  }
}

TEST(PyramidLevels, SmallImageIsOneLevel) {
  EXPECT_EQ(pyramid_levels(100, 100, 0.25, 256, 2).size(), 1u);
}

TEST(Ingest, TileGridAndLayout) {
  TempDir dir;
  const SlideRecord r = ingest(make_gradient_image(1000, 800, 1), dir.str(), 256);
  EXPECT_EQ(r.tiles_x(0), 4);
  EXPECT_EQ(r.tiles_y(0), 4);
  EXPECT_EQ(r.levels.size(), 4u);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "index.json"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "slides" / "s1.json"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "chunks" / "s1" / "0" / "3_3.raw"));
  const SlideRecord single = ingest(make_gradient_image(100, 100, 1), dir.str(), 256,
                                    Codec::Raw, ChunkLayout::Files, "small");
  EXPECT_EQ(single.levels.size(), 1u);
  EXPECT_EQ(single.chunks.size(), 1u);
  EXPECT_EQ(read_store_index(*open_source(dir.str())).slides.size(), 2u);
}

TEST(Ingest, RejectsBadInput) {
  TempDir dir;
  IngestOptions opts;
  EXPECT_THROW(ingest_image(Image(0, 0), dir.str(), "z", opts), ValidationError);
  opts.tile_size = 8;
  EXPECT_THROW(ingest_image(Image(10, 10), dir.str(), "z", opts), ValidationError);
  opts.tile_size = 64;
  opts.downsample_factor = 1;
  EXPECT_THROW(ingest_image(Image(10, 10), dir.str(), "z", opts), ValidationError);
}

TEST(OpenSlide, RoundTripsAndValidates) {
  TempDir dir;
  const SlideRecord r = ingest(make_gradient_image(300, 200, 2), dir.str(), 64);
  const SlideRecord back = open_slide(dir.str(), "s1");
  EXPECT_EQ(back.levels.size(), r.levels.size());
  EXPECT_EQ(back.chunks.size(), r.chunks.size());
  for (std::size_t i = 1; i < back.levels.size(); ++i) {
    EXPECT_LT(back.levels[i - 1].mpp, back.levels[i].mpp);
  }
}

TEST(OpenSlide, MissingSlideNamesTheId) {
  TempDir dir;
  ingest(make_gradient_image(64, 64, 2), dir.str(), 64);
  try {
    open_slide(dir.str(), "ghost");
    FAIL();
  } catch (const NotFoundError& e) {
    EXPECT_THAT(e.what(), HasSubstr("ghost"));
  }
}

TEST(OpenSlide, MissingChunkNamesTheKey) {
  TempDir dir;
  ingest(make_gradient_image(300, 200, 2), dir.str(), 64);
  const auto path = dir.path() / "slides" / "s1.json";
  const auto bytes = read_file_bytes(path.string());
  auto doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  auto& chunks = doc.at("chunks");
  for (auto it = chunks.begin(); it != chunks.end(); ++it) {
    if ((*it)["level"] == 1 && (*it)["tx"] == 0 && (*it)["ty"] == 1) {
      chunks.erase(it);
      break;
    }
  }
  const std::string text = doc.dump();
  write_file_bytes(path.string(), std::vector<std::uint8_t>(text.begin(), text.end()));
  try {
    open_slide(dir.str(), "s1");
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_THAT(e.what(), HasSubstr("(level 1, tx 0, ty 1)"));
  }
}

TEST(OpenSlide, UnsortedLevelsAreAnIntegrityError) {
  SlideRecord r = record_with_mpps({0.25, 0.5});
  std::swap(r.levels[0], r.levels[1]);
  EXPECT_THROW(r.validate(), IntegrityError);
}

TEST(SelectLevel, Examples) {
  EXPECT_EQ(select_level(record_with_mpps({0.25, 1.0, 4.0}), 0.97), 1);
  EXPECT_EQ(select_level(record_with_mpps({0.25, 1.0}), 0.5), 0);
  const SlideRecord r = record_with_mpps({0.25, 0.5, 1.0, 2.0});
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(select_level(r, r.levels[static_cast<std::size_t>(i)].mpp), i);
  }
}

TEST(SourceWindow, RoundsHalfAwayFromZero) {
  EXPECT_EQ(source_window_size(96, 0.97, 1.0), 93);
  EXPECT_EQ(source_window_size(256, 0.5, 0.25), 512);
  EXPECT_EQ(source_window_size(3, 0.5, 1.0), 2);  // 1.5 -> 2
}

TEST(ReadRegion, LevelZeroRoundTripIsBitExact) {
  TempDir dir;
  const Image img = noise_image(300, 200, 4);
  const SlideRecord r = ingest(img, dir.str(), 64);
  LocalSource src(dir.str());
  TileCache cache(64 << 20);
  const Image full = read_level_window(r, 0, 0, 0, 300, 200, src, cache);
  EXPECT_EQ(full, img);
  const Image patch = read_region(r, {37, 51, 100, 100}, 0.25, 100, src, cache);
  EXPECT_EQ(patch, crop(img, 37, 51, 100, 100));
}

TEST(ReadRegion, IndependentOfTileSize) {
  TempDir a, b, c;
  const Image img = noise_image(400, 300, 8);
  const SlideRecord ra = ingest(img, a.str(), 128);
  const SlideRecord rb = ingest(img, b.str(), 256);
  const SlideRecord rc = ingest(img, c.str(), 1024);  // single tile at level 0
  LocalSource sa(a.str()), sb(b.str()), sc(c.str());
  TileCache cache_a(64 << 20), cache_b(64 << 20), cache_c(64 << 20);
  const Rect rects[] = {{0, 0, 128, 128}, {100, 90, 200, 200}, {250, 150, 150, 150}};
  for (const Rect& rect : rects) {
    const Image pa = read_region(ra, rect, 0.25, rect.w, sa, cache_a);
    const Image pb = read_region(rb, rect, 0.25, rect.w, sb, cache_b);
    const Image pc = read_region(rc, rect, 0.25, rect.w, sc, cache_c);
    EXPECT_EQ(pa, pb);
    EXPECT_EQ(pa, pc);
  }
}

TEST(ReadRegion, DownsampledReadUsesCoarserLevel) {
  TempDir dir;
  const SlideRecord r = ingest(make_gradient_image(512, 512, 3), dir.str(), 64);
  LocalSource src(dir.str());
  TileCache cache(64 << 20);
  const Image p = read_region(r, {0, 0, 256, 256}, 0.5, 128, src, cache);
  const Image level1 = read_level_window(r, 1, 0, 0, 128, 128, src, cache);
  EXPECT_EQ(p, level1);
}

TEST(ReadRegion, OutOfBounds) {
  TempDir dir;
  const SlideRecord r = ingest(make_gradient_image(100, 100, 3), dir.str(), 64);
  LocalSource src(dir.str());
  TileCache cache(1 << 20);
  EXPECT_THROW(read_region(r, {50, 50, 60, 60}, 0.25, 60, src, cache), OutOfBoundsError);
  EXPECT_THROW(read_region(r, {0, 0, 10, 10}, 0.25, 0, src, cache), ValidationError);
  EXPECT_THROW(fetch_chunk(r, {0, 5, 0}, src, cache), OutOfBoundsError);
}

TEST(FetchChunk, SecondFetchDoesNoTransportRead) {
  TempDir dir;
  const SlideRecord r = ingest(make_gradient_image(128, 128, 3), dir.str(), 64);
  LocalSource src(dir.str());
  TileCache cache(1 << 20);
  const auto a = fetch_chunk(r, {0, 1, 1}, src, cache);
  const auto reads = src.reads();
  const auto b = fetch_chunk(r, {0, 1, 1}, src, cache);
  EXPECT_EQ(src.reads(), reads);
  EXPECT_EQ(*a, *b);
}

TEST(FetchChunk, ConcurrentFetchReadsAtMostOncePerWorker) {
  TempDir dir;
  const SlideRecord r = ingest(make_gradient_image(128, 128, 3), dir.str(), 64);
  LocalSource src(dir.str());
  TileCache cache(1 << 20);
  constexpr int kWorkers = 6;
  std::vector<TilePtr> got(kWorkers);
  std::vector<std::thread> threads;
  for (int w = 0; w < kWorkers; ++w) {
    threads.emplace_back([&, w] { got[w] = fetch_chunk(r, {0, 0, 0}, src, cache); });
  }
  for (auto& t : threads) {
    t.join();
  }
  EXPECT_GE(src.reads(), 1u);
  EXPECT_LE(src.reads(), static_cast<std::uint64_t>(kWorkers));
  for (const auto& g : got) {
    EXPECT_EQ(*g, *got[0]);
  }
}

TEST(Codecs, PngAndBlobLayoutsReadBackExactly) {
  const Image img = noise_image(200, 150, 12);
  for (auto layout : {ChunkLayout::Files, ChunkLayout::Blob}) {
    for (auto codec : {Codec::Raw, Codec::Png}) {
      TempDir dir;
      const SlideRecord r = ingest(img, dir.str(), 64, codec, layout);
      LocalSource src(dir.str());
      TileCache cache(64 << 20);
      EXPECT_EQ(read_level_window(r, 0, 0, 0, 200, 150, src, cache), img);
    }
  }
}

TEST(HttpStore, RangeReadsMatchLocalReads) {
  TempDir dir;
  const Image img = noise_image(200, 150, 13);
  ingest(img, dir.str(), 64, Codec::Png, ChunkLayout::Blob);
  httplib::Server server;
  server.set_mount_point("/store", dir.str());
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  {
    auto http = open_source("http://127.0.0.1:" + std::to_string(port) + "/store");
    const SlideRecord r = open_slide(*http, "s1");
    TileCache cache(64 << 20);
    EXPECT_EQ(read_level_window(r, 0, 0, 0, 200, 150, *http, cache), img);
    const auto& loc = r.chunks.at({0, 1, 1});
    EXPECT_EQ(loc.kind, LocatorKind::ByteRange);
    LocalSource local(dir.str());
    EXPECT_EQ(http->read_range(loc.path, loc.offset, loc.length),
              local.read_range(loc.path, loc.offset, loc.length));
  }
  server.stop();
  thread.join();
}
