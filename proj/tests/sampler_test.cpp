#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "patchforge/error.hpp"
#include "patchforge/sampler.hpp"
#include "test_util.hpp"

using namespace patchforge;
using patchforge::testing::TempDir;

namespace {

SlideRecord bare_record(const std::string& id, int w, int h, double base_mpp = 0.25) {
  SlideRecord r;
  r.slide_id = id;
  r.base_mpp = base_mpp;
  r.tile_size = 256;
  r.levels = pyramid_levels(w, h, base_mpp, 256, 2);
  return r;
}

SamplableSlide half_slide(const std::string& id, int w = 4096, int h = 4096) {
  return {bare_record(id, w, h), ForegroundPolygon::rectangle(0, 0, w / 2.0, h, id)};
}

std::string manifest_text(EpochStream stream) {
  std::ostringstream out;
  while (auto spec = stream.next()) {
    out << to_json_line(*spec) << '\n';
  }
  return out.str();
}

SamplerConfig small_config(std::uint64_t seed, std::uint64_t epoch) {
  SamplerConfig c;
  c.seed = seed;
  c.epoch_size = epoch;
  return c;
}

}  // namespace

TEST(SamplerConfig, Defaults) {
  const SamplerConfig c;
  EXPECT_EQ(c.epoch_size, 1'280'000u);
  EXPECT_EQ(kDefaultEpochSize, 1'280'000u);
  EXPECT_EQ(c.patch_size, 256);
  EXPECT_DOUBLE_EQ(c.min_foreground, 0.40);
  EXPECT_EQ(c.max_attempts_per_slide, 100);
}

TEST(SamplerConfig, RejectsBadValues) {
  SamplerConfig c;
  c.min_foreground = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.target_mpps = {{0.5, 0.0}};
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.epoch_size = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(GridPositions, Examples) {
  EXPECT_EQ(grid_positions(1000, 224, 194), (std::vector<int>{0, 194, 388, 582, 776}));
  EXPECT_EQ(grid_positions(1000, 224, 194).back() + 224, 1000);
  EXPECT_EQ(grid_positions(224, 224, 194), (std::vector<int>{0}));
  EXPECT_EQ(grid_positions(10, 4, 4), (std::vector<int>{0, 4}));
}

TEST(GridSpecs, TwentyFivePerThousandPixelImage) {
  const SlideRecord r = bare_record("consep", 1000, 1000);
  const auto specs = grid_specs(r, nullptr, 224, 194, r.base_mpp, 0.0);
  ASSERT_EQ(specs.size(), 25u);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    EXPECT_EQ(specs[i].seq, i);
    EXPECT_EQ(specs[i].width, 224);
  }
  EXPECT_EQ(specs.back().x + specs.back().width, 1000);
  EXPECT_EQ(specs.back().y + specs.back().height, 1000);
}

TEST(GridSpecs, ForegroundFilter) {
  const SlideRecord r = bare_record("g", 1000, 1000);
  const auto poly = ForegroundPolygon::rectangle(0, 0, 500, 1000);
  const auto specs = grid_specs(r, &poly, 224, 194, r.base_mpp, 0.4);
  for (const auto& s : specs) {
    EXPECT_GE(overlap_fraction(poly, s.rect()), 0.4);
  }
  EXPECT_EQ(specs.size(), 15u);  // columns 0, 194, 388
}

TEST(FootprintSize, Rounds) {
  EXPECT_EQ(footprint_size(256, 0.5, 0.25), 512);
  EXPECT_EQ(footprint_size(96, 0.97, 0.25), 372);  // 372.48
}

TEST(SampleSlide, WeightsAndUniformity) {
  SamplerConfig c;
  c.slide_strategy = SlideStrategy::Weighted;
  c.slide_weights = {0.0, 1.0};
  CounterRng rng(1);
  for (int i = 0; i < 100; ++i) {
    ASSERT_EQ(sample_slide(c, 2, rng), 1u);
  }
  SamplerConfig u;
  std::vector<int> counts(4);
  for (int i = 0; i < 40'000; ++i) {
    ++counts[sample_slide(u, 4, rng)];
  }
  for (int n : counts) {
    EXPECT_NEAR(n / 40'000.0, 0.25, 0.01);
  }
  const std::vector<std::string> one{"only"};
  EXPECT_EQ(sample_slide(u, one, rng), "only");
  c.slide_weights = {0.0, 0.0};
  EXPECT_THROW(sample_slide(c, 2, rng), ValidationError);
}

TEST(SamplePatch, FullCoverageAcceptsFirstCandidate) {
  const SlideRecord r = bare_record("s", 2048, 2048);
  const auto poly = ForegroundPolygon::rectangle(0, 0, 2048, 2048);
  SamplerConfig c;
  auto rng = SamplerStreams::from_seed(3);
  const PatchSpec s = sample_patch(r, poly, c, rng);
  EXPECT_DOUBLE_EQ(overlap_fraction(poly, s.rect()), 1.0);
  EXPECT_EQ(s.width, 512);
}

TEST(SamplePatch, EmptyPolygonOrTinySlideExhausts) {
  const SlideRecord r = bare_record("s", 2048, 2048);
  SamplerConfig c;
  auto rng = SamplerStreams::from_seed(3);
  EXPECT_THROW(sample_patch(r, ForegroundPolygon(), c, rng), ExhaustedAttemptsError);
  const SlideRecord tiny = bare_record("t", 100, 100);
  EXPECT_THROW(sample_patch(tiny, ForegroundPolygon::rectangle(0, 0, 100, 100), c, rng),
               ExhaustedAttemptsError);
}

TEST(SamplePatch, AcceptedSpecsSatisfyInvariants) {
  const SamplableSlide s = half_slide("h", 3000, 2000);
  SamplerConfig c;
  c.target_mpps = {{0.25, 1}, {0.5, 1}, {1.0, 1}};
  auto rng = SamplerStreams::from_seed(9);
  for (int i = 0; i < 2000; ++i) {
    const PatchSpec p = sample_patch(s.record, s.polygon, c, rng);
    ASSERT_GE(p.x, 0);
    ASSERT_GE(p.y, 0);
    ASSERT_LE(p.x + p.width, 3000);
    ASSERT_LE(p.y + p.height, 2000);
    ASSERT_EQ(p.width, footprint_size(256, p.target_mpp, 0.25));
    ASSERT_GE(overlap_fraction(s.polygon, p.rect()), 0.40);
  }
}

TEST(SamplePatch, MppMixtureFrequencies) {
  const SamplableSlide s = {bare_record("m", 8192, 8192),
                            ForegroundPolygon::rectangle(0, 0, 8192, 8192)};
  SamplerConfig c;
  c.target_mpps = {{0.25, 1}, {0.5, 1}, {1.0, 1}, {2.0, 1}};
  auto rng = SamplerStreams::from_seed(17);
  std::map<double, int> counts;
  for (int i = 0; i < 100'000; ++i) {
    ++counts[sample_patch(s.record, s.polygon, c, rng).target_mpp];
  }
  ASSERT_EQ(counts.size(), 4u);
  for (const auto& [mpp, n] : counts) {
    EXPECT_NEAR(n / 100'000.0, 0.25, 0.01) << mpp;
  }
}

TEST(EpochStream, ExactCountAndSeq) {
  EpochStream stream(small_config(1, 500), {half_slide("a"), half_slide("b")});
  std::uint64_t n = 0;
  while (auto spec = stream.next()) {
    ASSERT_EQ(spec->seq, n);
    ++n;
  }
  EXPECT_EQ(n, 500u);
  EXPECT_FALSE(stream.next().has_value());
}

TEST(EpochStream, DeterministicAndSeedSensitive) {
  const auto a = manifest_text(EpochStream(small_config(1, 10), {half_slide("a")}));
  const auto b = manifest_text(EpochStream(small_config(1, 10), {half_slide("a")}));
  const auto c = manifest_text(EpochStream(small_config(2, 10), {half_slide("a")}));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(EpochStream, FailingSlidesAreRedrawnWithoutCounting) {
  // Slide "e" has no foreground; every draw of it is redrawn.
  EpochStream stream(small_config(4, 300),
                     {half_slide("a"), {bare_record("e", 4096, 4096), ForegroundPolygon()}});
  std::uint64_t n = 0;
  while (auto spec = stream.next()) {
    ASSERT_EQ(spec->slide_id, "a");
    ++n;
  }
  EXPECT_EQ(n, 300u);
  EXPECT_GT(stream.rejected_slide_draws(), 0u);
}

TEST(EpochStream, ZeroWeightSlidesNeverAppear) {
  SamplerConfig c = small_config(5, 2000);
  c.slide_strategy = SlideStrategy::Weighted;
  c.slide_weights = {1.0, 0.0, 3.0};
  EpochStream stream(c, {half_slide("a"), half_slide("b"), half_slide("c")});
  std::map<std::string, int> counts;
  while (auto spec = stream.next()) {
    ++counts[spec->slide_id];
  }
  EXPECT_EQ(counts.count("b"), 0u);
  EXPECT_NEAR(counts["c"] / 2000.0, 0.75, 0.04);
}

TEST(EpochStream, NoSamplableSlideIsAnError) {
  EXPECT_THROW(EpochStream(small_config(1, 5), {{bare_record("e", 4096, 4096), ForegroundPolygon()}}),
               Error);
}

TEST(CappedStream, CapOneRepeatsFirst) {
  CappedStream s(EpochStream(small_config(1, 50), {half_slide("a")}), 1);
  const auto first = *s.next();
  while (auto spec = s.next()) {
    ASSERT_EQ(*spec, first);
  }
}

TEST(CappedStream, CapBoundsDistinctAndDrawsFromStored) {
  CappedStream s(EpochStream(small_config(2, 10'000), {half_slide("a", 20000, 20000)}), 1000);
  std::set<std::string> distinct;
  std::uint64_t n = 0;
  while (auto spec = s.next()) {
    const auto line = to_json_line(*spec);
    if (n >= 1000) {
      const auto& stored = s.cache().stored();
      ASSERT_NE(std::find(stored.begin(), stored.end(), *spec), stored.end());
    }
    distinct.insert(line);
    ++n;
  }
  EXPECT_EQ(n, 10'000u);
  EXPECT_LE(distinct.size(), 1000u);
}

TEST(CappedStream, UnlimitedIsPassThrough) {
  CappedStream s(EpochStream(small_config(3, 10'000), {half_slide("a", 40000, 40000)}),
                 std::nullopt);
  std::set<std::tuple<int, int, double>> distinct;
  while (auto spec = s.next()) {
    distinct.insert({spec->x, spec->y, spec->target_mpp});
  }
  EXPECT_GE(distinct.size(), 9'990u);
}

TEST(Manifest, RoundTrips) {
  TempDir dir;
  std::vector<PatchSpec> specs;
  EpochStream stream(small_config(7, 20), {half_slide("a")});
  while (auto s = stream.next()) {
    specs.push_back(*s);
  }
  specs[3].target_mpp = 0.97;
  write_manifest(dir.str("m.jsonl"), specs);
  EXPECT_EQ(read_manifest(dir.str("m.jsonl")), specs);
  EXPECT_THROW(patch_spec_from_json("{\"slide_id\": 3}"), FormatError);
}
