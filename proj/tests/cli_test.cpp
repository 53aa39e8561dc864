#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "patchforge/cli.hpp"
#include "patchforge/codec.hpp"
#include "patchforge/embed_metrics.hpp"
#include "patchforge/synthetic.hpp"
#include "test_util.hpp"

using namespace patchforge;
using patchforge::testing::TempDir;

namespace {

struct Result {
  int rc;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "patchforge");
  std::vector<const char*> argv;
  for (const auto& a : args) {
    argv.push_back(a.c_str());
  }
  std::ostringstream out, err;
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {rc, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// One half-tissue slide ingested through the CLI.
struct Store {
  TempDir dir;
  std::string root = dir.str("store");

  Store() {
    write_png(dir.str("s1.png"), make_half_image(1000, 800, 3));
    const Result r = run({"ingest", "--image", dir.str("s1.png"), "--store", root});
    EXPECT_EQ(r.rc, 0) << r.err;
  }
};

}  // namespace

TEST(Cli, IngestReportsPyramid) {
  Store s;
  const Result r = run({"ingest", "--image", s.dir.str("s1.png"), "--store", s.root,
                        "--slide-id", "again", "--codec", "png", "--layout", "blob"});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_NE(r.out.find("slide=again levels=4"), std::string::npos) << r.out;
}

TEST(Cli, SampleWritesRequestedCount) {
  Store s;
  const std::string m = s.dir.str("m.jsonl");
  const Result r = run({"sample", "--store", s.root, "--slides", "s1", "--count", "100", "--mpp",
                        "0.5", "--size", "64", "--seed", "1", "--out", m});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(line_count(slurp(m)), 100u);
  EXPECT_NE(r.out.find("patches=100 slides=1"), std::string::npos) << r.out;
}

TEST(Cli, SameSeedManifestsAreByteIdentical) {
  Store s;
  const std::vector<std::string> base{"sample", "--store", s.root, "--count", "50",
                                      "--size", "64",     "--mpp",  "0.5:1", "--mpp", "1.0:1"};
  auto with = [&](const std::string& seed, const std::string& out) {
    auto a = base;
    a.insert(a.end(), {"--seed", seed, "--out", out});
    return run(a);
  };
  ASSERT_EQ(with("7", s.dir.str("a.jsonl")).rc, 0);
  ASSERT_EQ(with("7", s.dir.str("b.jsonl")).rc, 0);
  ASSERT_EQ(with("8", s.dir.str("c.jsonl")).rc, 0);
  EXPECT_EQ(slurp(s.dir.str("a.jsonl")), slurp(s.dir.str("b.jsonl")));
  EXPECT_NE(slurp(s.dir.str("a.jsonl")), slurp(s.dir.str("c.jsonl")));
}

TEST(Cli, DryRunEmitsNothing) {
  Store s;
  const std::string m = s.dir.str("dry.jsonl");
  const Result r = run({"sample", "--store", s.root, "--count", "10", "--out", m, "--dry-run"});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_FALSE(std::filesystem::exists(m));
  EXPECT_NE(r.out.find("patches=0"), std::string::npos);
}

TEST(Cli, CountAndEpochSizeConflictIsUsageError) {
  Store s;
  EXPECT_EQ(run({"sample", "--store", s.root, "--count", "10", "--epoch-size", "20"}).rc, 2);
}

TEST(Cli, MissingStoreIsOperationalFailure) {
  const Result r = run({"sample", "--store", "/nonexistent", "--count", "1", "--out", "/tmp/unused.jsonl"});
  EXPECT_EQ(r.rc, 1);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
  EXPECT_EQ(line_count(r.err), 1u);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).rc, 2);
  EXPECT_EQ(run({"frobnicate"}).rc, 2);
  EXPECT_EQ(run({"sample", "--bogus"}).rc, 2);
  EXPECT_EQ(run({"sample", "--store", "x", "--count", "many"}).rc, 2);
  EXPECT_EQ(run({"load", "--manifest", "m", "--store", "s", "--dtype", "f64"}).rc, 2);
}

TEST(Cli, HelpExitsZero) {
  const Result r = run({"--help"});
  EXPECT_EQ(r.rc, 0);
  EXPECT_NE(r.out.find("sample"), std::string::npos);
  EXPECT_EQ(run({"sample", "--help"}).rc, 0);
}

TEST(Cli, ConfigFileMergesUnderExplicitFlags) {
  Store s;
  {
    std::ofstream f(s.dir.str("flat.json"));
    f << R"({"store": ")" << s.root << R"(", "count": 12, "size": 64, "seed": 3})";
  }
  const std::string m1 = s.dir.str("c1.jsonl");
  ASSERT_EQ(run({"sample", "--config", s.dir.str("flat.json"), "--out", m1}).rc, 0);
  EXPECT_EQ(line_count(slurp(m1)), 12u);

  const std::string m2 = s.dir.str("c2.jsonl");
  ASSERT_EQ(run({"sample", "--config", s.dir.str("flat.json"), "--count", "5", "--out", m2}).rc, 0);
  EXPECT_EQ(line_count(slurp(m2)), 5u);

  {
    std::ofstream f(s.dir.str("nested.json"));
    f << R"({"sample": {"store": ")" << s.root << R"(", "count": 4, "size": 64}})";
  }
  const std::string m3 = s.dir.str("c3.jsonl");
  ASSERT_EQ(run({"sample", "--config", s.dir.str("nested.json"), "--out", m3}).rc, 0);
  EXPECT_EQ(line_count(slurp(m3)), 4u);
}

TEST(Cli, CacheBytesFromEnvironment) {
  Store s;
  const std::string m = s.dir.str("m.jsonl");
  ASSERT_EQ(run({"sample", "--store", s.root, "--count", "5", "--size", "64", "--out", m}).rc, 0);
  ::setenv("PATCHFORGE_CACHE_BYTES", "lots", 1);
  EXPECT_EQ(run({"load", "--manifest", m, "--store", s.root, "--dry-run"}).rc, 2);
  ::setenv("PATCHFORGE_CACHE_BYTES", "1048576", 1);
  EXPECT_EQ(run({"load", "--manifest", m, "--store", s.root, "--dry-run"}).rc, 0);
  ::unsetenv("PATCHFORGE_CACHE_BYTES");
}

TEST(Cli, LoadWritesPatchPack) {
  Store s;
  const std::string m = s.dir.str("m.jsonl");
  ASSERT_EQ(run({"sample", "--store", s.root, "--count", "8", "--size", "32", "--out", m}).rc, 0);
  const Result r = run({"load", "--manifest", m, "--store", s.root, "--out", s.dir.str("p.kpb"),
                        "--concurrency", "2"});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_NE(r.out.find("patches=8 failures=0"), std::string::npos) << r.out;
  EXPECT_TRUE(std::filesystem::exists(s.dir.str("p.kpb")));
}

TEST(Cli, GridCountsCells) {
  Store s;
  const std::string m = s.dir.str("g.jsonl");
  ASSERT_EQ(run({"grid", "--store", s.root, "--slide", "s1", "--out", m}).rc, 0);
  EXPECT_EQ(line_count(slurp(m)), 15u);  // 5 columns by 3 rows
}

TEST(Cli, MetricsOnBasisEmbeddings) {
  TempDir dir;
  write_embeddings(dir.str("basis3.kem"), EmbeddingMatrixf::Identity(3, 3));
  const Result r = run({"metrics", "odcorr", "--embeddings", dir.str("basis3.kem")});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(r.out, "odcorr=0.500000\n");
  const Result k = run({"metrics", "rankme", "--embeddings", dir.str("basis3.kem")});
  ASSERT_EQ(k.rc, 0) << k.err;
  EXPECT_EQ(k.out.rfind("rankme=2.99", 0), 0u) << k.out;
}

TEST(Cli, ProbeRunsFiveSeeds) {
  TempDir dir;
  CounterRng rng(2);
  EmbeddingMatrixf z(200, 4);
  std::ofstream labels(dir.str("l.jsonl"));
  for (int i = 0; i < 200; ++i) {
    const int y = i % 2;
    for (int j = 0; j < 4; ++j) {
      z(i, j) = static_cast<float>(rng.uniform() - 0.5 + (j == 0 ? 2.0 * y : 0.0));
    }
    labels << R"({"row": )" << i << R"(, "label": )" << y << R"(, "group": "p)" << i / 4
           << "\"}\n";
  }
  labels.close();
  write_embeddings(dir.str("z.kem"), z);
  const Result r = run({"probe", "--embeddings", dir.str("z.kem"), "--labels", dir.str("l.jsonl"),
                        "--out", dir.str("r.json")});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(line_count(r.out), 6u);
  const auto mean_at = r.out.find("mean=");
  ASSERT_NE(mean_at, std::string::npos);
  EXPECT_GE(std::stod(r.out.substr(mean_at + 5)), 0.95) << r.out;
  EXPECT_TRUE(std::filesystem::exists(dir.str("r.json")));
}
