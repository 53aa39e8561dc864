#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "patchforge/image.hpp"
#include "patchforge/rng.hpp"

namespace patchforge::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("patchforge-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = {}) const {
    return child.empty() ? path_.string() : (path_ / child).string();
  }

 private:
  std::filesystem::path path_;
};

// Every pixel independent noise, so any misplaced pixel shows up.
inline Image noise_image(int w, int h, std::uint64_t seed) {
  Image img(w, h);
  CounterRng rng(seed);
  for (auto& v : img.buffer()) {
    v = static_cast<std::uint8_t>(rng.below(256));
  }
  return img;
}

}  // namespace patchforge::testing
