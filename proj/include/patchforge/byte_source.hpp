#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace patchforge {

// Where the bytes of a store live. Paths are relative to the store root
// unless they are absolute http:// URLs.
class ByteSource {
 public:
  virtual ~ByteSource() = default;

  virtual std::vector<std::uint8_t> read_all(const std::string& path) = 0;
  virtual std::vector<std::uint8_t> read_range(const std::string& path, std::uint64_t offset,
                                               std::uint64_t length) = 0;
  virtual std::string describe() const = 0;

  // Number of read_all/read_range calls that reached the backing transport.
  std::uint64_t reads() const { return reads_.load(); }

 protected:
  void count_read() { reads_.fetch_add(1, std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> reads_{0};
};

class LocalSource final : public ByteSource {
 public:
  explicit LocalSource(std::string root);

  std::vector<std::uint8_t> read_all(const std::string& path) override;
  std::vector<std::uint8_t> read_range(const std::string& path, std::uint64_t offset,
                                       std::uint64_t length) override;
  std::string describe() const override { return root_; }

  const std::string& root() const { return root_; }

 private:
  std::string resolve(const std::string& path) const;
  std::string root_;
};

// HTTP store root. Ranged reads send `Range: bytes=offset-end` and require a
// 206 response whose body length matches the request.
class HttpSource final : public ByteSource {
 public:
  explicit HttpSource(std::string base_url);
  ~HttpSource() override;

  std::vector<std::uint8_t> read_all(const std::string& path) override;
  std::vector<std::uint8_t> read_range(const std::string& path, std::uint64_t offset,
                                       std::uint64_t length) override;
  std::string describe() const override { return base_url_; }

 private:
  struct Target {
    std::string host;  // scheme://host[:port]
    std::string path;
  };
  Target resolve(const std::string& path) const;
  std::vector<std::uint8_t> get(const std::string& path, const std::string* range,
                                std::uint64_t expected_length);

  std::string base_url_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{100};
};

// Retries TransportError with exponential backoff (initial, 2x initial, ...).
// Every other error propagates immediately.
class RetryingSource final : public ByteSource {
 public:
  RetryingSource(std::shared_ptr<ByteSource> inner, RetryPolicy policy = {});

  std::vector<std::uint8_t> read_all(const std::string& path) override;
  std::vector<std::uint8_t> read_range(const std::string& path, std::uint64_t offset,
                                       std::uint64_t length) override;
  std::string describe() const override { return inner_->describe(); }

  const ByteSource& inner() const { return *inner_; }

 private:
  template <typename Fn>
  std::vector<std::uint8_t> with_retry(Fn&& fn);

  std::shared_ptr<ByteSource> inner_;
  RetryPolicy policy_;
};

// Sleeps a fixed delay before every read; used by the throughput harness to
// emulate blob-storage round trips.
class LatencySource final : public ByteSource {
 public:
  LatencySource(std::shared_ptr<ByteSource> inner, std::chrono::microseconds delay);

  std::vector<std::uint8_t> read_all(const std::string& path) override;
  std::vector<std::uint8_t> read_range(const std::string& path, std::uint64_t offset,
                                       std::uint64_t length) override;
  std::string describe() const override { return inner_->describe(); }

 private:
  std::shared_ptr<ByteSource> inner_;
  std::chrono::microseconds delay_;
};

bool is_http_url(const std::string& s);

// LocalSource for a directory, HttpSource for an http:// URL.
std::shared_ptr<ByteSource> open_source(const std::string& root);

}  // namespace patchforge
