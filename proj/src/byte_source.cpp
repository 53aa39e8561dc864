#include "patchforge/byte_source.hpp"

#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "patchforge/codec.hpp"
#include "patchforge/error.hpp"

namespace patchforge {

namespace fs = std::filesystem;

bool is_http_url(const std::string& s) {
  return s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0;
}

LocalSource::LocalSource(std::string root) : root_(std::move(root)) {
  if (!fs::is_directory(root_)) {
    throw NotFoundError("store root '" + root_ + "' is not a directory");
  }
}

std::string LocalSource::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p.string() : (fs::path(root_) / p).string();
}

std::vector<std::uint8_t> LocalSource::read_all(const std::string& path) {
  count_read();
  const std::string full = resolve(path);
  if (!fs::exists(full)) {
    throw NotFoundError("'" + full + "' does not exist");
  }
  return read_file_bytes(full);
}

std::vector<std::uint8_t> LocalSource::read_range(const std::string& path, std::uint64_t offset,
                                                  std::uint64_t length) {
  count_read();
  const std::string full = resolve(path);
  std::ifstream in(full, std::ios::binary);
  if (!in) {
    throw NotFoundError("'" + full + "' does not exist");
  }
  in.seekg(static_cast<std::streamoff>(offset));
  std::vector<std::uint8_t> out(length);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(length));
  if (static_cast<std::uint64_t>(in.gcount()) != length) {
    throw TransportError("short read of " + std::to_string(length) + " bytes at offset " +
                         std::to_string(offset) + " in '" + full + "'");
  }
  return out;
}

HttpSource::HttpSource(std::string base_url) : base_url_(std::move(base_url)) {
  if (base_url_.rfind("http://", 0) != 0) {
    throw ValidationError("only http:// store roots are supported, got '" + base_url_ + "'");
  }
  while (!base_url_.empty() && base_url_.back() == '/') {
    base_url_.pop_back();
  }
}

HttpSource::~HttpSource() = default;

HttpSource::Target HttpSource::resolve(const std::string& path) const {
  const std::string url = is_http_url(path) ? path : base_url_ + "/" + path;
  const auto scheme_end = url.find("://") + 3;
  const auto path_start = url.find('/', scheme_end);
  if (path_start == std::string::npos) {
    return {url, "/"};
  }
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::vector<std::uint8_t> HttpSource::get(const std::string& path, const std::string* range,
                                          std::uint64_t expected_length) {
  count_read();
  const Target target = resolve(path);
  // httplib::Client is not safe for concurrent use; one per request keeps
  // workers independent.
  httplib::Client client(target.host);
  client.set_connection_timeout(5, 0);
  client.set_read_timeout(30, 0);
  httplib::Headers headers;
  if (range != nullptr) {
    headers.emplace("Range", *range);
  }
  auto res = client.Get(target.path, headers);
  if (!res) {
    throw TransportError("GET " + target.host + target.path + " failed: " +
                         httplib::to_string(res.error()));
  }
  if (res->status == 404) {
    throw NotFoundError("GET " + target.host + target.path + " returned 404");
  }
  if (range != nullptr ? res->status != 206 : (res->status < 200 || res->status >= 300)) {
    throw TransportError("GET " + target.host + target.path + " returned status " +
                         std::to_string(res->status));
  }
  if (range != nullptr && res->body.size() != expected_length) {
    throw TransportError("GET " + target.host + target.path + " returned " +
                         std::to_string(res->body.size()) + " bytes for a " +
                         std::to_string(expected_length) + "-byte range");
  }
  return {res->body.begin(), res->body.end()};
}

std::vector<std::uint8_t> HttpSource::read_all(const std::string& path) {
  return get(path, nullptr, 0);
}

std::vector<std::uint8_t> HttpSource::read_range(const std::string& path, std::uint64_t offset,
                                                 std::uint64_t length) {
  if (length == 0) {
    return {};
  }
  const std::string range =
      "bytes=" + std::to_string(offset) + "-" + std::to_string(offset + length - 1);
  return get(path, &range, length);
}

RetryingSource::RetryingSource(std::shared_ptr<ByteSource> inner, RetryPolicy policy)
    : inner_(std::move(inner)), policy_(policy) {
  if (policy_.attempts < 1) {
    throw ValidationError("retry attempts must be >= 1");
  }
}

template <typename Fn>
std::vector<std::uint8_t> RetryingSource::with_retry(Fn&& fn) {
  auto backoff = policy_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      count_read();
      return fn();
    } catch (const TransportError&) {
      if (attempt >= policy_.attempts) {
        throw;
      }
    }
    std::this_thread::sleep_for(backoff);
    backoff *= 2;
  }
}

std::vector<std::uint8_t> RetryingSource::read_all(const std::string& path) {
  return with_retry([&] { return inner_->read_all(path); });
}

std::vector<std::uint8_t> RetryingSource::read_range(const std::string& path,
                                                     std::uint64_t offset,
                                                     std::uint64_t length) {
  return with_retry([&] { return inner_->read_range(path, offset, length); });
}

LatencySource::LatencySource(std::shared_ptr<ByteSource> inner, std::chrono::microseconds delay)
    : inner_(std::move(inner)), delay_(delay) {}

std::vector<std::uint8_t> LatencySource::read_all(const std::string& path) {
  count_read();
  std::this_thread::sleep_for(delay_);
  return inner_->read_all(path);
}

std::vector<std::uint8_t> LatencySource::read_range(const std::string& path,
                                                    std::uint64_t offset,
                                                    std::uint64_t length) {
  count_read();
  std::this_thread::sleep_for(delay_);
  return inner_->read_range(path, offset, length);
}

std::shared_ptr<ByteSource> open_source(const std::string& root) {
  if (is_http_url(root)) {
    return std::make_shared<HttpSource>(root);
  }
  return std::make_shared<LocalSource>(root);
}

}  // namespace patchforge
