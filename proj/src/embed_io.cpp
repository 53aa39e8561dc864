#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <variant>

#include "patchforge/codec.hpp"
#include "patchforge/embed_metrics.hpp"

namespace patchforge {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'K', 'E', 'M', '1'};
constexpr std::uint32_t kDtypeF32 = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_embeddings(const std::string& path, const EmbeddingMatrixf& z) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(z.rows()));
  put_u32(out, static_cast<std::uint32_t>(z.cols()));
  put_u32(out, kDtypeF32);
  out.reserve(out.size() + static_cast<std::size_t>(z.size()) * 4);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      put_u32(out, std::bit_cast<std::uint32_t>(z(i, j)));
    }
  }
  write_file_bytes(path, out);
}

EmbeddingMatrixf read_embeddings(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("'" + path + "' has bad magic (expected KEM1)");
  }
  const std::uint32_t n = get_u32(bytes.data() + 4);
  const std::uint32_t k = get_u32(bytes.data() + 8);
  const std::uint32_t dtype = get_u32(bytes.data() + 12);
  if (dtype != kDtypeF32) {
    throw FormatError("'" + path + "' has unsupported dtype tag " + std::to_string(dtype));
  }
  if (n < 2) {
    throw ValidationError("'" + path + "' holds " + std::to_string(n) +
                          " embeddings; at least 2 are required");
  }
  if (k < 1) {
    throw ValidationError("'" + path + "' has zero embedding dimensions");
  }
  const std::uint64_t want = static_cast<std::uint64_t>(n) * k * 4;
  if (bytes.size() - 16 != want) {
    throw FormatError("'" + path + "' payload is " + std::to_string(bytes.size() - 16) +
                      " bytes, header declares " + std::to_string(want));
  }
  EmbeddingMatrixf z(n, k);
  const std::uint8_t* p = bytes.data() + 16;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < k; ++j, p += 4) {
      const float v = std::bit_cast<float>(get_u32(p));
      if (!std::isfinite(v)) {
        throw ValidationError("'" + path + "' has a non-finite value at (row " +
                              std::to_string(i) + ", col " + std::to_string(j) + ")");
      }
      z(i, j) = v;
    }
  }
  return z;
}

LabelSet read_labels(const std::string& path, std::size_t n_rows) {
  std::ifstream in(path);
  if (!in) {
    throw NotFoundError("cannot open labels '" + path + "'");
  }
  using RawLabel = std::variant<std::int64_t, std::string>;
  std::vector<std::optional<RawLabel>> raw(n_rows);
  std::vector<std::string> groups(n_rows);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const std::string where = "'" + path + "' line " + std::to_string(lineno) + ": ";
    try {
      const json j = json::parse(line);
      const auto row = j.at("row").get<std::int64_t>();
      if (row < 0 || static_cast<std::size_t>(row) >= n_rows) {
        throw FormatError(where + "row " + std::to_string(row) + " outside 0.." +
                          std::to_string(n_rows - 1));
      }
      auto& slot = raw[static_cast<std::size_t>(row)];
      if (slot) {
        throw FormatError(where + "duplicate row " + std::to_string(row));
      }
      const json& label = j.at("label");
      if (label.is_number_integer()) {
        slot = RawLabel{label.get<std::int64_t>()};
      } else if (label.is_string()) {
        slot = RawLabel{label.get<std::string>()};
      } else {
        throw FormatError(where + "label must be an integer or a string");
      }
      const json& group = j.contains("group") ? j.at("group") : json();
      groups[static_cast<std::size_t>(row)] =
          group.is_null() ? "row:" + std::to_string(row)
                          : (group.is_string() ? group.get<std::string>() : group.dump());
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    }
  }
  std::map<RawLabel, int> ids;
  for (std::size_t i = 0; i < n_rows; ++i) {
    if (!raw[i]) {
      throw FormatError("'" + path + "' has no label for row " + std::to_string(i));
    }
    ids.emplace(*raw[i], 0);
  }
  LabelSet set;
  int next = 0;
  for (auto& [label, id] : ids) {
    id = next++;
    set.class_names.push_back(std::holds_alternative<std::string>(label)
                                  ? std::get<std::string>(label)
                                  : std::to_string(std::get<std::int64_t>(label)));
  }
  set.labels.reserve(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) {
    set.labels.push_back(ids.at(*raw[i]));
  }
  set.groups = std::move(groups);
  return set;
}

void write_labels(const std::string& path, const std::vector<int>& labels,
                  const std::vector<std::string>& groups) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot write labels '" + path + "'");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    json j{{"row", i}, {"label", labels[i]}};
    if (i < groups.size()) {
      j["group"] = groups[i];
    }
    out << j.dump() << '\n';
  }
}

}  // namespace patchforge
