#pragma once
// Append-only JSON-lines metrics stream.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace semivit {

using Json = nlohmann::ordered_json;

class MetricsWriter {
 public:
  MetricsWriter() = default;
  // Opens `path` for appending. When `keep_lines` is set the file is first cut
  // back to its first `keep_lines` records (used on resume).
  MetricsWriter(const std::string& path, bool truncate, std::uint64_t keep_lines = UINT64_MAX);

  void write(const Json& record);
  std::uint64_t lines() const { return lines_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::uint64_t lines_ = 0;
};

std::vector<Json> read_metrics(const std::string& path);

}  // namespace semivit
