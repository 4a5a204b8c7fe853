#include "semivit/metrics.hpp"

#include <filesystem>

#include "semivit/errors.hpp"

namespace semivit {

MetricsWriter::MetricsWriter(const std::string& path, bool truncate, std::uint64_t keep_lines)
    : path_(path) {
  namespace fs = std::filesystem;
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  if (truncate) {
    std::ofstream(path, std::ios::trunc);
  } else if (fs::exists(path)) {
    std::vector<std::string> kept;
    {
      std::ifstream in(path);
      std::string line;
      while (kept.size() < keep_lines && std::getline(in, line)) kept.push_back(line);
    }
    std::ofstream rewrite(path, std::ios::trunc);
    for (const auto& l : kept) rewrite << l << '\n';
    lines_ = kept.size();
  }
  out_.open(path, std::ios::app);
  if (!out_) throw DataError("cannot open metrics file '" + path + "'");
}

void MetricsWriter::write(const Json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
  ++lines_;
}

std::vector<Json> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metrics file '" + path + "'");
  std::vector<Json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw DataError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace semivit
