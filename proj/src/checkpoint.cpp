#include "semivit/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "semivit/errors.hpp"

namespace semivit {

namespace {

constexpr char kMagic[8] = {'S', 'V', 'I', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename V>
  void pod(V v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void params(const std::string& section, const ParamSet<float>& p) {
    str(section);
    pod(static_cast<std::uint32_t>(p.count()));
    for (const auto& t : p) {
      str(t.name);
      pod(static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) pod(static_cast<std::uint64_t>(d));
      out_.write(reinterpret_cast<const char*>(t.value.data()),
                 static_cast<std::streamsize>(t.value.size() * sizeof(float)));
    }
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename V>
  V pod() {
    V v{};
    read(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > (1u << 20)) fail("string too long");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  std::pair<std::string, ParamSet<float>> params() {
    std::string section = str();
    ParamSet<float> p;
    const auto count = pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = str();
      const auto rank = pod<std::uint32_t>();
      if (rank > 8) fail("tensor '" + name + "' has rank " + std::to_string(rank));
      Shape shape;
      for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(pod<std::uint64_t>());
      if (shape_numel(shape) > (std::size_t{1} << 31)) fail("tensor '" + name + "' too large");
      const auto idx = p.add(name, shape, 0, false);
      read(p[idx].value.data(), p[idx].value.size() * sizeof(float));
    }
    return {std::move(section), std::move(p)};
  }
  [[noreturn]] void fail(const std::string& what) {
    throw DataError("checkpoint '" + path_ + "': " + what);
  }

 private:
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }
  std::ifstream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + tmp + "'");
    Writer w(out);
    out.write(kMagic, sizeof kMagic);
    w.pod(kVersion);
    w.pod(c.config_hash);
    w.pod(c.global_step);
    w.pod(static_cast<std::int32_t>(c.stage));
    w.pod(static_cast<std::int32_t>(c.epochs_done));
    w.pod(static_cast<std::uint8_t>(c.stage_complete ? 1 : 0));
    w.pod(c.optimizer_steps);
    w.pod(c.metrics_lines);
    w.str(c.run_id);
    std::vector<std::pair<const char*, const ParamSet<float>*>> sections = {
        {"student", &c.student}, {"teacher", &c.teacher}, {"adam_m", &c.adam_m},
        {"adam_v", &c.adam_v}};
    std::uint32_t present = 0;
    for (auto& s : sections) present += s.second->count() > 0 ? 1 : 0;
    w.pod(present);
    for (auto& [name, p] : sections) {
      if (p->count() > 0) w.params(name, *p);
    }
    out.flush();
    if (!out) throw DataError("failed writing checkpoint '" + tmp + "'");
  }
  fs::rename(tmp, target);

  std::ofstream meta(path + ".meta", std::ios::trunc);
  meta << "run_id=" << c.run_id << "\n"
       << "stage=" << c.stage << "\n"
       << "epoch=" << c.epochs_done << "\n"
       << "stage_complete=" << (c.stage_complete ? "true" : "false") << "\n"
       << "global_step=" << c.global_step << "\n"
       << "config_hash=" << c.config_hash << "\n";
  for (const auto& [k, v] : c.meta) meta << k << "=" << v << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  Reader r(in, path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (in.gcount() != sizeof magic || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    r.fail("not a checkpoint file");
  }
  if (r.pod<std::uint32_t>() != kVersion) r.fail("unsupported version");
  Checkpoint c;
  c.config_hash = r.pod<std::uint64_t>();
  c.global_step = r.pod<std::int64_t>();
  c.stage = r.pod<std::int32_t>();
  c.epochs_done = r.pod<std::int32_t>();
  c.stage_complete = r.pod<std::uint8_t>() != 0;
  c.optimizer_steps = r.pod<std::int64_t>();
  c.metrics_lines = r.pod<std::uint64_t>();
  c.run_id = r.str();
  const auto sections = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < sections; ++i) {
    auto [name, p] = r.params();
    if (name == "student") c.student = std::move(p);
    else if (name == "teacher") c.teacher = std::move(p);
    else if (name == "adam_m") c.adam_m = std::move(p);
    else if (name == "adam_v") c.adam_v = std::move(p);
    else r.fail("unknown section '" + name + "'");
  }
  if (c.student.count() == 0) r.fail("missing student parameters");
  return c;
}

std::map<std::string, std::string> read_sidecar(const std::string& path) {
  std::ifstream in(path + ".meta");
  if (!in) throw DataError("cannot open checkpoint sidecar '" + path + ".meta'");
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void load_params_by_name(ParamSet<float>& dst, const ParamSet<float>& src,
                         bool allow_head_mismatch) {
  for (auto& p : dst) {
    const bool is_head = p.name.rfind("head.", 0) == 0;
    if (!src.contains(p.name)) {
      if (allow_head_mismatch && is_head) continue;
      throw DataError("checkpoint is missing tensor '" + p.name + "'");
    }
    const auto& s = src.at(p.name);
    if (s.shape != p.shape) {
      if (allow_head_mismatch && is_head) continue;
      throw DataError("tensor '" + p.name + "' has shape " + shape_string(s.shape) +
                      " in the checkpoint, expected " + shape_string(p.shape));
    }
    p.value = s.value;
  }
}

}  // namespace semivit
