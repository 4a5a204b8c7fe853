#pragma once
// Binary training checkpoints with a key=value sidecar ("<path>.meta").
//
// Layout (little endian): "SVITCKPT", u32 version, u64 config hash, i64 global
// step, i32 stage, i32 epochs done, u8 stage complete, i64 optimizer steps,
// u64 metrics lines, string run id, u32 section count, then per section a name
// and its tensors (name, rank, dims, raw float32 values). Strings are u32
// length + bytes.

#include <cstdint>
#include <map>
#include <string>

#include "semivit/params.hpp"

namespace semivit {

struct Checkpoint {
  std::string run_id;
  std::uint64_t config_hash = 0;
  std::int64_t global_step = 0;
  int stage = 2;
  int epochs_done = 0;
  bool stage_complete = false;
  std::int64_t optimizer_steps = 0;
  std::uint64_t metrics_lines = 0;  // metrics records written when this was saved
  ParamSet<float> student;
  ParamSet<float> teacher;  // empty outside stage 3
  ParamSet<float> adam_m;
  ParamSet<float> adam_v;
  std::map<std::string, std::string> meta;  // extra sidecar lines (metric snapshot)
};

// Writes atomically (temporary file + rename), then the sidecar.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Throws DataError on a malformed or truncated file.
Checkpoint load_checkpoint(const std::string& path);
std::map<std::string, std::string> read_sidecar(const std::string& path);

// Copies tensors from `src` into `dst` by name. Every tensor of `dst` must be
// present with the same shape, except the classifier head when
// `allow_head_mismatch` (it keeps its current values). Throws DataError naming
// the tensor.
void load_params_by_name(ParamSet<float>& dst, const ParamSet<float>& src,
                         bool allow_head_mismatch);

}  // namespace semivit
