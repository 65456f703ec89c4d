#pragma once

#include <string>

#include "json.hpp"

#include "helprank/numerics.hpp"

namespace helprank {

// Container file for named float32 tensors.
//
//   "HRNK"  magic
//   u32     format version (1)
//   u32     tensor count
//   per tensor: u32 name length, name bytes, u64 rows, u64 cols
//   per tensor: rows*cols float32 payload, row-major
//   u64     FNV-1a checksum over all payload bytes
//
// All integers and floats little-endian. A JSON sidecar at <path>.json lists
// names, shapes, the checksum and caller metadata.

void save_checkpoint(const std::string& path, const ParamSet<float>& params,
                     const nlohmann::json& meta = nlohmann::json::object());

struct Checkpoint {
  ParamSet<float> params;
  nlohmann::json meta;
};

// Throws CorruptTable on bad magic, truncation or checksum mismatch.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace helprank
