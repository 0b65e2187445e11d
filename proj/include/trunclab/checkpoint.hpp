#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trunclab/sha256.hpp"

namespace trunclab {

// On-disk training snapshot. Little-endian layout:
//   magic "TLCK" | u32 version | u64 step | 32-byte config digest |
//   u32 n_entries | per entry: u16 name length, name, u64 count, count f64 |
//   first moments (count f64 each, entry order) | second moments likewise |
//   u64 adam_t | u32 blob length | blob
// The digest commits to the model and training configuration; loaders that
// care about compatibility compare it before trusting the rest.
struct Checkpoint {
  std::uint64_t step = 0;
  Digest256 digest{};
  std::vector<std::string> names;                 // manifest order
  std::vector<std::vector<double>> params;        // aligned with names
  std::vector<std::vector<double>> adam_m;
  std::vector<std::vector<double>> adam_v;
  std::uint64_t adam_t = 0;
  std::vector<std::uint8_t> state_blob;           // trainer-owned resume state
};

// Writes to path atomically (temp file plus rename).
void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace trunclab
