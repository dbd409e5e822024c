#pragma once

#include <cstdint>
#include <string>

#include "mkd/run_config.hpp"
#include "mkd/trainer.hpp"

namespace mkd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (little-endian): magic "MKDCKPT1", u32 version,
/// u64 trajectory hash, u64 seed, i64 step, length-prefixed run-config JSON,
/// four networks (student 1, teacher 1, student 2, teacher 2), two momentum
/// sets, class statistics, and a trailing FNV-1a checksum of everything before it.
/// The master seed plus the step counter is the full RNG state, since every
/// random draw is keyed by (seed, stream, step).
struct Checkpoint {
  RunConfig config;
  MkdState state;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes through a temporary file and renames, so a crash never leaves a torn file.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mkd
