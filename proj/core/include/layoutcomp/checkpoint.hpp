#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "layoutcomp/model.hpp"
#include "layoutcomp/optim.hpp"

namespace layoutcomp {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::unique_ptr<DecoderModel<float>> model;
  std::optional<ad::AdamState<float>> adam;
  std::string meta_json = "{}";  // free-form trainer bookkeeping
  std::string hash;              // FNV-1a 64 of the file bytes, hex
};

/// Writes the model (and optionally the optimizer state) to `path`. The file starts with a
/// magic line, a version line and a JSON header holding the config and the name-to-shape
/// table, followed by little-endian f32 row-major tensor data in table order.
void save_checkpoint(const std::string& path, const DecoderModel<float>& model,
                     const ad::AdamState<float>* adam = nullptr, const std::string& meta_json = "{}");

/// Reads a checkpoint, checking every tensor name and shape against the stored config.
/// Throws CheckpointError on any mismatch, truncation or trailing data.
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const std::string& bytes);
std::string checkpoint_hash(const std::string& path);

}  // namespace layoutcomp
