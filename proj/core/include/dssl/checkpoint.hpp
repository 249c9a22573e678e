#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dssl/contrastive.hpp"

namespace dssl {

/// Named tensors plus free-form metadata. On disk: <stem>.json (manifest) and <stem>.bin
/// (contiguous little-endian IEEE-754 doubles, tensors in manifest order).
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(const std::string& name, Tensor t);
  const Tensor* find(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
};

inline constexpr int kCheckpointVersion = 1;

std::filesystem::path manifest_path(const std::filesystem::path& stem);
std::filesystem::path blob_path(const std::filesystem::path& stem);

// Writes both files via temporaries and renames; non-finite tensors are rejected.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem);
// All-or-nothing: any inconsistency throws CheckpointError before anything is returned.
Checkpoint load_checkpoint(const std::filesystem::path& stem);

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

// Tensors are stored as "<prefix>.backbone.<name>" and "<prefix>.head.<name>".
void append_encoder(Checkpoint& ckpt, const std::string& prefix, const EncoderParams& enc);
// Validates every expected tensor before building the result; names the offending tensor.
EncoderParams load_encoder(const Checkpoint& ckpt, const std::string& prefix, const EncoderConfig& expected);

// Query, key and queue of a MoCo run, plus the encoder config under meta["encoder"].
Checkpoint moco_checkpoint(const MoCoState& state);

}  // namespace dssl
