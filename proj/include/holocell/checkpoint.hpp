// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoints are a JSON manifest (run configuration, vocabulary, fixed
// permutations, tensor table) plus a sidecar of little-endian float64
// payloads. Loading restores every parameter bit-for-bit.

#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "holocell/cells.hpp"
#include "holocell/training.hpp"

namespace holocell {

nlohmann::json to_json(const RunConfig& config);
/// Inverse of to_json; throws DataError on missing or malformed fields.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Run manifest: configuration, library version, seed.
nlohmann::json run_manifest(const RunConfig& config);

struct Checkpoint {
  RunConfig config;
  std::unique_ptr<Model> model;
  std::size_t step = 0;
};

/// Writes `<stem>.json` and `<stem>.bin`.
void save_checkpoint(const std::filesystem::path& stem, const Model& model,
                     const RunConfig& config, std::size_t step);
/// Accepts the stem or either file. Throws DataError when the files are
/// missing, corrupt, or disagree with each other.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes `text` to `path` atomically (temporary file, then rename).
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace holocell
