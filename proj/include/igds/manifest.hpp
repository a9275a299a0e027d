// SPDX-License-Identifier: Apache-2.0
//
// Run manifest: one record per executed stage with file digests, seeds and
// forward-pass counters, serialized as JSON.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace igds {

using FileDigests = std::vector<std::pair<std::string, std::string>>;  // name -> sha256 hex

struct StageRecord {
  std::string key;  // stage[/strategy][/s<seed>]
  std::string stage;
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t items = 0;  // samples the stage processed (pool size for scoring)
  FileDigests inputs;
  FileDigests outputs;
  std::uint64_t forward_passes = 0;
  std::uint64_t forward_passes_total = 0;  // running total over the manifest
  double wall_time_s = 0.0;
  std::string action;  // "ran" or "skipped"
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::vector<std::string> notes;
  std::vector<StageRecord> stages;

  const StageRecord* find(const std::string& key) const;
  // Replaces the record with the same key or appends a new one, then
  // recomputes the running forward-pass totals.
  void upsert(StageRecord record);
};

// Wall-time fields are omitted when `with_wall_time` is false, which is the
// form compared for determinism.
std::string manifest_to_json(const RunManifest& m, bool with_wall_time = true);
RunManifest manifest_from_json(const std::string& text);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

}  // namespace igds
