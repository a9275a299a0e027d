// SPDX-License-Identifier: Apache-2.0

#include "igds/manifest.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <json.hpp>

#include "binio.hpp"
#include "igds/error.hpp"

namespace igds {

const StageRecord* RunManifest::find(const std::string& key) const {
  for (const auto& s : stages)
    if (s.key == key) return &s;
  return nullptr;
}

void RunManifest::upsert(StageRecord record) {
  bool replaced = false;
  for (auto& s : stages) {
    if (s.key == record.key) {
      s = std::move(record);
      replaced = true;
      break;
    }
  }
  if (!replaced) stages.push_back(std::move(record));
  std::uint64_t total = 0;
  for (auto& s : stages) {
    total += s.forward_passes;
    s.forward_passes_total = total;
  }
}

namespace {

using nlohmann::ordered_json;

ordered_json digests_json(const FileDigests& d) {
  ordered_json j = ordered_json::object();
  for (const auto& [name, hex] : d) j[name] = hex;
  return j;
}

FileDigests digests_from(const ordered_json& j) {
  FileDigests d;
  for (auto it = j.begin(); it != j.end(); ++it) d.emplace_back(it.key(), it.value().get<std::string>());
  return d;
}

}  // namespace

std::string manifest_to_json(const RunManifest& m, bool with_wall_time) {
  ordered_json j;
  j["run_id"] = m.run_id;
  j["config_hash"] = m.config_hash;
  j["notes"] = m.notes;
  ordered_json stages = ordered_json::array();
  for (const auto& s : m.stages) {
    ordered_json e;
    e["key"] = s.key;
    e["stage"] = s.stage;
    e["strategy"] = s.strategy;
    e["seed"] = s.seed;
    e["items"] = s.items;
    e["inputs"] = digests_json(s.inputs);
    e["outputs"] = digests_json(s.outputs);
    e["forward_passes"] = s.forward_passes;
    e["forward_passes_total"] = s.forward_passes_total;
    if (with_wall_time) e["wall_time_s"] = s.wall_time_s;
    e["action"] = s.action;
    stages.push_back(std::move(e));
  }
  j["stages"] = std::move(stages);
  return j.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
  RunManifest m;
  try {
    const auto j = ordered_json::parse(text);
    m.run_id = j.at("run_id").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.notes = j.at("notes").get<std::vector<std::string>>();
    for (const auto& e : j.at("stages")) {
      StageRecord s;
      s.key = e.at("key").get<std::string>();
      s.stage = e.at("stage").get<std::string>();
      s.strategy = e.at("strategy").get<std::string>();
      s.seed = e.at("seed").get<std::uint64_t>();
      s.items = e.at("items").get<std::size_t>();
      s.inputs = digests_from(e.at("inputs"));
      s.outputs = digests_from(e.at("outputs"));
      s.forward_passes = e.at("forward_passes").get<std::uint64_t>();
      s.forward_passes_total = e.at("forward_passes_total").get<std::uint64_t>();
      if (e.contains("wall_time_s")) s.wall_time_s = e.at("wall_time_s").get<double>();
      s.action = e.at("action").get<std::string>();
      m.stages.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, fmt::format("manifest: {}", e.what()));
  }
  return m;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::io, "sha256 failed");
  }
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
  return out;
}

std::string file_sha256(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  return sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace igds
