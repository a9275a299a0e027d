// SPDX-License-Identifier: Apache-2.0
// Exercises the shared library through its C interface only.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <igds/igds.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  igds_string_free(s);
  return out;
}

std::filesystem::path fresh_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("version and status names") {
  CHECK(std::strlen(igds_version()) > 0);
  CHECK(std::string(igds_status_name(IGDS_OK)) == "ok");
  CHECK(std::string(igds_status_name(IGDS_E_STALENESS)).size() > 0);
}

TEST_CASE("presets load and unknown presets are rejected") {
  igds_config* cfg = nullptr;
  REQUIRE(igds_config_preset("smoke", &cfg) == IGDS_OK);
  REQUIRE(cfg != nullptr);
  igds_config_free(cfg);
  REQUIRE(igds_config_preset("desk", &cfg) == IGDS_OK);
  igds_config_free(cfg);
  cfg = nullptr;
  CHECK(igds_config_preset("huge", &cfg) == IGDS_E_CONFIGURATION);
  CHECK(cfg == nullptr);
  CHECK(std::string(igds_last_error()).find("huge") != std::string::npos);
}

TEST_CASE("null arguments are reported, not dereferenced") {
  CHECK(igds_config_preset(nullptr, nullptr) == IGDS_E_NULL_ARGUMENT);
  igds_config* cfg = nullptr;
  CHECK(igds_config_preset("smoke", nullptr) == IGDS_E_NULL_ARGUMENT);
  CHECK(igds_config_parse(nullptr, &cfg) == IGDS_E_NULL_ARGUMENT);
  CHECK(igds_config_hash(nullptr, nullptr) == IGDS_E_NULL_ARGUMENT);
  CHECK(igds_run_chain(nullptr, "/tmp/x", nullptr) == IGDS_E_NULL_ARGUMENT);
  CHECK(igds_model_load(nullptr, nullptr) == IGDS_E_NULL_ARGUMENT);
  igds_config_free(nullptr);
  igds_model_free(nullptr);
  igds_string_free(nullptr);
}

TEST_CASE("format, parse and hash agree") {
  igds_config* a = nullptr;
  REQUIRE(igds_config_preset("smoke", &a) == IGDS_OK);
  char* text = nullptr;
  REQUIRE(igds_config_format(a, &text) == IGDS_OK);
  const std::string t = take(text);
  igds_config* b = nullptr;
  REQUIRE(igds_config_parse(t.c_str(), &b) == IGDS_OK);
  char* ha = nullptr;
  char* hb = nullptr;
  REQUIRE(igds_config_hash(a, &ha) == IGDS_OK);
  REQUIRE(igds_config_hash(b, &hb) == IGDS_OK);
  const std::string sa = take(ha);
  CHECK(sa == take(hb));
  CHECK(sa.size() == 64);

  REQUIRE(igds_config_set(b, "eval", "pass_n", "3") == IGDS_OK);
  char* hc = nullptr;
  REQUIRE(igds_config_hash(b, &hc) == IGDS_OK);
  CHECK(take(hc) != sa);
  CHECK(igds_config_set(b, "eval", "no_such_key", "1") == IGDS_E_CONFIGURATION);
  CHECK(igds_config_parse("[model]\nd_model = banana\n", &b) != IGDS_OK);
  igds_config_free(a);
  igds_config_free(b);
}

TEST_CASE("missing files surface as io errors") {
  igds_model* m = nullptr;
  CHECK(igds_model_load("/nonexistent/model.bin", &m) == IGDS_E_IO);
  char* json = nullptr;
  CHECK(igds_manifest_json("/nonexistent/workdir", 0, &json) == IGDS_E_IO);
}

TEST_CASE("smoke chain, manifest and model round trip") {
  igds_config* cfg = nullptr;
  REQUIRE(igds_config_preset("smoke", &cfg) == IGDS_OK);
  const auto dir = fresh_dir("igds_capi_chain");
  REQUIRE(igds_run_chain(cfg, dir.c_str(), nullptr) == IGDS_OK);
  char* json = nullptr;
  REQUIRE(igds_manifest_json(dir.c_str(), 0, &json) == IGDS_OK);
  const std::string first = take(json);
  CHECK(first.find("\"analyze") != std::string::npos);

  // A second run skips every stage; without wall times the manifest is unchanged
  // apart from the recorded action.
  REQUIRE(igds_run_chain(cfg, dir.c_str(), nullptr) == IGDS_OK);
  REQUIRE(igds_manifest_json(dir.c_str(), 0, &json) == IGDS_OK);
  const std::string second = take(json);
  CHECK(second.find("\"skipped\"") != std::string::npos);
  CHECK(second.find("\"ran\"") == std::string::npos);

  igds_model* model = nullptr;
  REQUIRE(igds_model_load((dir / "model.bin").c_str(), &model) == IGDS_OK);
  std::uint32_t vocab = 0;
  REQUIRE(igds_model_vocab_size(model, &vocab) == IGDS_OK);
  CHECK(vocab == 64);
  const std::int32_t prompt[] = {1, 8, 3, 9, 2};
  std::vector<std::int32_t> a(4), b(4);
  REQUIRE(igds_model_generate(model, prompt, 5, 4, a.data()) == IGDS_OK);
  REQUIRE(igds_model_generate(model, prompt, 5, 4, b.data()) == IGDS_OK);
  CHECK(a == b);
  for (auto t : a) CHECK((t >= 0 && t < 64));
  const std::int32_t bad[] = {1, 99};
  CHECK(igds_model_generate(model, bad, 2, 1, a.data()) == IGDS_E_INDEX);
  igds_model_free(model);

  CHECK(igds_run_stage(cfg, "no-such-stage", dir.c_str(), nullptr) == IGDS_E_CONFIGURATION);
  igds_config_free(cfg);
  std::filesystem::remove_all(dir);
}
