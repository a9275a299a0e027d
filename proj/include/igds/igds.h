/* SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the igds library. Every call returns an igds_status; on
 * failure the message is available from igds_last_error() on the calling
 * thread until the next call. Strings returned through char** are owned by
 * the caller and released with igds_string_free.
 */

#ifndef IGDS_IGDS_H
#define IGDS_IGDS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define IGDS_API __attribute__((visibility("default")))
#else
#define IGDS_API
#endif

typedef enum igds_status {
  IGDS_OK = 0,
  IGDS_E_DIMENSION = 1,
  IGDS_E_PARAMETER = 2,
  IGDS_E_INDEX = 3,
  IGDS_E_INPUT = 4,
  IGDS_E_LENGTH = 5,
  IGDS_E_CONFIGURATION = 6,
  IGDS_E_EVALUATION = 7,
  IGDS_E_DEPENDENCY = 8,
  IGDS_E_STALENESS = 9,
  IGDS_E_COMPARISON = 10,
  IGDS_E_IO = 11,
  IGDS_E_FORMAT = 12,
  IGDS_E_NULL_ARGUMENT = 13,
  IGDS_E_INTERNAL = 99
} igds_status;

typedef struct igds_config igds_config;
typedef struct igds_model igds_model;

IGDS_API const char* igds_version(void);
IGDS_API const char* igds_last_error(void);
IGDS_API const char* igds_status_name(igds_status status);
IGDS_API void igds_string_free(char* s);

/* Configuration. `preset` is "smoke" or "desk". */
IGDS_API igds_status igds_config_preset(const char* preset, igds_config** out);
IGDS_API igds_status igds_config_load(const char* path, igds_config** out);
IGDS_API igds_status igds_config_parse(const char* text, igds_config** out);
/* Overrides one key; the result is re-validated. */
IGDS_API igds_status igds_config_set(igds_config* cfg, const char* section, const char* key,
                                     const char* value);
IGDS_API igds_status igds_config_format(const igds_config* cfg, char** out_text);
IGDS_API igds_status igds_config_hash(const igds_config* cfg, char** out_hex);
IGDS_API void igds_config_free(igds_config* cfg);

/* Optional stage arguments; zero-initialize for config defaults. */
typedef struct igds_stage_options {
  int has_seed;
  uint64_t seed;
  const char* strategy; /* NULL for the configured strategy */
  int has_ratio;
  double ratio;
} igds_stage_options;

IGDS_API igds_status igds_run_stage(const igds_config* cfg, const char* stage, const char* workdir,
                                    const igds_stage_options* opts);
IGDS_API igds_status igds_run_chain(const igds_config* cfg, const char* workdir,
                                    const igds_stage_options* opts);
IGDS_API igds_status igds_manifest_json(const char* workdir, int with_wall_time, char** out_json);

/* Experiment grids. NULL/0 lists fall back to the configured ones. The
 * summary table is returned as TSV text. */
IGDS_API igds_status igds_run_experiment(const igds_config* cfg, const char* workdir,
                                         const char* const* strategies, size_t n_strategies,
                                         const uint64_t* seeds, size_t n_seeds,
                                         char** out_summary_tsv);
IGDS_API igds_status igds_run_ablation(const igds_config* cfg, const char* workdir,
                                       const uint64_t* seeds, size_t n_seeds,
                                       char** out_summary_tsv);

typedef enum igds_planted_status {
  IGDS_PLANTED_PASS = 0,
  IGDS_PLANTED_FAIL = 1,
  IGDS_PLANTED_INCONCLUSIVE = 2
} igds_planted_status;

typedef struct igds_planted_result {
  igds_planted_status status;
  size_t candidates;
  int has_pipeline_top1;
  uint32_t pipeline_layer, pipeline_index;
  double pipeline_delta;
  int has_oracle_top1;
  uint32_t oracle_layer, oracle_index;
  double oracle_delta;
} igds_planted_result;

IGDS_API igds_status igds_planted_test(const igds_config* cfg, uint64_t seed,
                                       igds_planted_result* out);

/* Identification from the set generated with `ident_seed`; returns the
 * feature-set file text. */
IGDS_API igds_status igds_identify_with_seed(const igds_config* cfg, const char* workdir,
                                             uint64_t ident_seed, char** out_text);

/* Models. */
IGDS_API igds_status igds_model_load(const char* path, igds_model** out);
IGDS_API igds_status igds_model_vocab_size(const igds_model* model, uint32_t* out);
/* Greedy continuation of `prompt`; `out` must hold `max_new` ids. */
IGDS_API igds_status igds_model_generate(const igds_model* model, const int32_t* prompt,
                                         size_t prompt_len, size_t max_new, int32_t* out);
IGDS_API void igds_model_free(igds_model* model);

#ifdef __cplusplus
}
#endif

#endif /* IGDS_IGDS_H */
