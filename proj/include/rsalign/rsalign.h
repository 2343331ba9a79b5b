/* Copyright 2026 The rsalign Authors
 * SPDX-License-Identifier: Apache-2.0 */

#ifndef RSALIGN_RSALIGN_H_
#define RSALIGN_RSALIGN_H_

#include <stddef.h>
#include <stdint.h>

#if defined(RSALIGN_BUILDING_SHARED)
#define RSA_API __attribute__((visibility("default")))
#else
#define RSA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes. */
typedef enum rsa_status {
  RSA_OK = 0,
  RSA_ERR_INTERNAL = 1,
  RSA_ERR_CONFIG = 2,  /* bad configuration, argument or shape */
  RSA_ERR_NUMERIC = 3, /* non-finite values, failed gradient check */
  RSA_ERR_IO = 4       /* unreadable, unwritable or malformed files */
} rsa_status;

/* Message for the last failing call on this thread; never NULL. */
RSA_API const char* rsa_last_error(void);
RSA_API const char* rsa_version(void);

/* Strings returned through char** out-parameters are owned by the caller. */
RSA_API void rsa_string_free(char* s);

/* ---- configuration ---- */

typedef struct rsa_config rsa_config;

/* profile: "toy" or "paper". */
RSA_API rsa_status rsa_config_from_profile(const char* profile, rsa_config** out);
/* Reports every problem in the document at once, one per line. */
RSA_API rsa_status rsa_config_from_json(const char* json_text, rsa_config** out);
RSA_API rsa_status rsa_config_set_seed(rsa_config* config, uint64_t seed);
/* NULL leaves a path unchanged. */
RSA_API rsa_status rsa_config_set_paths(rsa_config* config, const char* database,
                                        const char* retriever);
/* Retrieval depth k from the configuration. */
RSA_API size_t rsa_config_top_k(const rsa_config* config);
RSA_API rsa_status rsa_config_to_json(const rsa_config* config, char** out_json);
RSA_API void rsa_config_free(rsa_config* config);

/* ---- semantic database ---- */

typedef struct rsa_database rsa_database;

RSA_API rsa_status rsa_database_open(const char* path, rsa_database** out);
RSA_API size_t rsa_database_size(const rsa_database* db);
RSA_API uint32_t rsa_database_dim(const rsa_database* db);
/* Writes min(k, size) results into ids/scores (capacity k); *count receives
 * the number written. */
RSA_API rsa_status rsa_database_retrieve(const rsa_database* db, const double* query,
                                         size_t query_len, size_t k, uint64_t* ids,
                                         double* scores, size_t* count);
RSA_API rsa_status rsa_database_text(const rsa_database* db, uint64_t id, char** out_text);
RSA_API void rsa_database_free(rsa_database* db);

/* ---- retriever ---- */

typedef struct rsa_retriever rsa_retriever;

RSA_API rsa_status rsa_retriever_load(const char* path, rsa_retriever** out);
RSA_API uint32_t rsa_retriever_embed_dim(const rsa_retriever* r);
/* out must hold embed_dim values. */
RSA_API rsa_status rsa_retriever_encode_image(const rsa_retriever* r, const double* features,
                                              size_t len, double* out);
RSA_API rsa_status rsa_retriever_encode_text(const rsa_retriever* r, const char* text,
                                             double* out);
RSA_API void rsa_retriever_free(rsa_retriever* r);

/* ---- model ---- */

typedef struct rsa_model rsa_model;

RSA_API rsa_status rsa_model_load(const char* path, rsa_model** out);
RSA_API rsa_status rsa_model_save(const rsa_model* model, const char* path);
/* Greedy answer for a row-major rows x cols patch matrix. semantics holds
 * n_semantics retrieved descriptions (may be 0). */
RSA_API rsa_status rsa_model_generate(const rsa_model* model, const double* patches, size_t rows,
                                      size_t cols, const char* query, const char* const* semantics,
                                      size_t n_semantics, size_t max_tokens, char** out_text);
RSA_API void rsa_model_free(rsa_model* model);

/* ---- commands ----
 * Each writes a JSON report (or JSONL rows for retrieve/predict) into *out
 * when out is non-NULL, also on RSA_ERR_NUMERIC from a failed gradient check. */

RSA_API rsa_status rsa_cmd_build_db(const rsa_config* config, const char* texts_path,
                                    const char* retriever_path, const char* out_path, char** out);
RSA_API rsa_status rsa_cmd_train_retriever(const rsa_config* config, const char* pairs_path,
                                           const char* out_path, char** out);
/* retriever_path may be NULL or empty. */
RSA_API rsa_status rsa_cmd_retrieve(const char* db_path, const char* retriever_path,
                                    const char* image_path, size_t k, char** out);
/* init_path may be NULL or empty. */
RSA_API rsa_status rsa_cmd_train(const rsa_config* config, int stage, const char* data_path,
                                 const char* init_path, const char* out_path, char** out);
/* predictions_out may be NULL. */
RSA_API rsa_status rsa_cmd_predict(const rsa_config* config, const char* checkpoint_path,
                                   const char* inputs_path, const char* predictions_out,
                                   char** out);
/* task: classify, vqa, ground or caption. Scores predictions_path, or, when
 * it is NULL, outputs generated from checkpoint_path for the truth lines. */
RSA_API rsa_status rsa_cmd_eval(const rsa_config* config, const char* task,
                                const char* predictions_path, const char* checkpoint_path,
                                const char* truth_path, const char* predictions_out, char** out);
RSA_API rsa_status rsa_cmd_grad_check(const rsa_config* config, size_t probes_per_param,
                                      char** out);
RSA_API rsa_status rsa_cmd_synth(const rsa_config* config, const char* kind, size_t count,
                                 const char* out_path, char** out);

#ifdef __cplusplus
}
#endif

#endif /* RSALIGN_RSALIGN_H_ */
