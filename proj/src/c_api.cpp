// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/rsalign.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "json.hpp"
#include "rsalign/config.hpp"
#include "rsalign/dual_encoder.hpp"
#include "rsalign/errors.hpp"
#include "rsalign/model.hpp"
#include "rsalign/pipeline.hpp"
#include "rsalign/semantic_db.hpp"

struct rsa_config {
  rsalign::RunConfig value;
};
struct rsa_database {
  rsalign::SemanticDatabase value;
};
struct rsa_retriever {
  rsalign::DualEncoderParams value;
};
struct rsa_model {
  rsalign::Model value;
};

namespace {

using rsalign::ErrorKind;
using nlohmann::json;

thread_local std::string g_last_error;

rsa_status status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kShape:
      return RSA_ERR_CONFIG;
    case ErrorKind::kNumeric:
    case ErrorKind::kDomain:
      return RSA_ERR_NUMERIC;
    case ErrorKind::kIo:
    case ErrorKind::kFormat:
      return RSA_ERR_IO;
  }
  return RSA_ERR_INTERNAL;
}

template <typename F>
rsa_status guarded(F&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const rsalign::ConfigError& e) {
    g_last_error.clear();
    for (const auto& p : e.problems()) g_last_error += (g_last_error.empty() ? "" : "\n") + p;
    if (g_last_error.empty()) g_last_error = e.what();
    return RSA_ERR_CONFIG;
  } catch (const rsalign::Error& e) {
    g_last_error = e.what();
    return status_for(e.kind());
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return RSA_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return RSA_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RSA_ERR_INTERNAL;
  }
}

rsa_status null_argument(const char* name) {
  g_last_error = std::string(name) + " is NULL";
  return RSA_ERR_CONFIG;
}

#define RSA_REQUIRE(arg) \
  if ((arg) == nullptr) return null_argument(#arg)

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p == nullptr) throw std::bad_alloc();
  std::memcpy(p, s.data(), s.size() + 1);
  return p;
}

void emit(char** out, const std::string& s) {
  if (out != nullptr) *out = dup(s);
}

std::string opt(const char* s) { return s == nullptr ? std::string() : std::string(s); }

std::string rows_text(const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
  return s;
}

}  // namespace

extern "C" {

const char* rsa_last_error(void) { return g_last_error.c_str(); }
const char* rsa_version(void) { return "0.1.0"; }
void rsa_string_free(char* s) { std::free(s); }

rsa_status rsa_config_from_profile(const char* profile, rsa_config** out) {
  RSA_REQUIRE(profile);
  RSA_REQUIRE(out);
  return guarded([&] {
    *out = new rsa_config{rsalign::RunConfig::from_profile(profile)};
    return RSA_OK;
  });
}

rsa_status rsa_config_from_json(const char* json_text, rsa_config** out) {
  RSA_REQUIRE(json_text);
  RSA_REQUIRE(out);
  return guarded([&] {
    *out = new rsa_config{rsalign::RunConfig::from_json(json_text)};
    return RSA_OK;
  });
}

rsa_status rsa_config_set_seed(rsa_config* config, uint64_t seed) {
  RSA_REQUIRE(config);
  config->value.seed = seed;
  return RSA_OK;
}

rsa_status rsa_config_set_paths(rsa_config* config, const char* database, const char* retriever) {
  RSA_REQUIRE(config);
  if (database != nullptr) config->value.database_path = database;
  if (retriever != nullptr) config->value.retriever_path = retriever;
  return RSA_OK;
}

size_t rsa_config_top_k(const rsa_config* config) {
  return config == nullptr ? 0 : config->value.retrieval.top_k;
}

rsa_status rsa_config_to_json(const rsa_config* config, char** out_json) {
  RSA_REQUIRE(config);
  RSA_REQUIRE(out_json);
  return guarded([&] {
    *out_json = dup(config->value.to_json());
    return RSA_OK;
  });
}

void rsa_config_free(rsa_config* config) { delete config; }

rsa_status rsa_database_open(const char* path, rsa_database** out) {
  RSA_REQUIRE(path);
  RSA_REQUIRE(out);
  return guarded([&] {
    *out = new rsa_database{rsalign::SemanticDatabase::load(path)};
    return RSA_OK;
  });
}

size_t rsa_database_size(const rsa_database* db) { return db == nullptr ? 0 : db->value.size(); }
uint32_t rsa_database_dim(const rsa_database* db) { return db == nullptr ? 0 : db->value.dim(); }

rsa_status rsa_database_retrieve(const rsa_database* db, const double* query, size_t query_len,
                                 size_t k, uint64_t* ids, double* scores, size_t* count) {
  RSA_REQUIRE(db);
  RSA_REQUIRE(query);
  RSA_REQUIRE(count);
  if (k > 0) {
    RSA_REQUIRE(ids);
    RSA_REQUIRE(scores);
  }
  return guarded([&] {
    const auto results = db->value.retrieve_top_k(std::span(query, query_len), k);
    for (std::size_t i = 0; i < results.size(); ++i) {
      ids[i] = results[i].id;
      scores[i] = results[i].score;
    }
    *count = results.size();
    return RSA_OK;
  });
}

rsa_status rsa_database_text(const rsa_database* db, uint64_t id, char** out_text) {
  RSA_REQUIRE(db);
  RSA_REQUIRE(out_text);
  return guarded([&] {
    *out_text = dup(db->value.record(id).text);
    return RSA_OK;
  });
}

void rsa_database_free(rsa_database* db) { delete db; }

rsa_status rsa_retriever_load(const char* path, rsa_retriever** out) {
  RSA_REQUIRE(path);
  RSA_REQUIRE(out);
  return guarded([&] {
    *out = new rsa_retriever{rsalign::DualEncoderParams::load(path)};
    return RSA_OK;
  });
}

uint32_t rsa_retriever_embed_dim(const rsa_retriever* r) {
  return r == nullptr ? 0 : r->value.dims.embed_dim;
}

rsa_status rsa_retriever_encode_image(const rsa_retriever* r, const double* features, size_t len,
                                      double* out) {
  RSA_REQUIRE(r);
  RSA_REQUIRE(features);
  RSA_REQUIRE(out);
  return guarded([&] {
    const auto e = rsalign::encode_image(r->value, std::span(features, len));
    std::copy(e.begin(), e.end(), out);
    return RSA_OK;
  });
}

rsa_status rsa_retriever_encode_text(const rsa_retriever* r, const char* text, double* out) {
  RSA_REQUIRE(r);
  RSA_REQUIRE(text);
  RSA_REQUIRE(out);
  return guarded([&] {
    const auto e = rsalign::encode_text(r->value, rsalign::tokenize_words(text, r->value.dims.vocab));
    std::copy(e.begin(), e.end(), out);
    return RSA_OK;
  });
}

void rsa_retriever_free(rsa_retriever* r) { delete r; }

rsa_status rsa_model_load(const char* path, rsa_model** out) {
  RSA_REQUIRE(path);
  RSA_REQUIRE(out);
  return guarded([&] {
    *out = new rsa_model{rsalign::Model::load(path)};
    return RSA_OK;
  });
}

rsa_status rsa_model_save(const rsa_model* model, const char* path) {
  RSA_REQUIRE(model);
  RSA_REQUIRE(path);
  return guarded([&] {
    model->value.save(path);
    return RSA_OK;
  });
}

rsa_status rsa_model_generate(const rsa_model* model, const double* patches, size_t rows,
                              size_t cols, const char* query, const char* const* semantics,
                              size_t n_semantics, size_t max_tokens, char** out_text) {
  RSA_REQUIRE(model);
  RSA_REQUIRE(patches);
  RSA_REQUIRE(out_text);
  if (n_semantics > 0) RSA_REQUIRE(semantics);
  return guarded([&] {
    const auto& cfg = model->value.config();
    rsalign::Matrix m(rows, cols);
    std::copy(patches, patches + rows * cols, m.values().begin());
    std::vector<std::string> texts(semantics, semantics + n_semantics);
    const auto ids = model->value.generate(m, rsalign::encode_text(cfg, opt(query)),
                                           rsalign::semantic_token_ids(cfg, texts), max_tokens);
    *out_text = dup(rsalign::decode_text(cfg, ids));
    return RSA_OK;
  });
}

void rsa_model_free(rsa_model* model) { delete model; }

rsa_status rsa_cmd_build_db(const rsa_config* config, const char* texts_path,
                            const char* retriever_path, const char* out_path, char** out) {
  RSA_REQUIRE(config);
  RSA_REQUIRE(texts_path);
  RSA_REQUIRE(retriever_path);
  RSA_REQUIRE(out_path);
  return guarded([&] {
    emit(out, rsalign::pipeline::build_db(config->value, texts_path, retriever_path, out_path).dump());
    return RSA_OK;
  });
}

rsa_status rsa_cmd_train_retriever(const rsa_config* config, const char* pairs_path,
                                   const char* out_path, char** out) {
  RSA_REQUIRE(config);
  RSA_REQUIRE(pairs_path);
  RSA_REQUIRE(out_path);
  return guarded([&] {
    emit(out, rsalign::pipeline::train_retriever(config->value, pairs_path, out_path).dump());
    return RSA_OK;
  });
}

rsa_status rsa_cmd_retrieve(const char* db_path, const char* retriever_path,
                            const char* image_path, size_t k, char** out) {
  RSA_REQUIRE(db_path);
  RSA_REQUIRE(image_path);
  return guarded([&] {
    emit(out, rows_text(rsalign::pipeline::retrieve(db_path, opt(retriever_path), image_path, k)));
    return RSA_OK;
  });
}

rsa_status rsa_cmd_train(const rsa_config* config, int stage, const char* data_path,
                         const char* init_path, const char* out_path, char** out) {
  RSA_REQUIRE(config);
  RSA_REQUIRE(data_path);
  RSA_REQUIRE(out_path);
  return guarded([&] {
    rsalign::pipeline::TrainRequest req{stage, data_path, opt(init_path), out_path};
    emit(out, rsalign::pipeline::train(config->value, req).dump());
    return RSA_OK;
  });
}

rsa_status rsa_cmd_predict(const rsa_config* config, const char* checkpoint_path,
                           const char* inputs_path, const char* predictions_out, char** out) {
  RSA_REQUIRE(config);
  RSA_REQUIRE(checkpoint_path);
  RSA_REQUIRE(inputs_path);
  return guarded([&] {
    const auto preds = rsalign::pipeline::predict(config->value, checkpoint_path, inputs_path,
                                                  opt(predictions_out));
    std::vector<json> rows;
    for (const auto& p : preds) rows.push_back({{"id", p.id}, {"output", p.output}});
    emit(out, rows_text(rows));
    return RSA_OK;
  });
}

rsa_status rsa_cmd_eval(const rsa_config* config, const char* task, const char* predictions_path,
                        const char* checkpoint_path, const char* truth_path,
                        const char* predictions_out, char** out) {
  RSA_REQUIRE(config);
  RSA_REQUIRE(task);
  RSA_REQUIRE(truth_path);
  return guarded([&] {
    const auto t = rsalign::eval::parse_task(task);
    if (!t) {
      throw rsalign::ConfigError({std::string("unknown task \"") + task +
                                  "\" (expected classify, vqa, ground or caption)"});
    }
    std::vector<rsalign::eval::Prediction> preds;
    if (predictions_path != nullptr) {
      preds = rsalign::eval::load_predictions(predictions_path);
    } else if (checkpoint_path != nullptr) {
      preds = rsalign::pipeline::predict(config->value, checkpoint_path, truth_path,
                                         opt(predictions_out));
    } else {
      throw rsalign::InvalidArgument("eval needs predictions or a checkpoint");
    }
    emit(out, rsalign::pipeline::evaluate(*t, preds, truth_path).dump());
    return RSA_OK;
  });
}

rsa_status rsa_cmd_grad_check(const rsa_config* config, size_t probes_per_param, char** out) {
  RSA_REQUIRE(config);
  return guarded([&] {
    const json report = rsalign::pipeline::grad_check(config->value, probes_per_param);
    emit(out, report.dump());
    if (!report["passed"].get<bool>()) {
      g_last_error = "gradient check failed: max relative error " +
                     report["max_relative_error"].dump();
      return RSA_ERR_NUMERIC;
    }
    return RSA_OK;
  });
}

rsa_status rsa_cmd_synth(const rsa_config* config, const char* kind, size_t count,
                         const char* out_path, char** out) {
  RSA_REQUIRE(config);
  RSA_REQUIRE(kind);
  RSA_REQUIRE(out_path);
  return guarded([&] {
    emit(out, rsalign::pipeline::synth(config->value, kind, count, out_path).dump());
    return RSA_OK;
  });
}

}  // extern "C"
