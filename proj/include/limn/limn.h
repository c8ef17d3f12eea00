/* C interface to the limn library.
 *
 * Every function returns a limn_status. On failure the message is available
 * from limn_last_error() until the next call on the same thread. Strings
 * returned through char** out-parameters are owned by the caller and must be
 * released with limn_string_free(). Handles are released with their _free
 * function; passing NULL to a _free function is a no-op.
 *
 * Configuration is passed as key=value text, one pair per line, '#' comments.
 * A NULL config means all defaults.
 * Triplet sources are a split name (train, val, test, all) or a path to a
 * triplets.jsonl file.
 */
#ifndef LIMN_LIMN_H
#define LIMN_LIMN_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(LIMN_BUILDING_LIBRARY)
#define LIMN_API __attribute__((visibility("default")))
#else
#define LIMN_API
#endif

typedef enum limn_status {
  LIMN_OK = 0,
  LIMN_ERR_INVALID_ARGUMENT = 1,
  LIMN_ERR_DIMENSION = 2,
  LIMN_ERR_DOMAIN = 3,
  LIMN_ERR_IO = 4,
  LIMN_ERR_PARSE = 5,
  LIMN_ERR_TRAINING = 6,
  LIMN_ERR_NOT_FOUND = 7,
  LIMN_ERR_STATE = 8,
  LIMN_ERR_INTERNAL = 99
} limn_status;

typedef struct limn_dataset limn_dataset;
typedef struct limn_model limn_model;
typedef struct limn_captioner limn_captioner;

LIMN_API const char* limn_version(void);
LIMN_API const char* limn_last_error(void);
LIMN_API void limn_string_free(char* s);

/* Resolves `config` for a command (gen-data, train, eval, score, mine-pairs,
 * caption, self-train, report) and returns every key it reads with its value. */
LIMN_API limn_status limn_config_resolve(const char* command, const char* config, char** resolved);

/* JSON array of the config keys a command reads. */
LIMN_API limn_status limn_config_keys(const char* command, char** json);

/* Datasets. Config keys: items, triplets, slots, max_edits, noise, seed. */
LIMN_API limn_status limn_dataset_generate(const char* config, limn_dataset** out);
LIMN_API limn_status limn_dataset_load(const char* dir, limn_dataset** out);
LIMN_API limn_status limn_dataset_save(const limn_dataset* ds, const char* dir);
/* {"items", "triplets", "slots", "vocab", "splits": {...}, "max_caption_clauses"} */
LIMN_API limn_status limn_dataset_summary(const limn_dataset* ds, char** json);
LIMN_API void limn_dataset_free(limn_dataset* ds);

/* Retrieval model. Training config: the train command's keys. epochs=0 yields
 * the untrained initialization. */
LIMN_API limn_status limn_model_train(const limn_dataset* ds, const char* config, limn_model** out);
LIMN_API limn_status limn_model_load(const char* manifest, limn_model** out);
LIMN_API limn_status limn_model_save(const limn_model* m, const char* manifest);
LIMN_API limn_status limn_model_hash(const limn_model* m, char** hex);
/* Recall report for `source`; `ks` is a comma list or NULL for the model's own. */
LIMN_API limn_status limn_model_evaluate(const limn_model* m, const limn_dataset* ds, const char* source,
                                         const char* ks, char** report_json);
/* metrics.json and its CSV mirror; `test_report_json` may be NULL. */
LIMN_API limn_status limn_model_metrics(const limn_model* m, const char* test_report_json, char** json, char** csv);
/* One JSON line per triplet of `source`, with its score. */
LIMN_API limn_status limn_model_score(const limn_model* m, const limn_dataset* ds, const char* source, char** jsonl);
LIMN_API void limn_model_free(limn_model* m);

/* Difference captioner. Config: the caption command's keys. */
LIMN_API limn_status limn_captioner_train(const limn_dataset* ds, const char* config, limn_captioner** out);
LIMN_API limn_status limn_captioner_load(const char* manifest, limn_captioner** out);
LIMN_API limn_status limn_captioner_save(const limn_captioner* c, const char* manifest);
/* captions.jsonl lines for every pair in `pairs_jsonl_path`. */
LIMN_API limn_status limn_captioner_caption(const limn_captioner* c, const limn_dataset* ds,
                                            const char* pairs_jsonl_path, char** jsonl);
LIMN_API limn_status limn_captioner_evaluate(const limn_captioner* c, const limn_dataset* ds, const char* source,
                                             char** json);
LIMN_API void limn_captioner_free(limn_captioner* c);

/* pairs.jsonl text. `model` may be NULL for tfidf_title. */
LIMN_API limn_status limn_mine_pairs(const limn_dataset* ds, const limn_model* model, const char* config,
                                     char** jsonl);

/* Runs the self-training loop, writes best_model.json and best_captioner.json
 * (with payloads) under `out_dir` and returns selftrain_report.json. */
LIMN_API limn_status limn_self_train(const limn_dataset* ds, const char* config, const char* out_dir,
                                     char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* LIMN_LIMN_H */
