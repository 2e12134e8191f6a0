#ifndef EXPERTMATCH_C_API_H
#define EXPERTMATCH_C_API_H

#include <stddef.h>
#include <stdint.h>

#if defined(EM_BUILDING_LIBRARY)
#define EM_API __attribute__((visibility("default")))
#else
#define EM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum em_status {
  EM_OK = 0,
  EM_INVALID_ARGUMENT = 1,
  EM_DIMENSION = 2,
  EM_STATE = 3,
  EM_NON_FINITE = 4,
  EM_IO = 5,
  EM_BAD_MAGIC = 6,
  EM_TRUNCATED = 7,
  EM_CHECKSUM = 8,
  EM_VERSION = 9,
  EM_COUNT_MISMATCH = 10,
  EM_NOT_FOUND = 11,
  EM_CONFLICT = 12,
  EM_CAPABILITY = 13,
  EM_DEGENERATE = 14,
  EM_EMPTY = 15,
  EM_INTERNAL = 16
} em_status;

typedef struct em_dataset em_dataset;
typedef struct em_expert em_expert;
typedef struct em_registry em_registry;
typedef struct em_report em_report;
typedef struct em_server em_server;

/* Message of the last failure on the calling thread ("" if none). */
EM_API const char* em_last_error(void);
EM_API const char* em_status_name(em_status status);
/* Frees strings returned through char** out-parameters. */
EM_API void em_string_free(char* s);

/* ---- Datasets ---- */
EM_API em_status em_dataset_load_idx(const char* images_path, const char* labels_path, const char* name,
                                     em_dataset** out);
EM_API em_status em_dataset_load_csv(const char* path, const char* name, em_dataset** out);
/* Dataset spec JSON: {"name", "loader": "idx-images"|"csv-vectors"|"synthetic", ...}. */
EM_API em_status em_dataset_from_spec(const char* spec_json, em_dataset** out);
EM_API size_t em_dataset_size(const em_dataset* d);
EM_API int em_dataset_num_classes(const em_dataset* d);
EM_API const char* em_dataset_name(const em_dataset* d);
EM_API void em_dataset_free(em_dataset* d);

/* Writes the native draw of a synthetic spec: <prefix>.csv for vectors,
   <prefix>-images-idx3-ubyte and <prefix>-labels-idx1-ubyte for images. */
EM_API em_status em_synthetic_write(const char* spec_json, const char* out_prefix);

/* ---- Experts ---- */
typedef struct em_train_options {
  double learning_rate;
  double decay_factor;
  uint32_t decay_every;
  uint32_t epochs;
  uint32_t batch_size;
  uint64_t seed;
  int use_server_split;  /* train on the server split only */
  uint64_t split_seed;
  int standardize;       /* fit on the training samples; stored in the expert */
  int compute_centroids;
} em_train_options;

EM_API void em_train_options_default(em_train_options* options);
EM_API em_status em_expert_train(const em_dataset* d, const char* expert_id, const em_train_options* options,
                                 em_expert** out);
/* Replaces the expert's centroids with class means of its encodings of `d`. */
EM_API em_status em_expert_compute_centroids(em_expert* e, const em_dataset* d);
EM_API em_status em_expert_load(const char* path, em_expert** out);
EM_API em_status em_expert_save(const em_expert* e, const char* path);
EM_API em_status em_expert_to_json(const em_expert* e, char** out_json);
EM_API em_status em_expert_from_json(const char* json, em_expert** out);
EM_API const char* em_expert_id(const em_expert* e);
EM_API void em_expert_free(em_expert* e);

/* ---- Registries ---- */
EM_API em_status em_registry_new(em_registry** out);
EM_API em_status em_registry_load(const char* path, em_registry** out);
EM_API em_status em_registry_save(const em_registry* r, const char* path);
/* Copies the expert in; fails with EM_CONFLICT on a duplicate id. */
EM_API em_status em_registry_add(em_registry* r, const em_expert* e);
EM_API size_t em_registry_size(const em_registry* r);
/* JSON summary of every entry, without weights. */
EM_API em_status em_registry_describe(const em_registry* r, char** out_json);
/* Request/response JSON as served by POST /v1/match. */
EM_API em_status em_registry_match(const em_registry* r, const char* request_json, char** out_response_json);
EM_API void em_registry_free(em_registry* r);

/* ---- Experiments ---- */
typedef void (*em_progress_fn)(const char* message, void* user);

/* Relative dataset paths resolve against base_dir (may be NULL). */
EM_API em_status em_experiment_run(const char* config_json, const char* base_dir, em_progress_fn progress,
                                   void* user, em_report** out);
EM_API em_status em_report_csv(const em_report* r, char** out);
EM_API em_status em_report_text(const em_report* r, char** out);
EM_API em_status em_report_save_registry(const em_report* r, const char* path);
EM_API void em_report_free(em_report* r);

/* ---- Service ---- */
typedef struct em_server_options {
  const char* host;           /* NULL: 127.0.0.1 */
  int port;                   /* 0: any free port */
  const char* registry_path;  /* NULL: in-memory */
  size_t max_body_bytes;      /* 0: 16 MiB */
  size_t max_experts;         /* 0: 64 */
  int use_environment;        /* apply EXPERTMATCH_* overrides */
} em_server_options;

EM_API em_status em_server_new(const em_server_options* options, em_server** out);
EM_API em_status em_server_bind(em_server* s, int* out_port);
/* Blocks until em_server_stop(). */
EM_API em_status em_server_run(em_server* s);
EM_API void em_server_stop(em_server* s);
EM_API void em_server_free(em_server* s);

EM_API em_status em_http_call(const char* base_url, const char* method, const char* path, const char* body,
                              int* out_status, char** out_body);

#ifdef __cplusplus
}
#endif

#endif
