#ifndef MSNAS_MSNAS_H
#define MSNAS_MSNAS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define MSNAS_API __declspec(dllexport)
#else
#define MSNAS_API __attribute__((visibility("default")))
#endif

typedef enum msnas_status {
  MSNAS_OK = 0,
  MSNAS_ERR_RUNTIME = 1,   /* training diverged, search aborted, I/O failure */
  MSNAS_ERR_CONFIG = 2,    /* invalid configuration value or missing input */
  MSNAS_ERR_ARGUMENT = 3,  /* null pointer or out-of-range argument */
  MSNAS_ERR_FORMAT = 4,    /* corrupt file, digest mismatch, unknown version */
  MSNAS_ERR_ARCH = 5       /* architecture fails validation */
} msnas_status;

typedef struct msnas_config msnas_config;
typedef struct msnas_arch msnas_arch;

/* Process exit code for a status: 0 ok, 2 configuration, 1 otherwise. */
MSNAS_API int msnas_exit_code(msnas_status s);
MSNAS_API const char* msnas_status_name(msnas_status s);
MSNAS_API const char* msnas_version(void);

/* Message of the last failed call on this thread; "" if none. */
MSNAS_API const char* msnas_last_error(void);
/* Strings returned through char** out-parameters are owned by the caller. */
MSNAS_API void msnas_free_string(char* s);

/* ---- configuration ---- */
MSNAS_API msnas_status msnas_config_new(msnas_config** out);
MSNAS_API msnas_status msnas_config_load(const char* path, msnas_config** out);
MSNAS_API msnas_status msnas_config_parse(const char* ini_text, msnas_config** out);
MSNAS_API void msnas_config_free(msnas_config* cfg);
/* key is "section.key"; the assignment form takes "section.key=value". */
MSNAS_API msnas_status msnas_config_set(msnas_config* cfg, const char* key, const char* value);
MSNAS_API msnas_status msnas_config_assign(msnas_config* cfg, const char* assignment);
MSNAS_API msnas_status msnas_config_get(const msnas_config* cfg, const char* key, char** out);
MSNAS_API msnas_status msnas_config_validate(const msnas_config* cfg);
MSNAS_API msnas_status msnas_config_to_ini(const msnas_config* cfg, char** out);

/* ---- architecture files ---- */
MSNAS_API msnas_status msnas_arch_load(const char* path, msnas_arch** out);
MSNAS_API void msnas_arch_free(msnas_arch* arch);
MSNAS_API size_t msnas_arch_num_paths(const msnas_arch* arch);
MSNAS_API size_t msnas_arch_num_cells(const msnas_arch* arch);
MSNAS_API int msnas_arch_capped(const msnas_arch* arch);

/* ---- pipeline stages ---- */
MSNAS_API msnas_status msnas_count(int layers, int scales, int blocks, int num_ops, char** report);

MSNAS_API msnas_status msnas_synth(uint64_t seed, int count, int size, int num_classes,
                                   double noise, int channels, const char* out_dir);

/* Writes checkpoint.bin, loss.csv and manifest.json into out_dir. resume may
   be NULL. verbose prints one line per epoch to stderr. An aborted search
   still writes its checkpoint and returns MSNAS_ERR_RUNTIME. */
MSNAS_API msnas_status msnas_search(const msnas_config* cfg, const char* out_dir,
                                    const char* resume, int verbose);

/* Writes arch.json and arch.dot. n_paths 0 uses the checkpoint's
   decode.n_paths. *capped (optional) is set to 1 when fewer
   than n_paths paths exist. */
MSNAS_API msnas_status msnas_decode(const char* checkpoint, int n_paths, const char* out_dir,
                                    int* capped);

MSNAS_API msnas_status msnas_cost(const char* arch_path, int input_size, char** csv);
MSNAS_API msnas_status msnas_compare(const char* checkpoint, const int* n_paths, size_t count,
                                     int input_size, char** csv);

/* Writes metrics.csv, weights_fold<i>.bin and manifest.json. Returns
   MSNAS_ERR_RUNTIME only when every fold failed. */
MSNAS_API msnas_status msnas_train(const char* arch_path, const msnas_config* cfg,
                                   const char* out_dir, int verbose);

/* weights may be NULL when oracle is nonzero. */
MSNAS_API msnas_status msnas_eval(const char* arch_path, const char* weights,
                                  const char* dataset_dir, int oracle, char** csv);

/* Full supernet when arch_path is NULL, otherwise the arch's supernet with
   its paths highlighted. */
MSNAS_API msnas_status msnas_export_dot(int layers, int scales, const char* arch_path, char** dot);

#ifdef __cplusplus
}
#endif

#endif
