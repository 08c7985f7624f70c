#ifndef MPTLML_MPTLML_H
#define MPTLML_MPTLML_H

#include <stddef.h>
#include <stdint.h>

#if defined(MPTLML_BUILDING)
#define MPT_API __attribute__((visibility("default")))
#else
#define MPT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mpt_status {
  MPT_OK = 0,
  MPT_ERR_NOT_POSITIVE_DEFINITE = 1,
  MPT_ERR_ASYMMETRIC_INPUT = 2,
  MPT_ERR_DIMENSION_MISMATCH = 3,
  MPT_ERR_INVALID_MASK_SIZE = 4,
  MPT_ERR_ENUMERATION_TOO_LARGE = 5,
  MPT_ERR_EMPTY_CURVE = 6,
  MPT_ERR_MALFORMED_CURVE_FILE = 7,
  MPT_ERR_MALFORMED_INPUT = 8,
  MPT_ERR_NON_FINITE_LOSS = 9,
  MPT_ERR_CONFIG = 10,
  MPT_ERR_IO = 11,
  MPT_ERR_INVALID_ARGUMENT = 12,
  MPT_ERR_INTERNAL = 13
} mpt_status;

/* Opaque handles. */
typedef struct mpt_ppca mpt_ppca;
typedef struct mpt_dataset mpt_dataset;

MPT_API const char* mpt_version(void);
MPT_API const char* mpt_status_string(mpt_status status);
/* Message of the last failure on the calling thread ("" if none). */
MPT_API const char* mpt_last_error(void);

/* PPCA parameters. W is D x K in row-major order. */
MPT_API mpt_status mpt_ppca_create(int64_t dim, int64_t latent, const double* W, const double* mu,
                                   double log_sigma2, mpt_ppca** out);
MPT_API mpt_status mpt_ppca_load(const char* path, mpt_ppca** out);
MPT_API mpt_status mpt_ppca_save(const mpt_ppca* params, const char* path);
MPT_API mpt_status mpt_ppca_dims(const mpt_ppca* params, int64_t* dim, int64_t* latent);
MPT_API void mpt_ppca_destroy(mpt_ppca* params);

MPT_API mpt_status mpt_dataset_sample(const mpt_ppca* params, int64_t n, uint64_t seed, mpt_dataset** out);
MPT_API mpt_status mpt_dataset_load(const char* path, mpt_dataset** out);
MPT_API mpt_status mpt_dataset_save(const mpt_dataset* data, const char* path);
MPT_API mpt_status mpt_dataset_shape(const mpt_dataset* data, int64_t* n, int64_t* dim);
MPT_API mpt_status mpt_dataset_row(const mpt_dataset* data, int64_t row, double* out, size_t len);
MPT_API void mpt_dataset_destroy(mpt_dataset* data);

MPT_API mpt_status mpt_lml(const mpt_ppca* params, const mpt_dataset* data, double* out);
MPT_API mpt_status mpt_log_density(const mpt_ppca* params, const double* x, size_t len, double* out);

/* Score at mask size m. masks = 0 averages over every mask of that size. */
MPT_API mpt_status mpt_score(const mpt_ppca* params, const double* x, size_t len, int64_t m, int64_t masks,
                             uint64_t seed, double* value, double* std_err);
MPT_API mpt_status mpt_cumulative(const mpt_ppca* params, const double* x, size_t len, int64_t masks,
                                  uint64_t seed, double* out);
MPT_API mpt_status mpt_exact_cumulative(const mpt_ppca* params, const double* x, size_t len, double* out);

/* Binomial coefficient. digits (optional) receives the decimal value,
   truncated to cap - 1 characters. */
MPT_API mpt_status mpt_count_masks(int64_t dim, int64_t masked, double* log10_out, char* digits, size_t cap);

/* Area under an imported curve file; dim <= 0 infers it from the last row. */
MPT_API mpt_status mpt_curve_area_file(const char* path, int64_t dim, double* out);

/* Runs an experiment command. config_json and out_dir may be NULL; seed is
   applied only when has_seed is non-zero, workers only when positive.
   Returns the process exit code (0, 2, 3 or 4); details via mpt_last_error. */
MPT_API int mpt_run_experiment(const char* command, const char* config_json, const char* out_dir, int has_seed,
                               uint64_t seed, int workers);

#ifdef __cplusplus
}
#endif

#endif
