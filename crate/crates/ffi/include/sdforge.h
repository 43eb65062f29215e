#ifndef SDFORGE_H
#define SDFORGE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SdforgeStatus {
  SDFORGE_STATUS_OK = 0,
  SDFORGE_STATUS_NULL_ARGUMENT = 1,
  SDFORGE_STATUS_INVALID_UTF8 = 2,
  SDFORGE_STATUS_IO = 3,
  SDFORGE_STATUS_PARSE = 4,
  SDFORGE_STATUS_NOT_FOUND = 5,
  SDFORGE_STATUS_MODEL = 6,
  SDFORGE_STATUS_EXPLAIN = 7,
  SDFORGE_STATUS_BAD_DIMENSIONS = 8,
  SDFORGE_STATUS_PANIC = 9,
} SdforgeStatus;

/**
 * Opaque byte-offset index.
 */
typedef struct SdforgeIndex SdforgeIndex;

/**
 * Opaque fitted model.
 */
typedef struct SdforgeModel SdforgeModel;

typedef struct SdforgeLocation {
  uint32_t file_id;
  uint64_t offset;
  uint64_t length;
} SdforgeLocation;

typedef struct SdforgeDescriptors {
  double molwt;
  double tpsa;
  uint32_t num_h_donors;
  uint32_t num_h_acceptors;
  uint32_t num_rotatable_bonds;
  uint32_t num_aromatic_rings;
  double fraction_csp3;
  uint32_t heavy_atom_count;
  /**
   * Rule of five with the logP supplied by the caller.
   */
  bool lipinski_compliant;
} SdforgeDescriptors;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `capacity`. Returns the full message length without the NUL.
 *
 * # Safety
 * `buffer` is null or valid for `capacity` bytes.
 */
size_t sdforge_last_error(char *buffer, size_t capacity);

/**
 * Builds an index over `n_paths` SDF files keyed by `key_tag`.
 *
 * # Safety
 * `paths` holds `n_paths` NUL-terminated strings; `out` is writable.
 */
enum SdforgeStatus sdforge_index_build(const char *const *paths,
                                       size_t n_paths,
                                       const char *key_tag,
                                       size_t workers,
                                       struct SdforgeIndex **out);

/**
 * # Safety
 * `path` is NUL-terminated; `out` is writable.
 */
enum SdforgeStatus sdforge_index_load(const char *path, struct SdforgeIndex **out);

/**
 * # Safety
 * `index` comes from this library; `path` is NUL-terminated.
 */
enum SdforgeStatus sdforge_index_save(const struct SdforgeIndex *index, const char *path);

/**
 * Number of entries; 0 for a null handle.
 *
 * # Safety
 * `index` is null or comes from this library.
 */
size_t sdforge_index_len(const struct SdforgeIndex *index);

/**
 * Writes the location of `identifier`, or returns `NotFound`.
 *
 * # Safety
 * `index` comes from this library; `identifier` is NUL-terminated; `out` is writable.
 */
enum SdforgeStatus sdforge_index_lookup(const struct SdforgeIndex *index,
                                        const char *identifier,
                                        struct SdforgeLocation *out);

/**
 * Copies the path of `file_id` like [`sdforge_last_error`]; returns the full
 * length, or 0 for an unknown id.
 *
 * # Safety
 * `index` comes from this library; `buffer` is null or valid for `capacity` bytes.
 */
size_t sdforge_index_file_path(const struct SdforgeIndex *index,
                               uint32_t file_id,
                               char *buffer,
                               size_t capacity);

/**
 * # Safety
 * `index` is null or comes from this library and is not used afterwards.
 */
void sdforge_index_free(struct SdforgeIndex *index);

/**
 * Descriptors of one V2000 molfile (`len` bytes, no NUL needed) with the
 * built-in weights and TPSA table.
 *
 * # Safety
 * `molfile` is valid for `len` bytes; `out` is writable.
 */
enum SdforgeStatus sdforge_descriptors(const uint8_t *molfile,
                                       size_t len,
                                       double logp,
                                       struct SdforgeDescriptors *out);

/**
 * # Safety
 * `path` is NUL-terminated; `out` is writable.
 */
enum SdforgeStatus sdforge_model_load(const char *path, struct SdforgeModel **out);

/**
 * Feature count the model expects; 0 for a null handle.
 *
 * # Safety
 * `model` is null or comes from this library.
 */
size_t sdforge_model_n_features(const struct SdforgeModel *model);

/**
 * Predicts `n_rows` rows of a row-major `n_rows × n_features` matrix.
 *
 * # Safety
 * `model` comes from this library; `x` holds `n_rows·n_features` values;
 * `out` holds `n_rows`.
 */
enum SdforgeStatus sdforge_model_predict(const struct SdforgeModel *model,
                                         const double *x,
                                         size_t n_rows,
                                         size_t n_features,
                                         double *out);

/**
 * Exact Shapley values of one row against a row-major background.
 * Writes `n_features` values to `phi` and the background mean prediction
 * to `base_value`.
 *
 * # Safety
 * `model` comes from this library; `background` holds
 * `n_background·n_features` values; `row` and `phi` hold `n_features`;
 * `base_value` is writable.
 */
enum SdforgeStatus sdforge_shapley(const struct SdforgeModel *model,
                                   const double *background,
                                   size_t n_background,
                                   const double *row,
                                   size_t n_features,
                                   double *phi,
                                   double *base_value);

/**
 * # Safety
 * `model` is null or comes from this library and is not used afterwards.
 */
void sdforge_model_free(struct SdforgeModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDFORGE_H */
