#ifndef NVLM_C_API_H
#define NVLM_C_API_H

/* C surface of the nvlm library. All state lives behind an opaque context;
 * every operation reports a status code and, on failure, leaves a message
 * retrievable with nvlm_last_error(). String results are heap-allocated and
 * owned by the caller; release them with nvlm_string_free(). */

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nvlm_status {
  NVLM_OK = 0,
  NVLM_ERR_INVALID_ARG = 1, /* bad input or unusable config */
  NVLM_ERR_SHAPE = 2,       /* dimension conflict */
  NVLM_ERR_IO = 3,          /* file read/write problem */
  NVLM_ERR_CHECK_FAILED = 4,/* a numeric or structural check did not hold */
  NVLM_ERR_INTERNAL = 5     /* broken invariant inside the library */
} nvlm_status;

typedef struct nvlm_ctx nvlm_ctx;

const char* nvlm_version(void);

nvlm_status nvlm_ctx_create(nvlm_ctx** out);
void nvlm_ctx_destroy(nvlm_ctx* ctx);

/* Message from the most recent failing call on this context; empty string
 * after a successful call. The pointer stays valid until the next call. */
const char* nvlm_last_error(const nvlm_ctx* ctx);

/* Merges a config file into the context. Later loads and nvlm_set_option
 * calls override earlier values; unset keys fall back to built-in defaults. */
nvlm_status nvlm_load_config(nvlm_ctx* ctx, const char* path);
nvlm_status nvlm_set_option(nvlm_ctx* ctx, const char* key, const char* value);

void nvlm_string_free(char* s);

/* Tiles the image at image_path, writes tile PNGs plus manifest.json into
 * out_dir (created if missing, pass NULL to skip writing), and returns the
 * manifest. */
nvlm_status nvlm_tile_image(nvlm_ctx* ctx, const char* image_path, const char* out_dir,
                            char** manifest_json);

/* Builds the decoder sequence for one example given as JSON:
 *   {"system": "...", "user": "...", "response": "...",
 *    "image": {"width": W, "height": H}}        (image optional)
 * Returns a single-line sequence record as JSON. */
nvlm_status nvlm_build_sequence(nvlm_ctx* ctx, const char* example_json, char** record_json);

/* Finite-difference check per parameter group of the configured model.
 * corrupt != 0 deliberately skews the analytic gradients first (negative
 * control). Returns NVLM_ERR_CHECK_FAILED when any group is out of
 * tolerance; *report carries one line per group either way. */
nvlm_status nvlm_grad_check(nvlm_ctx* ctx, int corrupt, char** report);

/* Runs the overfit harness on the synthetic corpus. *csv holds the loss
 * curve; final_loss and reached (0/1) may be NULL. */
nvlm_status nvlm_overfit(nvlm_ctx* ctx, char** csv, double* final_loss, int* reached);

/* Analytic cost report for the configured decoder; run_bench != 0 also runs
 * the microbenchmark and fills measured times. Either output may be NULL. */
nvlm_status nvlm_perf(nvlm_ctx* ctx, int run_bench, char** json, char** table);

/* Canonical key = value rendering of the effective configuration. */
nvlm_status nvlm_dump_config(nvlm_ctx* ctx, char** text);

#ifdef __cplusplus
}
#endif

#endif /* NVLM_C_API_H */
