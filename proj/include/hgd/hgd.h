#ifndef HGD_H
#define HGD_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define HGD_API __declspec(dllexport)
#else
#define HGD_API __attribute__((visibility("default")))
#endif

/* Status codes double as process exit codes for the CLI. */
typedef enum hgd_status {
  HGD_OK = 0,
  HGD_ERR_CONFIG = 2,  /* bad config, bad reference, bad shapes */
  HGD_ERR_NUMERIC = 3, /* divergence, degenerate fits */
  HGD_ERR_IO = 4       /* unreadable or unwritable files */
} hgd_status;

/* A lab is bound to one artifact root; every stage writes beneath it. */
typedef struct hgd_lab hgd_lab;

HGD_API const char* hgd_version(void);

HGD_API size_t hgd_stage_count(void);
/* Stage name by index, NULL past the end. */
HGD_API const char* hgd_stage_name(size_t index);

/* NULL on allocation failure or NULL/empty root. */
HGD_API hgd_lab* hgd_lab_open(const char* artifact_root);
HGD_API void hgd_lab_close(hgd_lab* lab);

/* Message for the most recent failing call on this lab; empty string when
 * the last call succeeded. Valid until the next call on the same lab. */
HGD_API const char* hgd_lab_last_error(const hgd_lab* lab);

/* Runs one stage from a JSON config file. overrides is a flat array of
 * 2*override_count strings: key, value, key, value... Keys use dots to
 * reach nested fields. On success the content-addressed output directory
 * is copied into out_dir (truncated to out_dir_len, always terminated). */
HGD_API hgd_status hgd_lab_run_stage(hgd_lab* lab, const char* config_path,
                                     const char* const* overrides,
                                     size_t override_count, char* out_dir,
                                     size_t out_dir_len);

/* Re-renders every stored analysis artifact into figures/*.svg. On success
 * the written paths, newline separated, are copied into paths (truncated
 * to paths_len, always terminated). */
HGD_API hgd_status hgd_lab_reproduce_figures(hgd_lab* lab, char* paths,
                                             size_t paths_len);

#ifdef __cplusplus
}
#endif

#endif /* HGD_H */
