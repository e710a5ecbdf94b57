#ifndef VOXSYNTH_VOXSYNTH_H
#define VOXSYNTH_VOXSYNTH_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VXS_API __declspec(dllexport)
#else
#define VXS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes. */
typedef enum vxs_status {
  VXS_OK = 0,
  VXS_USAGE_ERROR = 1,   /* bad config, key, command or argument */
  VXS_RUNTIME_ERROR = 2  /* missing artifact, I/O or numerical failure */
} vxs_status;

typedef struct vxs_config vxs_config;

/* Message and category of the last failure on the calling thread. Valid
   until the next call on that thread; empty strings after a success. */
VXS_API const char* vxs_last_error(void);
VXS_API const char* vxs_last_error_kind(void);

VXS_API const char* vxs_version(void);

VXS_API vxs_status vxs_config_default(vxs_config** out);
/* Accepts a config file or a run manifest (.json) written by a previous run. */
VXS_API vxs_status vxs_config_load(const char* path, vxs_config** out);
VXS_API vxs_status vxs_config_parse(const char* text, vxs_config** out);
VXS_API void vxs_config_free(vxs_config* config);

/* `key` is `section.name` or `region.N.name`. */
VXS_API vxs_status vxs_config_set(vxs_config* config, const char* key, const char* value);
VXS_API vxs_status vxs_config_set_seed(vxs_config* config, uint64_t seed);

/* Copies a NUL-terminated string into buf when it fits; *needed receives the
   full length including the terminator either way. */
VXS_API vxs_status vxs_config_get(const vxs_config* config, const char* key, char* buf, size_t cap, size_t* needed);
VXS_API vxs_status vxs_config_serialize(const vxs_config* config, char* buf, size_t cap, size_t* needed);

/* Number of documented keys, and the i-th key with its description. */
VXS_API size_t vxs_config_key_count(void);
VXS_API vxs_status vxs_config_key_doc(size_t index, const char** key, const char** doc);

typedef void (*vxs_log_fn)(const char* message, void* user);

/* Runs train-codec, fit-glm, train-diffusion, synth, eval, augment-exp or
   pipeline. out_dir may be NULL to use the config's run.out. */
VXS_API vxs_status vxs_run(const vxs_config* config, const char* command, const char* out_dir, vxs_log_fn log,
                           void* user);

/* Renders one phantom from the config's phantom section. voxels and labels
   must hold D*H*W entries; labels may be NULL. */
VXS_API vxs_status vxs_phantom_render(const vxs_config* config, double age_years, double sex, uint64_t seed,
                                      double* voxels, uint8_t* labels, size_t count);

/* Cohen's d of a minus b with the pooled standard deviation. */
VXS_API vxs_status vxs_cohens_d(const double* a, size_t na, const double* b, size_t nb, double* out);

#ifdef __cplusplus
}
#endif

#endif
