#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "voxsynth/voxsynth.h"

static int failures = 0;

#define CHECK(cond)                                                 \
  do {                                                              \
    if (!(cond)) {                                                  \
      fprintf(stderr, "%s:%d: check failed: %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                   \
    }                                                               \
  } while (0)

static void count_lines(const char* message, void* user) {
  (void)message;
  ++*(int*)user;
}

int main(int argc, char** argv) {
  const char* out = argc > 1 ? argv[1] : "capi_out";

  CHECK(strlen(vxs_version()) > 0);

  vxs_config* cfg = NULL;
  CHECK(vxs_config_default(&cfg) == VXS_OK);
  CHECK(cfg != NULL);
  CHECK(strcmp(vxs_last_error(), "") == 0);

  size_t needed = 0;
  CHECK(vxs_config_serialize(cfg, NULL, 0, &needed) == VXS_OK);
  CHECK(needed > 100);
  char* text = malloc(needed);
  CHECK(vxs_config_serialize(cfg, text, needed, &needed) == VXS_OK);
  CHECK(strncmp(text, "[run]\nseed = 7\n", 15) == 0);

  vxs_config* again = NULL;
  CHECK(vxs_config_parse(text, &again) == VXS_OK);
  size_t needed2 = 0;
  char* text2 = malloc(needed);
  CHECK(vxs_config_serialize(again, text2, needed, &needed2) == VXS_OK);
  CHECK(needed2 == needed && strcmp(text, text2) == 0);
  free(text2);
  free(text);
  vxs_config_free(again);

  char buf[64];
  CHECK(vxs_config_set(cfg, "codec.iterations", "17") == VXS_OK);
  CHECK(vxs_config_get(cfg, "codec.iterations", buf, sizeof buf, &needed) == VXS_OK);
  CHECK(strcmp(buf, "17") == 0 && needed == 3);
  CHECK(vxs_config_get(cfg, "codec.iterations", buf, 2, &needed) == VXS_USAGE_ERROR);
  CHECK(needed == 3);
  CHECK(vxs_config_set_seed(cfg, 99) == VXS_OK);
  CHECK(vxs_config_get(cfg, "run.seed", buf, sizeof buf, &needed) == VXS_OK);
  CHECK(strcmp(buf, "99") == 0);

  CHECK(vxs_config_set(cfg, "codec.nothing", "1") == VXS_USAGE_ERROR);
  CHECK(strcmp(vxs_last_error_kind(), "config") == 0);
  CHECK(strlen(vxs_last_error()) > 0);
  CHECK(vxs_config_set(cfg, "codec.latent_dim", "7") == VXS_USAGE_ERROR);

  vxs_config* bad = NULL;
  CHECK(vxs_config_parse("[run]\nseed = x\n", &bad) == VXS_USAGE_ERROR);
  CHECK(bad == NULL);
  CHECK(strstr(vxs_last_error(), "line 2") != NULL);
  CHECK(vxs_config_load("/nonexistent/voxsynth.cfg", &bad) == VXS_USAGE_ERROR);

  size_t keys = vxs_config_key_count();
  CHECK(keys > 30);
  const char* key = NULL;
  const char* doc = NULL;
  CHECK(vxs_config_key_doc(0, &key, &doc) == VXS_OK);
  CHECK(key && doc && strlen(key) > 0 && strlen(doc) > 0);
  CHECK(vxs_config_key_doc(keys, &key, &doc) == VXS_USAGE_ERROR);

  const size_t n = 32 * 32 * 32;
  double* vox = malloc(n * sizeof(double));
  double* vox2 = malloc(n * sizeof(double));
  unsigned char* labels = malloc(n);
  CHECK(vxs_phantom_render(cfg, 40.0, 1.0, 3, vox, labels, n) == VXS_OK);
  CHECK(vxs_phantom_render(cfg, 40.0, 1.0, 3, vox2, NULL, n) == VXS_OK);
  CHECK(memcmp(vox, vox2, n * sizeof(double)) == 0);
  size_t labelled = 0;
  for (size_t i = 0; i < n; ++i) {
    labelled += labels[i] != 0;
    CHECK(labels[i] <= 6);
  }
  CHECK(labelled > 0 && labelled < n);
  CHECK(vxs_phantom_render(cfg, 40.0, 1.0, 3, vox, labels, n - 1) == VXS_USAGE_ERROR);
  CHECK(vxs_phantom_render(cfg, 5.0, 1.0, 3, vox, labels, n) == VXS_USAGE_ERROR);
  free(vox);
  free(vox2);
  free(labels);

  const double a[] = {1, 2, 3}, b[] = {2, 3, 4}, flat[] = {2, 2, 2};
  double d = 0.0;
  CHECK(vxs_cohens_d(a, 3, b, 3, &d) == VXS_OK);
  CHECK(fabs(d + 1.0) < 1e-12);
  CHECK(vxs_cohens_d(flat, 3, flat, 3, &d) != VXS_OK);
  CHECK(vxs_cohens_d(a, 3, b, 3, NULL) == VXS_USAGE_ERROR);

  int lines = 0;
  CHECK(vxs_run(cfg, "no-such-command", out, count_lines, &lines) == VXS_USAGE_ERROR);
  CHECK(vxs_run(cfg, "eval", out, count_lines, &lines) == VXS_RUNTIME_ERROR);
  CHECK(strcmp(vxs_last_error_kind(), "missing_artifact") == 0);
  CHECK(vxs_run(NULL, "eval", out, NULL, NULL) == VXS_USAGE_ERROR);

  vxs_config_free(cfg);
  vxs_config_free(NULL);

  if (failures) {
    fprintf(stderr, "%d check(s) failed\n", failures);
    return 1;
  }
  printf("capi: all checks passed\n");
  return 0;
}
