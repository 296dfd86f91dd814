/* Generates a scene, runs a few optimisation steps and prints a summary. */
#include <stdio.h>
#include <stdlib.h>

#include "stdepth.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        StdepthStatus st_ = (call);                                        \
        if (st_ != STDEPTH_STATUS_OK) {                                    \
            const char *msg_ = stdepth_last_error();                       \
            fprintf(stderr, "%s: %d %s\n", #call, (int)st_, msg_ ? msg_ : ""); \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    StdepthScene *scene = NULL;
    StdepthConfig *config = NULL;
    StdepthResult *result = NULL;
    size_t w = 0, h = 0, steps = 0;
    double loss = 0.0, k[4], pose[6];

    CHECK(stdepth_scene_generate("slanted", 3, 16, 12, &scene));
    CHECK(stdepth_scene_size(scene, &w, &h));
    CHECK(stdepth_config_parse("seed = 3\nsteps = 2\ninit_from_truth = true\n", &config));
    CHECK(stdepth_optimize(scene, config, &result));
    CHECK(stdepth_result_summary(result, &loss, &steps));
    CHECK(stdepth_result_camera(result, k, pose));

    double *depth = malloc(w * h * sizeof(double));
    CHECK(stdepth_result_depth(result, depth, w * h));
    printf("version %s size %zux%zu steps %zu loss %.3e fx %.2f depth0 %.3f\n",
           stdepth_version(), w, h, steps, loss, k[0], depth[0]);
    free(depth);

    stdepth_result_free(result);
    stdepth_config_free(config);
    stdepth_scene_free(scene);
    return 0;
}
