#include <stdio.h>
#include "trajverb.h"

int main(void) {
    TvEpisode *ep = NULL;
    if (tv_episode_generate(7, NULL, &ep) != TV_STATUS_OK) {
        fprintf(stderr, "generate: %s\n", tv_last_error());
        return 1;
    }
    size_t n = 0;
    tv_episode_frame_count(ep, &n);
    TvFrame f;
    if (tv_episode_frame(ep, n - 1, &f) != TV_STATUS_OK) return 2;
    if (tv_episode_frame(ep, n, &f) != TV_STATUS_OUT_OF_RANGE) return 3;
    bool falls = false;
    if (tv_episode_label_clip(ep, 0, "fall", &falls) != TV_STATUS_OK) return 4;
    tv_episode_free(ep);
    double scores[3] = {0.9, 0.5, 0.1};
    uint8_t labels[3] = {1, 0, 1};
    double ap = 0.0;
    if (tv_average_precision(scores, labels, 3, &ap) != TV_STATUS_OK) return 5;
    printf("%zu %.6f\n", n, ap);
    return 0;
}
