#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "tecnn.h"

#define CHECK(call)                                                     \
    do {                                                                \
        enum tecnn_status s_ = (call);                                  \
        if (s_ != TECNN_STATUS_OK) {                                    \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, tecnn_last_error()); \
            return 1;                                                   \
        }                                                               \
    } while (0)

int main(void) {
    uint8_t src[64], dst[64];
    unsigned state = 12345;
    for (int t = 0; t < 64; t++) {
        state = state * 1103515245u + 12345u;
        src[t] = (state >> 16) & 1;
        dst[t] = t ? src[t - 1] : 0;
    }
    double te = 0, oracle = 0;
    CHECK(tecnn_te_pair(src, dst, 64, &te));
    CHECK(tecnn_te_pair_oracle(src, dst, 64, &oracle));
    if (te < 0.5 || te - oracle > 1e-12 || oracle - te > 1e-12) {
        fprintf(stderr, "te %f oracle %f\n", te, oracle);
        return 1;
    }
    if (tecnn_te_pair(src, dst, 64, NULL) != TECNN_STATUS_NULL_POINTER || strlen(tecnn_last_error()) == 0) {
        return 1;
    }

    tecnn_trainer *t = NULL;
    if (tecnn_trainer_new("arch = nope", &t) != TECNN_STATUS_CONFIG || t != NULL) {
        return 1;
    }
    CHECK(tecnn_trainer_new("arch = usps-mini\ndataset = synth:10,120,16,60\nseed = 2\nrecord_timing = off", &t));
    double loss = 0, top1 = 0;
    CHECK(tecnn_trainer_train_epoch(t, &loss, &top1));
    CHECK(tecnn_trainer_evaluate(t, &loss, &top1));
    size_t needed = 0;
    CHECK(tecnn_trainer_metrics_csv(t, NULL, 0, &needed));
    char *csv = malloc(needed);
    CHECK(tecnn_trainer_metrics_csv(t, csv, needed, &needed));
    printf("%s version %s loss %.4f\n", strncmp(csv, "run_id,", 7) == 0 ? "ok" : "bad", tecnn_version(), loss);
    free(csv);
    tecnn_trainer_free(t);
    return 0;
}
