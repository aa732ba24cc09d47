#include <stdio.h>
#include "archft.h"

int main(void) {
    ArchftSpace *space = NULL;
    if (archft_space_new("mini18", "kernel3to5", "small", &space) != ARCHFT_STATUS_OK) {
        fprintf(stderr, "%s\n", archft_last_error());
        return 1;
    }
    uintptr_t k = 0;
    archft_space_num_sites(space, &k);
    ArchftController *ctl = NULL;
    ArchftHistory *hist = NULL;
    archft_controller_new(space, 1, &ctl);
    archft_history_new(space, 3, 0.9, &hist);
    uintptr_t sampled[16], greedy[16];
    bool stable = false;
    for (int r = 0; r < 5; r++) {
        archft_controller_sample(ctl, sampled, k);
        archft_controller_greedy(ctl, greedy, k);
        archft_history_record(hist, sampled, greedy, k, &stable);
        archft_controller_update(ctl, sampled[0] == 1 ? 1.0 : 0.0, NULL);
    }
    ArchftStatus bad = archft_space_new("mini18", "kernel3to5", "tiny", &space);
    printf("sites=%lu rounds=5 bad=%d msg=%s\n", (unsigned long)k, (int)bad, archft_last_error());
    archft_history_free(hist);
    archft_controller_free(ctl);
    archft_space_free(space);
    return 0;
}
