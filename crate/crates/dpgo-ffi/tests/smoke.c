#include <stdio.h>
#include "dpgo.h"

int main(void) {
    DpgoGraph *g = NULL;
    if (dpgo_graph_simulate("grid4", 1, &g) != DPGO_STATUS_OK) {
        fprintf(stderr, "simulate: %s\n", dpgo_last_error_message());
        return 1;
    }
    DpgoConfig *c = dpgo_config_new();
    dpgo_config_set_seed(c, 1);
    DpgoResult *r = NULL;
    if (dpgo_solve(g, c, false, &r) != DPGO_STATUS_OK) {
        fprintf(stderr, "solve: %s\n", dpgo_last_error_message());
        return 1;
    }
    double rot[9], t[3];
    if (dpgo_result_pose(r, 0, rot, t) != DPGO_STATUS_OK) {
        return 1;
    }
    DpgoGraph *bad = NULL;
    DpgoStatus s = dpgo_graph_from_g2o_file("/nonexistent.g2o", 1, &bad);
    printf("certified=%d f_sdp=%.17g rank=%zu missing=%d\n", (int)dpgo_result_certified(r), dpgo_result_f_sdp(r),
           dpgo_result_final_rank(r), (int)s);
    dpgo_result_free(r);
    dpgo_config_free(c);
    dpgo_graph_free(g);
    return 0;
}
