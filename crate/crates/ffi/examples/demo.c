/* Simulates one qubit-decay homodyne trajectory, replays its record through
 * the filter, and prints <sigma_z> at a few times. */
#include <stdio.h>
#include <stdlib.h>

#include "qfilter.h"

#define N_STEPS 1000

static int fail(const char *what) {
    fprintf(stderr, "%s: %s\n", what, qf_last_error());
    return 1;
}

int main(void) {
    const double sigma_z[8] = {1, 0, 0, 0, 0, 0, -1, 0};
    QfModel *model = NULL;
    QfRecord *record = NULL;
    QfTrajectory *simulated = NULL;
    QfTrajectory *replayed = NULL;
    double a[N_STEPS + 1], b[N_STEPS + 1], master[N_STEPS + 1];

    if (qf_model_preset("qubit-decay", 1.0, 0.0, 0.0, QF_HOMODYNE, &model) != QF_STATUS_OK)
        return fail("model");
    if (qf_simulate(model, 0.0, 1e-3, N_STEPS, 42, 0, &record, &simulated) != QF_STATUS_OK)
        return fail("simulate");
    if (qf_run_filter(model, record, QF_FILTER_NORMALIZED, &replayed) != QF_STATUS_OK)
        return fail("filter");
    if (qf_trajectory_expectations(simulated, sigma_z, 2, a, N_STEPS + 1) != QF_STATUS_OK ||
        qf_trajectory_expectations(replayed, sigma_z, 2, b, N_STEPS + 1) != QF_STATUS_OK)
        return fail("expectations");
    if (qf_integrate_master(model, 0.0, 1e-3, N_STEPS, QF_METHOD_RK4, sigma_z, master, N_STEPS + 1) != QF_STATUS_OK)
        return fail("master");

    int identical = 1;
    for (int k = 0; k <= N_STEPS; k++)
        identical &= a[k] == b[k];
    for (int k = 0; k <= N_STEPS; k += 250)
        printf("t=%.3f filter=%+.6f master=%+.6f\n", k * 1e-3, a[k], master[k]);
    printf("replay %s\n", identical ? "identical" : "DIFFERS");

    qf_trajectory_free(replayed);
    qf_trajectory_free(simulated);
    qf_record_free(record);
    qf_model_free(model);
    return identical ? 0 : 1;
}
