#include <math.h>
#include <stdio.h>
#include <string.h>

#include "msacm.h"

static const char *PARAMS =
    "{\"base\":{\"omega\":0.853,\"alpha\":0.142,\"beta\":0.732,\"gamma\":0.112},"
    "\"policy\":{\"delta\":-0.776,\"phi0\":0.0,\"phi\":[6.273],\"psi\":0.0},"
    "\"trans\":[[0.964,0.036],[0.778,0.222]],\"theta\":[8.852,3.271]}";

int main(void) {
    enum { N = 8 };
    int32_t dates[N] = {20200102, 20200103, 20200106, 20200107, 20200108, 20200109, 20200110, 20200113};
    double rv[N] = {10.0, 12.5, 9.0, 30.0, 11.0, 10.5, 12.0, 9.5};
    uint8_t d[N] = {0, 1, 0, 1, 1, 0, 0, 1};
    double x_hat[N] = {0.1, -0.2, 0.3, 0.0, 0.1, -0.1, 0.2, -0.4};

    MsacmSeries *series = NULL;
    MsacmParams *params = NULL;
    MsacmFilter *filter = NULL;
    if (msacm_series_from_arrays(N, dates, rv, d, x_hat, NULL, &series) != MSACM_STATUS_OK) return 1;
    if (msacm_params_from_json(PARAMS, &params) != MSACM_STATUS_OK) return 2;
    if (msacm_filter_run(params, series, &filter) != MSACM_STATUS_OK) return 3;

    double ll = 0.0, exact = 0.0, p[N];
    msacm_filter_loglik(filter, &ll);
    msacm_exact_loglik(params, series, &exact);
    if (fabs(ll - exact) > 1e-10 * fabs(exact)) return 4;
    if (msacm_filter_smoothed(filter, 1, p, N) != MSACM_STATUS_OK) return 5;
    if (msacm_filter_smoothed(filter, 1, p, N - 1) != MSACM_STATUS_BUFFER_TOO_SMALL) return 6;
    if (strlen(msacm_last_error()) == 0) return 7;

    int32_t a[4] = {1, 1, 1, 2}, b[4] = {1, 1, 2, 2};
    double ari = 1.0;
    msacm_adjusted_rand(a, b, 4, &ari);
    if (fabs(ari) > 1e-12) return 8;

    msacm_filter_free(filter);
    msacm_params_free(params);
    msacm_series_free(series);
    printf("ok %.6f\n", ll);
    return 0;
}
