#include <math.h>
#include <stdio.h>
#include <string.h>

#include "corrsurf.h"

int main(void) {
    double price = 0.0, vol = 0.0;
    if (corrsurf_option_price(100.0, 100.0, 0.01, 0.5, 0.25, CORRSURF_RIGHT_CALL, CORRSURF_STYLE_EUROPEAN, 0,
                              NULL, NULL, 0, &price) != CORRSURF_STATUS_OK) {
        return 1;
    }
    if (corrsurf_implied_vol(price, 100.0, 100.0, 0.01, 0.5, CORRSURF_RIGHT_CALL, CORRSURF_STYLE_EUROPEAN, 0,
                             NULL, NULL, 0, &vol) != CORRSURF_STATUS_OK) {
        return 2;
    }
    if (fabs(vol - 0.25) > 1e-6) {
        return 3;
    }
    double z;
    if (corrsurf_fisher_z(2.0, &z) != CORRSURF_STATUS_DOMAIN) {
        return 4;
    }
    const char *msg = corrsurf_last_error();
    if (msg == NULL || strlen(msg) == 0) {
        return 5;
    }
    struct CorrsurfModel *model = NULL;
    if (corrsurf_model_load("/nonexistent/model.json", &model) != CORRSURF_STATUS_IO || model != NULL) {
        return 6;
    }
    corrsurf_model_free(model);
    printf("ok %.6f\n", vol);
    return 0;
}
