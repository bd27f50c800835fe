#include <math.h>
#include <stdio.h>
#include <string.h>

#include "fplab.h"

#define CHECK(call)                                                                 \
    do {                                                                            \
        FplabStatus s_ = (call);                                                    \
        if (s_ != FPLAB_STATUS_OK) {                                                \
            const char *m_ = fplab_last_error_message();                            \
            fprintf(stderr, "%s failed: %s (%s)\n", #call, fplab_status_name(s_),   \
                    m_ ? m_ : "");                                                  \
            return 1;                                                               \
        }                                                                           \
    } while (0)

int main(void) {
    double a[] = {1.0, 2.0, 3.0};
    double b[] = {2.0, 3.0, 4.0};
    double d = 0.0, p = 0.0;
    CHECK(fplab_ks_one_sided(a, 3, b, 3, &d, &p));
    if (fabs(d - 1.0 / 3.0) > 1e-12) {
        fprintf(stderr, "D = %f\n", d);
        return 1;
    }

    FplabBundle *bundle = NULL;
    CHECK(fplab_bundle_random(7, &bundle));
    char digest[128];
    size_t need = 0;
    CHECK(fplab_bundle_digest(bundle, digest, sizeof digest, &need));
    if (strlen(digest) + 1 != need) {
        return 1;
    }

    FplabImage *img = NULL;
    CHECK(fplab_synthesize_dataset_print(bundle, 7, 0, 0, &img));
    if (fplab_image_width(img) != 512 || fplab_image_height(img) != 512 || fplab_image_ppi(img) != 500) {
        return 1;
    }
    FplabMinutiae *m = NULL;
    CHECK(fplab_minutiae_extract(img, &m));
    double score = 0.0;
    CHECK(fplab_match(m, m, &score));
    if (fplab_minutiae_count(m) > 0 && fabs(score - 1.0) > 1e-9) {
        fprintf(stderr, "self match %f\n", score);
        return 1;
    }

    FplabStatus s = fplab_bundle_load("/nonexistent/bundle", &bundle);
    if (s != FPLAB_STATUS_UNTRAINED || fplab_last_error_message() == NULL) {
        fprintf(stderr, "unexpected status %d\n", (int)s);
        return 1;
    }

    fplab_minutiae_free(m);
    fplab_image_free(img);
    fplab_bundle_free(bundle);
    printf("ok %s\n", fplab_version());
    return 0;
}
