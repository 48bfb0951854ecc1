#include <stdio.h>
#include "wpsgd.h"

int main(void) {
    WpsgdDataset *train = NULL, *test = NULL;
    if (wpsgd_dataset_generate(300, 40, 30, 3, 6, 1, true, &train, &test) != WPSGD_STATUS_OK) {
        fprintf(stderr, "%s\n", wpsgd_last_error());
        return 1;
    }
    uint64_t delays[3] = {0, 50, 100};
    WpsgdTrainParams p = {0};
    p.algorithm = WPSGD_ALGORITHM_WPSGD;
    p.lambda = 0.01;
    p.eta = 0.05;
    p.iterations = 200;
    p.init_value = 0.5;
    p.delays = delays;
    p.k = 3;
    p.rate = 0.99;
    p.threads = 1;
    WpsgdModel *m = NULL;
    if (wpsgd_train(train, &p, &m) != WPSGD_STATUS_OK) {
        fprintf(stderr, "%s\n", wpsgd_last_error());
        return 2;
    }
    double obj = 0, err = 0;
    if (wpsgd_model_evaluate(m, test, 0.01, &obj, &err) != WPSGD_STATUS_OK) {
        return 3;
    }
    uint64_t hand[3] = {0, 1, 2};
    double w[3];
    if (wpsgd_compute_weights(hand, 3, 0.5, w) != WPSGD_STATUS_OK) {
        return 4;
    }
    if (wpsgd_compute_weights(NULL, 3, 0.5, w) != WPSGD_STATUS_NULL_POINTER || wpsgd_last_error() == NULL) {
        return 5;
    }
    printf("%zu %.6f %.6f\n", wpsgd_model_dim(m), obj, w[0]);
    wpsgd_model_free(m);
    wpsgd_dataset_free(train);
    wpsgd_dataset_free(test);
    return 0;
}
