/* C interface to the authnet library.
 *
 * Every function returns an authnet_status; outputs are written through
 * pointer arguments. On any failure a thread-local message is set and can be
 * read with authnet_last_error(). Objects are opaque handles owned by the
 * caller and released with the matching _free function (free(NULL) is a
 * no-op). Handles are not thread-safe.
 */
#ifndef AUTHNET_H
#define AUTHNET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum authnet_status {
    AUTHNET_OK = 0,
    AUTHNET_ERR_VALUE = 1,      /* bad argument */
    AUTHNET_ERR_SHAPE = 2,      /* dimension mismatch */
    AUTHNET_ERR_STATE = 3,      /* operation out of order / missing prereq */
    AUTHNET_ERR_IO = 4,         /* file missing / unreadable / unwritable */
    AUTHNET_ERR_FORMAT = 5,     /* malformed file, hash mismatch */
    AUTHNET_ERR_CONSTRAINT = 6, /* loaded key violates its box */
    AUTHNET_ERR_NUMERIC = 7,    /* non-finite values */
    AUTHNET_ERR_INTERNAL = 8
} authnet_status;

/* Message for the most recent failure on this thread ("" if none). */
const char* authnet_last_error(void);
const char* authnet_status_name(authnet_status s);

typedef struct authnet_model authnet_model;
typedef struct authnet_dataset authnet_dataset;
typedef struct authnet_key authnet_key;

/* ---- datasets ---- */

authnet_status authnet_dataset_load_idx(const char* images_path, const char* labels_path,
                                        authnet_dataset** out);
authnet_status authnet_dataset_save_idx(const authnet_dataset* ds, const char* images_path,
                                        const char* labels_path);
/* Procedural handwritten-digit stand-in (28x28, 10 classes). */
authnet_status authnet_dataset_digits(size_t count, uint64_t seed, authnet_dataset** out);
/* Gaussian class blobs. */
authnet_status authnet_dataset_synthetic(size_t classes, size_t per_class, size_t channels,
                                         size_t height, size_t width, double separation,
                                         uint64_t seed, authnet_dataset** out);
authnet_status authnet_dataset_slice(const authnet_dataset* ds, size_t start, size_t count,
                                     authnet_dataset** out);
void authnet_dataset_free(authnet_dataset* ds);

size_t authnet_dataset_size(const authnet_dataset* ds);
size_t authnet_dataset_classes(const authnet_dataset* ds);
/* dims[0..2] = channels, height, width */
authnet_status authnet_dataset_dims(const authnet_dataset* ds, size_t dims[3]);
authnet_status authnet_dataset_label(const authnet_dataset* ds, size_t index, int* out);
/* Copies one image (length = C*H*W doubles, row-major). */
authnet_status authnet_dataset_image(const authnet_dataset* ds, size_t index, double* buf,
                                     size_t buf_len);

/* ---- models ---- */

/* arch: "lenet" or "tiny-mlp". */
authnet_status authnet_model_create(const char* arch, size_t channels, size_t height,
                                    size_t width, size_t classes, uint64_t seed,
                                    authnet_model** out);
authnet_status authnet_model_save(const authnet_model* m, const char* path);
authnet_status authnet_model_load(const char* path, authnet_model** out);
authnet_status authnet_model_clone(const authnet_model* m, authnet_model** out);
void authnet_model_free(authnet_model* m);

size_t authnet_model_classes(const authnet_model* m);
size_t authnet_model_layers(const authnet_model* m);
uint64_t authnet_model_param_hash(const authnet_model* m);
/* Gate layer index stored with the model (-1 when unset). */
long authnet_model_seg_index(const authnet_model* m);
/* Validates and records the split position. */
authnet_status authnet_model_set_seg_index(authnet_model* m, size_t seg_index);
/* The architecture's default gate position. */
authnet_status authnet_model_default_seg_index(const authnet_model* m, size_t* out);

/* ---- training & evaluation ---- */

typedef struct authnet_train_params {
    double lr;
    size_t epochs;
    size_t batch_size;
    double decay_factor; /* lr *= factor^(epoch/period); 1.0 = constant */
    size_t decay_period; /* 0 = constant */
    uint64_t seed;
} authnet_train_params;

/* Trains in place. When history_csv is non-NULL, writes per-epoch rows
 * (epoch,loss,acc). */
authnet_status authnet_train_clean(authnet_model* m, const authnet_dataset* train,
                                   const authnet_train_params* p, const char* history_csv);

typedef struct authnet_metrics {
    double acc_leg;
    double acc_ill;
    double gap;
    double cc;
} authnet_metrics;

/* key may be NULL (clean model evaluation; acc_leg equals acc_ill).
 * timing_reps = 0 keeps cc at 0 and the output deterministic. */
authnet_status authnet_evaluate(const authnet_model* m, const authnet_key* key,
                                const authnet_dataset* test, size_t timing_reps,
                                authnet_metrics* out);

authnet_status authnet_prune(const authnet_model* m, double rate, authnet_model** out);

/* ---- authentication pipeline ---- */

typedef struct authnet_invert_params {
    size_t auth_bits;
    double gamma;
    double eps_mask;
    double eps_offset;
    double lr_mask;
    double lr_offset;
    size_t iters;
    size_t batch_size;
    size_t sample_count;
    int literal_mask_box; /* 0: mask in (1-eps,1+eps); 1: mask in (0,eps) */
    uint64_t seed;
} authnet_invert_params;

typedef struct authnet_invert_report {
    double final_loss;
    double final_gamma;
    int reached_half_target; /* soft warning when 0 */
} authnet_invert_report;

/* Derives a key against the model's head (seg index must be set). */
authnet_status authnet_invert_key(const authnet_model* m, const authnet_dataset* train,
                                  const authnet_invert_params* p, authnet_key** out,
                                  authnet_invert_report* report);

authnet_status authnet_key_save(const authnet_key* k, const char* path);
authnet_status authnet_key_load(const char* path, authnet_key** out);
void authnet_key_free(authnet_key* k);
size_t authnet_key_bits(const authnet_key* k);
double authnet_key_gamma(const authnet_key* k);
/* Gate layer index the key was derived at. */
long authnet_key_seg_index(const authnet_key* k);

/* Tail-only fine-tuning on the keyed/raw mixture (head is untouched). When
 * history_csv is non-NULL, writes (epoch,loss,acc_leg,acc_ill) rows measured
 * on eval_set (NULL leaves the accuracy columns empty). */
authnet_status authnet_finetune_tail(authnet_model* m, const authnet_key* key,
                                     const authnet_dataset* train,
                                     const authnet_dataset* eval_set,
                                     const authnet_train_params* p, uint64_t mix_seed,
                                     const char* history_csv);

/* ---- certification ---- */

typedef struct authnet_radius_params {
    double eps_hi;
    double tol;
    size_t max_iter;
} authnet_radius_params;

/* Mean certified authentication radius over n stratified test samples
 * (keyed when key non-NULL). Writes per-sample rows
 * (sample_id,class,kind,radius) when radii_csv is non-NULL. kind is "auth".
 * Misclassified samples enter with radius 0. */
authnet_status authnet_auth_radius_mean(const authnet_model* m, const authnet_key* key,
                                        const authnet_dataset* test, size_t n_samples,
                                        const authnet_radius_params* p, uint64_t seed,
                                        const char* radii_csv, double* mean_out);

/* Logit bounds for one test sample at the given eps; lower/upper have
 * `classes` entries. method: 0 = interval, 1 = backward relaxation. */
authnet_status authnet_bounds(const authnet_model* m, const authnet_dataset* ds,
                              size_t index, double eps, int method, double* lower,
                              double* upper, size_t buf_len);

typedef struct authnet_refuse_params {
    size_t fake_keys;
    size_t ball_samples;
    size_t auth_samples;
    authnet_radius_params radius;
    double min_ball_radius;
    double kde_bandwidth; /* <= 0: data-driven */
    size_t kde_grid;
    uint64_t seed;
} authnet_refuse_params;

typedef struct authnet_refuse_summary {
    double refuse_acc_overall;
    double refuse_acc_max_ball;
    double auth_acc;
    double kde_occupancy;
} authnet_refuse_summary;

/* Full refuse-domain study. When out_dir is non-NULL, writes
 * refuse_points.csv, refuse_balls.csv, embed.csv and kde.csv there. */
authnet_status authnet_refuse_domain(const authnet_model* m, const authnet_key* key,
                                     const authnet_dataset* test,
                                     const authnet_refuse_params* p, const char* out_dir,
                                     authnet_refuse_summary* out);

/* ---- attacks ---- */

typedef struct authnet_attack_report {
    double fraction;
    double acc_attacked;
    double acc_leg;
    double acc_ill;
    double extra;
    uint64_t seed;
} authnet_attack_report;

authnet_status authnet_attack_differential(const authnet_model* m, const authnet_key* key,
                                           const authnet_dataset* leak,
                                           const authnet_dataset* test, size_t n_pairs,
                                           double noise_strength, uint64_t seed,
                                           authnet_attack_report* out);

authnet_status authnet_attack_mask_opt(const authnet_model* m, const authnet_dataset* train,
                                       const authnet_dataset* test, double fraction,
                                       size_t epochs, size_t batch_size, double lr_mask,
                                       double lr_offset, double eps_mask, double eps_offset,
                                       int literal_mask_box, uint64_t seed,
                                       const char* epochs_csv, authnet_attack_report* out);

authnet_status authnet_attack_finetune(const authnet_model* m, const authnet_key* key,
                                       const authnet_dataset* new_train,
                                       const authnet_dataset* new_test,
                                       const authnet_dataset* orig_test,
                                       const authnet_train_params* p,
                                       authnet_attack_report* out);

/* Evaluates keyed metrics at every rate; writes (rate,acc_leg,acc_ill,gap)
 * when csv non-NULL. key may be NULL for a clean baseline sweep. */
authnet_status authnet_attack_prune_sweep(const authnet_model* m, const authnet_key* key,
                                          const authnet_dataset* test, const double* rates,
                                          size_t n_rates, const char* csv,
                                          double* max_acc_ill, double* max_acc_leg);

authnet_status authnet_attack_offset(const authnet_model* m, const authnet_dataset* train,
                                     const authnet_dataset* test, double fraction,
                                     size_t steps, double lr, size_t batch_size,
                                     uint64_t seed, authnet_attack_report* out);

/* loss: "mse" (in-domain distillation) or "ce" (out-of-domain soft labels).
 * substitute_out may be NULL. */
authnet_status authnet_attack_extract(const authnet_model* victim,
                                      const authnet_dataset* queries,
                                      const authnet_dataset* test, const char* loss,
                                      size_t n_queries, size_t epochs, double lr,
                                      size_t batch_size, uint64_t seed,
                                      authnet_attack_report* out,
                                      authnet_model** substitute_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* AUTHNET_H */
