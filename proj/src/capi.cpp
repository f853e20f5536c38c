#include "authnet.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "authnet/attacks.hpp"
#include "authnet/certify.hpp"
#include "authnet/dataio.hpp"
#include "authnet/dataset.hpp"
#include "authnet/error.hpp"
#include "authnet/model.hpp"
#include "authnet/pipeline.hpp"
#include "authnet/train.hpp"

struct authnet_model {
    authnet::SequentialModel m;
    long seg_index = -1;
};

struct authnet_dataset {
    authnet::IdxDataset ds;
};

struct authnet_key {
    authnet::AuthKey k;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
authnet_status wrap(F&& fn) noexcept {
    try {
        fn();
        g_last_error.clear();
        return AUTHNET_OK;
    } catch (const authnet::ValueError& e) {
        g_last_error = e.what();
        return AUTHNET_ERR_VALUE;
    } catch (const authnet::ShapeError& e) {
        g_last_error = e.what();
        return AUTHNET_ERR_SHAPE;
    } catch (const authnet::StateError& e) {
        g_last_error = e.what();
        return AUTHNET_ERR_STATE;
    } catch (const authnet::IoError& e) {
        g_last_error = e.what();
        return AUTHNET_ERR_IO;
    } catch (const authnet::FormatError& e) {
        g_last_error = e.what();
        return AUTHNET_ERR_FORMAT;
    } catch (const authnet::ConstraintError& e) {
        g_last_error = e.what();
        return AUTHNET_ERR_CONSTRAINT;
    } catch (const authnet::NumericError& e) {
        g_last_error = e.what();
        return AUTHNET_ERR_NUMERIC;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return AUTHNET_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return AUTHNET_ERR_INTERNAL;
    }
}

authnet_status fail_null(const char* what) {
    g_last_error = std::string(what) + " must not be NULL";
    return AUTHNET_ERR_VALUE;
}

authnet::TrainConfig to_train_config(const authnet_train_params& p) {
    authnet::TrainConfig cfg;
    cfg.lr = p.lr;
    cfg.epochs = p.epochs;
    cfg.batch_size = p.batch_size;
    cfg.decay_factor = p.decay_factor;
    cfg.decay_period = p.decay_period;
    cfg.seed = p.seed;
    return cfg;
}

void fill_report(const authnet::AttackReport& r, authnet_attack_report* out) {
    if (!out) return;
    out->fraction = r.fraction;
    out->acc_attacked = r.acc_attacked;
    out->acc_leg = r.acc_leg;
    out->acc_ill = r.acc_ill;
    out->extra = r.extra;
    out->seed = r.seed;
}

// Split position recorded on the handle, validated.
std::size_t checked_seg_index(const authnet_model* m) {
    if (m->seg_index < 0)
        throw authnet::StateError("model has no split position; set seg_index first");
    return static_cast<std::size_t>(m->seg_index);
}

} // namespace

extern "C" {

const char* authnet_last_error(void) { return g_last_error.c_str(); }

const char* authnet_status_name(authnet_status s) {
    switch (s) {
    case AUTHNET_OK: return "ok";
    case AUTHNET_ERR_VALUE: return "value";
    case AUTHNET_ERR_SHAPE: return "shape";
    case AUTHNET_ERR_STATE: return "state";
    case AUTHNET_ERR_IO: return "io";
    case AUTHNET_ERR_FORMAT: return "format";
    case AUTHNET_ERR_CONSTRAINT: return "constraint";
    case AUTHNET_ERR_NUMERIC: return "numeric";
    case AUTHNET_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

/* ---- datasets ---- */

authnet_status authnet_dataset_load_idx(const char* images_path, const char* labels_path,
                                        authnet_dataset** out) {
    if (!images_path || !labels_path) return fail_null("path");
    if (!out) return fail_null("out");
    return wrap([&] {
        auto h = std::make_unique<authnet_dataset>();
        h->ds = authnet::load_idx(images_path, labels_path);
        *out = h.release();
    });
}

authnet_status authnet_dataset_save_idx(const authnet_dataset* ds, const char* images_path,
                                        const char* labels_path) {
    if (!ds) return fail_null("ds");
    if (!images_path || !labels_path) return fail_null("path");
    return wrap([&] { authnet::save_idx(ds->ds, images_path, labels_path); });
}

authnet_status authnet_dataset_digits(size_t count, uint64_t seed, authnet_dataset** out) {
    if (!out) return fail_null("out");
    return wrap([&] {
        auto h = std::make_unique<authnet_dataset>();
        h->ds = authnet::gen_digits(count, seed);
        *out = h.release();
    });
}

authnet_status authnet_dataset_synthetic(size_t classes, size_t per_class, size_t channels,
                                         size_t height, size_t width, double separation,
                                         uint64_t seed, authnet_dataset** out) {
    if (!out) return fail_null("out");
    return wrap([&] {
        auto h = std::make_unique<authnet_dataset>();
        h->ds = authnet::gen_synthetic(classes, per_class, {channels, height, width},
                                       separation, seed);
        *out = h.release();
    });
}

authnet_status authnet_dataset_slice(const authnet_dataset* ds, size_t start, size_t count,
                                     authnet_dataset** out) {
    if (!ds) return fail_null("ds");
    if (!out) return fail_null("out");
    return wrap([&] {
        auto h = std::make_unique<authnet_dataset>();
        h->ds = authnet::slice_dataset(ds->ds, start, count);
        *out = h.release();
    });
}

void authnet_dataset_free(authnet_dataset* ds) { delete ds; }

size_t authnet_dataset_size(const authnet_dataset* ds) { return ds ? ds->ds.size() : 0; }

size_t authnet_dataset_classes(const authnet_dataset* ds) {
    return ds ? ds->ds.num_classes : 0;
}

authnet_status authnet_dataset_dims(const authnet_dataset* ds, size_t dims[3]) {
    if (!ds) return fail_null("ds");
    if (!dims) return fail_null("dims");
    return wrap([&] {
        auto s = ds->ds.sample_shape();
        dims[0] = s[0];
        dims[1] = s[1];
        dims[2] = s[2];
    });
}

authnet_status authnet_dataset_label(const authnet_dataset* ds, size_t index, int* out) {
    if (!ds) return fail_null("ds");
    if (!out) return fail_null("out");
    return wrap([&] {
        if (index >= ds->ds.size())
            throw authnet::ValueError("sample index " + std::to_string(index) +
                                      " out of range (size " +
                                      std::to_string(ds->ds.size()) + ")");
        *out = ds->ds.labels[index];
    });
}

authnet_status authnet_dataset_image(const authnet_dataset* ds, size_t index, double* buf,
                                     size_t buf_len) {
    if (!ds) return fail_null("ds");
    if (!buf) return fail_null("buf");
    return wrap([&] {
        if (index >= ds->ds.size())
            throw authnet::ValueError("sample index " + std::to_string(index) +
                                      " out of range (size " +
                                      std::to_string(ds->ds.size()) + ")");
        authnet::Tensor img = authnet::single_image(ds->ds, index);
        if (buf_len < img.size())
            throw authnet::ValueError("buffer too small: " + std::to_string(buf_len) +
                                      " < " + std::to_string(img.size()));
        std::memcpy(buf, img.data(), img.size() * sizeof(double));
    });
}

/* ---- models ---- */

authnet_status authnet_model_create(const char* arch, size_t channels, size_t height,
                                    size_t width, size_t classes, uint64_t seed,
                                    authnet_model** out) {
    if (!arch) return fail_null("arch");
    if (!out) return fail_null("out");
    return wrap([&] {
        auto h = std::make_unique<authnet_model>();
        h->m = authnet::make_model(arch, {channels, height, width}, classes, seed);
        *out = h.release();
    });
}

authnet_status authnet_model_save(const authnet_model* m, const char* path) {
    if (!m) return fail_null("model");
    if (!path) return fail_null("path");
    return wrap([&] {
        authnet::CheckpointMeta meta;
        meta.seg_index = m->seg_index;
        authnet::save_checkpoint(m->m, meta, path);
    });
}

authnet_status authnet_model_load(const char* path, authnet_model** out) {
    if (!path) return fail_null("path");
    if (!out) return fail_null("out");
    return wrap([&] {
        auto loaded = authnet::load_checkpoint(path);
        auto h = std::make_unique<authnet_model>();
        h->m = std::move(loaded.model);
        h->seg_index = loaded.meta.seg_index;
        *out = h.release();
    });
}

authnet_status authnet_model_clone(const authnet_model* m, authnet_model** out) {
    if (!m) return fail_null("model");
    if (!out) return fail_null("out");
    return wrap([&] { *out = new authnet_model(*m); });
}

void authnet_model_free(authnet_model* m) { delete m; }

size_t authnet_model_classes(const authnet_model* m) { return m ? m->m.num_classes : 0; }

size_t authnet_model_layers(const authnet_model* m) { return m ? m->m.num_layers() : 0; }

uint64_t authnet_model_param_hash(const authnet_model* m) {
    return m ? authnet::param_hash(m->m) : 0;
}

long authnet_model_seg_index(const authnet_model* m) { return m ? m->seg_index : -1; }

authnet_status authnet_model_set_seg_index(authnet_model* m, size_t seg_index) {
    if (!m) return fail_null("model");
    return wrap([&] {
        authnet::split_model(m->m, seg_index); // validates
        m->seg_index = static_cast<long>(seg_index);
    });
}

authnet_status authnet_model_default_seg_index(const authnet_model* m, size_t* out) {
    if (!m) return fail_null("model");
    if (!out) return fail_null("out");
    return wrap([&] { *out = authnet::default_seg_index(m->m); });
}

/* ---- training & evaluation ---- */

authnet_status authnet_train_clean(authnet_model* m, const authnet_dataset* train,
                                   const authnet_train_params* p, const char* history_csv) {
    if (!m) return fail_null("model");
    if (!train) return fail_null("train");
    if (!p) return fail_null("params");
    return wrap([&] {
        auto stats = authnet::train_clean(m->m, train->ds, to_train_config(*p));
        if (history_csv) {
            std::vector<std::vector<std::string>> rows;
            for (const auto& s : stats)
                rows.push_back({authnet::csv_num(s.epoch), authnet::csv_num(s.loss),
                                authnet::csv_num(s.acc)});
            authnet::export_csv(history_csv, {"epoch", "loss", "acc"}, rows);
        }
    });
}

authnet_status authnet_evaluate(const authnet_model* m, const authnet_key* key,
                                const authnet_dataset* test, size_t timing_reps,
                                authnet_metrics* out) {
    if (!m) return fail_null("model");
    if (!test) return fail_null("test");
    if (!out) return fail_null("out");
    return wrap([&] {
        authnet::Metrics r =
            authnet::evaluate(m->m, key ? &key->k : nullptr, test->ds, timing_reps);
        out->acc_leg = r.acc_leg;
        out->acc_ill = r.acc_ill;
        out->gap = r.gap;
        out->cc = r.cc;
    });
}

authnet_status authnet_prune(const authnet_model* m, double rate, authnet_model** out) {
    if (!m) return fail_null("model");
    if (!out) return fail_null("out");
    return wrap([&] {
        auto h = std::make_unique<authnet_model>();
        h->m = authnet::magnitude_prune(m->m, rate);
        h->seg_index = m->seg_index;
        *out = h.release();
    });
}

/* ---- authentication pipeline ---- */

authnet_status authnet_invert_key(const authnet_model* m, const authnet_dataset* train,
                                  const authnet_invert_params* p, authnet_key** out,
                                  authnet_invert_report* report) {
    if (!m) return fail_null("model");
    if (!train) return fail_null("train");
    if (!p) return fail_null("params");
    if (!out) return fail_null("out");
    return wrap([&] {
        std::size_t seg = checked_seg_index(m);
        authnet::SplitModel split = authnet::split_model(m->m, seg);
        authnet::InvertConfig cfg;
        cfg.auth_bits = p->auth_bits;
        cfg.gamma = p->gamma;
        cfg.eps_mask = p->eps_mask;
        cfg.eps_offset = p->eps_offset;
        cfg.lr_mask = p->lr_mask;
        cfg.lr_offset = p->lr_offset;
        cfg.iters = p->iters;
        cfg.batch_size = p->batch_size;
        cfg.sample_count = p->sample_count;
        cfg.literal_mask_box = p->literal_mask_box != 0;
        cfg.seed = p->seed;
        authnet::InvertResult res = authnet::invert_key(split.head, train->ds, cfg);
        res.key.seg_index = seg;
        if (report) {
            report->final_loss = res.final_loss;
            report->final_gamma = res.final_gamma;
            report->reached_half_target = res.reached_half_target ? 1 : 0;
        }
        auto h = std::make_unique<authnet_key>();
        h->k = std::move(res.key);
        *out = h.release();
    });
}

authnet_status authnet_key_save(const authnet_key* k, const char* path) {
    if (!k) return fail_null("key");
    if (!path) return fail_null("path");
    return wrap([&] { authnet::save_key(k->k, path); });
}

authnet_status authnet_key_load(const char* path, authnet_key** out) {
    if (!path) return fail_null("path");
    if (!out) return fail_null("out");
    return wrap([&] {
        auto h = std::make_unique<authnet_key>();
        h->k = authnet::load_key(path);
        *out = h.release();
    });
}

void authnet_key_free(authnet_key* k) { delete k; }

size_t authnet_key_bits(const authnet_key* k) { return k ? k->k.bits.count() : 0; }

double authnet_key_gamma(const authnet_key* k) { return k ? k->k.gamma : 0.0; }

long authnet_key_seg_index(const authnet_key* k) {
    return k ? static_cast<long>(k->k.seg_index) : -1;
}

authnet_status authnet_finetune_tail(authnet_model* m, const authnet_key* key,
                                     const authnet_dataset* train,
                                     const authnet_dataset* eval_set,
                                     const authnet_train_params* p, uint64_t mix_seed,
                                     const char* history_csv) {
    if (!m) return fail_null("model");
    if (!key) return fail_null("key");
    if (!train) return fail_null("train");
    if (!p) return fail_null("params");
    return wrap([&] {
        std::size_t seg = checked_seg_index(m);
        authnet::SplitModel split = authnet::split_model(m->m, seg);
        authnet::MixedDataset dmix =
            authnet::build_dmix(train->ds, key->k, m->m.num_classes, mix_seed);
        auto stats = authnet::finetune_tail(split, key->k, dmix, to_train_config(*p),
                                            eval_set ? &eval_set->ds : nullptr);
        m->m = authnet::compose(split);
        if (history_csv) {
            std::vector<std::vector<std::string>> rows;
            for (const auto& s : stats) {
                std::string leg = std::isnan(s.acc_leg) ? "" : authnet::csv_num(s.acc_leg);
                std::string ill = std::isnan(s.acc_ill) ? "" : authnet::csv_num(s.acc_ill);
                rows.push_back({authnet::csv_num(s.epoch), authnet::csv_num(s.loss), leg, ill});
            }
            authnet::export_csv(history_csv, {"epoch", "loss", "acc_leg", "acc_ill"}, rows);
        }
    });
}

/* ---- certification ---- */

authnet_status authnet_auth_radius_mean(const authnet_model* m, const authnet_key* key,
                                        const authnet_dataset* test, size_t n_samples,
                                        const authnet_radius_params* p, uint64_t seed,
                                        const char* radii_csv, double* mean_out) {
    if (!m) return fail_null("model");
    if (!test) return fail_null("test");
    if (!p) return fail_null("params");
    if (!mean_out) return fail_null("mean_out");
    return wrap([&] {
        if (n_samples == 0) throw authnet::ValueError("n_samples must be positive");
        authnet::RadiusParams rp;
        rp.eps_hi = p->eps_hi;
        rp.tol = p->tol;
        rp.max_iter = p->max_iter;
        std::vector<std::size_t> rows =
            authnet::stratified_sample(test->ds, n_samples, seed);
        std::vector<std::vector<std::string>> csv_rows;
        double sum = 0.0;
        for (std::size_t r : rows) {
            authnet::Tensor x = authnet::single_image(test->ds, r);
            if (key) x = authnet::apply_key(x, key->k);
            authnet::RadiusResult res =
                authnet::auth_radius(m->m, x, test->ds.labels[r], rp);
            sum += res.radius;
            if (radii_csv)
                csv_rows.push_back({authnet::csv_num(r),
                                    authnet::csv_num(static_cast<std::size_t>(
                                        test->ds.labels[r])),
                                    "auth", authnet::csv_num(res.radius)});
        }
        if (radii_csv)
            authnet::export_csv(radii_csv, {"sample_id", "class", "kind", "radius"},
                                csv_rows);
        *mean_out = sum / static_cast<double>(rows.size());
    });
}

authnet_status authnet_bounds(const authnet_model* m, const authnet_dataset* ds,
                              size_t index, double eps, int method, double* lower,
                              double* upper, size_t buf_len) {
    if (!m) return fail_null("model");
    if (!ds) return fail_null("ds");
    if (!lower || !upper) return fail_null("bounds buffer");
    return wrap([&] {
        if (index >= ds->ds.size())
            throw authnet::ValueError("sample index out of range");
        if (buf_len < m->m.num_classes)
            throw authnet::ValueError("bounds buffer too small");
        authnet::Tensor x = authnet::single_image(ds->ds, index);
        authnet::BoundPair b;
        if (method == 0)
            b = authnet::interval_bounds(m->m, x, eps);
        else if (method == 1)
            b = authnet::crown_bounds(m->m, x, eps);
        else
            throw authnet::ValueError("method must be 0 (interval) or 1 (relaxation)");
        std::memcpy(lower, b.lower.data(), m->m.num_classes * sizeof(double));
        std::memcpy(upper, b.upper.data(), m->m.num_classes * sizeof(double));
    });
}

authnet_status authnet_refuse_domain(const authnet_model* m, const authnet_key* key,
                                     const authnet_dataset* test,
                                     const authnet_refuse_params* p, const char* out_dir,
                                     authnet_refuse_summary* out) {
    if (!m) return fail_null("model");
    if (!key) return fail_null("key");
    if (!test) return fail_null("test");
    if (!p) return fail_null("params");
    if (!out) return fail_null("out");
    return wrap([&] {
        authnet::RefuseDomainConfig cfg;
        cfg.fake_keys = p->fake_keys;
        cfg.ball_samples = p->ball_samples;
        cfg.auth_samples = p->auth_samples;
        cfg.radius.eps_hi = p->radius.eps_hi;
        cfg.radius.tol = p->radius.tol;
        cfg.radius.max_iter = p->radius.max_iter;
        cfg.min_ball_radius = p->min_ball_radius;
        cfg.kde_bandwidth = p->kde_bandwidth;
        cfg.kde_grid = p->kde_grid;
        cfg.seed = p->seed;
        authnet::RefuseDomainResult res =
            authnet::refuse_domain_study(m->m, key->k, test->ds, cfg);
        out->refuse_acc_overall = res.refuse.overall_acc;
        out->refuse_acc_max_ball = res.refuse.max_ball_acc;
        out->auth_acc = res.auth_acc;
        out->kde_occupancy = res.kde.occupancy;
        if (out_dir) {
            namespace fs = std::filesystem;
            fs::create_directories(out_dir);
            auto join = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
            {
                std::vector<std::vector<std::string>> rows;
                for (const auto& pt : res.refuse.points)
                    rows.push_back({authnet::csv_num(pt.ball),
                                    authnet::csv_num(static_cast<std::size_t>(pt.label)),
                                    authnet::csv_num(static_cast<std::size_t>(pt.predicted)),
                                    pt.correct ? "1" : "0"});
                authnet::export_csv(join("refuse_points.csv"),
                                    {"ball", "label", "predicted", "correct"}, rows);
            }
            {
                std::vector<std::vector<std::string>> rows;
                for (std::size_t i = 0; i < res.refuse.ball_acc.size(); ++i)
                    rows.push_back({authnet::csv_num(i),
                                    authnet::csv_num(res.ball_radius[i]),
                                    authnet::csv_num(res.refuse.ball_acc[i])});
                authnet::export_csv(join("refuse_balls.csv"), {"ball", "radius", "acc"},
                                    rows);
            }
            {
                std::vector<std::vector<std::string>> rows;
                for (std::size_t i = 0; i < res.embed_coords.extent(0); ++i)
                    rows.push_back({authnet::csv_num(res.embed_coords[i * 2]),
                                    authnet::csv_num(res.embed_coords[i * 2 + 1]),
                                    res.embed_is_refuse[i] ? "refuse" : "auth",
                                    authnet::csv_num(static_cast<std::size_t>(
                                        res.embed_labels[i]))});
                authnet::export_csv(join("embed.csv"), {"x", "y", "group", "label"}, rows);
            }
            {
                std::vector<std::vector<std::string>> rows;
                const auto& k = res.kde;
                for (std::size_t iy = 0; iy < k.grid; ++iy)
                    for (std::size_t ix = 0; ix < k.grid; ++ix)
                        rows.push_back(
                            {authnet::csv_num(ix), authnet::csv_num(iy),
                             authnet::csv_num(k.refuse_density[iy * k.grid + ix]),
                             authnet::csv_num(k.auth_density[iy * k.grid + ix])});
                authnet::export_csv(join("kde.csv"), {"ix", "iy", "refuse", "auth"}, rows);
            }
        }
    });
}

/* ---- attacks ---- */

authnet_status authnet_attack_differential(const authnet_model* m, const authnet_key* key,
                                           const authnet_dataset* leak,
                                           const authnet_dataset* test, size_t n_pairs,
                                           double noise_strength, uint64_t seed,
                                           authnet_attack_report* out) {
    if (!m) return fail_null("model");
    if (!key) return fail_null("key");
    if (!leak) return fail_null("leak");
    if (!test) return fail_null("test");
    return wrap([&] {
        authnet::DifferentialResult res = authnet::differential_attack(
            m->m, key->k, leak->ds, test->ds, n_pairs, noise_strength, seed);
        fill_report(res.report, out);
    });
}

authnet_status authnet_attack_mask_opt(const authnet_model* m, const authnet_dataset* train,
                                       const authnet_dataset* test, double fraction,
                                       size_t epochs, size_t batch_size, double lr_mask,
                                       double lr_offset, double eps_mask, double eps_offset,
                                       int literal_mask_box, uint64_t seed,
                                       const char* epochs_csv, authnet_attack_report* out) {
    if (!m) return fail_null("model");
    if (!train) return fail_null("train");
    if (!test) return fail_null("test");
    return wrap([&] {
        authnet::MaskOptConfig cfg;
        cfg.fraction = fraction;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.lr_mask = lr_mask;
        cfg.lr_offset = lr_offset;
        cfg.eps_mask = eps_mask;
        cfg.eps_offset = eps_offset;
        cfg.literal_mask_box = literal_mask_box != 0;
        cfg.seed = seed;
        authnet::MaskOptResult res =
            authnet::mask_optimization_attack(m->m, train->ds, test->ds, cfg);
        if (epochs_csv) {
            std::vector<std::vector<std::string>> rows;
            for (const auto& [epoch, acc] : res.epoch_acc)
                rows.push_back({authnet::csv_num(epoch), authnet::csv_num(acc)});
            authnet::export_csv(epochs_csv, {"epoch", "test_acc"}, rows);
        }
        fill_report(res.report, out);
    });
}

authnet_status authnet_attack_finetune(const authnet_model* m, const authnet_key* key,
                                       const authnet_dataset* new_train,
                                       const authnet_dataset* new_test,
                                       const authnet_dataset* orig_test,
                                       const authnet_train_params* p,
                                       authnet_attack_report* out) {
    if (!m) return fail_null("model");
    if (!key) return fail_null("key");
    if (!new_train) return fail_null("new_train");
    if (!new_test) return fail_null("new_test");
    if (!orig_test) return fail_null("orig_test");
    if (!p) return fail_null("params");
    return wrap([&] {
        authnet::FinetuneAttackResult res = authnet::finetune_attack(
            m->m, key->k, new_train->ds, new_test->ds, orig_test->ds, to_train_config(*p));
        fill_report(res.report, out);
    });
}

authnet_status authnet_attack_prune_sweep(const authnet_model* m, const authnet_key* key,
                                          const authnet_dataset* test, const double* rates,
                                          size_t n_rates, const char* csv,
                                          double* max_acc_ill, double* max_acc_leg) {
    if (!m) return fail_null("model");
    if (!test) return fail_null("test");
    if (!rates) return fail_null("rates");
    return wrap([&] {
        if (n_rates == 0) throw authnet::ValueError("need at least one pruning rate");
        std::vector<double> rv(rates, rates + n_rates);
        auto sweep =
            authnet::pruning_sweep(m->m, key ? &key->k : nullptr, test->ds, rv);
        double mi = 0.0, ml = 0.0;
        std::vector<std::vector<std::string>> rows;
        for (const auto& row : sweep) {
            mi = std::max(mi, row.metrics.acc_ill);
            ml = std::max(ml, row.metrics.acc_leg);
            rows.push_back({authnet::csv_num(row.rate), authnet::csv_num(row.metrics.acc_leg),
                            authnet::csv_num(row.metrics.acc_ill),
                            authnet::csv_num(row.metrics.gap)});
        }
        if (csv) authnet::export_csv(csv, {"rate", "acc_leg", "acc_ill", "gap"}, rows);
        if (max_acc_ill) *max_acc_ill = mi;
        if (max_acc_leg) *max_acc_leg = ml;
    });
}

authnet_status authnet_attack_offset(const authnet_model* m, const authnet_dataset* train,
                                     const authnet_dataset* test, double fraction,
                                     size_t steps, double lr, size_t batch_size,
                                     uint64_t seed, authnet_attack_report* out) {
    if (!m) return fail_null("model");
    if (!train) return fail_null("train");
    if (!test) return fail_null("test");
    return wrap([&] {
        authnet::OffsetAttackConfig cfg;
        cfg.fraction = fraction;
        cfg.steps = steps;
        cfg.lr = lr;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        authnet::OffsetAttackResult res = authnet::offset_attack(m->m, train->ds, test->ds, cfg);
        fill_report(res.report, out);
    });
}

authnet_status authnet_attack_extract(const authnet_model* victim,
                                      const authnet_dataset* queries,
                                      const authnet_dataset* test, const char* loss,
                                      size_t n_queries, size_t epochs, double lr,
                                      size_t batch_size, uint64_t seed,
                                      authnet_attack_report* out,
                                      authnet_model** substitute_out) {
    if (!victim) return fail_null("victim");
    if (!queries) return fail_null("queries");
    if (!test) return fail_null("test");
    if (!loss) return fail_null("loss");
    return wrap([&] {
        authnet::ExtractionConfig cfg;
        std::string ls(loss);
        if (ls == "mse")
            cfg.ce_loss = false;
        else if (ls == "ce")
            cfg.ce_loss = true;
        else
            throw authnet::ValueError("loss must be \"mse\" or \"ce\", got \"" + ls + "\"");
        cfg.queries = n_queries;
        cfg.epochs = epochs;
        cfg.lr = lr;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        authnet::ExtractionResult res =
            authnet::extract_model(victim->m, queries->ds, test->ds, cfg);
        fill_report(res.report, out);
        if (substitute_out) {
            auto h = std::make_unique<authnet_model>();
            h->m = std::move(res.substitute);
            *substitute_out = h.release();
        }
    });
}

} /* extern "C" */
