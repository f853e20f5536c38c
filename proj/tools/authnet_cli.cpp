// Command-line driver for the authentication-network toolkit. Links only the
// public C API. Every subcommand is deterministic for a fixed config+seed
// (enable timing_reps for wall-clock figures at the cost of a varying cc
// column) and writes a resolved-config echo next to its artifacts.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "authnet.h"
#include "run_config.hpp"

namespace {

// ---- process plumbing ----

const char* const kExitTable =
    "exit codes:\n"
    "  0 success                     5 missing/unreadable file\n"
    "  1 usage/unknown config key    6 malformed file (magic/hash)\n"
    "  2 invalid value               7 key constraint violation\n"
    "  3 shape mismatch              8 numeric failure (non-finite)\n"
    "  4 operation out of order      9 internal error\n";

[[noreturn]] void die_status(authnet_status s) {
    std::fprintf(stderr, "error (%s): %s\n", authnet_status_name(s), authnet_last_error());
    std::exit(static_cast<int>(s) + 1);
}

void check(authnet_status s) {
    if (s != AUTHNET_OK) die_status(s);
}

[[noreturn]] void die_usage(const std::string& msg) {
    std::fprintf(stderr, "usage error: %s\n", msg.c_str());
    std::exit(1);
}

[[noreturn]] void die_value(const std::string& msg) {
    std::fprintf(stderr, "error (value): %s\n", msg.c_str());
    std::exit(2);
}

[[noreturn]] void die_io(const std::string& msg) {
    std::fprintf(stderr, "error (io): %s\n", msg.c_str());
    std::exit(5);
}

// ---- RAII over the C handles ----

template <typename T, void (*Free)(T*)>
struct Handle {
    T* p = nullptr;
    Handle() = default;
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    Handle(Handle&& o) noexcept : p(o.p) { o.p = nullptr; }
    Handle& operator=(Handle&& o) noexcept {
        if (this != &o) {
            Free(p);
            p = o.p;
            o.p = nullptr;
        }
        return *this;
    }
    ~Handle() { Free(p); }
    T** out() {
        Free(p);
        p = nullptr;
        return &p;
    }
    operator T*() const { return p; }
};

using Model = Handle<authnet_model, authnet_model_free>;
using Dataset = Handle<authnet_dataset, authnet_dataset_free>;
using Key = Handle<authnet_key, authnet_key_free>;

// ---- config helpers ----

std::string default_out() {
    const char* env = std::getenv("AUTHNET_OUT");
    return env && *env ? env : "out";
}

void define_common(RunConfig& c) {
    c.define("out", default_out(), "output directory (AUTHNET_OUT overrides this default)");
    c.define("seed", "1", "global seed; every random stage derives its stream from it");
}

void define_data(RunConfig& c) {
    c.define("data", "digits", "dataset source: digits | synthetic | idx");
    c.define("data_dir", "data/mnist",
             "idx source directory holding train-images-idx3-ubyte etc.");
    c.define("train_count", "24000", "training samples (0 with data=idx: whole file)");
    c.define("test_count", "4000", "test samples (0 with data=idx: whole file)");
    c.define("classes", "10", "class count for data=synthetic");
    c.define("synth_sep", "1.5", "class-mean separation for data=synthetic");
}

void define_train(RunConfig& c, const char* lr_def, const char* epochs_def,
                  const char* batch_def) {
    c.define("lr", lr_def, "learning rate");
    c.define("epochs", epochs_def, "training epochs");
    c.define("batch_size", batch_def, "batch size");
    c.define("decay_factor", "1", "lr multiplier applied every decay_period epochs");
    c.define("decay_period", "0", "epochs between lr decays (0 = constant lr)");
}

// Artifact paths are relative to the output directory unless absolute.
std::string resolved(const RunConfig& cfg, const std::string& key) {
    std::string p = cfg.str(key);
    if (p.empty() || p == "none" || p.front() == '/') return p;
    return cfg.str("out") + "/" + p;
}

bool parse_args(RunConfig& cfg, const std::vector<std::string>& args,
                const std::string& name) {
    bool want_help = false;
    try {
        want_help = cfg.parse(args);
    } catch (const std::exception& e) {
        die_usage(e.what());
    }
    if (want_help) {
        std::printf("usage: authnet_cli %s [--config=FILE] [--key=value ...]\n\nkeys:\n%s",
                    name.c_str(), cfg.help_text().c_str());
    }
    return want_help;
}

void write_echo(const RunConfig& cfg, const std::string& name) {
    std::string dir = cfg.str("out");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::string path = dir + "/" + name + ".config";
    std::ofstream f(path, std::ios::binary);
    if (!f) die_io("cannot write config echo '" + path + "'");
    f << cfg.echo();
}

// ---- CSV output for CLI-level reports ----

std::string fmt_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) die_io("cannot write '" + path + "'");
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) f << ',';
            f << cells[i];
        }
        f << "\r\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
}

void write_report_csv(const std::string& path, const char* kind,
                      const authnet_attack_report& r) {
    write_csv(path, {"kind", "fraction", "acc_attacked", "acc_leg", "acc_ill", "extra", "seed"},
              {{kind, fmt_num(r.fraction), fmt_num(r.acc_attacked), fmt_num(r.acc_leg),
                fmt_num(r.acc_ill), fmt_num(r.extra), std::to_string(r.seed)}});
}

// ---- shared loading ----

struct DataPair {
    Dataset train, test;
};

Dataset maybe_slice(Dataset ds, std::size_t count) {
    if (count == 0 || count == authnet_dataset_size(ds)) return ds;
    Dataset s;
    check(authnet_dataset_slice(ds, 0, count, s.out()));
    return s;
}

DataPair load_data(const RunConfig& cfg) {
    DataPair d;
    std::string src = cfg.str("data");
    std::uint64_t seed = cfg.u64("seed");
    std::size_t ntr = cfg.u64("train_count");
    std::size_t nte = cfg.u64("test_count");
    if (src == "digits") {
        if (ntr == 0 || nte == 0)
            die_value("train_count/test_count must be positive for data=digits");
        check(authnet_dataset_digits(ntr, seed, d.train.out()));
        check(authnet_dataset_digits(nte, seed + 1, d.test.out()));
    } else if (src == "synthetic") {
        std::size_t k = cfg.u64("classes");
        if (k == 0) die_value("classes must be positive");
        if (ntr < k || nte < k)
            die_value("train_count/test_count must be at least one per class");
        double sep = cfg.num("synth_sep");
        check(authnet_dataset_synthetic(k, ntr / k, 1, 28, 28, sep, seed, d.train.out()));
        check(authnet_dataset_synthetic(k, nte / k, 1, 28, 28, sep, seed + 1, d.test.out()));
    } else if (src == "idx") {
        std::string dir = cfg.str("data_dir");
        check(authnet_dataset_load_idx((dir + "/train-images-idx3-ubyte").c_str(),
                                       (dir + "/train-labels-idx1-ubyte").c_str(),
                                       d.train.out()));
        check(authnet_dataset_load_idx((dir + "/t10k-images-idx3-ubyte").c_str(),
                                       (dir + "/t10k-labels-idx1-ubyte").c_str(),
                                       d.test.out()));
        d.train = maybe_slice(std::move(d.train), ntr);
        d.test = maybe_slice(std::move(d.test), nte);
    } else {
        die_value("data must be digits, synthetic or idx");
    }
    return d;
}

Model load_model(const RunConfig& cfg, const std::string& key = "model") {
    Model m;
    check(authnet_model_load(resolved(cfg, key).c_str(), m.out()));
    return m;
}

// Loads the key file; "none" or an empty value gives an empty handle
// (clean evaluation).
Key load_key_opt(const RunConfig& cfg, const std::string& key = "key") {
    Key k;
    if (cfg.str(key) == "none" || cfg.str(key).empty()) return k;
    check(authnet_key_load(resolved(cfg, key).c_str(), k.out()));
    return k;
}

Key load_key_required(const RunConfig& cfg, const std::string& key = "key") {
    if (cfg.str(key) == "none" || cfg.str(key).empty())
        die_value("this subcommand needs a key file, got key=" + cfg.str(key));
    return load_key_opt(cfg, key);
}

authnet_train_params train_params(const RunConfig& cfg) {
    authnet_train_params p{};
    p.lr = cfg.num("lr");
    p.epochs = cfg.u64("epochs");
    p.batch_size = cfg.u64("batch_size");
    p.decay_factor = cfg.num("decay_factor");
    p.decay_period = cfg.u64("decay_period");
    p.seed = cfg.u64("seed");
    return p;
}

bool literal_mask_box(const RunConfig& cfg) {
    std::string v = cfg.str("mask_box");
    if (v == "deviation") return false;
    if (v == "literal") return true;
    die_value("mask_box must be deviation or literal, got '" + v + "'");
}

// Applies the gate position: explicit seg_index wins, otherwise the
// architecture default.
std::size_t apply_seg(Model& m, long requested) {
    std::size_t seg = 0;
    if (requested < 0)
        check(authnet_model_default_seg_index(m, &seg));
    else
        seg = static_cast<std::size_t>(requested);
    check(authnet_model_set_seg_index(m, seg));
    return seg;
}

// ---- subcommands ----

int cmd_train_clean(const std::vector<std::string>& args) {
    RunConfig cfg;
    define_common(cfg);
    define_data(cfg);
    cfg.define("arch", "lenet", "model architecture: lenet | tiny-mlp");
    define_train(cfg, "0.01", "10", "256");
    cfg.define("model_out", "model_clean.ckpt", "checkpoint to write");
    cfg.define("history_out", "train_history.csv", "per-epoch loss/acc CSV");
    if (parse_args(cfg, args, "train-clean")) return 0;
    write_echo(cfg, "train-clean");

    DataPair d = load_data(cfg);
    std::size_t dims[3];
    check(authnet_dataset_dims(d.train, dims));
    Model m;
    check(authnet_model_create(cfg.str("arch").c_str(), dims[0], dims[1], dims[2],
                               authnet_dataset_classes(d.train), cfg.u64("seed"), m.out()));
    authnet_train_params p = train_params(cfg);
    check(authnet_train_clean(m, d.train, &p, resolved(cfg, "history_out").c_str()));
    check(authnet_model_save(m, resolved(cfg, "model_out").c_str()));
    authnet_metrics met{};
    check(authnet_evaluate(m, nullptr, d.test, 0, &met));
    std::printf("train-clean: arch=%s train=%zu epochs=%zu test_acc=%.2f%% -> %s\n",
                cfg.str("arch").c_str(), static_cast<std::size_t>(authnet_dataset_size(d.train)),
                p.epochs, met.acc_leg, resolved(cfg, "model_out").c_str());
    return 0;
}

int cmd_invert_key(const std::vector<std::string>& args) {
    RunConfig cfg;
    define_common(cfg);
    define_data(cfg);
    cfg.define("model", "model_clean.ckpt", "input checkpoint");
    cfg.define("key_out", "key.authkey", "key file to write");
    cfg.define("auth_bits", "5", "number of authentication channels");
    cfg.define("gamma", "2", "target discrimination degree");
    cfg.define("seg_index", "-1", "gate layer index (-1 = architecture default)");
    cfg.define("eps_mask", "0.5", "mask box half-width");
    cfg.define("eps_offset", "0.5", "offset box half-width");
    cfg.define("lr_mask", "0.01", "mask learning rate");
    cfg.define("lr_offset", "0.003", "offset learning rate");
    cfg.define("iters", "300", "optimization iterations");
    cfg.define("invert_batch", "256", "batch size during inversion");
    cfg.define("sample_count", "2000", "class-balanced sample count used for inversion");
    cfg.define("mask_box", "deviation", "mask constraint: deviation (around 1) | literal");
    if (parse_args(cfg, args, "invert-key")) return 0;
    write_echo(cfg, "invert-key");

    DataPair d = load_data(cfg);
    Model m = load_model(cfg);
    std::size_t seg = apply_seg(m, cfg.i64("seg_index"));

    authnet_invert_params p{};
    p.auth_bits = cfg.u64("auth_bits");
    p.gamma = cfg.num("gamma");
    p.eps_mask = cfg.num("eps_mask");
    p.eps_offset = cfg.num("eps_offset");
    p.lr_mask = cfg.num("lr_mask");
    p.lr_offset = cfg.num("lr_offset");
    p.iters = cfg.u64("iters");
    p.batch_size = cfg.u64("invert_batch");
    p.sample_count = cfg.u64("sample_count");
    p.literal_mask_box = literal_mask_box(cfg) ? 1 : 0;
    p.seed = cfg.u64("seed");

    Key k;
    authnet_invert_report rep{};
    check(authnet_invert_key(m, d.train, &p, k.out(), &rep));
    check(authnet_key_save(k, resolved(cfg, "key_out").c_str()));
    std::printf("invert-key: seg=%zu bits=%zu target=%.3g final_gamma=%.4f loss=%.4e -> %s\n",
                seg, static_cast<std::size_t>(authnet_key_bits(k)), p.gamma, rep.final_gamma,
                rep.final_loss, resolved(cfg, "key_out").c_str());
    if (!rep.reached_half_target)
        std::printf("warning: discrimination stayed below half the target; consider more "
                    "iters or higher lr\n");
    return 0;
}

int cmd_finetune_tail(const std::vector<std::string>& args) {
    RunConfig cfg;
    define_common(cfg);
    define_data(cfg);
    cfg.define("model", "model_clean.ckpt", "input checkpoint (clean model)");
    cfg.define("key", "key.authkey", "authentication key file");
    define_train(cfg, "0.01", "10", "256");
    cfg.define("mix_seed", "7", "seed for mixture labels and order");
    cfg.define("model_out", "model_auth.ckpt", "protected checkpoint to write");
    cfg.define("history_out", "finetune_history.csv", "per-epoch loss/acc CSV");
    if (parse_args(cfg, args, "finetune-tail")) return 0;
    write_echo(cfg, "finetune-tail");

    DataPair d = load_data(cfg);
    Model m = load_model(cfg);
    Key k = load_key_required(cfg);
    apply_seg(m, authnet_key_seg_index(k));

    authnet_train_params p = train_params(cfg);
    check(authnet_finetune_tail(m, k, d.train, d.test, &p, cfg.u64("mix_seed"),
                                resolved(cfg, "history_out").c_str()));
    check(authnet_model_save(m, resolved(cfg, "model_out").c_str()));
    authnet_metrics met{};
    check(authnet_evaluate(m, k, d.test, 0, &met));
    std::printf("finetune-tail: acc_leg=%.2f%% acc_ill=%.2f%% gap=%.2f -> %s\n", met.acc_leg,
                met.acc_ill, met.gap, resolved(cfg, "model_out").c_str());
    return 0;
}

int cmd_eval(const std::vector<std::string>& args) {
    RunConfig cfg;
    define_common(cfg);
    define_data(cfg);
    cfg.define("model", "model_auth.ckpt", "checkpoint to evaluate");
    cfg.define("key", "key.authkey", "key file (none = clean evaluation)");
    cfg.define("timing_reps", "0",
               "timed inference repetitions for cc (0 keeps output deterministic)");
    cfg.define("metrics_out", "eval_metrics.csv", "metrics CSV to write");
    if (parse_args(cfg, args, "eval")) return 0;
    write_echo(cfg, "eval");

    DataPair d = load_data(cfg);
    Model m = load_model(cfg);
    Key k = load_key_opt(cfg);
    authnet_metrics met{};
    check(authnet_evaluate(m, k, d.test, cfg.u64("timing_reps"), &met));
    write_csv(resolved(cfg, "metrics_out"), {"acc_leg", "acc_ill", "gap", "cc"},
              {{fmt_num(met.acc_leg), fmt_num(met.acc_ill), fmt_num(met.gap),
                fmt_num(met.cc)}});
    std::printf("eval: acc_leg=%.2f%% acc_ill=%.2f%% gap=%.2f cc=%.4f -> %s\n", met.acc_leg,
                met.acc_ill, met.gap, met.cc, resolved(cfg, "metrics_out").c_str());
    return 0;
}

void define_radius(RunConfig& cfg) {
    cfg.define("eps_hi", "0.5", "upper end of the radius search");
    cfg.define("tol", "1e-5", "radius search tolerance");
    cfg.define("max_iter", "40", "max bisection steps");
}

authnet_radius_params radius_params(const RunConfig& cfg) {
    authnet_radius_params p{};
    p.eps_hi = cfg.num("eps_hi");
    p.tol = cfg.num("tol");
    p.max_iter = cfg.u64("max_iter");
    return p;
}

int cmd_certify_auth(const std::vector<std::string>& args) {
    RunConfig cfg;
    define_common(cfg);
    define_data(cfg);
    cfg.define("model", "model_auth.ckpt", "checkpoint to certify");
    cfg.define("key", "key.authkey", "key applied to the inputs (none = raw inputs)");
    cfg.define("n_samples", "20", "stratified test samples to certify");
    define_radius(cfg);
    cfg.define("radii_out", "auth_radii.csv", "per-sample radius CSV");
    if (parse_args(cfg, args, "certify-auth")) return 0;
    write_echo(cfg, "certify-auth");

    DataPair d = load_data(cfg);
    Model m = load_model(cfg);
    Key k = load_key_opt(cfg);
    authnet_radius_params p = radius_params(cfg);
    double mean = 0.0;
    check(authnet_auth_radius_mean(m, k, d.test, cfg.u64("n_samples"), &p, cfg.u64("seed"),
                                   resolved(cfg, "radii_out").c_str(), &mean));
    std::printf("certify-auth: mean_radius=%.6f over %" PRIu64 " %s samples -> %s\n", mean,
                cfg.u64("n_samples"), k.p ? "keyed" : "raw",
                resolved(cfg, "radii_out").c_str());
    return 0;
}

int cmd_refuse_domain(const std::vector<std::string>& args) {
    RunConfig cfg;
    define_common(cfg);
    define_data(cfg);
    cfg.define("model", "model_auth.ckpt", "protected checkpoint");
    cfg.define("key", "key.authkey", "true authentication key");
    cfg.define("fake_keys", "20", "number of fake keys to draw");
    cfg.define("ball_samples", "100", "samples per refuse ball");
    cfg.define("auth_samples", "100", "keyed reference samples");
    define_radius(cfg);
    cfg.define("min_ball_radius", "0.02", "floor for tiny certified crossings");
    cfg.define("kde_bandwidth", "0", "density bandwidth (0 = data-driven)");
    cfg.define("kde_grid", "60", "density grid resolution");
    if (parse_args(cfg, args, "refuse-domain")) return 0;
    write_echo(cfg, "refuse-domain");

    DataPair d = load_data(cfg);
    Model m = load_model(cfg);
    Key k = load_key_required(cfg);
    authnet_refuse_params p{};
    p.fake_keys = cfg.u64("fake_keys");
    p.ball_samples = cfg.u64("ball_samples");
    p.auth_samples = cfg.u64("auth_samples");
    p.radius = radius_params(cfg);
    p.min_ball_radius = cfg.num("min_ball_radius");
    p.kde_bandwidth = cfg.num("kde_bandwidth");
    p.kde_grid = cfg.u64("kde_grid");
    p.seed = cfg.u64("seed");
    authnet_refuse_summary s{};
    check(authnet_refuse_domain(m, k, d.test, &p, cfg.str("out").c_str(), &s));
    std::printf("refuse-domain: refuse_acc=%.2f%% max_ball=%.2f%% auth_acc=%.2f%% "
                "occupancy=%.3f -> %s/{refuse_points,refuse_balls,embed,kde}.csv\n",
                s.refuse_acc_overall, s.refuse_acc_max_ball, s.auth_acc, s.kde_occupancy,
                cfg.str("out").c_str());
    return 0;
}

// ---- attacks ----

int cmd_attack(const std::string& kind, const std::vector<std::string>& args) {
    RunConfig cfg;
    define_common(cfg);
    define_data(cfg);
    cfg.define("model", "model_auth.ckpt", "victim checkpoint");

    if (kind == "differential") {
        cfg.define("key", "key.authkey", "key behind the leaked pairs");
        cfg.define("n_pairs", "100", "leaked (raw, keyed) image pairs");
        cfg.define("noise_strength", "0", "noising defense strength (0 = off)");
        cfg.define("report_out", "attack_differential.csv", "report CSV");
        if (parse_args(cfg, args, "attack differential")) return 0;
        write_echo(cfg, "attack-differential");
        DataPair d = load_data(cfg);
        Model m = load_model(cfg);
        Key k = load_key_required(cfg);
        authnet_attack_report r{};
        check(authnet_attack_differential(m, k, d.train, d.test, cfg.u64("n_pairs"),
                                          cfg.num("noise_strength"), cfg.u64("seed"), &r));
        const char* label = cfg.num("noise_strength") > 0 ? "differential+noising"
                                                          : "differential";
        write_report_csv(resolved(cfg, "report_out"), label, r);
        std::printf("attack differential: acc_diff=%.2f%% acc_leg=%.2f%% acc_ill=%.2f%% "
                    "noise=%.2f -> %s\n",
                    r.acc_attacked, r.acc_leg, r.acc_ill, r.extra,
                    resolved(cfg, "report_out").c_str());
        return 0;
    }

    if (kind == "mask-opt") {
        cfg.define("fraction", "0.1", "share of training data the attacker holds");
        cfg.define("epochs", "10", "optimization epochs");
        cfg.define("batch_size", "128", "batch size");
        cfg.define("lr_mask", "0.01", "mask learning rate");
        cfg.define("lr_offset", "0.003", "offset learning rate");
        cfg.define("eps_mask", "0.5", "mask box half-width (published)");
        cfg.define("eps_offset", "0.5", "offset box half-width (published)");
        cfg.define("mask_box", "deviation", "mask constraint: deviation | literal");
        cfg.define("epochs_out", "attack_mask_opt_epochs.csv", "per-epoch accuracy CSV");
        cfg.define("report_out", "attack_mask_opt.csv", "report CSV");
        if (parse_args(cfg, args, "attack mask-opt")) return 0;
        write_echo(cfg, "attack-mask-opt");
        DataPair d = load_data(cfg);
        Model m = load_model(cfg);
        authnet_attack_report r{};
        check(authnet_attack_mask_opt(m, d.train, d.test, cfg.num("fraction"),
                                      cfg.u64("epochs"), cfg.u64("batch_size"),
                                      cfg.num("lr_mask"), cfg.num("lr_offset"),
                                      cfg.num("eps_mask"), cfg.num("eps_offset"),
                                      literal_mask_box(cfg) ? 1 : 0, cfg.u64("seed"),
                                      resolved(cfg, "epochs_out").c_str(), &r));
        write_report_csv(resolved(cfg, "report_out"), "mask-opt", r);
        std::printf("attack mask-opt: best_acc=%.2f%% acc_ill=%.2f%% fraction=%.2f -> %s\n",
                    r.acc_attacked, r.acc_ill, r.fraction,
                    resolved(cfg, "report_out").c_str());
        return 0;
    }

    if (kind == "finetune") {
        cfg.define("key", "key.authkey", "original key (for the post-attack measurement)");
        cfg.define("newtask", "digits", "attacker dataset: digits | synthetic");
        cfg.define("new_classes", "10", "class count of the attacker task");
        cfg.define("new_train_count", "4000", "attacker training samples");
        cfg.define("new_test_count", "1000", "attacker test samples");
        cfg.define("newtask_seed", "50", "seed offset for the attacker dataset");
        define_train(cfg, "0.001", "5", "128");
        cfg.define("report_out", "attack_finetune.csv", "report CSV");
        if (parse_args(cfg, args, "attack finetune")) return 0;
        write_echo(cfg, "attack-finetune");
        DataPair d = load_data(cfg);
        Model m = load_model(cfg);
        Key k = load_key_required(cfg);
        std::uint64_t aseed = cfg.u64("seed") + cfg.u64("newtask_seed");
        Dataset ntr, nte;
        if (cfg.str("newtask") == "digits") {
            check(authnet_dataset_digits(cfg.u64("new_train_count"), aseed, ntr.out()));
            check(authnet_dataset_digits(cfg.u64("new_test_count"), aseed + 1, nte.out()));
        } else if (cfg.str("newtask") == "synthetic") {
            std::size_t k2 = cfg.u64("new_classes");
            if (k2 == 0) die_value("new_classes must be positive");
            check(authnet_dataset_synthetic(k2, cfg.u64("new_train_count") / k2, 1, 28, 28,
                                            cfg.num("synth_sep"), aseed, ntr.out()));
            check(authnet_dataset_synthetic(k2, cfg.u64("new_test_count") / k2, 1, 28, 28,
                                            cfg.num("synth_sep"), aseed + 1, nte.out()));
        } else {
            die_value("newtask must be digits or synthetic");
        }
        authnet_train_params p = train_params(cfg);
        authnet_attack_report r{};
        check(authnet_attack_finetune(m, k, ntr, nte, d.test, &p, &r));
        write_report_csv(resolved(cfg, "report_out"), "finetune", r);
        std::printf("attack finetune: newtask_acc=%.2f%% orig acc_leg=%.2f%% "
                    "acc_ill=%.2f%% -> %s\n",
                    r.acc_attacked, r.acc_leg, r.acc_ill, resolved(cfg, "report_out").c_str());
        return 0;
    }

    if (kind == "prune") {
        cfg.define("key", "key.authkey", "key file (none = clean baseline sweep)");
        cfg.define("rates", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8", "pruning rates");
        cfg.define("sweep_out", "attack_prune.csv", "per-rate metrics CSV");
        if (parse_args(cfg, args, "attack prune")) return 0;
        write_echo(cfg, "attack-prune");
        DataPair d = load_data(cfg);
        Model m = load_model(cfg);
        Key k = load_key_opt(cfg);
        std::vector<double> rates = cfg.num_list("rates");
        double max_ill = 0.0, max_leg = 0.0;
        check(authnet_attack_prune_sweep(m, k, d.test, rates.data(), rates.size(),
                                         resolved(cfg, "sweep_out").c_str(), &max_ill,
                                         &max_leg));
        std::printf("attack prune: %zu rates, max acc_ill=%.2f%% max acc_leg=%.2f%% -> %s\n",
                    rates.size(), max_ill, max_leg, resolved(cfg, "sweep_out").c_str());
        return 0;
    }

    if (kind == "offset") {
        cfg.define("fraction", "0.2", "share of training data the attacker holds");
        cfg.define("steps", "2000", "optimization steps for the remap layer");
        cfg.define("lr", "0.01", "remap learning rate");
        cfg.define("batch_size", "128", "batch size");
        cfg.define("report_out", "attack_offset.csv", "report CSV");
        if (parse_args(cfg, args, "attack offset")) return 0;
        write_echo(cfg, "attack-offset");
        DataPair d = load_data(cfg);
        Model m = load_model(cfg);
        authnet_attack_report r{};
        check(authnet_attack_offset(m, d.train, d.test, cfg.num("fraction"),
                                    cfg.u64("steps"), cfg.num("lr"), cfg.u64("batch_size"),
                                    cfg.u64("seed"), &r));
        write_report_csv(resolved(cfg, "report_out"), "offset", r);
        std::printf("attack offset: remapped_acc=%.2f%% acc_ill=%.2f%% fraction=%.2f -> %s\n",
                    r.acc_attacked, r.acc_ill, r.fraction, resolved(cfg, "report_out").c_str());
        return 0;
    }

    if (kind == "extract") {
        cfg.define("loss", "mse", "distillation loss on soft labels: mse | ce");
        cfg.define("queries", "10000", "query budget");
        cfg.define("epochs", "20", "substitute training epochs");
        cfg.define("lr", "0.001", "substitute learning rate");
        cfg.define("batch_size", "128", "batch size");
        cfg.define("queries_seed", "9001", "seed offset for the query set");
        cfg.define("report_out", "attack_extract.csv", "report CSV");
        if (parse_args(cfg, args, "attack extract")) return 0;
        write_echo(cfg, "attack-extract");
        DataPair d = load_data(cfg);
        Model m = load_model(cfg);
        std::uint64_t qseed = cfg.u64("seed") + cfg.u64("queries_seed");
        Dataset q;
        if (cfg.str("data") == "synthetic") {
            std::size_t k2 = cfg.u64("classes");
            check(authnet_dataset_synthetic(k2, cfg.u64("queries") / k2, 1, 28, 28,
                                            cfg.num("synth_sep"), qseed, q.out()));
        } else {
            check(authnet_dataset_digits(cfg.u64("queries"), qseed, q.out()));
        }
        authnet_attack_report r{};
        check(authnet_attack_extract(m, q, d.test, cfg.str("loss").c_str(),
                                     cfg.u64("queries"), cfg.u64("epochs"), cfg.num("lr"),
                                     cfg.u64("batch_size"), cfg.u64("seed"), &r, nullptr));
        write_report_csv(resolved(cfg, "report_out"),
                         cfg.str("loss") == "ce" ? "extract-ce" : "extract-mse", r);
        std::printf("attack extract: substitute_acc=%.2f%% loss=%s queries=%" PRIu64
                    " -> %s\n",
                    r.acc_attacked, cfg.str("loss").c_str(), cfg.u64("queries"),
                    resolved(cfg, "report_out").c_str());
        return 0;
    }

    die_usage("unknown attack kind '" + kind +
              "' (differential | mask-opt | finetune | prune | offset | extract)");
}

// ---- sweeps ----

int cmd_sweep(const std::string& param, const std::vector<std::string>& args) {
    if (param != "auth-bits" && param != "seg" && param != "gamma")
        die_usage("unknown sweep parameter '" + param + "' (auth-bits | seg | gamma)");

    RunConfig cfg;
    define_common(cfg);
    define_data(cfg);
    cfg.define("model", "model_clean.ckpt", "clean checkpoint the sweep starts from");
    std::string defaults = param == "auth-bits" ? "1,5,10,20"
                           : param == "seg"     ? "0,2,4,5"
                                                : "1,2,3,5";
    cfg.define("values", defaults, "swept values, comma-separated");
    cfg.define("auth_bits", "5", "authentication channels (when not swept)");
    cfg.define("gamma", "2", "target discrimination (when not swept)");
    cfg.define("seg_index", "-1", "gate layer index (when not swept; -1 = default)");
    cfg.define("eps_mask", "0.5", "mask box half-width");
    cfg.define("eps_offset", "0.5", "offset box half-width");
    cfg.define("lr_mask", "0.01", "mask learning rate");
    cfg.define("lr_offset", "0.003", "offset learning rate");
    cfg.define("iters", "300", "inversion iterations");
    cfg.define("invert_batch", "256", "inversion batch size");
    cfg.define("sample_count", "2000", "inversion sample count");
    cfg.define("mask_box", "deviation", "mask constraint: deviation | literal");
    define_train(cfg, "0.01", "10", "256");
    cfg.define("mix_seed", "7", "seed for mixture labels and order");
    std::string sweep_name = "sweep_" + param;
    for (auto& c : sweep_name)
        if (c == '-') c = '_';
    cfg.define("sweep_out", sweep_name + ".csv", "per-value metrics CSV");
    if (parse_args(cfg, args, "sweep " + param)) return 0;
    write_echo(cfg, sweep_name);

    DataPair d = load_data(cfg);
    Model base = load_model(cfg);
    std::vector<double> values = cfg.num_list("values");

    std::vector<std::vector<std::string>> rows;
    for (double v : values) {
        Model m;
        check(authnet_model_clone(base, m.out()));
        long seg_req = param == "seg" ? static_cast<long>(std::llround(v))
                                      : cfg.i64("seg_index");
        std::size_t seg = apply_seg(m, seg_req);

        authnet_invert_params ip{};
        ip.auth_bits = param == "auth-bits"
                           ? static_cast<std::size_t>(std::llround(v))
                           : cfg.u64("auth_bits");
        ip.gamma = param == "gamma" ? v : cfg.num("gamma");
        ip.eps_mask = cfg.num("eps_mask");
        ip.eps_offset = cfg.num("eps_offset");
        ip.lr_mask = cfg.num("lr_mask");
        ip.lr_offset = cfg.num("lr_offset");
        ip.iters = cfg.u64("iters");
        ip.batch_size = cfg.u64("invert_batch");
        ip.sample_count = cfg.u64("sample_count");
        ip.literal_mask_box = literal_mask_box(cfg) ? 1 : 0;
        ip.seed = cfg.u64("seed");

        Key k;
        authnet_invert_report rep{};
        check(authnet_invert_key(m, d.train, &ip, k.out(), &rep));

        authnet_train_params tp = train_params(cfg);
        check(authnet_finetune_tail(m, k, d.train, nullptr, &tp, cfg.u64("mix_seed"),
                                    nullptr));
        authnet_metrics met{};
        check(authnet_evaluate(m, k, d.test, 0, &met));
        rows.push_back({fmt_num(v), fmt_num(static_cast<double>(seg)),
                        fmt_num(rep.final_gamma), fmt_num(met.acc_leg),
                        fmt_num(met.acc_ill), fmt_num(met.gap)});
        std::printf("sweep %s=%g: seg=%zu final_gamma=%.3f acc_leg=%.2f%% acc_ill=%.2f%%\n",
                    param.c_str(), v, seg, rep.final_gamma, met.acc_leg, met.acc_ill);
    }
    write_csv(resolved(cfg, "sweep_out"),
              {"value", "seg", "final_gamma", "acc_leg", "acc_ill", "gap"}, rows);
    std::printf("sweep %s: %zu values -> %s\n", param.c_str(), values.size(),
                resolved(cfg, "sweep_out").c_str());
    return 0;
}

int global_help() {
    std::printf(
        "usage: authnet_cli <subcommand> [--config=FILE] [--key=value ...]\n"
        "\n"
        "subcommands:\n"
        "  train-clean     train a clean model\n"
        "  invert-key      derive an authentication key against a trained model\n"
        "  finetune-tail   fine-tune the tail on the keyed/raw mixture\n"
        "  eval            measure acc_leg / acc_ill / gap / cc\n"
        "  certify-auth    mean certified authentication radius over test points\n"
        "  refuse-domain   fake-key refuse-domain study (CSV bundle)\n"
        "  attack <kind>   differential | mask-opt | finetune | prune | offset | extract\n"
        "  sweep <param>   auth-bits | seg | gamma\n"
        "\n"
        "Config precedence: defaults < --config=FILE (in order) < --key=value.\n"
        "Unknown keys are rejected. Artifact paths resolve inside --out unless\n"
        "absolute. AUTHNET_OUT overrides the default output directory. Every run\n"
        "writes <out>/<subcommand>.config with the resolved configuration.\n"
        "Run `authnet_cli <subcommand> --help` for the full key list.\n"
        "\n%s",
        kExitTable);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        global_help();
        return 1;
    }
    std::string cmd = argv[1];
    if (cmd == "--help" || cmd == "-h" || cmd == "help") return global_help();

    std::vector<std::string> args(argv + 2, argv + argc);
    try {
        if (cmd == "train-clean") return cmd_train_clean(args);
        if (cmd == "invert-key") return cmd_invert_key(args);
        if (cmd == "finetune-tail") return cmd_finetune_tail(args);
        if (cmd == "eval") return cmd_eval(args);
        if (cmd == "certify-auth") return cmd_certify_auth(args);
        if (cmd == "refuse-domain") return cmd_refuse_domain(args);
        if (cmd == "attack" || cmd == "sweep") {
            if (args.empty())
                die_usage(cmd == "attack"
                              ? "attack needs a kind (differential | mask-opt | finetune | "
                                "prune | offset | extract)"
                              : "sweep needs a parameter (auth-bits | seg | gamma)");
            std::string sub = args.front();
            std::vector<std::string> rest(args.begin() + 1, args.end());
            if (sub == "--help" || sub == "-h")
                die_usage(cmd + " needs a kind/parameter before --help");
            return cmd == "attack" ? cmd_attack(sub, rest) : cmd_sweep(sub, rest);
        }
    } catch (const std::exception& e) {
        // post-parse config conversions (bad numbers etc.) land here
        die_value(e.what());
    }
    die_usage("unknown subcommand '" + cmd + "' (run authnet_cli --help)");
}
