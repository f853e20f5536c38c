#include "authnet/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "authnet/error.hpp"
#include "authnet/rng.hpp"
#include "authnet/train.hpp"

namespace authnet {

namespace {

std::size_t argmax_row(const double* row, std::size_t k) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (row[j] > row[arg]) arg = j;
    return arg;
}

std::vector<std::size_t> seeded_rows(std::size_t total, std::size_t take,
                                     std::uint64_t seed) {
    std::vector<std::size_t> rows(total);
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(seed);
    rng.shuffle(rows);
    rows.resize(std::min(take, total));
    return rows;
}

} // namespace

Tensor differential_mask(const Tensor& raw_batch, const Tensor& keyed_batch) {
    if (!raw_batch.same_shape(keyed_batch))
        throw ShapeError("differential_mask: pair batches differ in shape");
    if (raw_batch.ndim() != 4 || raw_batch.extent(0) == 0)
        throw ShapeError("differential_mask: expected non-empty [N,C,H,W] pairs");
    const std::size_t n = raw_batch.extent(0);
    const std::size_t d = raw_batch.size() / n;
    Tensor mask({raw_batch.extent(1), raw_batch.extent(2), raw_batch.extent(3)});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            mask[j] += keyed_batch[i * d + j] - raw_batch[i * d + j];
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) mask[j] *= inv;
    return mask;
}

Tensor noising_defense(const Tensor& batch, double strength, std::uint64_t seed) {
    if (batch.ndim() != 4)
        throw ShapeError("noising_defense expects [N,C,H,W], got " + batch.shape_str());
    if (strength < 0.0) throw ValueError("noising_defense: strength must be >= 0");
    const std::size_t n = batch.extent(0), c = batch.extent(1), h = batch.extent(2),
                      w = batch.extent(3);

    // 7-tap sigma=1 Gaussian, normalised.
    double kern[7];
    double ksum = 0.0;
    for (int i = -3; i <= 3; ++i) {
        kern[i + 3] = std::exp(-0.5 * i * i);
        ksum += kern[i + 3];
    }
    for (double& v : kern) v /= ksum;

    Tensor out(batch.shape());
    std::vector<double> tmp(h * w);
    Rng rng(seed);
    for (std::size_t img = 0; img < n * c; ++img) {
        const double* x = batch.data() + img * h * w;
        double* y = out.data() + img * h * w;
        // horizontal then vertical pass, replicated edges
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t cc = 0; cc < w; ++cc) {
                double s = 0.0;
                for (int t = -3; t <= 3; ++t) {
                    long col = static_cast<long>(cc) + t;
                    col = std::clamp<long>(col, 0, static_cast<long>(w) - 1);
                    s += kern[t + 3] * x[r * w + static_cast<std::size_t>(col)];
                }
                tmp[r * w + cc] = s;
            }
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t cc = 0; cc < w; ++cc) {
                double s = 0.0;
                for (int t = -3; t <= 3; ++t) {
                    long row = static_cast<long>(r) + t;
                    row = std::clamp<long>(row, 0, static_cast<long>(h) - 1);
                    s += kern[t + 3] * tmp[static_cast<std::size_t>(row) * w + cc];
                }
                const double residual = x[r * w + cc] - s;
                double v = x[r * w + cc] + strength * residual +
                           rng.uniform(-strength / 4.0, strength / 4.0);
                y[r * w + cc] = std::clamp(v, 0.0, 1.0);
            }
    }
    return out;
}

DifferentialResult differential_attack(const SequentialModel& model, const AuthKey& key,
                                       const IdxDataset& leak, const IdxDataset& test,
                                       std::size_t n_pairs, double noise_strength,
                                       std::uint64_t seed) {
    if (n_pairs == 0 || n_pairs > leak.size())
        throw ValueError("differential_attack: need 1 <= n_pairs <= leak size");
    IdxDataset pairs = gather_dataset(leak, seeded_rows(leak.size(), n_pairs, seed));
    Tensor keyed = apply_key(pairs.images, key);
    if (noise_strength > 0.0)
        keyed = noising_defense(keyed, noise_strength, seed + 1);

    DifferentialResult res;
    res.mask_d = differential_mask(pairs.images, keyed);

    // Attacked inputs: raw test images shifted by the estimated key.
    const std::size_t k = model.num_classes;
    const std::size_t d = res.mask_d.size();
    std::size_t correct_atk = 0, correct_leg = 0, correct_ill = 0;
    const std::size_t chunk = 512;
    Rng leg_rng(seed + 2);
    for (std::size_t begin = 0; begin < test.size(); begin += chunk) {
        const std::size_t cnt = std::min(chunk, test.size() - begin);
        IdxDataset part = slice_dataset(test, begin, cnt);
        Tensor shifted = part.images;
        for (std::size_t i = 0; i < cnt; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double& v = shifted[i * d + j];
                v = std::clamp(v + res.mask_d[j], 0.0, 1.0);
            }
        Tensor atk_logits = forward(model, shifted);
        Tensor leg_in = apply_key(part.images, key);
        if (noise_strength > 0.0)
            leg_in = noising_defense(leg_in, noise_strength, leg_rng.next_u64());
        Tensor leg_logits = forward(model, leg_in);
        Tensor ill_logits = forward(model, part.images);
        for (std::size_t i = 0; i < cnt; ++i) {
            if (static_cast<int>(argmax_row(atk_logits.data() + i * k, k)) ==
                part.labels[i])
                ++correct_atk;
            if (static_cast<int>(argmax_row(leg_logits.data() + i * k, k)) ==
                part.labels[i])
                ++correct_leg;
            if (static_cast<int>(argmax_row(ill_logits.data() + i * k, k)) ==
                part.labels[i])
                ++correct_ill;
        }
    }
    const double nt = static_cast<double>(test.size());
    res.report.kind = noise_strength > 0.0 ? "differential+noising" : "differential";
    res.report.fraction = static_cast<double>(n_pairs) / static_cast<double>(leak.size());
    res.report.acc_attacked = 100.0 * static_cast<double>(correct_atk) / nt;
    res.report.acc_leg = 100.0 * static_cast<double>(correct_leg) / nt;
    res.report.acc_ill = 100.0 * static_cast<double>(correct_ill) / nt;
    res.report.extra = noise_strength;
    res.report.seed = seed;
    return res;
}

MaskOptResult mask_optimization_attack(const SequentialModel& model,
                                       const IdxDataset& train, const IdxDataset& test,
                                       const MaskOptConfig& cfg) {
    if (cfg.fraction <= 0.0 || cfg.fraction > 1.0)
        throw ValueError("mask_optimization_attack: fraction must be in (0,1]");
    if (cfg.epochs == 0 || cfg.batch_size == 0)
        throw ValueError("mask_optimization_attack: epochs/batch_size must be positive");
    const auto take = static_cast<std::size_t>(
        std::llround(cfg.fraction * static_cast<double>(train.size())));
    if (take == 0) throw ValueError("mask_optimization_attack: attacker share is empty");
    IdxDataset share = gather_dataset(train, seeded_rows(train.size(), take, cfg.seed));
    auto [c, h, w] = share.sample_shape();

    MaskOptResult res;
    AuthKey& key = res.recovered;
    key.eps_mask = cfg.eps_mask;
    key.eps_offset = cfg.eps_offset;
    key.literal_mask_box = cfg.literal_mask_box;
    key.mask = Tensor::full({h, w}, cfg.literal_mask_box ? cfg.eps_mask / 2.0 : 1.0);
    key.offset = Tensor({c, h, w});
    key.bits.indices = {0}; // placeholder; the attacker has no bit set

    const double mlo = cfg.literal_mask_box ? 0.0 : 1.0 - cfg.eps_mask;
    const double mhi = cfg.literal_mask_box ? cfg.eps_mask : 1.0 + cfg.eps_mask;
    const double nudge = 1e-9;

    std::vector<Tensor*> mask_param{&key.mask}, off_param{&key.offset};
    AdamState mask_adam = make_adam_state(mask_param);
    AdamState off_adam = make_adam_state(off_param);

    std::vector<std::size_t> order(share.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t chw = c * h * w;
    const std::size_t k = model.num_classes;

    double best_acc = 0.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed + 10 + epoch);
        shuffle_rng.shuffle(order);
        for (std::size_t begin = 0; begin < share.size(); begin += cfg.batch_size) {
            const std::size_t cnt = std::min(cfg.batch_size, share.size() - begin);
            Tensor x({cnt, c, h, w});
            std::vector<int> labels(cnt);
            for (std::size_t i = 0; i < cnt; ++i) {
                std::copy(share.images.data() + order[begin + i] * chw,
                          share.images.data() + (order[begin + i] + 1) * chw,
                          x.data() + i * chw);
                labels[i] = share.labels[order[begin + i]];
            }
            Tensor pre = key_preclamp(x, key);
            Tensor keyed(pre.shape());
            for (std::size_t i = 0; i < pre.size(); ++i)
                keyed[i] = std::clamp(pre[i], 0.0, 1.0);

            ForwardTrace trace;
            Tensor logits = forward(model, keyed, &trace);
            LossResult loss = cross_entropy(logits, one_hot(labels, k));
            if (!std::isfinite(loss.value))
                throw NumericError("mask_optimization_attack: non-finite loss");
            Gradients g = backward(model, trace, loss.grad, true);

            Tensor dmask({h, w}), doffset({c, h, w});
            accumulate_key_grads(g.input, pre, x, dmask, doffset);
            std::vector<const Tensor*> mg{&dmask}, og{&doffset};
            adam_step(mask_param, mg, mask_adam, cfg.lr_mask);
            adam_step(off_param, og, off_adam, cfg.lr_offset);
            for (std::size_t i = 0; i < key.mask.size(); ++i)
                key.mask[i] = std::clamp(key.mask[i], mlo + nudge, mhi - nudge);
            for (std::size_t i = 0; i < key.offset.size(); ++i)
                key.offset[i] = std::clamp(key.offset[i], -cfg.eps_offset + nudge,
                                           cfg.eps_offset - nudge);
        }
        Metrics m = evaluate(model, &key, test, 0);
        res.epoch_acc.emplace_back(epoch, m.acc_leg);
        best_acc = std::max(best_acc, m.acc_leg);
    }

    Metrics raw = evaluate(model, nullptr, test, 0);
    res.report.kind = "mask-opt";
    res.report.fraction = cfg.fraction;
    res.report.acc_attacked = best_acc;
    res.report.acc_ill = raw.acc_ill;
    res.report.seed = cfg.seed;
    return res;
}

FinetuneAttackResult finetune_attack(const SequentialModel& model, const AuthKey& key,
                                     const IdxDataset& new_train,
                                     const IdxDataset& new_test,
                                     const IdxDataset& orig_test,
                                     const TrainConfig& cfg) {
    FinetuneAttackResult res;
    res.adapted = model;

    Layer original_final;
    bool reheaded = false;
    if (new_train.num_classes != model.num_classes) {
        // Swap the final linear layer for the new label space.
        if (res.adapted.layers.back().kind != LayerKind::Linear)
            throw StateError("finetune_attack: model does not end in a linear layer");
        original_final = res.adapted.layers.back();
        Layer nl = linear(original_final.in_features, new_train.num_classes);
        nl.weight = Tensor({new_train.num_classes, original_final.in_features});
        nl.bias = Tensor({new_train.num_classes});
        Rng rng(cfg.seed + 99);
        const double bound = std::sqrt(6.0 / static_cast<double>(nl.in_features));
        for (std::size_t i = 0; i < nl.weight.size(); ++i)
            nl.weight[i] = rng.uniform(-bound, bound);
        res.adapted.layers.back() = nl;
        res.adapted.num_classes = new_train.num_classes;
        reheaded = true;
    }

    train_clean(res.adapted, new_train, cfg);
    res.newtask_acc = accuracy(res.adapted, new_test);

    SequentialModel orig_view = res.adapted;
    if (reheaded) {
        orig_view.layers.back() = original_final;
        orig_view.num_classes = model.num_classes;
    }
    Metrics m = evaluate(orig_view, &key, orig_test, 0);
    res.report.kind = "finetune";
    res.report.fraction = 1.0;
    res.report.acc_attacked = res.newtask_acc;
    res.report.acc_leg = m.acc_leg;
    res.report.acc_ill = m.acc_ill;
    res.report.extra = res.newtask_acc;
    res.report.seed = cfg.seed;
    return res;
}

std::vector<PruneSweepRow> pruning_sweep(const SequentialModel& model, const AuthKey* key,
                                         const IdxDataset& test,
                                         const std::vector<double>& rates) {
    if (rates.empty()) throw ValueError("pruning_sweep: no rates given");
    std::vector<PruneSweepRow> rows;
    rows.reserve(rates.size());
    for (double rate : rates) {
        SequentialModel pruned = magnitude_prune(model, rate);
        PruneSweepRow row;
        row.rate = rate;
        row.metrics = evaluate(pruned, key, test, 0);
        rows.push_back(std::move(row));
    }
    return rows;
}

OffsetAttackResult offset_attack(const SequentialModel& model, const IdxDataset& train,
                                 const IdxDataset& test, const OffsetAttackConfig& cfg) {
    if (cfg.fraction <= 0.0 || cfg.fraction > 1.0)
        throw ValueError("offset_attack: fraction must be in (0,1]");
    if (cfg.steps == 0 || cfg.batch_size == 0)
        throw ValueError("offset_attack: steps/batch_size must be positive");
    const auto take = static_cast<std::size_t>(
        std::llround(cfg.fraction * static_cast<double>(train.size())));
    if (take == 0) throw ValueError("offset_attack: attacker share is empty");
    IdxDataset share = gather_dataset(train, seeded_rows(train.size(), take, cfg.seed));

    const std::size_t k = model.num_classes;
    OffsetAttackResult res;
    res.remap_weight = Tensor({k, k});
    res.remap_bias = Tensor({k});
    for (std::size_t i = 0; i < k; ++i) res.remap_weight[i * k + i] = 1.0;

    std::vector<Tensor*> params{&res.remap_weight, &res.remap_bias};
    AdamState adam = make_adam_state(params);

    std::vector<std::size_t> order(share.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t pos = share.size();
    std::size_t pass = 0;
    auto [c, h, w] = share.sample_shape();
    const std::size_t chw = c * h * w;

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const std::size_t cnt = std::min(cfg.batch_size, share.size());
        if (pos + cnt > share.size()) {
            Rng r(cfg.seed + 20 + pass++);
            r.shuffle(order);
            pos = 0;
        }
        Tensor x({cnt, c, h, w});
        std::vector<int> labels(cnt);
        for (std::size_t i = 0; i < cnt; ++i) {
            std::copy(share.images.data() + order[pos + i] * chw,
                      share.images.data() + (order[pos + i] + 1) * chw,
                      x.data() + i * chw);
            labels[i] = share.labels[order[pos + i]];
        }
        pos += cnt;

        Tensor base_logits = forward(model, x); // frozen victim
        Tensor remapped({cnt, k});
        for (std::size_t i = 0; i < cnt; ++i)
            for (std::size_t o = 0; o < k; ++o) {
                double s = res.remap_bias[o];
                for (std::size_t j = 0; j < k; ++j)
                    s += res.remap_weight[o * k + j] * base_logits[i * k + j];
                remapped[i * k + o] = s;
            }
        LossResult loss = cross_entropy(remapped, one_hot(labels, k));
        if (!std::isfinite(loss.value))
            throw NumericError("offset_attack: non-finite loss at step " +
                               std::to_string(step));
        Tensor dw({k, k}), db({k});
        for (std::size_t i = 0; i < cnt; ++i)
            for (std::size_t o = 0; o < k; ++o) {
                const double g = loss.grad[i * k + o];
                db[o] += g;
                for (std::size_t j = 0; j < k; ++j)
                    dw[o * k + j] += g * base_logits[i * k + j];
            }
        std::vector<const Tensor*> grads{&dw, &db};
        adam_step(params, grads, adam, cfg.lr);
    }

    // Remapped accuracy on raw test inputs.
    std::size_t correct = 0;
    const std::size_t chunk = 512;
    for (std::size_t begin = 0; begin < test.size(); begin += chunk) {
        const std::size_t cnt = std::min(chunk, test.size() - begin);
        IdxDataset part = slice_dataset(test, begin, cnt);
        Tensor logits = forward(model, part.images);
        for (std::size_t i = 0; i < cnt; ++i) {
            double best = -1e300;
            std::size_t arg = 0;
            for (std::size_t o = 0; o < k; ++o) {
                double s = res.remap_bias[o];
                for (std::size_t j = 0; j < k; ++j)
                    s += res.remap_weight[o * k + j] * logits[i * k + j];
                if (s > best) {
                    best = s;
                    arg = o;
                }
            }
            if (static_cast<int>(arg) == part.labels[i]) ++correct;
        }
    }
    Metrics raw = evaluate(model, nullptr, test, 0);
    res.report.kind = "offset";
    res.report.fraction = cfg.fraction;
    res.report.acc_attacked =
        100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
    res.report.acc_ill = raw.acc_ill;
    res.report.seed = cfg.seed;
    return res;
}

ExtractionResult extract_model(const SequentialModel& victim, const IdxDataset& queries,
                               const IdxDataset& test, const ExtractionConfig& cfg) {
    if (cfg.epochs == 0 || cfg.batch_size == 0 || cfg.queries == 0)
        throw ValueError("extract_model: epochs/batch_size/queries must be positive");
    IdxDataset qset = gather_dataset(
        queries, seeded_rows(queries.size(), std::min(cfg.queries, queries.size()),
                             cfg.seed));
    auto [c, h, w] = qset.sample_shape();
    const std::size_t k = victim.num_classes;
    const std::size_t n = qset.size();

    // Victim soft labels, computed once (read-only oracle access).
    Tensor soft({n, k});
    const std::size_t chunk = 512;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t cnt = std::min(chunk, n - begin);
        IdxDataset part = slice_dataset(qset, begin, cnt);
        Tensor p = softmax_rows(forward(victim, part.images));
        std::copy(p.data(), p.data() + p.size(), soft.data() + begin * k);
    }

    ExtractionResult res;
    res.substitute = make_model(cfg.substitute_arch, {c, h, w}, k, cfg.seed + 5);
    auto params = param_tensors(res.substitute);
    AdamState adam = make_adam_state(params);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t chw = c * h * w;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed + 30 + epoch);
        shuffle_rng.shuffle(order);
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t cnt = std::min(cfg.batch_size, n - begin);
            Tensor x({cnt, c, h, w});
            Tensor t({cnt, k});
            for (std::size_t i = 0; i < cnt; ++i) {
                std::copy(qset.images.data() + order[begin + i] * chw,
                          qset.images.data() + (order[begin + i] + 1) * chw,
                          x.data() + i * chw);
                std::copy(soft.data() + order[begin + i] * k,
                          soft.data() + (order[begin + i] + 1) * k, t.data() + i * k);
            }
            ForwardTrace trace;
            Tensor logits = forward(res.substitute, x, &trace);
            Tensor p = softmax_rows(logits);
            Tensor dlogits({cnt, k});
            double loss_val = 0.0;
            if (cfg.ce_loss) {
                // CE against soft labels: d/dlogits = (p - t)/N.
                for (std::size_t i = 0; i < cnt; ++i)
                    for (std::size_t j = 0; j < k; ++j) {
                        const std::size_t idx = i * k + j;
                        loss_val -= t[idx] * std::log(std::max(p[idx], 1e-300));
                        dlogits[idx] = (p[idx] - t[idx]) / static_cast<double>(cnt);
                    }
                loss_val /= static_cast<double>(cnt);
            } else {
                // MSE on probabilities; chain through the softmax Jacobian.
                for (std::size_t i = 0; i < cnt; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < k; ++j) {
                        const std::size_t idx = i * k + j;
                        const double diff = p[idx] - t[idx];
                        loss_val += diff * diff;
                        dlogits[idx] = 2.0 * diff / static_cast<double>(cnt);
                    }
                    for (std::size_t j = 0; j < k; ++j)
                        dot += dlogits[i * k + j] * p[i * k + j];
                    for (std::size_t j = 0; j < k; ++j) {
                        const std::size_t idx = i * k + j;
                        dlogits[idx] = p[idx] * (dlogits[idx] - dot);
                    }
                }
                loss_val /= static_cast<double>(cnt);
            }
            if (!std::isfinite(loss_val))
                throw NumericError("extract_model: non-finite loss");

            Gradients g = backward(res.substitute, trace, dlogits);
            std::vector<const Tensor*> grad_list;
            for (std::size_t li = 0; li < res.substitute.layers.size(); ++li) {
                if (!res.substitute.layers[li].has_params()) continue;
                grad_list.push_back(&g.weight[li]);
                grad_list.push_back(&g.bias[li]);
            }
            adam_step(params, grad_list, adam, cfg.lr);
        }
    }

    res.report.kind = cfg.ce_loss ? "extract-ce" : "extract-mse";
    res.report.fraction =
        static_cast<double>(n) / static_cast<double>(queries.size());
    res.report.acc_attacked = accuracy(res.substitute, test);
    res.report.seed = cfg.seed;
    return res;
}

} // namespace authnet
