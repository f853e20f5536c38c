#include "authnet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "authnet/error.hpp"
#include "authnet/rng.hpp"

namespace authnet {

SplitModel split_model(const SequentialModel& model, std::size_t seg_index) {
    auto shapes = layer_shapes(model);
    if (seg_index + 1 >= model.layers.size())
        throw ValueError("split_model: seg_index " + std::to_string(seg_index) +
                         " leaves an empty tail (model has " +
                         std::to_string(model.layers.size()) + " layers)");
    if (!shapes[seg_index].spatial())
        throw ValueError("split_model: gate output at layer " + std::to_string(seg_index) +
                         " is flattened; the split must sit before flatten");

    SplitModel s;
    s.seg_index = seg_index;
    s.head.input_shape = model.input_shape;
    s.head.layers.assign(model.layers.begin(),
                         model.layers.begin() + static_cast<std::ptrdiff_t>(seg_index + 1));
    const auto& gate = shapes[seg_index].dims;
    s.tail.input_shape = {gate[0], gate[1], gate[2]};
    s.tail.num_classes = model.num_classes;
    s.tail.layers.assign(model.layers.begin() + static_cast<std::ptrdiff_t>(seg_index + 1),
                         model.layers.end());
    layer_shapes(s.head, false);
    layer_shapes(s.tail);
    return s;
}

SequentialModel compose(const SplitModel& split) {
    SequentialModel m;
    m.input_shape = split.head.input_shape;
    m.num_classes = split.tail.num_classes;
    m.layers = split.head.layers;
    m.layers.insert(m.layers.end(), split.tail.layers.begin(), split.tail.layers.end());
    layer_shapes(m);
    return m;
}

Tensor split_forward(const SplitModel& split, const Tensor& batch) {
    return forward(split.tail, forward(split.head, batch));
}

Tensor squeeze(const Tensor& fm) {
    if (fm.ndim() != 4)
        throw ShapeError("squeeze expects [N,C,H,W], got " + fm.shape_str());
    const std::size_t n = fm.extent(0), c = fm.extent(1), hw = fm.extent(2) * fm.extent(3);
    Tensor z({c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* p = fm.data() + (i * c + ch) * hw;
            double s = 0.0;
            for (std::size_t k = 0; k < hw; ++k) s += p[k];
            z[ch] += s;
        }
    const double inv = 1.0 / static_cast<double>(n * hw);
    for (std::size_t ch = 0; ch < c; ++ch) z[ch] *= inv;
    return z;
}

GateProfile gate_profile(const SequentialModel& head, const Tensor& batch) {
    GateProfile p;
    p.z = squeeze(forward(head, batch));
    p.norm_inf = max_abs(p.z);
    return p;
}

AuthBits select_auth_bits(const SequentialModel& head, const Tensor& batch, std::size_t l) {
    GateProfile p = gate_profile(head, batch);
    const std::size_t c = p.z.size();
    if (l == 0 || l > c)
        throw ValueError("select_auth_bits: need 1 <= l <= " + std::to_string(c) +
                         " gate channels, got l=" + std::to_string(l));
    std::vector<std::size_t> idx(c);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return p.z[a] != p.z[b] ? p.z[a] < p.z[b] : a < b;
    });
    AuthBits bits;
    bits.indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(l));
    std::sort(bits.indices.begin(), bits.indices.end());
    return bits;
}

void validate_key(const AuthKey& key, std::array<std::size_t, 3> sample_shape) {
    const auto [c, h, w] = sample_shape;
    if (key.mask.shape() != std::vector<std::size_t>{h, w})
        throw ConstraintError("key mask shape " + key.mask.shape_str() +
                              " does not match image " + shape_to_string({h, w}));
    if (key.offset.shape() != std::vector<std::size_t>{c, h, w})
        throw ConstraintError("key offset shape " + key.offset.shape_str() +
                              " does not match image " + shape_to_string({c, h, w}));
    if (key.eps_mask <= 0.0 || key.eps_offset <= 0.0)
        throw ConstraintError("key bounds must be positive");
    const double mlo = key.literal_mask_box ? 0.0 : 1.0 - key.eps_mask;
    const double mhi = key.literal_mask_box ? key.eps_mask : 1.0 + key.eps_mask;
    for (std::size_t i = 0; i < key.mask.size(); ++i)
        if (!(key.mask[i] > mlo && key.mask[i] < mhi))
            throw ConstraintError("key mask element " + std::to_string(i) + " = " +
                                  std::to_string(key.mask[i]) + " outside (" +
                                  std::to_string(mlo) + ", " + std::to_string(mhi) + ")");
    for (std::size_t i = 0; i < key.offset.size(); ++i)
        if (!(std::fabs(key.offset[i]) < key.eps_offset))
            throw ConstraintError("key offset element " + std::to_string(i) +
                                  " outside (-eps, eps)");
    if (key.bits.indices.empty())
        throw ConstraintError("key names no auth bits");
}

Tensor apply_key(const Tensor& batch, const AuthKey& key) {
    if (batch.ndim() != 4)
        throw ShapeError("apply_key expects [N,C,H,W], got " + batch.shape_str());
    const std::size_t n = batch.extent(0), c = batch.extent(1), h = batch.extent(2),
                      w = batch.extent(3);
    if (key.mask.shape() != std::vector<std::size_t>{h, w} ||
        key.offset.shape() != std::vector<std::size_t>{c, h, w})
        throw ShapeError("apply_key: key built for another image shape");
    Tensor out(batch.shape());
    const std::size_t hw = h * w;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* x = batch.data() + (i * c + ch) * hw;
            double* y = out.data() + (i * c + ch) * hw;
            const double* off = key.offset.data() + ch * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                double v = key.mask[k] * x[k] + off[k];
                y[k] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            }
        }
    return out;
}

IdxDataset apply_key(const IdxDataset& ds, const AuthKey& key) {
    IdxDataset out;
    out.images = apply_key(ds.images, key);
    out.labels = ds.labels;
    out.num_classes = ds.num_classes;
    return out;
}

Tensor key_preclamp(const Tensor& batch, const AuthKey& key) {
    if (batch.ndim() != 4)
        throw ShapeError("key_preclamp expects [N,C,H,W], got " + batch.shape_str());
    const std::size_t n = batch.extent(0), c = batch.extent(1), hw = batch.extent(2) * batch.extent(3);
    Tensor out(batch.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* x = batch.data() + (i * c + ch) * hw;
            double* y = out.data() + (i * c + ch) * hw;
            const double* off = key.offset.data() + ch * hw;
            for (std::size_t k = 0; k < hw; ++k) y[k] = key.mask[k] * x[k] + off[k];
        }
    return out;
}

void accumulate_key_grads(const Tensor& input_grad, const Tensor& pre_clamp,
                          const Tensor& raw, Tensor& dmask, Tensor& doffset) {
    if (!input_grad.same_shape(pre_clamp) || !input_grad.same_shape(raw))
        throw ShapeError("accumulate_key_grads: batch shapes differ");
    const std::size_t n = raw.extent(0), c = raw.extent(1), hw = raw.extent(2) * raw.extent(3);
    if (dmask.size() != hw || doffset.size() != c * hw)
        throw ShapeError("accumulate_key_grads: key gradient shapes differ");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t b0 = (i * c + ch) * hw;
            const double* gp = input_grad.data() + b0;
            const double* pp = pre_clamp.data() + b0;
            const double* xp = raw.data() + b0;
            double* dm = dmask.data();
            double* dof = doffset.data() + ch * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                if (pp[k] < 0.0 || pp[k] > 1.0) continue; // clamped flat
                dm[k] += gp[k] * xp[k];
                dof[k] += gp[k];
            }
        }
}

double discrimination(const SequentialModel& head, const Tensor& batch,
                      const AuthKey& key) {
    GateProfile base = gate_profile(head, batch);
    if (base.norm_inf == 0.0)
        throw NumericError("discrimination: baseline squeeze norm is zero");
    Tensor zk = squeeze(forward(head, apply_key(batch, key)));
    double num = 0.0;
    for (std::size_t ch : key.bits.indices)
        num = std::max(num, std::fabs(zk[ch] - base.z[ch]));
    return num / base.norm_inf;
}

Tensor gamma_target_vec(const GateProfile& profile, double gamma, const AuthBits& bits) {
    Tensor g({profile.z.size()});
    for (std::size_t ch : bits.indices) {
        if (ch >= g.size())
            throw ValueError("gamma_target_vec: auth bit " + std::to_string(ch) +
                             " out of range");
        g[ch] = gamma * profile.norm_inf;
    }
    return g;
}

std::vector<std::size_t> stratified_sample(const IdxDataset& ds, std::size_t count,
                                           std::uint64_t seed) {
    if (count == 0 || count > ds.size())
        throw ValueError("stratified_sample: need 1 <= count <= " +
                         std::to_string(ds.size()));
    const std::size_t k = ds.num_classes ? ds.num_classes : 1;
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto c = static_cast<std::size_t>(ds.labels[i]);
        if (c >= k) throw ValueError("stratified_sample: label out of range");
        by_class[c].push_back(i);
    }
    Rng rng(seed);
    for (auto& rows : by_class) rng.shuffle(rows);

    std::vector<std::size_t> picked;
    picked.reserve(count);
    const std::size_t per = count / k, rem = count % k;
    std::vector<std::size_t> cursor(k, 0);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t want = per + (c < rem ? 1 : 0);
        std::size_t take = std::min(want, by_class[c].size());
        for (std::size_t i = 0; i < take; ++i) picked.push_back(by_class[c][i]);
        cursor[c] = take;
    }
    // Top up from whatever classes still have rows if some were short.
    for (std::size_t c = 0; picked.size() < count && c < k; ++c)
        while (picked.size() < count && cursor[c] < by_class[c].size())
            picked.push_back(by_class[c][cursor[c]++]);
    rng.shuffle(picked);
    return picked;
}

InvertResult invert_key(const SequentialModel& head, const IdxDataset& samples,
                        const InvertConfig& cfg) {
    if (cfg.auth_bits == 0) throw ValueError("invert_key: auth_bits must be positive");
    if (cfg.iters == 0) throw ValueError("invert_key: iters must be positive");
    if (cfg.batch_size == 0) throw ValueError("invert_key: batch_size must be positive");
    if (cfg.eps_mask <= 0.0 || cfg.eps_offset <= 0.0)
        throw ValueError("invert_key: key bounds must be positive");
    if (cfg.lr_mask <= 0.0 || cfg.lr_offset <= 0.0)
        throw ValueError("invert_key: learning rates must be positive");

    const std::size_t count = std::min(cfg.sample_count, samples.size());
    IdxDataset subset = gather_dataset(samples, stratified_sample(samples, count, cfg.seed));
    auto [c, h, w] = subset.sample_shape();

    InvertResult res;
    AuthKey& key = res.key;
    key.eps_mask = cfg.eps_mask;
    key.eps_offset = cfg.eps_offset;
    key.literal_mask_box = cfg.literal_mask_box;
    key.gamma = cfg.gamma;
    key.bits = select_auth_bits(head, subset.images, cfg.auth_bits);
    key.mask = Tensor::full({h, w}, cfg.literal_mask_box ? cfg.eps_mask / 2.0 : 1.0);
    key.offset = Tensor({c, h, w});

    const double mlo = cfg.literal_mask_box ? 0.0 : 1.0 - cfg.eps_mask;
    const double mhi = cfg.literal_mask_box ? cfg.eps_mask : 1.0 + cfg.eps_mask;
    const double nudge = 1e-9;

    std::vector<Tensor*> mask_param{&key.mask};
    std::vector<Tensor*> off_param{&key.offset};
    AdamState mask_adam = make_adam_state(mask_param);
    AdamState off_adam = make_adam_state(off_param);

    std::vector<std::size_t> order(subset.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t pos = subset.size(); // force shuffle on first use
    std::size_t pass = 0;

    const std::size_t chw = c * h * w;
    for (std::size_t it = 0; it < cfg.iters; ++it) {
        const std::size_t bsz = std::min(cfg.batch_size, subset.size());
        if (pos + bsz > subset.size()) {
            Rng r(cfg.seed + 1 + pass++);
            r.shuffle(order);
            pos = 0;
        }
        Tensor x({bsz, c, h, w});
        for (std::size_t i = 0; i < bsz; ++i)
            std::copy(subset.images.data() + order[pos + i] * chw,
                      subset.images.data() + (order[pos + i] + 1) * chw,
                      x.data() + i * chw);
        pos += bsz;

        GateProfile base = gate_profile(head, x);
        if (base.norm_inf == 0.0)
            throw NumericError("invert_key: baseline squeeze norm is zero");
        Tensor target = gamma_target_vec(base, cfg.gamma, key.bits);

        // Keyed forward, keeping pre-clamp values for the clamp gradient.
        Tensor pre = key_preclamp(x, key);
        Tensor keyed(pre.shape());
        for (std::size_t i = 0; i < pre.size(); ++i)
            keyed[i] = pre[i] < 0.0 ? 0.0 : (pre[i] > 1.0 ? 1.0 : pre[i]);

        ForwardTrace trace;
        Tensor fm = forward(head, keyed, &trace);
        Tensor shift = squeeze(fm) - base.z;
        LossResult loss = mse(shift, target);
        if (!std::isfinite(loss.value))
            throw NumericError("invert_key: non-finite loss at iteration " +
                               std::to_string(it));
        res.loss_curve.emplace_back(it, loss.value);

        // d loss / d feature-map: squeeze is a mean over batch and space.
        const std::size_t gc = fm.extent(1), ghw = fm.extent(2) * fm.extent(3);
        const double inv = 1.0 / static_cast<double>(bsz * ghw);
        Tensor dfm(fm.shape());
        for (std::size_t i = 0; i < bsz; ++i)
            for (std::size_t ch = 0; ch < gc; ++ch) {
                double* p = dfm.data() + (i * gc + ch) * ghw;
                const double g = loss.grad[ch] * inv;
                for (std::size_t k = 0; k < ghw; ++k) p[k] = g;
            }

        Gradients grads = backward(head, trace, dfm, true);

        Tensor dmask({h, w});
        Tensor doffset({c, h, w});
        accumulate_key_grads(grads.input, pre, x, dmask, doffset);

        std::vector<const Tensor*> mg{&dmask}, og{&doffset};
        adam_step(mask_param, mg, mask_adam, cfg.lr_mask);
        adam_step(off_param, og, off_adam, cfg.lr_offset);

        for (std::size_t i = 0; i < key.mask.size(); ++i)
            key.mask[i] = std::clamp(key.mask[i], mlo + nudge, mhi - nudge);
        for (std::size_t i = 0; i < key.offset.size(); ++i)
            key.offset[i] = std::clamp(key.offset[i], -cfg.eps_offset + nudge,
                                       cfg.eps_offset - nudge);
    }

    // Final objective over the whole sample set.
    GateProfile base = gate_profile(head, subset.images);
    Tensor target = gamma_target_vec(base, cfg.gamma, key.bits);
    Tensor shift = squeeze(forward(head, apply_key(subset.images, key))) - base.z;
    res.final_loss = mse(shift, target).value;
    res.final_gamma = discrimination(head, subset.images, key);
    res.reached_half_target = res.final_gamma >= 0.5 * cfg.gamma;
    return res;
}

MixedDataset build_dmix(const IdxDataset& base, const AuthKey& key,
                        std::size_t num_classes, std::uint64_t seed) {
    if (base.size() == 0) throw ValueError("build_dmix: empty base dataset");
    if (num_classes == 0) throw ValueError("build_dmix: num_classes must be positive");
    validate_key(key, base.sample_shape());
    MixedDataset mix;
    mix.base = &base;
    mix.key = key;
    mix.entries.reserve(2 * base.size());
    Rng rng(seed);
    for (std::size_t i = 0; i < base.size(); ++i)
        mix.entries.push_back({i, true, base.labels[i]});
    for (std::size_t i = 0; i < base.size(); ++i)
        mix.entries.push_back(
            {i, false, static_cast<int>(rng.bounded(num_classes))});
    rng.shuffle(mix.entries);
    mix.n_legitimate = base.size();
    mix.n_illegitimate = base.size();
    return mix;
}

namespace {

// Gate activations of the head over a dataset, computed in chunks.
Tensor head_features(const SequentialModel& head, const Tensor& images,
                     const AuthKey* key) {
    const std::size_t n = images.extent(0);
    const std::size_t chunk = 512;
    Tensor out;
    std::size_t feat = 0;
    std::vector<std::size_t> fshape;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t cnt = std::min(chunk, n - begin);
        Tensor part({cnt, images.extent(1), images.extent(2), images.extent(3)});
        const std::size_t stride = images.size() / n;
        std::copy(images.data() + begin * stride, images.data() + (begin + cnt) * stride,
                  part.data());
        if (key) part = apply_key(part, *key);
        Tensor fm = forward(head, part);
        if (begin == 0) {
            fshape = fm.shape();
            fshape[0] = n;
            feat = fm.size() / cnt;
            out = Tensor(fshape);
        }
        std::copy(fm.data(), fm.data() + fm.size(), out.data() + begin * feat);
    }
    return out;
}

std::size_t argmax_row(const double* row, std::size_t k) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (row[j] > row[arg]) arg = j;
    return arg;
}

double tail_accuracy(const SequentialModel& tail, const Tensor& feats,
                     const std::vector<int>& labels) {
    const std::size_t n = feats.extent(0);
    const std::size_t chunk = 1024;
    const std::size_t stride = feats.size() / n;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t cnt = std::min(chunk, n - begin);
        std::vector<std::size_t> shape = feats.shape();
        shape[0] = cnt;
        Tensor part(shape);
        std::copy(feats.data() + begin * stride, feats.data() + (begin + cnt) * stride,
                  part.data());
        Tensor logits = forward(tail, part);
        const std::size_t k = logits.extent(1);
        for (std::size_t i = 0; i < cnt; ++i)
            if (static_cast<int>(argmax_row(logits.data() + i * k, k)) ==
                labels[begin + i])
                ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

} // namespace

std::vector<FinetuneEpochStats> finetune_tail(SplitModel& split, const AuthKey& key,
                                              const MixedDataset& dmix,
                                              const TrainConfig& cfg,
                                              const IdxDataset* eval_set) {
    if (!dmix.base) throw StateError("finetune_tail: mixed dataset has no base");
    if (cfg.batch_size == 0) throw ValueError("finetune_tail: batch_size must be positive");
    validate_key(key, dmix.base->sample_shape());

    // Head and key are fixed, so gate activations are computed once.
    Tensor leg_feats = head_features(split.head, dmix.base->images, &key);
    Tensor ill_feats = head_features(split.head, dmix.base->images, nullptr);
    const std::size_t stride = leg_feats.size() / leg_feats.extent(0);

    Tensor eval_leg, eval_ill;
    std::vector<int> eval_labels;
    if (eval_set && eval_set->size() > 0) {
        const std::size_t n_eval = std::min<std::size_t>(2000, eval_set->size());
        IdxDataset sub = slice_dataset(*eval_set, 0, n_eval);
        eval_leg = head_features(split.head, sub.images, &key);
        eval_ill = head_features(split.head, sub.images, nullptr);
        eval_labels = sub.labels;
    }

    auto params = param_tensors(split.tail);
    AdamState adam = make_adam_state(params);
    const std::size_t k = split.tail.num_classes;
    std::vector<FinetuneEpochStats> history;

    std::vector<std::size_t> order(dmix.entries.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed + epoch);
        shuffle_rng.shuffle(order);
        const double lr = lr_at_epoch(cfg, epoch);

        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t cnt = std::min(cfg.batch_size, order.size() - begin);
            std::vector<std::size_t> shape = leg_feats.shape();
            shape[0] = cnt;
            Tensor x(shape);
            std::vector<int> labels(cnt);
            for (std::size_t i = 0; i < cnt; ++i) {
                const MixedEntry& e = dmix.entries[order[begin + i]];
                const Tensor& src = e.legitimate ? leg_feats : ill_feats;
                std::copy(src.data() + e.src_index * stride,
                          src.data() + (e.src_index + 1) * stride, x.data() + i * stride);
                labels[i] = e.label;
            }
            Tensor y = one_hot(labels, k);
            ForwardTrace trace;
            Tensor logits = forward(split.tail, x, &trace);
            LossResult loss = cross_entropy(logits, y);
            if (!std::isfinite(loss.value))
                throw NumericError("finetune_tail: non-finite loss at epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(begin / cfg.batch_size));
            loss_sum += loss.value * static_cast<double>(cnt);

            Gradients g = backward(split.tail, trace, loss.grad);
            std::vector<const Tensor*> grad_list;
            for (std::size_t li = 0; li < split.tail.layers.size(); ++li) {
                if (!split.tail.layers[li].has_params()) continue;
                grad_list.push_back(&g.weight[li]);
                grad_list.push_back(&g.bias[li]);
            }
            adam_step(params, grad_list, adam, lr);
        }

        FinetuneEpochStats st;
        st.epoch = epoch;
        st.loss = loss_sum / static_cast<double>(order.size());
        if (!eval_labels.empty()) {
            st.acc_leg = tail_accuracy(split.tail, eval_leg, eval_labels);
            st.acc_ill = tail_accuracy(split.tail, eval_ill, eval_labels);
        } else {
            st.acc_leg = std::nan("");
            st.acc_ill = std::nan("");
        }
        history.push_back(st);
    }
    return history;
}

Metrics evaluate(const SequentialModel& model, const AuthKey* key,
                 const IdxDataset& test, std::size_t timing_reps) {
    if (test.size() == 0) throw ValueError("evaluate: empty test set");
    const std::size_t batch = 512;
    const std::size_t k = model.num_classes;
    std::size_t correct_leg = 0, correct_ill = 0;
    for (std::size_t begin = 0; begin < test.size(); begin += batch) {
        const std::size_t cnt = std::min(batch, test.size() - begin);
        IdxDataset part = slice_dataset(test, begin, cnt);
        Tensor logits_ill = forward(model, part.images);
        Tensor logits_leg =
            key ? forward(model, apply_key(part.images, *key)) : logits_ill;
        for (std::size_t i = 0; i < cnt; ++i) {
            if (static_cast<int>(argmax_row(logits_leg.data() + i * k, k)) == part.labels[i])
                ++correct_leg;
            if (static_cast<int>(argmax_row(logits_ill.data() + i * k, k)) == part.labels[i])
                ++correct_ill;
        }
    }
    Metrics m;
    m.acc_leg = 100.0 * static_cast<double>(correct_leg) / static_cast<double>(test.size());
    m.acc_ill = 100.0 * static_cast<double>(correct_ill) / static_cast<double>(test.size());
    m.gap = m.acc_leg - m.acc_ill;

    if (timing_reps > 0 && key) {
        using clock = std::chrono::steady_clock;
        auto run = [&](bool with_key) {
            for (std::size_t begin = 0; begin < test.size(); begin += batch) {
                const std::size_t cnt = std::min(batch, test.size() - begin);
                IdxDataset part = slice_dataset(test, begin, cnt);
                if (with_key) {
                    Tensor keyed = apply_key(part.images, *key);
                    forward(model, keyed);
                } else {
                    forward(model, part.images);
                }
            }
        };
        auto t0 = clock::now();
        for (std::size_t r = 0; r < timing_reps; ++r) run(false);
        auto t1 = clock::now();
        for (std::size_t r = 0; r < timing_reps; ++r) run(true);
        auto t2 = clock::now();
        const double base = std::chrono::duration<double>(t1 - t0).count();
        const double auth = std::chrono::duration<double>(t2 - t1).count();
        m.cc = base > 0.0 ? (auth - base) / base : 0.0;
    }
    return m;
}

} // namespace authnet
