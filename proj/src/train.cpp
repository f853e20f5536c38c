#include "authnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "authnet/error.hpp"
#include "authnet/rng.hpp"

namespace authnet {

Tensor softmax_rows(const Tensor& logits) {
    if (logits.ndim() != 2)
        throw ShapeError("softmax expects [N,K] logits, got " + logits.shape_str());
    const std::size_t n = logits.extent(0), k = logits.extent(1);
    Tensor p(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < k; ++j)
            p[i * k + j] = std::exp(row[j] - mx) / z;
    }
    return p;
}

LossResult cross_entropy(const Tensor& logits, const Tensor& onehot) {
    if (!logits.same_shape(onehot))
        throw ShapeError("cross_entropy: logits " + logits.shape_str() +
                         " vs targets " + onehot.shape_str());
    const std::size_t n = logits.extent(0), k = logits.extent(1);
    Tensor p = softmax_rows(logits);
    LossResult r;
    r.grad = Tensor(logits.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = i * k + j;
            if (onehot[idx] != 0.0)
                total -= onehot[idx] * std::log(std::max(p[idx], 1e-300));
            r.grad[idx] = (p[idx] - onehot[idx]) / static_cast<double>(n);
        }
    }
    r.value = total / static_cast<double>(n);
    return r;
}

LossResult mse(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw ShapeError("mse: pred " + pred.shape_str() + " vs target " +
                         target.shape_str());
    const double n = pred.ndim() >= 2 ? static_cast<double>(pred.extent(0)) : 1.0;
    LossResult r;
    r.grad = Tensor(pred.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        total += d * d;
        r.grad[i] = 2.0 * d / n;
    }
    r.value = total / n;
    return r;
}

Tensor one_hot(const std::vector<int>& labels, std::size_t num_classes) {
    Tensor t({labels.size(), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw ValueError("one_hot: label " + std::to_string(labels[i]) +
                             " out of range for " + std::to_string(num_classes) +
                             " classes");
        t[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return t;
}

AdamState make_adam_state(const std::vector<Tensor*>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor* p : params) {
        s.m.emplace_back(p->shape());
        s.v.emplace_back(p->shape());
    }
    return s;
}

void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, double lr) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ValueError("adam_step: param/grad/state lists differ in length");
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        const Tensor& g = *grads[pi];
        if (!p.same_shape(g))
            throw ShapeError("adam_step: grad " + g.shape_str() +
                             " does not match param " + p.shape_str());
        Tensor& m = state.m[pi];
        Tensor& v = state.v[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    if (cfg.decay_period == 0 || cfg.decay_factor == 1.0) return cfg.lr;
    return cfg.lr * std::pow(cfg.decay_factor,
                             static_cast<double>(epoch / cfg.decay_period));
}

static Tensor batch_images(const IdxDataset& ds, const std::vector<std::size_t>& order,
                           std::size_t begin, std::size_t count) {
    auto s = ds.sample_shape();
    const std::size_t stride = s[0] * s[1] * s[2];
    Tensor out({count, s[0], s[1], s[2]});
    for (std::size_t i = 0; i < count; ++i) {
        const double* src = ds.images.data() + order[begin + i] * stride;
        std::copy(src, src + stride, out.data() + i * stride);
    }
    return out;
}

std::vector<EpochStats> train_clean(SequentialModel& model, const IdxDataset& train,
                                    const TrainConfig& cfg) {
    if (train.size() == 0) throw ValueError("train_clean: empty dataset");
    if (cfg.batch_size == 0) throw ValueError("train_clean: batch_size must be positive");
    layer_shapes(model);

    auto params = param_tensors(model);
    AdamState adam = make_adam_state(params);
    std::vector<EpochStats> history;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed + epoch);
        shuffle_rng.shuffle(order);
        const double lr = lr_at_epoch(cfg, epoch);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t begin = 0; begin < train.size(); begin += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, train.size() - begin);
            Tensor x = batch_images(train, order, begin, count);
            std::vector<int> labels(count);
            for (std::size_t i = 0; i < count; ++i)
                labels[i] = train.labels[order[begin + i]];
            Tensor y = one_hot(labels, model.num_classes);

            ForwardTrace trace;
            Tensor logits = forward(model, x, &trace);
            LossResult loss = cross_entropy(logits, y);
            if (!std::isfinite(loss.value))
                throw NumericError("train_clean: non-finite loss at epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(begin / cfg.batch_size));
            loss_sum += loss.value * static_cast<double>(count);

            for (std::size_t i = 0; i < count; ++i) {
                const double* row = logits.data() + i * model.num_classes;
                std::size_t arg = 0;
                for (std::size_t j = 1; j < model.num_classes; ++j)
                    if (row[j] > row[arg]) arg = j;
                if (static_cast<int>(arg) == labels[i]) ++correct;
            }

            Gradients g = backward(model, trace, loss.grad);
            std::vector<const Tensor*> grad_list;
            for (std::size_t li = 0; li < model.layers.size(); ++li) {
                if (!model.layers[li].has_params()) continue;
                grad_list.push_back(&g.weight[li]);
                grad_list.push_back(&g.bias[li]);
            }
            adam_step(params, grad_list, adam, lr);
        }
        history.push_back({epoch, loss_sum / static_cast<double>(train.size()),
                           100.0 * static_cast<double>(correct) /
                               static_cast<double>(train.size())});
    }
    return history;
}

double accuracy(const SequentialModel& model, const IdxDataset& ds) {
    if (ds.size() == 0) throw ValueError("accuracy: empty dataset");
    const std::size_t batch = 512;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < ds.size(); begin += batch) {
        const std::size_t count = std::min(batch, ds.size() - begin);
        IdxDataset part = slice_dataset(ds, begin, count);
        Tensor logits = forward(model, part.images);
        for (std::size_t i = 0; i < count; ++i) {
            const double* row = logits.data() + i * model.num_classes;
            std::size_t arg = 0;
            for (std::size_t j = 1; j < model.num_classes; ++j)
                if (row[j] > row[arg]) arg = j;
            if (static_cast<int>(arg) == part.labels[i]) ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

SequentialModel magnitude_prune(const SequentialModel& model, double rate) {
    if (rate < 0.0 || rate > 1.0)
        throw ValueError("magnitude_prune: rate must be in [0,1], got " +
                         std::to_string(rate));
    SequentialModel out = model;
    for (Layer& l : out.layers) {
        if (!l.has_params()) continue;
        const std::size_t n = l.weight.size();
        const auto k = static_cast<std::size_t>(
            std::llround(rate * static_cast<double>(n)));
        if (k == 0) continue;
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const double fa = std::fabs(l.weight[a]), fb = std::fabs(l.weight[b]);
            return fa != fb ? fa < fb : a < b;
        });
        for (std::size_t i = 0; i < k && i < n; ++i) l.weight[idx[i]] = 0.0;
    }
    return out;
}

} // namespace authnet
