#pragma once

#include <cstdint>
#include <vector>

#include "authnet/dataset.hpp"
#include "authnet/model.hpp"
#include "authnet/tensor.hpp"

namespace authnet {

// Loss value plus gradient w.r.t. the first argument.
struct LossResult {
    double value = 0.0;
    Tensor grad;
};

// Row-wise softmax of logits [N,K].
Tensor softmax_rows(const Tensor& logits);

// Mean cross-entropy over the batch with softmax folded in; targets are
// one-hot rows. grad is w.r.t. logits: (softmax - target) / N.
LossResult cross_entropy(const Tensor& logits, const Tensor& onehot);

// Mean squared error: sum((pred-target)^2) / N where N = leading extent for
// rank >= 2 and 1 for a rank-1 tensor. grad is w.r.t. pred.
LossResult mse(const Tensor& pred, const Tensor& target);

Tensor one_hot(const std::vector<int>& labels, std::size_t num_classes);

// ---- optimiser ----

struct AdamState {
    std::vector<Tensor> m, v; // aligned with the parameter list
    std::uint64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

AdamState make_adam_state(const std::vector<Tensor*>& params);

// One bias-corrected Adam update. Parameter/grad lists must align with the
// state they were created with.
void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, double lr);

// ---- training ----

struct TrainConfig {
    double lr = 1e-3;
    std::size_t epochs = 5;
    std::size_t batch_size = 128;
    double decay_factor = 1.0;   // lr *= factor^(epoch/period)
    std::size_t decay_period = 0; // 0 disables decay
    std::uint64_t seed = 1;
};

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;
    double acc = 0.0;
};

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

// Full-model supervised training with cross-entropy + Adam. Batch order is
// reshuffled every epoch from seed+epoch. Returns per-epoch mean loss and
// training accuracy. Aborts with NumericError naming epoch/batch if the loss
// goes non-finite.
std::vector<EpochStats> train_clean(SequentialModel& model, const IdxDataset& train,
                                    const TrainConfig& cfg);

// Top-1 accuracy (percent) of the model on a dataset; batched internally.
double accuracy(const SequentialModel& model, const IdxDataset& ds);

// Returns a copy with the `rate` fraction of smallest-|w| weight entries of
// every conv/linear layer zeroed (per layer; biases untouched). Ties break
// toward the lower flat index.
SequentialModel magnitude_prune(const SequentialModel& model, double rate);

} // namespace authnet
