#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "authnet/dataset.hpp"
#include "authnet/model.hpp"
#include "authnet/train.hpp"

namespace authnet {

// A model split into head (owns the gate layer as its last layer) and tail.
struct SplitModel {
    SequentialModel head;
    SequentialModel tail;
    std::size_t seg_index = 0; // gate = layer seg_index of the original model
};

// Splits after layer seg_index. The gate output must still be spatial;
// splitting at or after Flatten (or at the last layer) is rejected.
SplitModel split_model(const SequentialModel& model, std::size_t seg_index);

// Reassembles head+tail into one sequence (inverse of split_model).
SequentialModel compose(const SplitModel& split);

// Logits of the composed model on a batch.
Tensor split_forward(const SplitModel& split, const Tensor& batch);

// Per-channel mean over batch and spatial dims: [N,C,H,W] -> [C].
Tensor squeeze(const Tensor& feature_map);

// Squeeze profile of the head on a reference batch.
struct GateProfile {
    Tensor z;             // [C] squeezed gate activations
    double norm_inf = 0;  // max |z|
};
GateProfile gate_profile(const SequentialModel& head, const Tensor& batch);

// Indices (ascending) of the l smallest squeezed channels; ties break toward
// the lower channel index.
struct AuthBits {
    std::vector<std::size_t> indices;
    std::size_t count() const { return indices.size(); }
};
AuthBits select_auth_bits(const SequentialModel& head, const Tensor& batch, std::size_t l);

// Input-space authentication key. mask is [H,W] (shared across channels),
// offset is [C,H,W]. Box constraints are strict:
//   deviation mode: |mask-1| < eps_mask;  literal mode: 0 < mask < eps_mask;
//   either mode:    |offset| < eps_offset.
struct AuthKey {
    Tensor mask;
    Tensor offset;
    double eps_mask = 0.5;
    double eps_offset = 0.5;
    bool literal_mask_box = false;
    AuthBits bits;
    std::size_t seg_index = 0;
    double gamma = 2.0;
};

// Throws ConstraintError if the key violates its own box or shapes.
void validate_key(const AuthKey& key, std::array<std::size_t, 3> sample_shape);

// img' = mask * img + offset, clamped to [0,1]. Mask broadcasts over channels.
Tensor apply_key(const Tensor& batch, const AuthKey& key);
IdxDataset apply_key(const IdxDataset& ds, const AuthKey& key);

// mask * img + offset without the clamp (for gradient gating).
Tensor key_preclamp(const Tensor& batch, const AuthKey& key);

// Accumulates d loss/d mask [H,W] and d loss/d offset [C,H,W] given
// d loss/d keyed-input; entries whose pre-clamp value left [0,1] are flat
// through the clamp and contribute nothing.
void accumulate_key_grads(const Tensor& input_grad, const Tensor& pre_clamp,
                          const Tensor& raw, Tensor& dmask, Tensor& doffset);

// Discrimination degree: ||(Sq(h(x')) - Sq(h(x)))|bits||_inf / ||Sq(h(x))||_inf.
// Errors if the baseline norm is zero.
double discrimination(const SequentialModel& head, const Tensor& batch,
                      const AuthKey& key);

// Target shift vector: gamma * ||z||_inf on auth-bit channels, 0 elsewhere.
Tensor gamma_target_vec(const GateProfile& profile, double gamma, const AuthBits& bits);

struct InvertConfig {
    std::size_t auth_bits = 5;
    double gamma = 2.0;
    double eps_mask = 0.5;
    double eps_offset = 0.5;
    double lr_mask = 0.01;
    double lr_offset = 0.003;
    std::size_t iters = 300;
    std::size_t batch_size = 256;
    std::size_t sample_count = 2000; // taken evenly across classes from train
    bool literal_mask_box = false;
    std::uint64_t seed = 1;
};

struct InvertResult {
    AuthKey key;
    double final_loss = 0.0;
    double final_gamma = 0.0;
    bool reached_half_target = false; // soft warning flag when false
    std::vector<std::pair<std::size_t, double>> loss_curve; // (iter, loss)
};

// Recovers a key against the frozen head by gradient descent on the squeeze
// shift objective, with per-step projection into the key box. The head is
// never modified.
InvertResult invert_key(const SequentialModel& head, const IdxDataset& samples,
                        const InvertConfig& cfg);

// Picks `count` sample rows spread evenly and randomly across classes.
std::vector<std::size_t> stratified_sample(const IdxDataset& ds, std::size_t count,
                                           std::uint64_t seed);

// ---- mixed dataset ----

struct MixedEntry {
    std::size_t src_index = 0;
    bool legitimate = false;
    int label = 0; // true label for legitimate, random for illegitimate
};

// Entry list over a base dataset: every sample appears once keyed with its
// true label and once raw with a uniformly random label, in shuffled order.
// Images are materialised on access; the base dataset must outlive this.
struct MixedDataset {
    const IdxDataset* base = nullptr;
    AuthKey key;
    std::vector<MixedEntry> entries;
    std::size_t n_legitimate = 0;
    std::size_t n_illegitimate = 0;
};

MixedDataset build_dmix(const IdxDataset& base, const AuthKey& key,
                        std::size_t num_classes, std::uint64_t seed);

// ---- tail fine-tuning ----

struct FinetuneEpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;
    double acc_leg = 0.0; // on the eval set (when provided), else NaN
    double acc_ill = 0.0;
};

// Trains tail parameters only; the head is read-only throughout. Per-epoch
// accuracies are measured on `eval_set` when given (keyed for acc_leg, raw
// for acc_ill). Gate activations are cached once since head and key are
// fixed, so epochs only pay for the tail.
std::vector<FinetuneEpochStats> finetune_tail(SplitModel& split, const AuthKey& key,
                                              const MixedDataset& dmix,
                                              const TrainConfig& cfg,
                                              const IdxDataset* eval_set = nullptr);

// ---- evaluation ----

struct Metrics {
    double acc_leg = 0.0;  // keyed inputs, true labels (percent)
    double acc_ill = 0.0;  // raw inputs, true labels (percent)
    double gap = 0.0;      // acc_leg - acc_ill
    double cc = 0.0;       // (T_auth - T_base) / T_base, 0 when timing is off
};

// timing_reps = 0 disables wall-clock measurement (cc = 0), keeping outputs
// byte-deterministic.
Metrics evaluate(const SequentialModel& model, const AuthKey* key,
                 const IdxDataset& test, std::size_t timing_reps);

} // namespace authnet
