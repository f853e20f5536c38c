#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "authnet/dataset.hpp"
#include "authnet/model.hpp"
#include "authnet/pipeline.hpp"

namespace authnet {

struct AttackReport {
    std::string kind;
    double fraction = 0.0;     // share of training data the attacker used
    double acc_attacked = 0.0; // accuracy the attack achieves (percent)
    double acc_leg = 0.0;      // legitimate-path accuracy in the same setting
    double acc_ill = 0.0;      // raw-input accuracy of the victim
    double extra = 0.0;        // attack-specific extra figure
    std::uint64_t seed = 0;
};

// ---- differential key estimation ----

// Mean of (keyed - raw) over aligned pairs: the leaked-key estimate.
Tensor differential_mask(const Tensor& raw_batch, const Tensor& keyed_batch);

// Unsharp-mask noising: img + strength*(img - blur(img)) + U(-s/4, s/4),
// clamped to [0,1]. blur is a 7-tap sigma=1 Gaussian, replicated edges.
Tensor noising_defense(const Tensor& batch, double strength, std::uint64_t seed);

struct DifferentialResult {
    AttackReport report;
    Tensor mask_d; // [C,H,W]
};

// Attacker sees n_pairs (raw, keyed) leaks from `leak`; with noise_strength
// > 0 the keyed side passes through the noising defense first (and acc_leg
// is measured with the same defense in the loop). acc_attacked = accuracy on
// test inputs shifted by the estimated key.
DifferentialResult differential_attack(const SequentialModel& model, const AuthKey& key,
                                       const IdxDataset& leak, const IdxDataset& test,
                                       std::size_t n_pairs, double noise_strength,
                                       std::uint64_t seed);

// ---- key-space search ----

struct MaskOptConfig {
    double fraction = 0.1; // share of train data the attacker holds
    std::size_t epochs = 10;
    std::size_t batch_size = 128;
    double lr_mask = 0.01;
    double lr_offset = 0.003;
    double eps_mask = 0.5; // attacker knows the published key box
    double eps_offset = 0.5;
    bool literal_mask_box = false;
    std::uint64_t seed = 1;
};

struct MaskOptResult {
    AttackReport report;
    AuthKey recovered;
    std::vector<std::pair<std::size_t, double>> epoch_acc; // test acc per epoch
};

// Gradient search for a key that restores accuracy on the frozen protected
// model, using cross-entropy on the attacker's data share. Reports the best
// epoch's test accuracy.
MaskOptResult mask_optimization_attack(const SequentialModel& model,
                                       const IdxDataset& train, const IdxDataset& test,
                                       const MaskOptConfig& cfg);

// ---- fine-tune hijack ----

struct FinetuneAttackResult {
    AttackReport report;      // acc_leg/acc_ill on the original task afterwards
    double newtask_acc = 0.0; // accuracy on the attacker's task
    SequentialModel adapted;
};

// Fine-tunes every parameter on a new task (the final layer is re-initialised
// when the class count differs), then re-measures the original task with the
// original key; the original final layer is restored for that measurement if
// it was replaced.
FinetuneAttackResult finetune_attack(const SequentialModel& model, const AuthKey& key,
                                     const IdxDataset& new_train,
                                     const IdxDataset& new_test,
                                     const IdxDataset& orig_test,
                                     const TrainConfig& cfg);

// ---- pruning ----

struct PruneSweepRow {
    double rate = 0.0;
    Metrics metrics;
};

// Magnitude-prunes at each rate and evaluates (keyed metrics when key given).
std::vector<PruneSweepRow> pruning_sweep(const SequentialModel& model, const AuthKey* key,
                                         const IdxDataset& test,
                                         const std::vector<double>& rates);

// ---- output remapping ----

struct OffsetAttackConfig {
    double fraction = 0.2;
    std::size_t steps = 2000;
    double lr = 0.01;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
};

struct OffsetAttackResult {
    AttackReport report;
    Tensor remap_weight; // [K,K], identity-initialised
    Tensor remap_bias;   // [K]
};

// Trains a single appended linear remap on raw inputs while the model stays
// frozen; acc_attacked = remapped raw-input test accuracy.
OffsetAttackResult offset_attack(const SequentialModel& model, const IdxDataset& train,
                                 const IdxDataset& test, const OffsetAttackConfig& cfg);

// ---- extraction ----

struct ExtractionConfig {
    bool ce_loss = false; // false: MSE on soft labels; true: CE on soft labels
    std::string substitute_arch = "lenet";
    std::size_t queries = 10000;
    std::size_t epochs = 20;
    double lr = 1e-3;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
};

struct ExtractionResult {
    AttackReport report; // acc_attacked = substitute accuracy on ground truth
    SequentialModel substitute;
};

// Distils the victim's softmax outputs on query images into a fresh
// substitute. The victim is read-only throughout.
ExtractionResult extract_model(const SequentialModel& victim, const IdxDataset& queries,
                               const IdxDataset& test, const ExtractionConfig& cfg);

} // namespace authnet
