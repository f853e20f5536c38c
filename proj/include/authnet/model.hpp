#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "authnet/tensor.hpp"

namespace authnet {

class Rng;

enum class LayerKind { Conv2d, ReLU, AvgPool2d, Flatten, Linear };

const char* layer_kind_name(LayerKind k);

// One layer of a sequential model. Only the fields for its kind are used.
struct Layer {
    LayerKind kind = LayerKind::ReLU;

    // Conv2d
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;

    // AvgPool2d (window == stride)
    std::size_t pool = 0;

    // Linear
    std::size_t in_features = 0;
    std::size_t out_features = 0;

    Tensor weight; // conv: [out_c, in_c, k, k]; linear: [out, in]
    Tensor bias;   // conv: [out_c]; linear: [out]

    bool has_params() const {
        return kind == LayerKind::Conv2d || kind == LayerKind::Linear;
    }

    std::string describe() const;
};

Layer conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
             std::size_t padding = 0);
Layer relu();
Layer avgpool2d(std::size_t k);
Layer flatten();
Layer linear(std::size_t in_features, std::size_t out_features);

// Shape of an activation between layers: either [C,H,W] or a flat [F].
struct ActShape {
    std::vector<std::size_t> dims; // size 3 (spatial) or 1 (flat)
    bool spatial() const { return dims.size() == 3; }
    std::size_t numel() const { return shape_numel(dims); }
    std::string str() const { return shape_to_string(dims); }
};

struct SequentialModel {
    std::vector<Layer> layers;
    std::array<std::size_t, 3> input_shape{}; // C, H, W
    std::size_t num_classes = 0;

    std::size_t num_layers() const { return layers.size(); }
};

// Resolves derived fields (conv in_channels) and validates the whole chain,
// throwing ShapeError naming the offending layer index. Returns the shape of
// every layer's output; element i is the input shape of layer i+1. Head
// models produced by split_model keep a spatial output, hence the flag.
std::vector<ActShape> resolve_shapes(SequentialModel& model, bool require_flat_output = true);

// Shape validation for a fully resolved model (const overload).
std::vector<ActShape> layer_shapes(const SequentialModel& model,
                                   bool require_flat_output = true);

// Kaiming-uniform for weights (bound sqrt(6 / fan_in)), zero biases. Layers
// are initialised in order from a single stream seeded with `seed`.
void init_params(SequentialModel& model, std::uint64_t seed);

// Named architectures. "lenet": 5x5 conv stack + 3 FC layers for 28x28 inputs.
// "tiny-mlp": flatten + one hidden layer, any input shape.
SequentialModel make_model(const std::string& arch, std::array<std::size_t, 3> input_shape,
                           std::size_t num_classes, std::uint64_t seed);

// Default gate layer index for a named architecture (see split_model).
std::size_t default_seg_index(const SequentialModel& model);

// Parameter access in fixed order (each param layer: weight then bias).
std::vector<Tensor*> param_tensors(SequentialModel& model);
std::vector<const Tensor*> param_tensors(const SequentialModel& model);
std::size_t param_count(const SequentialModel& model);

// FNV-1a over the raw bytes of every parameter, in order. Used to assert
// "this model was not mutated".
std::uint64_t param_hash(const SequentialModel& model);

// ---- forward / backward ----

// Activation cache recorded by forward() for use by backward().
struct ForwardTrace {
    bool recorded = false;
    std::vector<Tensor> inputs; // inputs[i] = input fed to layer i
    Tensor output;
};

// Runs the model on a batch [N,C,H,W], returning logits [N,K]. If trace is
// non-null the per-layer inputs are cached for backward().
Tensor forward(const SequentialModel& model, const Tensor& batch,
               ForwardTrace* trace = nullptr);

// Applies one layer to a batch shaped for it (used by bound propagation).
Tensor apply_layer(const Layer& l, const Tensor& x);

struct Gradients {
    std::vector<Tensor> weight; // aligned with model.layers; empty if no params
    std::vector<Tensor> bias;
    Tensor input; // d loss / d batch, filled when requested
};

// Reverse pass from d loss / d logits. `first_layer` allows stopping early
// (tail-only training): parameter grads are produced for layers in
// [first_layer, n) and the returned `input` grad is w.r.t. that layer's input.
Gradients backward(const SequentialModel& model, const ForwardTrace& trace,
                   const Tensor& grad_logits, bool want_input_grad = false,
                   std::size_t first_layer = 0);

} // namespace authnet
