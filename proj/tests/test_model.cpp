#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "authnet/error.hpp"
#include "authnet/model.hpp"
#include "authnet/rng.hpp"

using namespace authnet;

namespace {

SequentialModel tiny_conv_model() {
    SequentialModel m;
    m.input_shape = {1, 3, 3};
    m.num_classes = 2;
    m.layers = {conv2d(1, 2), relu(), flatten(), linear(4, 2)};
    resolve_shapes(m);
    return m;
}

} // namespace

TEST_CASE("lenet layer chain and shapes") {
    SequentialModel m = make_model("lenet", {1, 28, 28}, 10, 1);
    REQUIRE(m.num_layers() == 12);
    auto shapes = layer_shapes(m);
    // conv(6,k5,p2) keeps 28x28, pool halves, conv(16,k5) shrinks to 10.
    CHECK(shapes[0].dims == std::vector<std::size_t>{6, 28, 28});
    CHECK(shapes[2].dims == std::vector<std::size_t>{6, 14, 14});
    CHECK(shapes[3].dims == std::vector<std::size_t>{16, 10, 10});
    CHECK(shapes[5].dims == std::vector<std::size_t>{16, 5, 5});
    CHECK(shapes[6].dims == std::vector<std::size_t>{400});
    CHECK(shapes[7].dims == std::vector<std::size_t>{120});
    CHECK(shapes[11].dims == std::vector<std::size_t>{10});
    CHECK(default_seg_index(m) == 3);
    CHECK(m.layers[3].describe() == "conv2d in=6 out=16 k=5 s=1 p=0");
    CHECK(m.layers[2].describe() == "avgpool2d k=2");
    CHECK(m.layers[9].describe() == "linear in=120 out=84");
}

TEST_CASE("tiny-mlp shapes") {
    SequentialModel m = make_model("tiny-mlp", {1, 4, 4}, 3, 1);
    auto shapes = layer_shapes(m);
    CHECK(shapes.front().dims == std::vector<std::size_t>{16});
    CHECK(shapes.back().dims == std::vector<std::size_t>{3});
    CHECK_THROWS_AS(default_seg_index(m), ValueError);
}

TEST_CASE("unknown architecture rejected") {
    CHECK_THROWS_AS(make_model("resnet", {1, 28, 28}, 10, 1), ValueError);
}

TEST_CASE("shape validation names the offending layer") {
    SequentialModel m;
    m.input_shape = {1, 4, 4};
    m.num_classes = 2;
    m.layers = {flatten(), conv2d(3, 2)}; // conv after flatten is invalid
    CHECK_THROWS_WITH_AS(resolve_shapes(m), doctest::Contains("layer 1"), ShapeError);

    SequentialModel bad;
    bad.input_shape = {1, 4, 4};
    bad.num_classes = 2;
    bad.layers = {flatten(), linear(17, 2)}; // 4*4 = 16 features
    CHECK_THROWS_AS(resolve_shapes(bad), ShapeError);

    SequentialModel spatial_out;
    spatial_out.input_shape = {1, 4, 4};
    spatial_out.num_classes = 2;
    spatial_out.layers = {conv2d(2, 3)};
    CHECK_THROWS_AS(resolve_shapes(spatial_out), ShapeError);
    CHECK_NOTHROW(resolve_shapes(spatial_out, false));
}

TEST_CASE("kernel larger than padded input rejected") {
    SequentialModel m;
    m.input_shape = {1, 3, 3};
    m.num_classes = 2;
    m.layers = {conv2d(1, 5), flatten(), linear(0, 2)};
    CHECK_THROWS_AS(resolve_shapes(m), ShapeError);
}

TEST_CASE("conv value oracle k2") {
    SequentialModel m = tiny_conv_model();
    // single filter [[1,0],[-1,2]] with bias 0.5 over the 1..9 grid
    m.layers[0].weight = Tensor({1, 1, 2, 2}, {1, 0, -1, 2});
    m.layers[0].bias = Tensor({1}, {0.5});
    m.layers[0].out_channels = 1;
    SequentialModel probe;
    probe.input_shape = {1, 3, 3};
    probe.num_classes = 4;
    probe.layers = {m.layers[0], flatten(), linear(4, 4)};
    resolve_shapes(probe);
    probe.layers[2].weight = Tensor({4, 4}); // identity to read the conv out
    for (int i = 0; i < 4; ++i) probe.layers[2].weight[i * 4 + i] = 1.0;
    probe.layers[2].bias = Tensor({4});

    Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor y = forward(probe, x);
    CHECK(y[0] == doctest::Approx(7.5));
    CHECK(y[1] == doctest::Approx(9.5));
    CHECK(y[2] == doctest::Approx(13.5));
    CHECK(y[3] == doctest::Approx(15.5));
}

TEST_CASE("padded conv oracle: all-ones kernel sums the padded window") {
    Layer c = conv2d(1, 3, 1, 1);
    c.in_channels = 1;
    c.weight = Tensor::full({1, 1, 3, 3}, 1.0);
    c.bias = Tensor({1});
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = apply_layer(c, x);
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(10.0));
}

TEST_CASE("strided conv oracle") {
    Layer c = conv2d(1, 2, 2, 0);
    c.in_channels = 1;
    c.weight = Tensor::full({1, 1, 2, 2}, 1.0);
    c.bias = Tensor({1});
    Tensor x({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i + 1);
    Tensor y = apply_layer(c, x);
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, 2, 2});
    CHECK(y[0] == doctest::Approx(14));
    CHECK(y[1] == doctest::Approx(22));
    CHECK(y[2] == doctest::Approx(46));
    CHECK(y[3] == doctest::Approx(54));
}

TEST_CASE("multi-channel conv sums over input channels") {
    Layer c = conv2d(1, 2, 1, 0);
    c.in_channels = 2;
    Tensor w({1, 2, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) w[i] = 1.0;      // channel 0: ones
    for (std::size_t i = 4; i < 8; ++i) w[i] = 2.0;      // channel 1: twos
    c.weight = w;
    c.bias = Tensor({1});
    Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    Tensor y = apply_layer(c, x);
    CHECK(y[0] == doctest::Approx(10.0 + 2 * 100.0));
}

TEST_CASE("avgpool oracle") {
    Layer p = avgpool2d(2);
    Tensor x({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i + 1);
    Tensor y = apply_layer(p, x);
    CHECK(y[0] == doctest::Approx(3.5));
    CHECK(y[1] == doctest::Approx(5.5));
    CHECK(y[2] == doctest::Approx(11.5));
    CHECK(y[3] == doctest::Approx(13.5));
}

TEST_CASE("avgpool drops ragged edges") {
    Layer p = avgpool2d(2);
    Tensor x({1, 1, 5, 5});
    x.fill(1.0);
    Tensor y = apply_layer(p, x);
    CHECK(y.shape() == std::vector<std::size_t>{1, 1, 2, 2});
}

TEST_CASE("relu and flatten") {
    Layer r = relu();
    Tensor x({1, 1, 1, 4}, {-1, 0, 2, -0.5});
    Tensor y = apply_layer(r, x);
    CHECK(y[0] == 0);
    CHECK(y[1] == 0);
    CHECK(y[2] == 2);
    CHECK(y[3] == 0);

    Layer f = flatten();
    Tensor img({2, 2, 1, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor flat = apply_layer(f, img);
    CHECK(flat.shape() == std::vector<std::size_t>{2, 4});
    for (std::size_t i = 0; i < 8; ++i) CHECK(flat[i] == img[i]); // row-major
}

TEST_CASE("linear oracle") {
    Layer l = linear(3, 2);
    l.weight = Tensor({2, 3}, {1, 0, -1, 2, 1, 0});
    l.bias = Tensor({2}, {0.5, -1});
    Tensor x({1, 3}, {3, 4, 5});
    Tensor y = apply_layer(l, x);
    CHECK(y[0] == doctest::Approx(3 - 5 + 0.5));
    CHECK(y[1] == doctest::Approx(6 + 4 - 1));
}

TEST_CASE("forward validates batch shape") {
    SequentialModel m = tiny_conv_model();
    init_params(m, 1);
    Tensor wrong({2, 1, 4, 4});
    CHECK_THROWS_AS(forward(m, wrong), ShapeError);
    Tensor flat({4});
    CHECK_THROWS_AS(forward(m, flat), ShapeError);
}

TEST_CASE("init_params determinism and bounds") {
    SequentialModel a = make_model("lenet", {1, 28, 28}, 10, 9);
    SequentialModel b = make_model("lenet", {1, 28, 28}, 10, 9);
    CHECK(param_hash(a) == param_hash(b));
    SequentialModel c = make_model("lenet", {1, 28, 28}, 10, 10);
    CHECK(param_hash(a) != param_hash(c));

    // conv1: fan_in = 1*5*5; every weight inside the fan-in bound, bias zero
    double bound = std::sqrt(6.0 / 25.0);
    const Tensor& w = a.layers[0].weight;
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(w[i] >= -bound);
        CHECK(w[i] <= bound);
    }
    const Tensor& bias = a.layers[0].bias;
    for (std::size_t i = 0; i < bias.size(); ++i) CHECK(bias[i] == 0.0);
}

TEST_CASE("param_tensors order and param_hash sensitivity") {
    SequentialModel m = make_model("lenet", {1, 28, 28}, 10, 2);
    auto params = param_tensors(m);
    // 2 conv + 3 linear layers, weight then bias each
    REQUIRE(params.size() == 10);
    CHECK(params[0]->shape() == std::vector<std::size_t>{6, 1, 5, 5});
    CHECK(params[1]->shape() == std::vector<std::size_t>{6});
    CHECK(params[8]->shape() == std::vector<std::size_t>{10, 84});
    CHECK(params[9]->shape() == std::vector<std::size_t>{10});
    CHECK(param_count(m) > 0);

    std::uint64_t before = param_hash(m);
    (*params[0])[0] += 1e-12;
    CHECK(param_hash(m) != before);
}

TEST_CASE("forward trace caches per-layer inputs") {
    SequentialModel m = tiny_conv_model();
    init_params(m, 3);
    Tensor x({2, 1, 3, 3});
    Rng r(4);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = r.uniform();
    ForwardTrace t;
    Tensor y = forward(m, x, &t);
    REQUIRE(t.recorded);
    REQUIRE(t.inputs.size() == m.num_layers());
    CHECK(max_abs_diff(t.inputs[0], x) == 0.0);
    CHECK(max_abs_diff(t.output, y) == 0.0);
    // replaying each layer reproduces the chain
    Tensor cur = x;
    for (std::size_t i = 0; i < m.num_layers(); ++i) {
        CHECK(max_abs_diff(t.inputs[i], cur) == 0.0);
        cur = apply_layer(m.layers[i], cur);
    }
    CHECK(max_abs_diff(cur, y) == 0.0);
}

TEST_CASE("apply_layer on a full batch equals forward composition") {
    SequentialModel m = make_model("lenet", {1, 28, 28}, 10, 5);
    Tensor x({3, 1, 28, 28});
    Rng r(6);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = r.uniform();
    Tensor direct = forward(m, x);
    Tensor cur = x;
    for (const Layer& l : m.layers) cur = apply_layer(l, cur);
    CHECK(max_abs_diff(direct, cur) < 1e-12);
}
