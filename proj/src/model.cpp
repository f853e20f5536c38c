#include "authnet/model.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <sstream>

#include "authnet/error.hpp"
#include "authnet/hash.hpp"
#include "authnet/rng.hpp"

namespace authnet {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::ReLU: return "relu";
        case LayerKind::AvgPool2d: return "avgpool2d";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Linear: return "linear";
    }
    return "?";
}

std::string Layer::describe() const {
    std::ostringstream os;
    os << layer_kind_name(kind);
    if (kind == LayerKind::Conv2d) {
        os << " in=" << in_channels << " out=" << out_channels << " k=" << kernel
           << " s=" << stride << " p=" << padding;
    } else if (kind == LayerKind::AvgPool2d) {
        os << " k=" << pool;
    } else if (kind == LayerKind::Linear) {
        os << " in=" << in_features << " out=" << out_features;
    }
    return os.str();
}

Layer conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride,
             std::size_t padding) {
    Layer l;
    l.kind = LayerKind::Conv2d;
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    return l;
}

Layer relu() {
    Layer l;
    l.kind = LayerKind::ReLU;
    return l;
}

Layer avgpool2d(std::size_t k) {
    Layer l;
    l.kind = LayerKind::AvgPool2d;
    l.pool = k;
    return l;
}

Layer flatten() {
    Layer l;
    l.kind = LayerKind::Flatten;
    return l;
}

Layer linear(std::size_t in_features, std::size_t out_features) {
    Layer l;
    l.kind = LayerKind::Linear;
    l.in_features = in_features;
    l.out_features = out_features;
    return l;
}

static std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t s,
                                std::size_t p) {
    return (in + 2 * p - k) / s + 1;
}

static std::vector<ActShape> resolve_impl(SequentialModel& model, bool allocate,
                                          bool require_flat) {
    if (model.layers.empty()) throw ShapeError("model has no layers");
    if (model.input_shape[0] == 0 || model.input_shape[1] == 0 || model.input_shape[2] == 0)
        throw ShapeError("model input shape has a zero extent");

    std::vector<ActShape> shapes;
    shapes.reserve(model.layers.size());
    ActShape cur{{model.input_shape[0], model.input_shape[1], model.input_shape[2]}};

    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        Layer& l = model.layers[i];
        auto fail = [&](const std::string& msg) {
            throw ShapeError("layer " + std::to_string(i) + " (" + l.describe() +
                             "): " + msg + " with input " + cur.str());
        };
        switch (l.kind) {
            case LayerKind::Conv2d: {
                if (!cur.spatial()) fail("conv2d needs a spatial input");
                if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0)
                    fail("conv2d out/kernel/stride must be positive");
                if (l.in_channels == 0) l.in_channels = cur.dims[0];
                if (l.in_channels != cur.dims[0]) fail("in_channels mismatch");
                std::size_t h = cur.dims[1], w = cur.dims[2];
                if (h + 2 * l.padding < l.kernel || w + 2 * l.padding < l.kernel)
                    fail("kernel larger than padded input");
                cur = ActShape{{l.out_channels,
                                conv_out_dim(h, l.kernel, l.stride, l.padding),
                                conv_out_dim(w, l.kernel, l.stride, l.padding)}};
                std::vector<std::size_t> ws{l.out_channels, l.in_channels, l.kernel, l.kernel};
                if (allocate && l.weight.size() == 0) {
                    l.weight = Tensor(ws);
                    l.bias = Tensor({l.out_channels});
                } else if (l.weight.shape() != ws) {
                    fail("weight shape " + l.weight.shape_str() + " does not match");
                }
                break;
            }
            case LayerKind::ReLU:
                break;
            case LayerKind::AvgPool2d: {
                if (!cur.spatial()) fail("avgpool2d needs a spatial input");
                if (l.pool == 0) fail("pool size must be positive");
                if (cur.dims[1] < l.pool || cur.dims[2] < l.pool)
                    fail("pool window larger than input");
                cur = ActShape{{cur.dims[0], cur.dims[1] / l.pool, cur.dims[2] / l.pool}};
                break;
            }
            case LayerKind::Flatten:
                if (!cur.spatial()) fail("flatten needs a spatial input");
                cur = ActShape{{cur.numel()}};
                break;
            case LayerKind::Linear: {
                if (cur.spatial()) fail("linear needs a flat input (missing flatten?)");
                if (l.out_features == 0) fail("out_features must be positive");
                if (l.in_features == 0) l.in_features = cur.dims[0];
                if (l.in_features != cur.dims[0]) fail("in_features mismatch");
                cur = ActShape{{l.out_features}};
                std::vector<std::size_t> ws{l.out_features, l.in_features};
                if (allocate && l.weight.size() == 0) {
                    l.weight = Tensor(ws);
                    l.bias = Tensor({l.out_features});
                } else if (l.weight.shape() != ws) {
                    fail("weight shape " + l.weight.shape_str() + " does not match");
                }
                break;
            }
        }
        shapes.push_back(cur);
    }

    if (require_flat) {
        if (cur.spatial())
            throw ShapeError("model output is spatial " + cur.str() + "; logits must be flat");
        if (model.num_classes == 0) {
            model.num_classes = cur.dims[0];
        } else if (model.num_classes != cur.dims[0]) {
            throw ShapeError("model emits " + std::to_string(cur.dims[0]) +
                             " logits but num_classes=" + std::to_string(model.num_classes));
        }
    }
    return shapes;
}

std::vector<ActShape> resolve_shapes(SequentialModel& model, bool require_flat_output) {
    return resolve_impl(model, true, require_flat_output);
}

std::vector<ActShape> layer_shapes(const SequentialModel& model, bool require_flat_output) {
    // Validation only; const_cast is safe because allocate=false never writes
    // tensors and derived scalar fields are already resolved.
    return resolve_impl(const_cast<SequentialModel&>(model), false, require_flat_output);
}

void init_params(SequentialModel& model, std::uint64_t seed) {
    resolve_shapes(model);
    Rng rng(seed);
    for (Layer& l : model.layers) {
        if (!l.has_params()) continue;
        std::size_t fan_in = l.kind == LayerKind::Conv2d
                                 ? l.in_channels * l.kernel * l.kernel
                                 : l.in_features;
        double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (std::size_t i = 0; i < l.weight.size(); ++i)
            l.weight[i] = rng.uniform(-bound, bound);
        l.bias.fill(0.0);
    }
}

SequentialModel make_model(const std::string& arch, std::array<std::size_t, 3> input_shape,
                           std::size_t num_classes, std::uint64_t seed) {
    SequentialModel m;
    m.input_shape = input_shape;
    m.num_classes = num_classes;
    if (arch == "lenet") {
        if (input_shape[1] != 28 || input_shape[2] != 28)
            throw ValueError("lenet expects 28x28 inputs, got " +
                             shape_to_string({input_shape[0], input_shape[1], input_shape[2]}));
        m.layers = {conv2d(6, 5, 1, 2), relu(), avgpool2d(2),
                    conv2d(16, 5, 1, 0), relu(), avgpool2d(2),
                    flatten(),
                    linear(0, 120), relu(),
                    linear(0, 84), relu(),
                    linear(0, num_classes)};
    } else if (arch == "tiny-mlp") {
        m.layers = {flatten(), linear(0, 64), relu(), linear(0, num_classes)};
    } else {
        throw ValueError("unknown architecture '" + arch + "' (known: lenet, tiny-mlp)");
    }
    init_params(m, seed);
    return m;
}

std::size_t default_seg_index(const SequentialModel& model) {
    // Last conv layer whose output is still spatial. Gating on the conv
    // output rather than the ReLU behind it keeps gradients alive on the
    // least-active channels, which are exactly the ones the key targets.
    auto shapes = layer_shapes(model);
    std::size_t best = 0;
    bool found = false;
    for (std::size_t i = 0; i + 1 < model.layers.size(); ++i) {
        if (model.layers[i].kind == LayerKind::Conv2d && shapes[i].spatial()) {
            best = i;
            found = true;
        }
    }
    if (!found) throw ValueError("architecture has no spatial activation to gate on");
    return best;
}

std::vector<Tensor*> param_tensors(SequentialModel& model) {
    std::vector<Tensor*> out;
    for (Layer& l : model.layers) {
        if (!l.has_params()) continue;
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<const Tensor*> param_tensors(const SequentialModel& model) {
    std::vector<const Tensor*> out;
    for (const Layer& l : model.layers) {
        if (!l.has_params()) continue;
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::size_t param_count(const SequentialModel& model) {
    std::size_t n = 0;
    for (const Tensor* t : param_tensors(model)) n += t->size();
    return n;
}

std::uint64_t param_hash(const SequentialModel& model) {
    Fnv1a h;
    for (const Tensor* t : param_tensors(model))
        h.update(t->data(), t->size() * sizeof(double));
    return h.digest();
}

// ---- forward ----

namespace {

// Gathers conv patches of one sample into cols [in_c*k*k, oH*oW].
void im2col(const double* x, std::size_t c, std::size_t h, std::size_t w,
            std::size_t k, std::size_t s, std::size_t p, std::size_t oh,
            std::size_t ow, double* cols) {
    const std::size_t plane = h * w;
    for (std::size_t ic = 0; ic < c; ++ic) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                double* row = cols + ((ic * k + ky) * k + kx) * (oh * ow);
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(p);
                        double v = 0.0;
                        if (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 &&
                            ix < static_cast<long>(w))
                            v = x[ic * plane + static_cast<std::size_t>(iy) * w +
                                  static_cast<std::size_t>(ix)];
                        row[oy * ow + ox] = v;
                    }
                }
            }
        }
    }
}

// Scatter-add of cols grads back onto the input image (reverse of im2col).
void col2im_add(const double* cols, std::size_t c, std::size_t h, std::size_t w,
                std::size_t k, std::size_t s, std::size_t p, std::size_t oh,
                std::size_t ow, double* dx) {
    const std::size_t plane = h * w;
    for (std::size_t ic = 0; ic < c; ++ic) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const double* row = cols + ((ic * k + ky) * k + kx) * (oh * ow);
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(p);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        dx[ic * plane + static_cast<std::size_t>(iy) * w +
                           static_cast<std::size_t>(ix)] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

Tensor conv_forward(const Layer& l, const Tensor& x) {
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t oh = conv_out_dim(h, l.kernel, l.stride, l.padding);
    const std::size_t ow = conv_out_dim(w, l.kernel, l.stride, l.padding);
    const std::size_t kk = l.in_channels * l.kernel * l.kernel;
    Tensor y({n, l.out_channels, oh, ow});
    std::vector<double> cols(kk * oh * ow);
    CMapRM wmat(l.weight.data(), static_cast<Eigen::Index>(l.out_channels),
                static_cast<Eigen::Index>(kk));
    for (std::size_t i = 0; i < n; ++i) {
        im2col(x.data() + i * c * h * w, c, h, w, l.kernel, l.stride, l.padding, oh, ow,
               cols.data());
        CMapRM cmat(cols.data(), static_cast<Eigen::Index>(kk),
                    static_cast<Eigen::Index>(oh * ow));
        MapRM ymat(y.data() + i * l.out_channels * oh * ow,
                   static_cast<Eigen::Index>(l.out_channels),
                   static_cast<Eigen::Index>(oh * ow));
        ymat.noalias() = wmat * cmat;
        for (std::size_t oc = 0; oc < l.out_channels; ++oc)
            ymat.row(static_cast<Eigen::Index>(oc)).array() += l.bias[oc];
    }
    return y;
}

Tensor avgpool_forward(const Layer& l, const Tensor& x) {
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t k = l.pool, oh = h / k, ow = w / k;
    Tensor y({n, c, oh, ow});
    const double inv = 1.0 / static_cast<double>(k * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* xp = x.data() + (i * c + ch) * h * w;
            double* yp = y.data() + (i * c + ch) * oh * ow;
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double s = 0.0;
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx)
                            s += xp[(oy * k + ky) * w + ox * k + kx];
                    yp[oy * ow + ox] = s * inv;
                }
        }
    return y;
}

Tensor linear_forward(const Layer& l, const Tensor& x) {
    const std::size_t n = x.extent(0);
    Tensor y({n, l.out_features});
    CMapRM xm(x.data(), static_cast<Eigen::Index>(n),
              static_cast<Eigen::Index>(l.in_features));
    CMapRM wm(l.weight.data(), static_cast<Eigen::Index>(l.out_features),
              static_cast<Eigen::Index>(l.in_features));
    MapRM ym(y.data(), static_cast<Eigen::Index>(n),
             static_cast<Eigen::Index>(l.out_features));
    ym.noalias() = xm * wm.transpose();
    for (std::size_t j = 0; j < l.out_features; ++j)
        ym.col(static_cast<Eigen::Index>(j)).array() += l.bias[j];
    return y;
}

} // namespace

Tensor apply_layer(const Layer& l, const Tensor& x) {
    switch (l.kind) {
        case LayerKind::Conv2d:
            return conv_forward(l, x);
        case LayerKind::ReLU: {
            Tensor y = x;
            for (std::size_t i = 0; i < y.size(); ++i)
                if (y[i] < 0.0) y[i] = 0.0;
            return y;
        }
        case LayerKind::AvgPool2d:
            return avgpool_forward(l, x);
        case LayerKind::Flatten: {
            const std::size_t n = x.extent(0);
            return x.reshaped({n, x.size() / n});
        }
        case LayerKind::Linear:
            return linear_forward(l, x);
    }
    throw StateError("unreachable layer kind");
}

Tensor forward(const SequentialModel& model, const Tensor& batch, ForwardTrace* trace) {
    if (batch.ndim() != 4)
        throw ShapeError("forward expects a 4-D batch, got " + batch.shape_str());
    if (batch.extent(1) != model.input_shape[0] || batch.extent(2) != model.input_shape[1] ||
        batch.extent(3) != model.input_shape[2])
        throw ShapeError("forward: batch " + batch.shape_str() + " does not match model input " +
                         shape_to_string({model.input_shape[0], model.input_shape[1],
                                          model.input_shape[2]}));
    if (trace) {
        trace->recorded = false;
        trace->inputs.clear();
        trace->inputs.reserve(model.layers.size());
    }
    Tensor cur = batch;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (trace) trace->inputs.push_back(cur);
        cur = apply_layer(model.layers[i], cur);
    }
    if (trace) {
        trace->output = cur;
        trace->recorded = true;
    }
    return cur;
}

// ---- backward ----

namespace {

void conv_backward(const Layer& l, const Tensor& x, const Tensor& dy, Tensor* dw,
                   Tensor* db, Tensor* dx) {
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t oh = dy.extent(2), ow = dy.extent(3);
    const std::size_t kk = l.in_channels * l.kernel * l.kernel;
    std::vector<double> cols(kk * oh * ow);
    std::vector<double> dcols(kk * oh * ow);
    CMapRM wm(l.weight.data(), static_cast<Eigen::Index>(l.out_channels),
              static_cast<Eigen::Index>(kk));
    MapRM dwm(dw->data(), static_cast<Eigen::Index>(l.out_channels),
              static_cast<Eigen::Index>(kk));
    for (std::size_t i = 0; i < n; ++i) {
        CMapRM dym(dy.data() + i * l.out_channels * oh * ow,
                   static_cast<Eigen::Index>(l.out_channels),
                   static_cast<Eigen::Index>(oh * ow));
        im2col(x.data() + i * c * h * w, c, h, w, l.kernel, l.stride, l.padding, oh, ow,
               cols.data());
        CMapRM cm(cols.data(), static_cast<Eigen::Index>(kk),
                  static_cast<Eigen::Index>(oh * ow));
        dwm.noalias() += dym * cm.transpose();
        for (std::size_t oc = 0; oc < l.out_channels; ++oc)
            (*db)[oc] += dym.row(static_cast<Eigen::Index>(oc)).sum();
        if (dx) {
            MapRM dcm(dcols.data(), static_cast<Eigen::Index>(kk),
                      static_cast<Eigen::Index>(oh * ow));
            dcm.noalias() = wm.transpose() * dym;
            col2im_add(dcols.data(), c, h, w, l.kernel, l.stride, l.padding, oh, ow,
                       dx->data() + i * c * h * w);
        }
    }
}

void avgpool_backward(const Layer& l, const Tensor& x, const Tensor& dy, Tensor* dx) {
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t k = l.pool, oh = h / k, ow = w / k;
    const double inv = 1.0 / static_cast<double>(k * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* dyp = dy.data() + (i * c + ch) * oh * ow;
            double* dxp = dx->data() + (i * c + ch) * h * w;
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double g = dyp[oy * ow + ox] * inv;
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx)
                            dxp[(oy * k + ky) * w + ox * k + kx] += g;
                }
        }
}

void linear_backward(const Layer& l, const Tensor& x, const Tensor& dy, Tensor* dw,
                     Tensor* db, Tensor* dx) {
    const std::size_t n = x.extent(0);
    CMapRM xm(x.data(), static_cast<Eigen::Index>(n),
              static_cast<Eigen::Index>(l.in_features));
    CMapRM dym(dy.data(), static_cast<Eigen::Index>(n),
               static_cast<Eigen::Index>(l.out_features));
    MapRM dwm(dw->data(), static_cast<Eigen::Index>(l.out_features),
              static_cast<Eigen::Index>(l.in_features));
    dwm.noalias() += dym.transpose() * xm;
    for (std::size_t j = 0; j < l.out_features; ++j)
        (*db)[j] += dym.col(static_cast<Eigen::Index>(j)).sum();
    if (dx) {
        CMapRM wm(l.weight.data(), static_cast<Eigen::Index>(l.out_features),
                  static_cast<Eigen::Index>(l.in_features));
        MapRM dxm(dx->data(), static_cast<Eigen::Index>(n),
                  static_cast<Eigen::Index>(l.in_features));
        dxm.noalias() = dym * wm;
    }
}

} // namespace

Gradients backward(const SequentialModel& model, const ForwardTrace& trace,
                   const Tensor& grad_logits, bool want_input_grad,
                   std::size_t first_layer) {
    if (!trace.recorded)
        throw StateError("backward called without a recorded forward trace");
    if (trace.inputs.size() != model.layers.size())
        throw StateError("forward trace does not match this model");
    if (!grad_logits.same_shape(trace.output))
        throw ShapeError("grad_logits " + grad_logits.shape_str() +
                         " does not match model output " + trace.output.shape_str());
    if (first_layer >= model.layers.size())
        throw ValueError("backward: first_layer out of range");

    Gradients g;
    g.weight.resize(model.layers.size());
    g.bias.resize(model.layers.size());

    Tensor cur = grad_logits;
    for (std::size_t ri = model.layers.size(); ri-- > first_layer;) {
        const Layer& l = model.layers[ri];
        const Tensor& x = trace.inputs[ri];
        const bool need_dx = ri > first_layer || want_input_grad;
        switch (l.kind) {
            case LayerKind::Conv2d: {
                g.weight[ri] = Tensor(l.weight.shape());
                g.bias[ri] = Tensor(l.bias.shape());
                Tensor dx;
                if (need_dx) dx = Tensor(x.shape());
                conv_backward(l, x, cur, &g.weight[ri], &g.bias[ri],
                              need_dx ? &dx : nullptr);
                if (need_dx) cur = std::move(dx);
                break;
            }
            case LayerKind::ReLU: {
                if (need_dx) {
                    Tensor dx(x.shape());
                    for (std::size_t i = 0; i < x.size(); ++i)
                        dx[i] = x[i] > 0.0 ? cur[i] : 0.0;
                    cur = std::move(dx);
                }
                break;
            }
            case LayerKind::AvgPool2d: {
                if (need_dx) {
                    Tensor dx(x.shape());
                    avgpool_backward(l, x, cur, &dx);
                    cur = std::move(dx);
                }
                break;
            }
            case LayerKind::Flatten:
                if (need_dx) cur = cur.reshaped(x.shape());
                break;
            case LayerKind::Linear: {
                g.weight[ri] = Tensor(l.weight.shape());
                g.bias[ri] = Tensor(l.bias.shape());
                Tensor dx;
                if (need_dx) dx = Tensor(x.shape());
                linear_backward(l, x, cur, &g.weight[ri], &g.bias[ri],
                                need_dx ? &dx : nullptr);
                if (need_dx) cur = std::move(dx);
                break;
            }
        }
    }
    if (want_input_grad) g.input = std::move(cur);
    return g;
}

} // namespace authnet
