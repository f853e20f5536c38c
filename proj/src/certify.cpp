#include "authnet/certify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "authnet/error.hpp"
#include "authnet/rng.hpp"
#include "authnet/train.hpp"

namespace authnet {

namespace {

Tensor as_single_batch(const Tensor& x0) {
    if (x0.ndim() == 3)
        return x0.reshaped({1, x0.extent(0), x0.extent(1), x0.extent(2)});
    if (x0.ndim() == 4 && x0.extent(0) == 1) return x0;
    throw ShapeError("expected a single [C,H,W] or [1,C,H,W] input, got " +
                     x0.shape_str());
}

Layer abs_weight_copy(const Layer& l) {
    Layer a = l;
    for (std::size_t i = 0; i < a.weight.size(); ++i)
        a.weight[i] = std::fabs(a.weight[i]);
    a.bias.fill(0.0);
    return a;
}

} // namespace

BoundPair interval_bounds(const SequentialModel& model, const Tensor& x0, double eps,
                          IntervalTrace* trace) {
    if (eps < 0.0) throw ValueError("interval_bounds: eps must be >= 0");
    Tensor x = as_single_batch(x0);
    Tensor lo = x, hi = x;
    for (std::size_t i = 0; i < lo.size(); ++i) {
        lo[i] -= eps;
        hi[i] += eps;
    }
    if (trace) {
        trace->lower.clear();
        trace->upper.clear();
    }
    for (const Layer& l : model.layers) {
        if (trace) {
            trace->lower.push_back(lo);
            trace->upper.push_back(hi);
        }
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::Linear: {
                Tensor mid(lo.shape()), rad(lo.shape());
                for (std::size_t i = 0; i < lo.size(); ++i) {
                    mid[i] = 0.5 * (lo[i] + hi[i]);
                    rad[i] = 0.5 * (hi[i] - lo[i]);
                }
                Tensor mid_out = apply_layer(l, mid);
                Tensor rad_out = apply_layer(abs_weight_copy(l), rad);
                lo = Tensor(mid_out.shape());
                hi = Tensor(mid_out.shape());
                for (std::size_t i = 0; i < lo.size(); ++i) {
                    lo[i] = mid_out[i] - rad_out[i];
                    hi[i] = mid_out[i] + rad_out[i];
                }
                break;
            }
            case LayerKind::AvgPool2d:
                lo = apply_layer(l, lo);
                hi = apply_layer(l, hi);
                break;
            case LayerKind::ReLU:
                for (std::size_t i = 0; i < lo.size(); ++i) {
                    if (lo[i] < 0.0) lo[i] = 0.0;
                    if (hi[i] < 0.0) hi[i] = 0.0;
                }
                break;
            case LayerKind::Flatten: {
                const std::size_t n = lo.extent(0);
                lo = lo.reshaped({n, lo.size() / n});
                hi = hi.reshaped({n, hi.size() / n});
                break;
            }
        }
    }
    BoundPair out;
    out.lower = lo.reshaped({lo.size()});
    out.upper = hi.reshaped({hi.size()});
    return out;
}

namespace {

// One row of backward coefficients per output class, flattened over the
// current layer-input geometry, plus accumulated constants.
struct LinBounds {
    Tensor a;                  // [K, D]
    std::vector<double> b;     // [K]
};

void linear_back(const Layer& l, LinBounds& lb) {
    const std::size_t k = lb.a.extent(0);
    Tensor na({k, l.in_features});
    for (std::size_t r = 0; r < k; ++r) {
        const double* arow = lb.a.data() + r * l.out_features;
        double* nrow = na.data() + r * l.in_features;
        for (std::size_t o = 0; o < l.out_features; ++o) {
            const double v = arow[o];
            if (v == 0.0) continue;
            lb.b[r] += v * l.bias[o];
            const double* wrow = l.weight.data() + o * l.in_features;
            for (std::size_t i = 0; i < l.in_features; ++i) nrow[i] += v * wrow[i];
        }
    }
    lb.a = std::move(na);
}

void conv_back(const Layer& l, const ActShape& in_shape, const ActShape& out_shape,
               LinBounds& lb) {
    const std::size_t k = lb.a.extent(0);
    const std::size_t ic = in_shape.dims[0], h = in_shape.dims[1], w = in_shape.dims[2];
    const std::size_t oc = out_shape.dims[0], oh = out_shape.dims[1], ow = out_shape.dims[2];
    Tensor na({k, ic * h * w});
    for (std::size_t r = 0; r < k; ++r) {
        const double* arow = lb.a.data() + r * oc * oh * ow;
        double* nrow = na.data() + r * ic * h * w;
        for (std::size_t o = 0; o < oc; ++o) {
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double v = arow[(o * oh + oy) * ow + ox];
                    if (v == 0.0) continue;
                    for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                        const long iy = static_cast<long>(oy * l.stride + ky) -
                                        static_cast<long>(l.padding);
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                            const long ix = static_cast<long>(ox * l.stride + kx) -
                                            static_cast<long>(l.padding);
                            if (ix < 0 || ix >= static_cast<long>(w)) continue;
                            for (std::size_t c = 0; c < ic; ++c)
                                nrow[(c * h + static_cast<std::size_t>(iy)) * w +
                                     static_cast<std::size_t>(ix)] +=
                                    v * l.weight[((o * ic + c) * l.kernel + ky) * l.kernel +
                                                 kx];
                        }
                    }
                }
            double bsum = 0.0;
            for (std::size_t j = 0; j < oh * ow; ++j) bsum += arow[o * oh * ow + j];
            lb.b[r] += bsum * l.bias[o];
        }
    }
    lb.a = std::move(na);
}

void avgpool_back(const Layer& l, const ActShape& in_shape, const ActShape& out_shape,
                  LinBounds& lb) {
    const std::size_t k = lb.a.extent(0);
    const std::size_t c = in_shape.dims[0], h = in_shape.dims[1], w = in_shape.dims[2];
    const std::size_t oh = out_shape.dims[1], ow = out_shape.dims[2];
    const std::size_t kk = l.pool;
    const double inv = 1.0 / static_cast<double>(kk * kk);
    Tensor na({k, c * h * w});
    for (std::size_t r = 0; r < k; ++r) {
        const double* arow = lb.a.data() + r * c * oh * ow;
        double* nrow = na.data() + r * c * h * w;
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double v = arow[(ch * oh + oy) * ow + ox] * inv;
                    if (v == 0.0) continue;
                    for (std::size_t ky = 0; ky < kk; ++ky)
                        for (std::size_t kx = 0; kx < kk; ++kx)
                            nrow[(ch * h + oy * kk + ky) * w + ox * kk + kx] += v;
                }
    }
    lb.a = std::move(na);
}

// ReLU relaxation slopes for one neuron given pre-activation bounds [l, u].
struct ReluLines {
    double up_slope, up_icpt, low_slope;
};

ReluLines relu_lines(double l, double u) {
    if (l >= 0.0) return {1.0, 0.0, 1.0};
    if (u <= 0.0) return {0.0, 0.0, 0.0};
    const double s = u / (u - l);
    return {s, -l * s, (u >= -l) ? 1.0 : 0.0};
}

void relu_back(const Tensor& pre_lo, const Tensor& pre_hi, LinBounds& up, LinBounds& low) {
    const std::size_t k = up.a.extent(0);
    const std::size_t d = up.a.extent(1);
    if (pre_lo.size() != d)
        throw StateError("relu_back: pre-activation bound size mismatch");
    for (std::size_t j = 0; j < d; ++j) {
        const ReluLines ln = relu_lines(pre_lo[j], pre_hi[j]);
        for (std::size_t r = 0; r < k; ++r) {
            double& au = up.a[r * d + j];
            if (au >= 0.0) {
                up.b[r] += au * ln.up_icpt;
                au *= ln.up_slope;
            } else {
                au *= ln.low_slope;
            }
            double& al = low.a[r * d + j];
            if (al >= 0.0) {
                al *= ln.low_slope;
            } else {
                low.b[r] += al * ln.up_icpt;
                al *= ln.up_slope;
            }
        }
    }
}

} // namespace

BoundPair crown_bounds(const SequentialModel& model, const Tensor& x0, double eps) {
    if (eps < 0.0) throw ValueError("crown_bounds: eps must be >= 0");
    Tensor x = as_single_batch(x0);

    IntervalTrace itrace;
    BoundPair ibp = interval_bounds(model, x, eps, &itrace);

    auto shapes = layer_shapes(model);
    const std::size_t k = model.num_classes;
    const std::size_t out_dim = shapes.back().numel();
    if (out_dim != k) throw StateError("crown_bounds: output size mismatch");

    LinBounds up, low;
    up.a = Tensor({k, k});
    low.a = Tensor({k, k});
    up.b.assign(k, 0.0);
    low.b.assign(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        up.a[i * k + i] = 1.0;
        low.a[i * k + i] = 1.0;
    }

    const ActShape input_shape{{model.input_shape[0], model.input_shape[1],
                                model.input_shape[2]}};
    for (std::size_t ri = model.layers.size(); ri-- > 0;) {
        const Layer& l = model.layers[ri];
        const ActShape& in_shape = ri == 0 ? input_shape : shapes[ri - 1];
        const ActShape& out_shape = shapes[ri];
        switch (l.kind) {
            case LayerKind::Linear:
                linear_back(l, up);
                linear_back(l, low);
                break;
            case LayerKind::Conv2d:
                conv_back(l, in_shape, out_shape, up);
                conv_back(l, in_shape, out_shape, low);
                break;
            case LayerKind::AvgPool2d:
                avgpool_back(l, in_shape, out_shape, up);
                avgpool_back(l, in_shape, out_shape, low);
                break;
            case LayerKind::Flatten:
                break; // row-major flatten: coefficients already aligned
            case LayerKind::ReLU: {
                Tensor plo = itrace.lower[ri].reshaped({itrace.lower[ri].size()});
                Tensor phi = itrace.upper[ri].reshaped({itrace.upper[ri].size()});
                relu_back(plo, phi, up, low);
                break;
            }
        }
    }

    const std::size_t d = up.a.extent(1);
    if (d != x.size())
        throw StateError("crown_bounds: input coefficient size mismatch");

    BoundPair out;
    out.lower = Tensor({k});
    out.upper = Tensor({k});
    for (std::size_t r = 0; r < k; ++r) {
        double dot_u = 0.0, l1_u = 0.0, dot_l = 0.0, l1_l = 0.0;
        const double* ur = up.a.data() + r * d;
        const double* lr = low.a.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            dot_u += ur[j] * x[j];
            l1_u += std::fabs(ur[j]);
            dot_l += lr[j] * x[j];
            l1_l += std::fabs(lr[j]);
        }
        out.upper[r] = dot_u + eps * l1_u + up.b[r];
        out.lower[r] = dot_l - eps * l1_l + low.b[r];
        // Sound bounds intersect soundly; this also pins CROWN <= IBP.
        out.upper[r] = std::min(out.upper[r], ibp.upper[r]);
        out.lower[r] = std::max(out.lower[r], ibp.lower[r]);
    }
    return out;
}

// ---- radii ----

namespace {

double cert_gap(const SequentialModel& model, const Tensor& x0, int y_c, double eps) {
    BoundPair b = crown_bounds(model, x0, eps);
    const auto yc = static_cast<std::size_t>(y_c);
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < b.upper.size(); ++i) {
        if (i == yc) continue;
        worst = std::max(worst, b.upper[i]);
    }
    return b.lower[yc] - worst;
}

} // namespace

RadiusResult auth_radius(const SequentialModel& model, const Tensor& x0, int y_c,
                         const RadiusParams& p) {
    if (y_c < 0 || static_cast<std::size_t>(y_c) >= model.num_classes)
        throw ValueError("auth_radius: class index out of range");
    if (p.eps_hi <= 0.0 || p.tol <= 0.0)
        throw ValueError("auth_radius: eps_hi and tol must be positive");

    RadiusResult res;
    if (cert_gap(model, x0, y_c, 0.0) < 0.0) {
        res.misclassified = true;
        return res;
    }
    if (cert_gap(model, x0, y_c, p.eps_hi) >= 0.0) {
        res.radius = p.eps_hi;
        res.lo = res.hi = p.eps_hi;
        return res;
    }
    double lo = 0.0, hi = p.eps_hi;
    while (hi - lo > p.tol && res.iterations < p.max_iter) {
        const double mid = 0.5 * (lo + hi);
        if (cert_gap(model, x0, y_c, mid) >= 0.0)
            lo = mid;
        else
            hi = mid;
        ++res.iterations;
    }
    res.radius = lo;
    res.lo = lo;
    res.hi = hi;
    return res;
}

RadiusResult refuse_radius(const SequentialModel& model, const Tensor& x0, int y_p,
                           int y_c, const RadiusParams& p) {
    if (y_p == y_c)
        throw ValueError("refuse_radius: predicted and true class must differ");
    if (y_p < 0 || y_c < 0 || static_cast<std::size_t>(y_p) >= model.num_classes ||
        static_cast<std::size_t>(y_c) >= model.num_classes)
        throw ValueError("refuse_radius: class index out of range");

    auto crossing = [&](double eps) {
        BoundPair b = crown_bounds(model, x0, eps);
        return b.upper[static_cast<std::size_t>(y_c)] -
               b.lower[static_cast<std::size_t>(y_p)];
    };

    RadiusResult res;
    if (crossing(0.0) >= 0.0) {
        res.radius = 0.0;
        return res;
    }
    if (crossing(p.eps_hi) < 0.0) {
        res.radius = p.eps_hi;
        res.lo = res.hi = p.eps_hi;
        res.crossed = false;
        return res;
    }
    double lo = 0.0, hi = p.eps_hi;
    while (hi - lo > p.tol && res.iterations < p.max_iter) {
        const double mid = 0.5 * (lo + hi);
        if (crossing(mid) >= 0.0)
            hi = mid;
        else
            lo = mid;
        ++res.iterations;
    }
    res.radius = hi;
    res.lo = lo;
    res.hi = hi;
    return res;
}

// ---- refuse-domain material ----

std::vector<AuthKey> gen_fake_keys(const AuthKey& like, std::size_t count,
                                   std::uint64_t seed) {
    if (count == 0) throw ValueError("gen_fake_keys: count must be positive");
    const double mlo = like.literal_mask_box ? 0.0 : 1.0 - like.eps_mask;
    const double mhi = like.literal_mask_box ? like.eps_mask : 1.0 + like.eps_mask;
    Rng rng(seed);
    std::vector<AuthKey> keys;
    keys.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        AuthKey k = like;
        k.mask = Tensor(like.mask.shape());
        k.offset = Tensor(like.offset.shape());
        for (std::size_t j = 0; j < k.mask.size(); ++j)
            k.mask[j] = std::clamp(rng.uniform(mlo, mhi), mlo + 1e-12, mhi - 1e-12);
        for (std::size_t j = 0; j < k.offset.size(); ++j)
            k.offset[j] = std::clamp(rng.uniform(-like.eps_offset, like.eps_offset),
                                     -like.eps_offset + 1e-12, like.eps_offset - 1e-12);
        keys.push_back(std::move(k));
    }
    return keys;
}

Tensor sample_ball(const Tensor& center, double eps, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ValueError("sample_ball: n must be positive");
    if (eps < 0.0) throw ValueError("sample_ball: eps must be >= 0");
    Tensor c = as_single_batch(center);
    const std::size_t d = c.size();
    Tensor out({n, c.extent(1), c.extent(2), c.extent(3)});
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = std::clamp(c[j] + rng.uniform(-eps, eps), 0.0, 1.0);
    return out;
}

// ---- PCA ----

PcaResult pca_embed(const Tensor& points, std::size_t dims, std::uint64_t seed) {
    if (points.ndim() != 2)
        throw ShapeError("pca_embed expects [n,d] points, got " + points.shape_str());
    const std::size_t n = points.extent(0), d = points.extent(1);
    if (n < 2) throw ValueError("pca_embed: need at least 2 points");
    if (dims == 0 || dims > d) throw ValueError("pca_embed: bad target dims");

    Tensor c = points;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += c[i * d + j];
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) c[i * d + j] -= mean;
    }
    double total_var = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) total_var += c[i] * c[i];
    if (total_var == 0.0)
        throw ValueError("pca_embed: zero variance input");

    PcaResult res;
    res.coords = Tensor({n, dims});
    Rng rng(seed);
    std::vector<double> v(d), w(d), cv(n);

    for (std::size_t comp = 0; comp < dims; ++comp) {
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            v[j] = rng.gaussian();
            norm += v[j] * v[j];
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d; ++j) v[j] /= norm;

        double lambda = 0.0;
        bool this_converged = false;
        for (std::size_t it = 0; it < 500; ++it) {
            // w = C^T (C v) / n
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                const double* row = c.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) s += row[j] * v[j];
                cv[i] = s;
            }
            std::fill(w.begin(), w.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double* row = c.data() + i * d;
                const double s = cv[i];
                for (std::size_t j = 0; j < d; ++j) w[j] += row[j] * s;
            }
            double wn = 0.0;
            for (std::size_t j = 0; j < d; ++j) wn += w[j] * w[j];
            wn = std::sqrt(wn);
            if (wn < 1e-300) {
                lambda = 0.0;
                this_converged = true; // remaining variance is zero
                break;
            }
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                w[j] /= wn;
                dot += w[j] * v[j];
            }
            v = w;
            lambda = wn / static_cast<double>(n);
            if (std::fabs(std::fabs(dot) - 1.0) < 1e-13) {
                this_converged = true;
                break;
            }
        }
        if (!this_converged) res.converged = false;

        // Canonical sign: largest-magnitude entry positive.
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::fabs(v[j]) > std::fabs(v[arg])) arg = j;
        if (v[arg] < 0.0)
            for (std::size_t j = 0; j < d; ++j) v[j] = -v[j];

        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            const double* row = c.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) s += row[j] * v[j];
            res.coords[i * dims + comp] = s;
            cv[i] = s;
        }
        res.variances.push_back(lambda);
        for (std::size_t i = 0; i < n; ++i) {
            double* row = c.data() + i * d;
            const double s = cv[i];
            for (std::size_t j = 0; j < d; ++j) row[j] -= s * v[j];
        }
    }
    return res;
}

// ---- KDE ----

KdeResult kde_density(const Tensor& coords, const std::vector<bool>& is_refuse,
                      const std::vector<int>& labels, double bandwidth,
                      std::size_t grid) {
    if (coords.ndim() != 2 || coords.extent(1) != 2)
        throw ShapeError("kde_density expects [n,2] coords, got " + coords.shape_str());
    const std::size_t n = coords.extent(0);
    if (is_refuse.size() != n || labels.size() != n)
        throw ValueError("kde_density: flag/label lists must match point count");
    if (grid < 2) throw ValueError("kde_density: grid must be >= 2");
    std::size_t n_ref = 0;
    for (bool b : is_refuse) n_ref += b ? 1 : 0;
    if (n_ref == 0 || n_ref == n)
        throw ValueError("kde_density: both sample groups must be non-empty");

    KdeResult res;
    res.grid = grid;

    if (bandwidth <= 0.0) {
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < n; ++i) {
            mx += coords[i * 2];
            my += coords[i * 2 + 1];
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        double vx = 0, vy = 0;
        for (std::size_t i = 0; i < n; ++i) {
            vx += (coords[i * 2] - mx) * (coords[i * 2] - mx);
            vy += (coords[i * 2 + 1] - my) * (coords[i * 2 + 1] - my);
        }
        const double sigma = std::sqrt(0.5 * (vx + vy) / static_cast<double>(n));
        bandwidth = sigma > 0.0
                        ? sigma * std::pow(static_cast<double>(n), -1.0 / 6.0)
                        : 1e-3;
    }
    res.bandwidth = bandwidth;

    double x0 = coords[0], x1 = coords[0], y0 = coords[1], y1 = coords[1];
    for (std::size_t i = 0; i < n; ++i) {
        x0 = std::min(x0, coords[i * 2]);
        x1 = std::max(x1, coords[i * 2]);
        y0 = std::min(y0, coords[i * 2 + 1]);
        y1 = std::max(y1, coords[i * 2 + 1]);
    }
    const double pad = 3.0 * bandwidth;
    res.x0 = x0 - pad;
    res.x1 = x1 + pad;
    res.y0 = y0 - pad;
    res.y1 = y1 + pad;

    const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    auto density_of = [&](const std::vector<std::size_t>& rows) {
        std::vector<double> dens(grid * grid, 0.0);
        double total = 0.0;
        for (std::size_t gy = 0; gy < grid; ++gy) {
            const double cy = res.y0 + (res.y1 - res.y0) *
                                           (static_cast<double>(gy) + 0.5) /
                                           static_cast<double>(grid);
            for (std::size_t gx = 0; gx < grid; ++gx) {
                const double cx = res.x0 + (res.x1 - res.x0) *
                                               (static_cast<double>(gx) + 0.5) /
                                               static_cast<double>(grid);
                double s = 0.0;
                for (std::size_t r : rows) {
                    const double dx = cx - coords[r * 2];
                    const double dy = cy - coords[r * 2 + 1];
                    s += std::exp(-(dx * dx + dy * dy) * inv2h2);
                }
                dens[gy * grid + gx] = s;
                total += s;
            }
        }
        if (total > 0.0)
            for (double& v : dens) v /= total;
        return dens;
    };

    std::vector<std::size_t> ref_rows, auth_rows;
    for (std::size_t i = 0; i < n; ++i)
        (is_refuse[i] ? ref_rows : auth_rows).push_back(i);
    res.refuse_density = density_of(ref_rows);
    res.auth_density = density_of(auth_rows);

    std::size_t hits = 0;
    for (std::size_t i = 0; i < grid * grid; ++i)
        if (res.refuse_density[i] > res.auth_density[i]) ++hits;
    res.occupancy = static_cast<double>(hits) / static_cast<double>(grid * grid);

    int max_label = 0;
    for (int lb : labels) max_label = std::max(max_label, lb);
    for (int cls = 0; cls <= max_label; ++cls) {
        std::vector<std::size_t> rc, ac;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] != cls) continue;
            (is_refuse[i] ? rc : ac).push_back(i);
        }
        if (rc.empty() || ac.empty()) {
            res.occupancy_class.push_back(std::nan(""));
            continue;
        }
        auto dr = density_of(rc);
        auto da = density_of(ac);
        std::size_t h = 0;
        for (std::size_t i = 0; i < grid * grid; ++i)
            if (dr[i] > da[i]) ++h;
        res.occupancy_class.push_back(static_cast<double>(h) /
                                      static_cast<double>(grid * grid));
    }
    return res;
}

// ---- refuse profile ----

RefuseProfile profile_points(const SequentialModel& model, const Tensor& points,
                             const std::vector<int>& labels,
                             const std::vector<std::size_t>& ball_ids) {
    if (points.ndim() != 4)
        throw ShapeError("profile_points expects [n,C,H,W] points");
    const std::size_t n = points.extent(0);
    if (labels.size() != n || ball_ids.size() != n)
        throw ValueError("profile_points: label/ball lists must match point count");
    if (n == 0) throw ValueError("profile_points: empty point set");

    RefuseProfile prof;
    prof.points.resize(n);
    const std::size_t k = model.num_classes;
    const std::size_t chunk = 512;
    const std::size_t stride = points.size() / n;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t cnt = std::min(chunk, n - begin);
        Tensor part({cnt, points.extent(1), points.extent(2), points.extent(3)});
        std::copy(points.data() + begin * stride, points.data() + (begin + cnt) * stride,
                  part.data());
        Tensor logits = forward(model, part);
        for (std::size_t i = 0; i < cnt; ++i) {
            const double* row = logits.data() + i * k;
            std::size_t arg = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (row[j] > row[arg]) arg = j;
            RefusePoint& p = prof.points[begin + i];
            p.ball = ball_ids[begin + i];
            p.label = labels[begin + i];
            p.predicted = static_cast<int>(arg);
            p.correct = p.predicted == p.label;
        }
    }

    std::size_t n_balls = 0;
    for (std::size_t b : ball_ids) n_balls = std::max(n_balls, b + 1);
    std::vector<std::size_t> hit(n_balls, 0), tot(n_balls, 0);
    std::size_t hit_all = 0;
    for (const RefusePoint& p : prof.points) {
        ++tot[p.ball];
        if (p.correct) {
            ++hit[p.ball];
            ++hit_all;
        }
    }
    prof.ball_acc.resize(n_balls, 0.0);
    for (std::size_t b = 0; b < n_balls; ++b)
        prof.ball_acc[b] = tot[b] ? 100.0 * static_cast<double>(hit[b]) /
                                        static_cast<double>(tot[b])
                                  : 0.0;
    prof.overall_acc = 100.0 * static_cast<double>(hit_all) / static_cast<double>(n);
    prof.max_ball_acc = 0.0;
    for (double a : prof.ball_acc) prof.max_ball_acc = std::max(prof.max_ball_acc, a);
    return prof;
}

// ---- full study ----

RefuseDomainResult refuse_domain_study(const SequentialModel& model, const AuthKey& key,
                                       const IdxDataset& test,
                                       const RefuseDomainConfig& cfg) {
    if (cfg.fake_keys == 0 || cfg.ball_samples == 0 || cfg.auth_samples == 0)
        throw ValueError("refuse_domain_study: counts must be positive");
    validate_key(key, test.sample_shape());

    const std::size_t k = model.num_classes;
    auto predict_one = [&](const Tensor& img) {
        Tensor logits = forward(model, img);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits[j] > logits[arg]) arg = j;
        return static_cast<int>(arg);
    };

    RefuseDomainResult res;

    // Authentication reference: keyed test samples under the true key.
    auto auth_rows = stratified_sample(test, std::min(cfg.auth_samples, test.size()),
                                       cfg.seed + 7);
    IdxDataset auth_set = gather_dataset(test, auth_rows);
    Tensor auth_keyed = apply_key(auth_set.images, key);
    {
        std::vector<std::size_t> ids(auth_set.size(), 0);
        RefuseProfile ap = profile_points(model, auth_keyed, auth_set.labels, ids);
        res.auth_acc = ap.overall_acc;
    }

    // Fake-key balls.
    std::vector<AuthKey> fakes = gen_fake_keys(key, cfg.fake_keys, cfg.seed + 1);
    auto cand_rows = stratified_sample(
        test, std::min<std::size_t>(test.size(), cfg.fake_keys * 20), cfg.seed + 2);

    const auto [c, h, w] = test.sample_shape();
    Tensor all_points({cfg.fake_keys * cfg.ball_samples, c, h, w});
    std::vector<int> point_labels(all_points.extent(0));
    std::vector<std::size_t> point_balls(all_points.extent(0));
    const std::size_t d = c * h * w;
    std::size_t cursor = 0;

    for (std::size_t fi = 0; fi < cfg.fake_keys; ++fi) {
        // Find a test sample this fake key fails on (usually the first).
        Tensor center;
        int y_c = 0, y_p = 0;
        bool found = false;
        for (std::size_t attempt = 0; attempt < cand_rows.size(); ++attempt) {
            const std::size_t row = cand_rows[(cursor + attempt) % cand_rows.size()];
            Tensor img = single_image(test, row);
            Tensor keyed = apply_key(img, fakes[fi]);
            const int pred = predict_one(keyed);
            if (pred != test.labels[row]) {
                center = keyed;
                y_c = test.labels[row];
                y_p = pred;
                found = true;
                cursor = (cursor + attempt + 1) % cand_rows.size();
                break;
            }
        }
        if (!found) {
            const std::size_t row = cand_rows[cursor % cand_rows.size()];
            center = apply_key(single_image(test, row), fakes[fi]);
            y_c = test.labels[row];
            y_p = (y_c + 1) % static_cast<int>(k);
            cursor = (cursor + 1) % cand_rows.size();
        }

        double radius = cfg.min_ball_radius;
        if (found) {
            RadiusResult rr = refuse_radius(model, center, y_p, y_c, cfg.radius);
            radius = std::max(rr.radius, cfg.min_ball_radius);
        }
        res.ball_radius.push_back(radius);

        Tensor pts = sample_ball(center, radius, cfg.ball_samples, cfg.seed + 100 + fi);
        std::copy(pts.data(), pts.data() + pts.size(),
                  all_points.data() + fi * cfg.ball_samples * d);
        for (std::size_t i = 0; i < cfg.ball_samples; ++i) {
            point_labels[fi * cfg.ball_samples + i] = y_c;
            point_balls[fi * cfg.ball_samples + i] = fi;
        }
    }

    res.refuse = profile_points(model, all_points, point_labels, point_balls);

    // Joint PCA embedding of refuse points and keyed auth samples.
    const std::size_t n_ref = all_points.extent(0);
    const std::size_t n_auth = auth_keyed.extent(0);
    Tensor flat({n_ref + n_auth, d});
    std::copy(all_points.data(), all_points.data() + all_points.size(), flat.data());
    std::copy(auth_keyed.data(), auth_keyed.data() + auth_keyed.size(),
              flat.data() + n_ref * d);
    PcaResult pca = pca_embed(flat, 2, cfg.seed + 3);

    res.embed_coords = pca.coords;
    res.embed_is_refuse.assign(n_ref + n_auth, false);
    res.embed_labels.resize(n_ref + n_auth);
    for (std::size_t i = 0; i < n_ref; ++i) {
        res.embed_is_refuse[i] = true;
        res.embed_labels[i] = point_labels[i];
    }
    for (std::size_t i = 0; i < n_auth; ++i)
        res.embed_labels[n_ref + i] = auth_set.labels[i];

    res.kde = kde_density(res.embed_coords, res.embed_is_refuse, res.embed_labels,
                          cfg.kde_bandwidth, cfg.kde_grid);
    return res;
}

} // namespace authnet
