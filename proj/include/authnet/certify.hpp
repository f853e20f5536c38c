#pragma once

#include <cstdint>
#include <vector>

#include "authnet/dataset.hpp"
#include "authnet/model.hpp"
#include "authnet/pipeline.hpp"

namespace authnet {

// Output bounds for a single input under an L-inf perturbation ball.
struct BoundPair {
    Tensor lower; // [K]
    Tensor upper; // [K]
};

// Per-layer input intervals recorded during interval propagation; entry i
// bounds the tensor fed to layer i (used as pre-activation bounds for ReLU).
struct IntervalTrace {
    std::vector<Tensor> lower, upper;
};

// Interval bound propagation over ||x' - x0||_inf <= eps. x0 is a single
// sample [C,H,W] or [1,C,H,W]. Exact for conv/avgpool/linear intervals,
// element-wise for ReLU.
BoundPair interval_bounds(const SequentialModel& model, const Tensor& x0, double eps,
                          IntervalTrace* trace = nullptr);

// Backward linear relaxation (unstable ReLUs get the chord upper line and an
// adaptive 0/1 lower slope), evaluated over the same ball and intersected
// element-wise with the interval bounds so it is never looser.
BoundPair crown_bounds(const SequentialModel& model, const Tensor& x0, double eps);

// ---- certified radii ----

struct RadiusParams {
    double eps_hi = 0.5;
    double tol = 1e-5;
    std::size_t max_iter = 40;
};

struct RadiusResult {
    double radius = 0.0;
    std::size_t iterations = 0;
    double lo = 0.0, hi = 0.0; // final search bracket
    bool misclassified = false; // auth: prediction was already wrong at eps=0
    bool crossed = true;        // refuse: a crossing exists within eps_hi
};

// Largest eps (within [0, eps_hi], tolerance tol) at which the true class is
// still certified: L_yc >= max_{i != yc} U_i under crown_bounds.
RadiusResult auth_radius(const SequentialModel& model, const Tensor& x0, int y_c,
                         const RadiusParams& p = {});

// Smallest eps at which the bound gap between the (wrong) predicted class y_p
// and the true class y_c could close: U_yc >= L_yp. Errors if y_p == y_c.
RadiusResult refuse_radius(const SequentialModel& model, const Tensor& x0, int y_p,
                           int y_c, const RadiusParams& p = {});

// ---- refuse-domain material ----

// Random keys drawn uniformly inside the same box as `like` (bounds, mask
// mode, bit set and gamma are copied).
std::vector<AuthKey> gen_fake_keys(const AuthKey& like, std::size_t count,
                                   std::uint64_t seed);

// n points uniform in the L-inf ball around center [C,H,W] (or [1,C,H,W]),
// clamped to [0,1]. Returns [n,C,H,W].
Tensor sample_ball(const Tensor& center, double eps, std::size_t n, std::uint64_t seed);

// ---- embedding + density ----

struct PcaResult {
    Tensor coords;                  // [n, dims]
    std::vector<double> variances;  // captured variance per component
    bool converged = true;
};

// PCA via power iteration with deflation on [n, d] row vectors.
PcaResult pca_embed(const Tensor& points, std::size_t dims, std::uint64_t seed);

struct KdeResult {
    std::size_t grid = 0;               // grid x grid cells
    double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    std::vector<double> refuse_density; // row-major [grid*grid], sums to 1
    std::vector<double> auth_density;
    double occupancy = 0.0;             // cells where refuse > auth
    std::vector<double> occupancy_class;
    double bandwidth = 0.0;             // the bandwidth actually used
};

// Gaussian KDE of two point groups on a shared grid over their joint
// bounding box. bandwidth <= 0 picks Scott's rule. Errors if either group is
// empty or coords are not [n,2].
KdeResult kde_density(const Tensor& coords, const std::vector<bool>& is_refuse,
                      const std::vector<int>& labels, double bandwidth,
                      std::size_t grid);

// ---- refuse-ball accuracy profile ----

struct RefusePoint {
    std::size_t ball = 0; // index of the source fake key / ball
    int label = 0;
    int predicted = 0;
    bool correct = false;
};

struct RefuseProfile {
    std::vector<RefusePoint> points;
    std::vector<double> ball_acc; // percent, per ball
    double overall_acc = 0.0;
    double max_ball_acc = 0.0;
};

// Classifies the given points and aggregates accuracy per ball.
RefuseProfile profile_points(const SequentialModel& model, const Tensor& points,
                             const std::vector<int>& labels,
                             const std::vector<std::size_t>& ball_ids);

// ---- full refuse-domain study ----

struct RefuseDomainConfig {
    std::size_t fake_keys = 20;
    std::size_t ball_samples = 100;
    std::size_t auth_samples = 100;
    RadiusParams radius;
    double min_ball_radius = 0.02; // floor when the certified crossing is tiny
    double kde_bandwidth = 0.0;    // <= 0: Scott's rule
    std::size_t kde_grid = 60;
    std::uint64_t seed = 1;
};

struct RefuseDomainResult {
    RefuseProfile refuse;            // fake-key ball points
    double auth_acc = 0.0;           // keyed test samples, true key
    std::vector<double> ball_radius; // per fake key
    KdeResult kde;
    Tensor embed_coords;             // [n,2] PCA embedding of all points
    std::vector<bool> embed_is_refuse;
    std::vector<int> embed_labels;
};

RefuseDomainResult refuse_domain_study(const SequentialModel& model, const AuthKey& key,
                                       const IdxDataset& test,
                                       const RefuseDomainConfig& cfg);

} // namespace authnet
