#include "mindreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace mindreg {

void PhantomSpec::validate() const {
    if ((shape < 8).any()) throw DataError("phantom shape must be at least 8 per axis");
    if (blob_count < 1) throw DataError("blob_count must be at least 1");
    if (control_spacing < 1) throw DataError("control spacing must be positive");
    if (!(deformation_max >= 0.0)) throw DataError("deformation_max must be nonnegative");
    if (deformation_max > kBoundFactor * control_spacing)
        throw DataError("deformation_max exceeds the bound of the ground-truth control spacing");
    if (contrast.mode == Contrast::Mode::gamma && !(contrast.gamma > 0.0)) throw DataError("gamma must be positive");
    if (!(noise_sigma >= 0.0)) throw DataError("noise sigma must be nonnegative");
}

namespace {

constexpr double kCore = 0.5;     // normalized squared radius of the flat core
constexpr double kSupport = 1.5;  // and of the compact support

// 1 inside the core, 0 outside the support, C1 cubic ramp between.
double plateau(double q) {
    if (q <= kCore) return 1.0;
    if (q >= kSupport) return 0.0;
    const double t = (q - kCore) / (kSupport - kCore);
    return 1.0 - t * t * (3.0 - 2.0 * t);
}

} // namespace

Phantom make_phantom(const PhantomSpec& spec) {
    spec.validate();
    const GridGeometry g(spec.shape);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const Eigen::Array3d n = spec.shape.cast<double>();

    std::vector<int> order(spec.blob_count);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    struct Blob {
        Eigen::Array3d center, radius;
        double amplitude;
    };
    std::vector<Blob> blobs;
    for (int b = 0; b < spec.blob_count; ++b) {
        Blob blob;
        blob.center = n * (0.25 + 0.5 * Eigen::Array3d(u01(rng), u01(rng), u01(rng)));
        blob.radius = n * (0.10 + 0.10 * Eigen::Array3d(u01(rng), u01(rng), u01(rng)));
        blob.amplitude = 0.25 + 0.75 * double(order[b] + 1) / spec.blob_count;
        blobs.push_back(blob);
    }

    Phantom out{ScalarVolume(g), LabelVolume(g), {}};
    for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int k = 0; k < g.shape[2]; ++k) {
                double sum = 0.0, best = 0.0;
                int label = 0;
                for (int b = 0; b < spec.blob_count; ++b) {
                    const double q = ((Eigen::Array3d(i, j, k) - blobs[b].center) / blobs[b].radius).square().sum();
                    if (q >= kSupport) continue;
                    const double v = blobs[b].amplitude * plateau(q);
                    sum += v;
                    if (v > best) {
                        best = v;
                        label = b + 1;
                    }
                }
                out.image(i, j, k) = sum;
                out.labels(i, j, k) = label;
            }
    const double peak = out.image.data.maxCoeff();
    if (peak > 0.0) out.image.data /= peak;
    for (int b = 0; b < spec.blob_count; ++b) {
        out.landmarks.points.push_back(blobs[b].center.matrix());
        out.landmarks.identifiers.push_back("blob" + std::to_string(b + 1));
    }
    return out;
}

BSplineField random_diffeomorphism(const GridGeometry& geometry, double max_displacement, int control_spacing,
                                   std::uint64_t seed) {
    BSplineField f = BSplineField::zero(geometry, control_spacing);
    const double m = std::min(max_displacement, f.bound());
    if (!(m > 0.0)) return f;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-m, m);
    for (Eigen::Index e = 0; e < f.coefficients.size(); ++e) f.coefficients.data()[e] = dist(rng);
    return f;
}

BSplineField random_smooth_diffeomorphism(const GridGeometry& geometry, double max_displacement,
                                          int control_spacing, std::uint64_t seed, int correlation) {
    if (correlation < 1) throw DataError("correlation must be positive");
    BSplineField f = BSplineField::zero(geometry, control_spacing);
    const double m = std::min(max_displacement, f.bound());
    if (!(m > 0.0)) return f;
    const Eigen::Array3i cs = f.control_shape;
    const GridGeometry lattice_geometry((cs - 1) / correlation + 2);
    VectorField lattice(lattice_geometry);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-m, m), magnitude(0.5 * m, 0.9 * m);
    std::bernoulli_distribution sign;
    Eigen::Vector3d shared;
    for (int a = 0; a < 3; ++a) shared[a] = sign(rng) ? magnitude(rng) : -magnitude(rng);
    for (Eigen::Index v = 0; v < lattice.size(); ++v)
        for (int a = 0; a < 3; ++a) lattice.data(a, v) = 0.6 * shared[a] + 0.4 * dist(rng);
    for (int a = 0; a < cs[0]; ++a)
        for (int b = 0; b < cs[1]; ++b)
            for (int c = 0; c < cs[2]; ++c) {
                const Eigen::Vector3d p = Eigen::Vector3d(a, b, c) / double(correlation);
                f.coefficients.col((Eigen::Index(a) * cs[1] + b) * cs[2] + c) = sample(lattice, p);
            }
    return f;
}

namespace {

ScalarVolume normalized(const ScalarVolume& img) {
    const double lo = img.data.minCoeff(), hi = img.data.maxCoeff();
    if (!(hi > lo)) throw DataError("contrast_remap: constant image");
    ScalarVolume out = img;
    out.data = (img.data - lo) / (hi - lo);
    return out;
}

} // namespace

ScalarVolume contrast_remap(const ScalarVolume& img, const Contrast& contrast) {
    using Mode = Contrast::Mode;
    if (contrast.mode == Mode::gamma && !(contrast.gamma > 0.0)) throw DataError("gamma must be positive");
    ScalarVolume out = normalized(img);
    switch (contrast.mode) {
    case Mode::identity:
        break;
    case Mode::inverted:
        out.data = 1.0 - out.data;
        break;
    case Mode::gamma:
        out.data = out.data.pow(contrast.gamma);
        break;
    case Mode::monotone_lut: {
        constexpr int kKnots = 8;
        std::mt19937_64 rng(contrast.lut_seed);
        std::uniform_real_distribution<double> step(0.2, 1.0);
        std::array<double, kKnots> y{};
        for (int i = 1; i < kKnots; ++i) y[i] = y[i - 1] + step(rng);
        for (double& v : y) v /= y.back();
        for (Eigen::Index x = 0; x < out.size(); ++x) {
            const double t = out.data[x] * (kKnots - 1);
            const int seg = std::min(int(t), kKnots - 2);
            const double f = t - seg;
            out.data[x] = (1.0 - f) * y[seg] + f * y[seg + 1];
        }
        break;
    }
    }
    return out;
}

ScalarVolume augment(const ScalarVolume& img, const std::vector<AugmentOp>& ops, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ScalarVolume out = img;
    for (const auto& op : ops) {
        switch (op.kind) {
        case AugmentOp::Kind::noise: {
            if (!(op.value >= 0.0)) throw DataError("noise sigma must be nonnegative");
            std::normal_distribution<double> n01(0.0, 1.0);
            for (Eigen::Index x = 0; x < out.size(); ++x) out.data[x] += op.value * n01(rng);
            break;
        }
        case AugmentOp::Kind::blur:
            out = gaussian_blur(out, op.value);
            break;
        case AugmentOp::Kind::sign_inversion: {
            const double mean = out.data.mean();
            out.data = 2.0 * mean - out.data;
            break;
        }
        case AugmentOp::Kind::gamma: {
            if (!(op.value > 0.0)) throw DataError("gamma must be positive");
            const double lo = out.data.minCoeff(), hi = out.data.maxCoeff();
            if (hi > lo) out.data = lo + (hi - lo) * ((out.data - lo) / (hi - lo)).pow(op.value);
            break;
        }
        }
    }
    return out;
}

BenchCase make_case(const PhantomSpec& spec) {
    spec.validate();
    const Phantom ph = make_phantom(spec);
    const GridGeometry& g = ph.image.geometry;
    BenchCase c;
    c.spec = spec;
    c.fixed = ph.image;
    c.gt = random_smooth_diffeomorphism(g, spec.deformation_max, spec.control_spacing, spec.seed ^ 0x9e3779b97f4a7c15ULL);
    c.gt_field = bspline_to_dense(c.gt);

    const ScalarVolume warped = apply_warp(ph.image, c.gt_field);
    c.moving = spec.contrast.mode == Contrast::Mode::identity ? warped : contrast_remap(warped, spec.contrast);
    if (spec.noise_sigma > 0.0)
        c.moving = augment(c.moving, {{AugmentOp::Kind::noise, spec.noise_sigma}}, spec.seed + 1);

    c.labels_fixed = ph.labels;
    c.labels_moving = apply_warp_nearest(ph.labels, c.gt_field);
    c.landmarks_fixed = ph.landmarks;
    c.landmarks_moving.identifiers = ph.landmarks.identifiers;
    for (const auto& p : ph.landmarks.points) c.landmarks_moving.points.push_back(invert_point(c.gt, p));
    c.mask = foreground_mask(c.fixed);
    return c;
}

} // namespace mindreg
