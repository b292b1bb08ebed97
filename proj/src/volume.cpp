#include "mindreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mindreg {

GridGeometry::GridGeometry(const Eigen::Array3i& shape_, const Eigen::Vector3d& spacing_,
                           const Eigen::Vector3d& origin_)
    : shape(shape_), spacing(spacing_), origin(origin_) {
    if ((shape < 1).any()) throw DataError("grid shape entries must be positive");
    if ((spacing.array() <= 0.0).any() || !spacing.allFinite())
        throw DataError("grid spacing entries must be positive");
    if (!origin.allFinite()) throw DataError("grid origin must be finite");
}

Eigen::Array3i GridGeometry::coordinates(Eigen::Index idx) const {
    const Eigen::Index k = idx % shape[2];
    const Eigen::Index rest = idx / shape[2];
    return {int(rest / shape[1]), int(rest % shape[1]), int(k)};
}

void GridGeometry::require_min_extent(int min_extent, const char* what) const {
    if ((shape < min_extent).any())
        throw DataError(std::string(what) + ": every axis needs at least " + std::to_string(min_extent) +
                        " voxels");
}

void require_same_geometry(const GridGeometry& a, const GridGeometry& b, const char* what) {
    if (!(a == b)) throw DataError(std::string(what) + ": geometry mismatch");
}

namespace {

struct AxisInterp {
    Eigen::Index i0, i1;
    double f;
    double dfdx;
};

inline AxisInterp axis_interp(double x, int n) {
    if (n == 1) return {0, 0, 0.0, 0.0};
    double dfdx = 1.0;
    if (x <= 0.0) {
        if (x < 0.0) dfdx = 0.0;
        x = 0.0;
    } else if (x >= n - 1) {
        if (x > n - 1) dfdx = 0.0;
        x = n - 1;
    }
    Eigen::Index i0 = std::min<Eigen::Index>(Eigen::Index(x), n - 2);
    return {i0, i0 + 1, x - double(i0), dfdx};
}

inline void check_point(const Eigen::Vector3d& p) {
    if (!p.allFinite()) throw DataError("non-finite coordinate");
}

} // namespace

TrilinearStencil trilinear_stencil(const GridGeometry& g, const Eigen::Vector3d& p) {
    check_point(p);
    const AxisInterp a = axis_interp(p[0], g.shape[0]);
    const AxisInterp b = axis_interp(p[1], g.shape[1]);
    const AxisInterp c = axis_interp(p[2], g.shape[2]);
    const Eigen::Index s1 = g.shape[1], s2 = g.shape[2];

    TrilinearStencil st;
    int n = 0;
    for (int di = 0; di < 2; ++di) {
        const double wa = di ? a.f : 1.0 - a.f;
        const double da = di ? a.dfdx : -a.dfdx;
        const Eigen::Index ii = di ? a.i1 : a.i0;
        for (int dj = 0; dj < 2; ++dj) {
            const double wb = dj ? b.f : 1.0 - b.f;
            const double db = dj ? b.dfdx : -b.dfdx;
            const Eigen::Index jj = dj ? b.i1 : b.i0;
            for (int dk = 0; dk < 2; ++dk) {
                const double wc = dk ? c.f : 1.0 - c.f;
                const double dc = dk ? c.dfdx : -c.dfdx;
                const Eigen::Index kk = dk ? c.i1 : c.i0;
                st.index[n] = (ii * s1 + jj) * s2 + kk;
                st.weight[n] = wa * wb * wc;
                st.dweight[n] = Eigen::Vector3d(da * wb * wc, wa * db * wc, wa * wb * dc);
                ++n;
            }
        }
    }
    return st;
}

double sample(const ScalarVolume& vol, const Eigen::Vector3d& p) {
    check_point(p);
    const auto& g = vol.geometry;
    const AxisInterp a = axis_interp(p[0], g.shape[0]);
    const AxisInterp b = axis_interp(p[1], g.shape[1]);
    const AxisInterp c = axis_interp(p[2], g.shape[2]);
    const Eigen::Index s1 = g.shape[1], s2 = g.shape[2];
    const double* d = vol.data.data();
    auto at = [&](Eigen::Index i, Eigen::Index j, Eigen::Index k) { return d[(i * s1 + j) * s2 + k]; };
    const double c00 = at(a.i0, b.i0, c.i0) * (1 - c.f) + at(a.i0, b.i0, c.i1) * c.f;
    const double c01 = at(a.i0, b.i1, c.i0) * (1 - c.f) + at(a.i0, b.i1, c.i1) * c.f;
    const double c10 = at(a.i1, b.i0, c.i0) * (1 - c.f) + at(a.i1, b.i0, c.i1) * c.f;
    const double c11 = at(a.i1, b.i1, c.i0) * (1 - c.f) + at(a.i1, b.i1, c.i1) * c.f;
    const double c0 = c00 * (1 - b.f) + c01 * b.f;
    const double c1 = c10 * (1 - b.f) + c11 * b.f;
    return c0 * (1 - a.f) + c1 * a.f;
}

Eigen::Vector3d sample(const VectorField& field, const Eigen::Vector3d& p) {
    const TrilinearStencil st = trilinear_stencil(field.geometry, p);
    Eigen::Vector3d out = Eigen::Vector3d::Zero();
    for (int n = 0; n < 8; ++n) out += st.weight[n] * field.data.col(st.index[n]);
    return out;
}

double sample_with_gradient(const ScalarVolume& vol, const Eigen::Vector3d& p, Eigen::Vector3d& gradient) {
    const TrilinearStencil st = trilinear_stencil(vol.geometry, p);
    double value = 0.0;
    gradient.setZero();
    for (int n = 0; n < 8; ++n) {
        const double v = vol.data[st.index[n]];
        value += st.weight[n] * v;
        gradient += st.dweight[n] * v;
    }
    return value;
}

Eigen::Vector3d sample_with_jacobian(const VectorField& field, const Eigen::Vector3d& p, Eigen::Matrix3d& jacobian) {
    const TrilinearStencil st = trilinear_stencil(field.geometry, p);
    Eigen::Vector3d value = Eigen::Vector3d::Zero();
    jacobian.setZero();
    for (int n = 0; n < 8; ++n) {
        const auto v = field.data.col(st.index[n]);
        value += st.weight[n] * v;
        jacobian += v * st.dweight[n].transpose();
    }
    return value;
}

std::vector<double> trilinear_sample(const ScalarVolume& vol, std::span<const Eigen::Vector3d> points) {
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(sample(vol, p));
    return out;
}

void filter_axis(std::span<const double> in, std::span<double> out, const Eigen::Array3i& shape, int axis,
                 std::span<const double> kernel) {
    const int radius = int(kernel.size()) / 2;
    const int n = shape[axis];
    Eigen::Index stride = 1;
    for (int a = 2; a > axis; --a) stride *= shape[a];
    const Eigen::Index total = Eigen::Index(shape[0]) * shape[1] * shape[2];
    const Eigen::Index outer_count = total / (Eigen::Index(n) * stride);

    double kernel_total = 0.0;
    for (double w : kernel) kernel_total += w;

    // Per-position in-bounds weight ratio.
    std::vector<double> scale(n);
    for (int x = 0; x < n; ++x) {
        double inb = 0.0;
        for (int t = -radius; t <= radius; ++t)
            if (x + t >= 0 && x + t < n) inb += kernel[t + radius];
        scale[x] = kernel_total / inb;
    }

    for (Eigen::Index o = 0; o < outer_count; ++o) {
        for (Eigen::Index s = 0; s < stride; ++s) {
            const Eigen::Index base = o * Eigen::Index(n) * stride + s;
            for (int x = 0; x < n; ++x) {
                const int lo = std::max(-radius, -x);
                const int hi = std::min(radius, n - 1 - x);
                double acc = 0.0;
                for (int t = lo; t <= hi; ++t) acc += kernel[t + radius] * in[base + (x + t) * stride];
                out[base + x * stride] = acc * scale[x];
            }
        }
    }
}

ScalarVolume separable_filter(const ScalarVolume& vol, std::span<const double> kernel) {
    ScalarVolume a = vol;
    ScalarVolume b(vol.geometry);
    for (int axis = 0; axis < 3; ++axis) {
        filter_axis({a.data.data(), size_t(a.size())}, {b.data.data(), size_t(b.size())}, vol.geometry.shape,
                    axis, kernel);
        std::swap(a.data, b.data);
    }
    return a;
}

Eigen::ArrayXd box_sum(const Eigen::ArrayXd& values, const Eigen::Array3i& shape, int radius) {
    Eigen::ArrayXd a = values;
    Eigen::ArrayXd b(values.size());
    std::vector<double> prefix;
    for (int axis = 0; axis < 3; ++axis) {
        const int n = shape[axis];
        Eigen::Index stride = 1;
        for (int d = 2; d > axis; --d) stride *= shape[d];
        const Eigen::Index outer_count = values.size() / (Eigen::Index(n) * stride);
        // Prefix sums over contiguous slabs of `stride` values, in a fixed order.
        prefix.assign(size_t(n + 1) * stride, 0.0);
        for (Eigen::Index o = 0; o < outer_count; ++o) {
            const Eigen::Index base = o * Eigen::Index(n) * stride;
            for (int x = 0; x < n; ++x)
                Eigen::Map<Eigen::ArrayXd>(prefix.data() + (x + 1) * stride, stride) =
                    Eigen::Map<const Eigen::ArrayXd>(prefix.data() + x * stride, stride) +
                    a.segment(base + x * stride, stride);
            for (int x = 0; x < n; ++x) {
                const int lo = std::max(0, x - radius);
                const int hi = std::min(n - 1, x + radius);
                b.segment(base + x * stride, stride) =
                    Eigen::Map<const Eigen::ArrayXd>(prefix.data() + (hi + 1) * stride, stride) -
                    Eigen::Map<const Eigen::ArrayXd>(prefix.data() + lo * stride, stride);
            }
        }
        std::swap(a, b);
    }
    return a;
}

Eigen::ArrayXd box_count(const Eigen::Array3i& shape, int radius) {
    std::array<std::vector<double>, 3> counts;
    for (int a = 0; a < 3; ++a) {
        counts[a].resize(shape[a]);
        for (int x = 0; x < shape[a]; ++x)
            counts[a][x] = std::min(shape[a] - 1, x + radius) - std::max(0, x - radius) + 1;
    }
    Eigen::ArrayXd out(Eigen::Index(shape[0]) * shape[1] * shape[2]);
    Eigen::Index idx = 0;
    for (int i = 0; i < shape[0]; ++i)
        for (int j = 0; j < shape[1]; ++j)
            for (int k = 0; k < shape[2]; ++k) out[idx++] = counts[0][i] * counts[1][j] * counts[2][k];
    return out;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) throw DataError("gaussian sigma must be positive");
    const int radius = int(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        k[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
        sum += k[t + radius];
    }
    for (double& w : k) w /= sum;
    return k;
}

ScalarVolume gaussian_blur(const ScalarVolume& vol, double sigma_voxels) {
    const auto kernel = gaussian_kernel(sigma_voxels);
    ScalarVolume out = separable_filter(vol, kernel);
    // Renormalized convex weights cannot leave the input range; clip round-off.
    if (vol.size() > 0) out.data = out.data.max(vol.data.minCoeff()).min(vol.data.maxCoeff());
    return out;
}

GridGeometry downsampled_geometry(const GridGeometry& g) {
    Eigen::Array3i shape = (g.shape + 1) / 2;
    return GridGeometry(shape, g.spacing * 2.0, g.origin);
}

ScalarVolume downsample_by_two(const ScalarVolume& vol) {
    vol.geometry.require_min_extent(8, "downsample_by_two");
    const ScalarVolume blurred = gaussian_blur(vol, 1.0);
    const GridGeometry g = downsampled_geometry(vol.geometry);
    ScalarVolume out(g);
    for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int k = 0; k < g.shape[2]; ++k) out(i, j, k) = blurred(2 * i, 2 * j, 2 * k);
    return out;
}

MaskVolume downsample_mask(const MaskVolume& mask) {
    const GridGeometry g = downsampled_geometry(mask.geometry);
    MaskVolume out(g);
    for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int k = 0; k < g.shape[2]; ++k) out(i, j, k) = mask(2 * i, 2 * j, 2 * k);
    return out;
}

double quantile(std::span<const double> values, double q) {
    if (values.empty()) throw DataError("quantile of empty set");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double pos = q * double(v.size() - 1);
    const size_t lo = size_t(std::floor(pos));
    const size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

namespace {

template <bool Dilate>
MaskVolume morph(const MaskVolume& mask) {
    const auto& g = mask.geometry;
    MaskVolume out(g);
    static constexpr int offsets[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int k = 0; k < g.shape[2]; ++k) {
                bool v = mask(i, j, k);
                for (const auto& o : offsets) {
                    const int a = i + o[0], b = j + o[1], c = k + o[2];
                    if (a < 0 || b < 0 || c < 0 || a >= g.shape[0] || b >= g.shape[1] || c >= g.shape[2]) continue;
                    if constexpr (Dilate) v = v || mask(a, b, c);
                    else v = v && mask(a, b, c);
                }
                out(i, j, k) = v;
            }
    return out;
}

} // namespace

MaskVolume dilate(const MaskVolume& mask) { return morph<true>(mask); }
MaskVolume erode(const MaskVolume& mask) { return morph<false>(mask); }
MaskVolume closing(const MaskVolume& mask) { return erode(dilate(mask)); }

MaskVolume foreground_mask(const ScalarVolume& vol, double q) {
    if (!(q > 0.0 && q < 1.0)) throw DataError("foreground quantile must lie in (0, 1)");
    if (vol.size() == 0 || vol.data.maxCoeff() == vol.data.minCoeff())
        throw DataError("degenerate intensity distribution");
    const double threshold = quantile({vol.data.data(), size_t(vol.size())}, q);
    MaskVolume raw(vol.geometry);
    raw.data = vol.data > threshold;
    return closing(raw);
}

} // namespace mindreg
