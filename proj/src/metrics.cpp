#include "mindreg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace mindreg {

void LandmarkSet::validate(const GridGeometry& geometry) const {
    if (points.size() != identifiers.size()) throw DataError("landmark points and identifiers differ in length");
    const Eigen::Array3d upper = (geometry.shape - 1).cast<double>();
    for (const auto& p : points)
        if (!p.allFinite() || (p.array() < 0.0).any() || (p.array() > upper).any())
            throw DataError("landmark outside the image domain");
}

DiceResult dice(const LabelVolume& a, const LabelVolume& b) {
    require_same_geometry(a.geometry, b.geometry, "dice");
    std::map<int, std::array<Eigen::Index, 3>> counts;  // |A|, |B|, |A and B|
    for (Eigen::Index x = 0; x < a.size(); ++x) {
        const int la = a.data[x], lb = b.data[x];
        if (la != 0) ++counts[la][0];
        if (lb != 0) ++counts[lb][1];
        if (la != 0 && la == lb) ++counts[la][2];
    }
    DiceResult out;
    double sum = 0.0;
    for (const auto& [label, c] : counts) {
        const double d = 2.0 * double(c[2]) / double(c[0] + c[1]);
        out.per_label[label] = d;
        sum += d;
    }
    if (!out.per_label.empty()) out.mean = sum / double(out.per_label.size());
    return out;
}

MaskVolume label_mask(const LabelVolume& labels, int label) {
    MaskVolume m(labels.geometry);
    m.data = labels.data == label;
    return m;
}

MaskVolume boundary(const MaskVolume& mask) {
    const auto& n = mask.geometry.shape;
    MaskVolume out(mask.geometry, false);
    for (int i = 0; i < n[0]; ++i)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                if (!mask(i, j, k)) continue;
                const bool edge = i == 0 || j == 0 || k == 0 || i == n[0] - 1 || j == n[1] - 1 || k == n[2] - 1;
                out(i, j, k) = edge || !mask(i - 1, j, k) || !mask(i + 1, j, k) || !mask(i, j - 1, k) ||
                               !mask(i, j + 1, k) || !mask(i, j, k - 1) || !mask(i, j, k + 1);
            }
    return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas h^2 (q - p)^2 + f(p) over finite samples f(p).
void squared_distance_1d(std::vector<double>& f, double h, std::vector<int>& v, std::vector<double>& z,
                         std::vector<double>& out) {
    const int n = int(f.size());
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        const double xq = q * h;
        double s = -kInf;
        while (k >= 0) {
            const double xv = v[k] * h;
            s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -kInf : s;
    }
    if (k < 0) {
        std::fill(out.begin(), out.end(), kInf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        const double xq = q * h;
        while (j < k && z[j + 1] < xq) ++j;
        const double d = xq - v[j] * h;
        out[q] = d * d + f[v[j]];
    }
}

} // namespace

ScalarVolume distance_transform(const MaskVolume& features) {
    const GridGeometry& g = features.geometry;
    const auto& n = g.shape;
    ScalarVolume d(g);
    for (Eigen::Index x = 0; x < d.size(); ++x) d.data[x] = features.data[x] ? 0.0 : kInf;
    const Eigen::Index strides[3] = {Eigen::Index(n[1]) * n[2], n[2], 1};
    for (int axis = 0; axis < 3; ++axis) {
        const int len = n[axis];
        std::vector<double> f(len), out(len), z(len);
        std::vector<int> v(len);
        const int o1 = (axis + 1) % 3, o2 = (axis + 2) % 3;
        for (int a = 0; a < n[o1]; ++a)
            for (int b = 0; b < n[o2]; ++b) {
                const Eigen::Index base = a * strides[o1] + b * strides[o2];
                for (int q = 0; q < len; ++q) f[q] = d.data[base + q * strides[axis]];
                squared_distance_1d(f, g.spacing[axis], v, z, out);
                for (int q = 0; q < len; ++q) d.data[base + q * strides[axis]] = out[q];
            }
    }
    d.data = d.data.sqrt();
    return d;
}

namespace {

double directed_hd95(const MaskVolume& from_boundary, const ScalarVolume& to_distance) {
    std::vector<double> values;
    for (Eigen::Index x = 0; x < from_boundary.size(); ++x)
        if (from_boundary.data[x]) values.push_back(to_distance.data[x]);
    return quantile(values, 0.95);
}

} // namespace

double hd95(const MaskVolume& a, const MaskVolume& b) {
    require_same_geometry(a.geometry, b.geometry, "hd95");
    if (!a.data.any() || !b.data.any()) throw DataError("hd95: empty label");
    const MaskVolume ba = boundary(a), bb = boundary(b);
    return std::max(directed_hd95(ba, distance_transform(bb)), directed_hd95(bb, distance_transform(ba)));
}

double hd95(const LabelVolume& a, const LabelVolume& b, int label) {
    require_same_geometry(a.geometry, b.geometry, "hd95");
    return hd95(label_mask(a, label), label_mask(b, label));
}

TreResult tre(const LandmarkSet& fixed_lm, const LandmarkSet& moving_lm, const VectorField& u,
              const Eigen::Vector3d& spacing) {
    if (fixed_lm.size() != moving_lm.size() || fixed_lm.identifiers != moving_lm.identifiers)
        throw DataError("tre: landmark identifiers do not match");
    if (fixed_lm.points.size() != fixed_lm.identifiers.size() || moving_lm.points.size() != moving_lm.identifiers.size())
        throw DataError("tre: landmark points and identifiers differ in length");
    TreResult out;
    double sum = 0.0;
    for (size_t i = 0; i < fixed_lm.size(); ++i) {
        const Eigen::Vector3d p = fixed_lm.points[i] + sample(u, fixed_lm.points[i]);
        const double d = (p - moving_lm.points[i]).cwiseProduct(spacing).norm();
        out.per_landmark.push_back(d);
        sum += d;
    }
    if (!out.per_landmark.empty()) out.mean = sum / double(out.per_landmark.size());
    return out;
}

double ndv_metric(const VectorField& u) { return non_diffeomorphic_volume(u); }

} // namespace mindreg
