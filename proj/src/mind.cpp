#include "mindreg/mind.hpp"

#include <algorithm>
#include <cmath>

namespace mindreg {

std::vector<Eigen::Vector3i> six_neighborhood() {
    return {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
}

int MindParams::effective_patch_radius() const {
    return patch_radius > 0 ? patch_radius : int(std::ceil(3.0 * sigma));
}

void MindParams::validate() const {
    if (!(sigma > 0.0)) throw DataError("MIND sigma must be positive");
    if (offsets.empty()) throw DataError("MIND offsets must be nonempty");
    for (size_t a = 0; a < offsets.size(); ++a)
        for (size_t b = a + 1; b < offsets.size(); ++b)
            if (offsets[a] == offsets[b]) throw DataError("MIND offsets must be distinct");
    if (patch_radius < 0) throw DataError("MIND patch radius must be >= 1");
    if (!(variance_floor_rel > 0.0)) throw DataError("MIND variance floor must be positive");
}

ScalarVolume patch_ssd(const ScalarVolume& img, const Eigen::Vector3i& offset, const MindParams& params) {
    params.validate();
    const auto& g = img.geometry;
    if ((offset.array().abs() > g.shape).any()) throw DataError("patch_ssd offset exceeds the grid");

    ScalarVolume sq(g);
    for (int i = 0; i < g.shape[0]; ++i) {
        const int si = std::clamp(i + offset[0], 0, g.shape[0] - 1);
        for (int j = 0; j < g.shape[1]; ++j) {
            const int sj = std::clamp(j + offset[1], 0, g.shape[1] - 1);
            for (int k = 0; k < g.shape[2]; ++k) {
                const int sk = std::clamp(k + offset[2], 0, g.shape[2] - 1);
                const double d = img(i, j, k) - img(si, sj, sk);
                sq(i, j, k) = d * d;
            }
        }
    }

    const int radius = params.effective_patch_radius();
    std::vector<double> kernel(2 * radius + 1);
    for (int t = -radius; t <= radius; ++t)
        kernel[t + radius] = std::exp(-double(t * t) / (params.sigma * params.sigma));
    return separable_filter(sq, kernel);
}

LocalVariance local_variance(std::span<const ScalarVolume> d, double variance_floor_rel) {
    if (d.size() != 6) throw DataError("local_variance needs exactly six distance volumes");
    for (const auto& v : d) require_same_geometry(v.geometry, d[0].geometry, "local_variance");

    LocalVariance out;
    out.raw = ScalarVolume(d[0].geometry);
    for (const auto& v : d) out.raw.data += v.data;
    out.raw.data /= 6.0;

    const double global_mean = out.raw.data.mean();
    out.floor = global_mean > 0.0 ? variance_floor_rel * global_mean : 1e-12;
    out.floored = out.raw;
    out.floored.data = out.raw.data.max(out.floor);
    return out;
}

namespace {

LocalVariance variance_of(const ScalarVolume& img, const MindParams& params,
                          std::vector<ScalarVolume>* six_out = nullptr) {
    std::vector<ScalarVolume> six;
    for (const auto& n : six_neighborhood()) six.push_back(patch_ssd(img, n, params));
    LocalVariance v = local_variance(six, params.variance_floor_rel);
    if (six_out) *six_out = std::move(six);
    return v;
}

} // namespace

MindVolume mind_transform(const ScalarVolume& img, const MindParams& params) {
    params.validate();
    if (!img.data.allFinite()) throw DataError("mind_transform: non-finite image");

    std::vector<ScalarVolume> six;
    const LocalVariance var = variance_of(img, params, &six);
    const auto neighbors = six_neighborhood();

    MindVolume out;
    out.geometry = img.geometry;
    out.channels.reserve(params.offsets.size());
    for (const auto& r : params.offsets) {
        auto it = std::find(neighbors.begin(), neighbors.end(), r);
        ScalarVolume d = it != neighbors.end() ? six[size_t(it - neighbors.begin())] : patch_ssd(img, r, params);
        d.data = (-d.data / var.floored.data).exp();
        out.channels.push_back(std::move(d));
    }
    return out;
}

double mind_distance(const MindVolume& a, const MindVolume& b, const MaskVolume& mask) {
    require_same_geometry(a.geometry, b.geometry, "mind_distance");
    require_same_geometry(a.geometry, mask.geometry, "mind_distance mask");
    if (a.channel_count() != b.channel_count()) throw DataError("mind_distance: channel count mismatch");
    const Eigen::Index count = mask.data.count();
    if (count == 0) throw DataError("mind_distance: empty mask");

    const Eigen::ArrayXd m = mask.data.cast<double>();
    double total = 0.0;
    for (int c = 0; c < a.channel_count(); ++c)
        total += ((a.channels[c].data - b.channels[c].data).square() * m).sum();
    return total / (double(count) * a.channel_count());
}

MaskVolume mind_floor_inactive(const ScalarVolume& img, const MindParams& params) {
    const LocalVariance var = variance_of(img, params);
    MaskVolume out(img.geometry);
    out.data = var.raw.data > var.floor;
    return out;
}

} // namespace mindreg
