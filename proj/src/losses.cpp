#include "mindreg/losses.hpp"

#include <cmath>

namespace mindreg {

void LossWeights::validate() const {
    if (similarity < 0 || diffusion < 0 || ndv < 0 || group_consistency < 0)
        throw DataError("loss weights must be nonnegative");
    if (!(intermediate_stage_factor >= 0.0 && intermediate_stage_factor <= 1.0))
        throw DataError("intermediate stage factor must lie in [0, 1]");
}

double LossReport::current_stage_loss() const {
    return -weights.similarity * (forward.similarity + backward.similarity) +
           weights.diffusion * (forward.diffusion + backward.diffusion) + weights.ndv * (forward.ndv + backward.ndv) +
           weights.group_consistency * group_consistency;
}

void LossReport::finalize(std::vector<double> earlier_losses, std::vector<double> earlier_factors,
                          double current_factor) {
    stage_losses = std::move(earlier_losses);
    stage_factors = std::move(earlier_factors);
    stage_losses.push_back(current_stage_loss());
    stage_factors.push_back(current_factor);
    total = 0.0;
    for (size_t s = 0; s < stage_losses.size(); ++s) total += stage_factors[s] * stage_losses[s];
}

LnccReference make_lncc_reference(const ScalarVolume& image, const MaskVolume& mask, int window_radius) {
    require_same_geometry(image.geometry, mask.geometry, "lncc mask");
    if (window_radius < 0) throw DataError("lncc window radius must be nonnegative");
    LnccReference ref;
    ref.image = image;
    ref.mask = mask;
    ref.radius = window_radius;
    ref.mask_count = mask.data.count();
    if (ref.mask_count == 0) throw DataError("lncc: empty mask");
    const auto& shape = image.geometry.shape;
    ref.count = box_count(shape, window_radius);
    ref.sum = box_sum(image.data, shape, window_radius);
    ref.sum_sq = box_sum(image.data.square(), shape, window_radius);
    return ref;
}

double lncc(const ScalarVolume& a, const LnccReference& ref, Eigen::ArrayXd* grad) {
    require_same_geometry(a.geometry, ref.image.geometry, "lncc");
    const auto& shape = a.geometry.shape;
    const Eigen::ArrayXd& b = ref.image.data;
    const Eigen::ArrayXd sa = box_sum(a.data, shape, ref.radius);
    const Eigen::ArrayXd saa = box_sum(a.data.square(), shape, ref.radius);
    const Eigen::ArrayXd sab = box_sum(a.data * b, shape, ref.radius);

    const Eigen::Index n = a.size();
    const double inv_mask = 1.0 / double(ref.mask_count);
    Eigen::ArrayXd g_sa, g_saa, g_sab;
    if (grad) {
        g_sa = Eigen::ArrayXd::Zero(n);
        g_saa = Eigen::ArrayXd::Zero(n);
        g_sab = Eigen::ArrayXd::Zero(n);
    }
    double total = 0.0;
    for (Eigen::Index x = 0; x < n; ++x) {
        if (!ref.mask.data[x]) continue;
        const double inv_n = 1.0 / ref.count[x];
        const double ma = sa[x] * inv_n, mb = ref.sum[x] * inv_n;
        const double cov = sab[x] * inv_n - ma * mb;
        const double va = saa[x] * inv_n - ma * ma;
        const double vb = ref.sum_sq[x] * inv_n - mb * mb;
        const double fa = std::max(va, kLnccVarianceFloor);
        const double fb = std::max(vb, kLnccVarianceFloor);
        const double den = std::sqrt(fa * fb);
        const double cc = cov / den;
        total += cc;
        if (grad) {
            const double dcov = inv_mask / den;
            const double dva = va > kLnccVarianceFloor ? -0.5 * cc / fa * inv_mask : 0.0;
            g_sab[x] = dcov * inv_n;
            g_saa[x] = dva * inv_n;
            g_sa[x] = (-dcov * mb - 2.0 * dva * ma) * inv_n;
        }
    }
    if (grad) {
        // Truncated box sums are self-adjoint.
        *grad = box_sum(g_sa, shape, ref.radius) + 2.0 * a.data * box_sum(g_saa, shape, ref.radius) +
                b * box_sum(g_sab, shape, ref.radius);
    }
    return total * inv_mask;
}

double lncc(const ScalarVolume& a, const ScalarVolume& b, const MaskVolume& mask, int window_radius) {
    require_same_geometry(a.geometry, b.geometry, "lncc");
    return lncc(a, make_lncc_reference(b, mask, window_radius));
}

double multichannel_lncc(const MindVolume& a, const MindVolume& b, const MaskVolume& mask, int window_radius) {
    require_same_geometry(a.geometry, b.geometry, "multichannel_lncc");
    if (a.channel_count() != b.channel_count() || a.channel_count() == 0)
        throw DataError("multichannel_lncc: channel count mismatch");
    double total = 0.0;
    for (int c = 0; c < a.channel_count(); ++c) total += lncc(a.channels[c], b.channels[c], mask, window_radius);
    return total / a.channel_count();
}

double diffusion_regularizer(const VectorField& u, const MaskVolume* mask, VectorField* grad, double weight) {
    const auto& g = u.geometry;
    g.require_min_extent(2, "diffusion_regularizer");
    if (mask) require_same_geometry(mask->geometry, g, "diffusion_regularizer mask");
    const auto& n = g.shape;

    Eigen::Index count = 0;
    for (int i = 0; i < n[0] - 1; ++i)
        for (int j = 0; j < n[1] - 1; ++j)
            for (int k = 0; k < n[2] - 1; ++k)
                if (!mask || (*mask)(i, j, k)) ++count;
    if (count == 0) return 0.0;

    const Eigen::Index strides[3] = {Eigen::Index(n[1]) * n[2], n[2], 1};
    const double scale = 2.0 * weight / double(count);
    double total = 0.0;
    for (int i = 0; i < n[0] - 1; ++i)
        for (int j = 0; j < n[1] - 1; ++j)
            for (int k = 0; k < n[2] - 1; ++k) {
                if (mask && !(*mask)(i, j, k)) continue;
                const Eigen::Index x = g.index(i, j, k);
                for (int a = 0; a < 3; ++a) {
                    const Eigen::Vector3d d = u.data.col(x + strides[a]) - u.data.col(x);
                    total += d.squaredNorm();
                    if (grad) {
                        grad->data.col(x + strides[a]) += scale * d;
                        grad->data.col(x) -= scale * d;
                    }
                }
            }
    return total / double(count);
}

double ndv_penalty(const VectorField& u, VectorField* grad, double weight) {
    return non_diffeomorphic_volume(u, grad, weight);
}

double group_consistency(std::span<const VectorField> cycle, const MaskVolume& mask,
                         std::vector<VectorField>* grads) {
    if (cycle.size() < 2) throw DataError("group_consistency needs at least two fields");
    for (const auto& f : cycle) require_same_geometry(f.geometry, cycle[0].geometry, "group_consistency");
    require_same_geometry(mask.geometry, cycle[0].geometry, "group_consistency mask");
    const Eigen::Index count = mask.data.count();
    if (count == 0) throw DataError("group_consistency: empty mask");

    std::vector<VectorField> partial{cycle[0]};
    for (size_t k = 1; k < cycle.size(); ++k) partial.push_back(compose(partial.back(), cycle[k]));
    const VectorField& total = partial.back();

    double sum = 0.0;
    for (Eigen::Index x = 0; x < total.size(); ++x)
        if (mask.data[x]) sum += total.data.col(x).squaredNorm();
    const double value = sum / double(count);

    if (grads) {
        grads->assign(cycle.size(), VectorField(cycle[0].geometry));
        VectorField g(total.geometry);
        for (Eigen::Index x = 0; x < total.size(); ++x)
            if (mask.data[x]) g.data.col(x) = 2.0 * total.data.col(x) / double(count);
        for (size_t k = cycle.size() - 1; k >= 1; --k) {
            VectorField g_prev(total.geometry);
            compose_adjoint(partial[k - 1], cycle[k], g, &g_prev, &(*grads)[k]);
            g = std::move(g_prev);
        }
        (*grads)[0].data += g.data;
    }
    return value;
}

} // namespace mindreg
