#include "mindreg/objective.hpp"

#include <Eigen/LU>

namespace mindreg {

FeatureStack similarity_features(const ScalarVolume& img, SimilaritySpace space, const MindParams& mind) {
    if (space == SimilaritySpace::raw_intensity) return {img};
    return mind_transform(img, mind).channels;
}

PairObjective::PairObjective(ObjectiveContext context, const GridGeometry& full_geometry, int control_spacing)
    : ctx_(std::move(context)), full_geometry_(full_geometry), spacing_(control_spacing) {
    ctx_.weights.validate();
    const GridGeometry& g = ctx_.mask.geometry;
    if (ctx_.fixed_features.empty() || ctx_.fixed_features.size() != ctx_.moving_features.size())
        throw DataError("objective: feature channel mismatch");
    for (size_t c = 0; c < ctx_.fixed_features.size(); ++c) {
        require_same_geometry(ctx_.fixed_features[c].geometry, g, "objective fixed features");
        require_same_geometry(ctx_.moving_features[c].geometry, g, "objective moving features");
        fixed_refs_.push_back(make_lncc_reference(ctx_.fixed_features[c], ctx_.mask, ctx_.window_radius));
        moving_refs_.push_back(make_lncc_reference(ctx_.moving_features[c], ctx_.mask, ctx_.window_radius));
    }
    require_same_geometry(ctx_.before.geometry, g, "objective accumulated field");
    require_same_geometry(ctx_.before_inverse.geometry, g, "objective accumulated inverse");
    if (ctx_.after.has_value() != ctx_.after_inverse.has_value())
        throw DataError("objective: trailing stages need both directions");
    grid_ = identity_field(g);
}

double PairObjective::warped_similarity(const FeatureStack& features, const std::vector<LnccReference>& refs,
                                        const VectorField& disp, double grad_scale, VectorField& grad) const {
    const GridGeometry& g = disp.geometry;
    const Eigen::Index n = g.voxel_count();
    const size_t channels = features.size();
    std::vector<ScalarVolume> warped(channels, ScalarVolume(g));
    std::vector<Eigen::Matrix3Xd> spatial(channels, Eigen::Matrix3Xd(3, n));

    for (Eigen::Index x = 0; x < n; ++x) {
        const TrilinearStencil st = trilinear_stencil(g, grid_.data.col(x) + disp.data.col(x));
        for (size_t c = 0; c < channels; ++c) {
            const Eigen::ArrayXd& src = features[c].data;
            double v = 0.0;
            Eigen::Vector3d dv = Eigen::Vector3d::Zero();
            for (int t = 0; t < 8; ++t) {
                v += st.weight[t] * src[st.index[t]];
                dv += st.dweight[t] * src[st.index[t]];
            }
            warped[c].data[x] = v;
            spatial[c].col(x) = dv;
        }
    }

    double sim = 0.0;
    Eigen::ArrayXd g_channel;
    const double scale = grad_scale / double(channels);
    for (size_t c = 0; c < channels; ++c) {
        sim += lncc(warped[c], refs[c], grad_scale != 0.0 ? &g_channel : nullptr);
        if (grad_scale == 0.0) continue;
        for (Eigen::Index x = 0; x < n; ++x) grad.data.col(x) += (scale * g_channel[x]) * spatial[c].col(x);
    }
    return sim / double(channels);
}

ObjectiveEvaluation PairObjective::evaluate(const Eigen::Matrix3Xd& raw) {
    const GridGeometry& g = working_geometry();
    ObjectiveEvaluation ev;
    ev.stage = clamp_coefficients(raw, full_geometry_, spacing_);
    ev.dense = bspline_to_dense(ev.stage, g, ctx_.factor);
    ev.forward_core = compose(ctx_.before, ev.dense);
    ev.forward = ctx_.after ? compose(ev.forward_core, *ctx_.after) : ev.forward_core;

    ev.inverse_stage = invert_fixed_point(ev.dense, inversion_, warm_inverse_ ? &*warm_inverse_ : nullptr);
    warm_inverse_ = ev.inverse_stage;
    ev.inverse_core = ctx_.after_inverse ? compose(*ctx_.after_inverse, ev.inverse_stage) : ev.inverse_stage;
    ev.backward = compose(ev.inverse_core, ctx_.before_inverse);

    const LossWeights& w = ctx_.weights;
    const double sf = ctx_.stage_factor;
    ev.grad_forward = VectorField(g);
    ev.grad_backward = VectorField(g);
    auto& rep = ev.report;
    rep.weights = w;

    const double sim_scale = -w.similarity * sf;
    rep.forward.similarity =
        warped_similarity(ctx_.moving_features, fixed_refs_, ev.forward, sim_scale, ev.grad_forward);
    rep.backward.similarity =
        warped_similarity(ctx_.fixed_features, moving_refs_, ev.backward, sim_scale, ev.grad_backward);

    if (w.diffusion != 0.0) {
        rep.forward.diffusion = diffusion_regularizer(ev.forward, nullptr, &ev.grad_forward, w.diffusion * sf);
        rep.backward.diffusion = diffusion_regularizer(ev.backward, nullptr, &ev.grad_backward, w.diffusion * sf);
    } else {
        rep.forward.diffusion = diffusion_regularizer(ev.forward);
        rep.backward.diffusion = diffusion_regularizer(ev.backward);
    }
    const bool ndv_on = w.ndv != 0.0;
    rep.forward.ndv = ndv_penalty(ev.forward, ndv_on ? &ev.grad_forward : nullptr, w.ndv * sf);
    rep.backward.ndv = ndv_penalty(ev.backward, ndv_on ? &ev.grad_backward : nullptr, w.ndv * sf);

    ev.loss = sf * rep.current_stage_loss();
    return ev;
}

Eigen::Matrix3Xd PairObjective::gradient(const ObjectiveEvaluation& ev, const VectorField* extra) const {
    const GridGeometry& g = working_geometry();

    VectorField g_forward = ev.grad_forward;
    if (extra) g_forward.data += extra->data;
    VectorField g_core(g);
    if (ctx_.after) compose_adjoint(ev.forward_core, *ctx_.after, g_forward, &g_core, nullptr);
    else g_core = std::move(g_forward);

    VectorField g_dense(g);
    compose_adjoint(ctx_.before, ev.dense, g_core, nullptr, &g_dense);

    VectorField g_inverse_core(g);
    compose_adjoint(ev.inverse_core, ctx_.before_inverse, ev.grad_backward, &g_inverse_core, nullptr);
    VectorField g_inverse(g);
    if (ctx_.after_inverse) compose_adjoint(*ctx_.after_inverse, ev.inverse_stage, g_inverse_core, nullptr, &g_inverse);
    else g_inverse = std::move(g_inverse_core);

    // v(x) = -d(x + v(x))  =>  dv = -(I + J_d)^-1 dd(x + v(x)).
    for (Eigen::Index x = 0; x < g.voxel_count(); ++x) {
        const Eigen::Vector3d gv = g_inverse.data.col(x);
        if (gv.isZero(0.0)) continue;
        const TrilinearStencil st = trilinear_stencil(g, grid_.data.col(x) + ev.inverse_stage.data.col(x));
        Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
        for (int t = 0; t < 8; ++t) a += ev.dense.data.col(st.index[t]) * st.dweight[t].transpose();
        const Eigen::Vector3d h = a.transpose().partialPivLu().solve(gv);
        for (int t = 0; t < 8; ++t) g_dense.data.col(st.index[t]) -= st.weight[t] * h;
    }

    const Eigen::Matrix3Xd g_coeff = bspline_to_dense_adjoint(ev.stage, g_dense, ctx_.factor);
    return g_coeff.cwiseProduct(clamp_derivative(ev.stage));
}

double PairObjective::loss_and_gradient(const Eigen::Matrix3Xd& raw, Eigen::Matrix3Xd& grad) {
    const ObjectiveEvaluation ev = evaluate(raw);
    grad = gradient(ev);
    return ev.loss;
}

PairObjective full_resolution_objective(const ScalarVolume& fixed, const ScalarVolume& moving, const MaskVolume& mask,
                                        const ObjectiveConfig& config, const StageStack& stack, int stage_index) {
    if (stage_index < 0 || size_t(stage_index) >= stack.stages.size())
        throw DataError("loss_gradient: stage index out of range");
    require_same_geometry(fixed.geometry, moving.geometry, "loss_gradient");
    const GridGeometry& g = fixed.geometry;

    ObjectiveContext ctx;
    ctx.fixed_features = similarity_features(fixed, config.similarity_space, config.mind);
    ctx.moving_features = similarity_features(moving, config.similarity_space, config.mind);
    ctx.mask = mask;
    ctx.window_radius = config.window_radius;
    ctx.weights = config.weights;
    const bool last = size_t(stage_index) + 1 == stack.stages.size();
    ctx.stage_factor = last ? 1.0 : config.weights.intermediate_stage_factor;

    const InversionOptions tight{1e-10, 500};
    StageStack before{{stack.stages.begin(), stack.stages.begin() + stage_index}};
    StageStack after{{stack.stages.begin() + stage_index + 1, stack.stages.end()}};
    if (before.stages.empty()) {
        ctx.before = VectorField(g);
        ctx.before_inverse = VectorField(g);
    } else {
        ctx.before = stack_to_dense(before);
        ctx.before_inverse = stack_to_dense(inverse_of(before), tight);
    }
    if (!after.stages.empty()) {
        ctx.after = stack_to_dense(after);
        ctx.after_inverse = stack_to_dense(inverse_of(after), tight);
    }
    return PairObjective(std::move(ctx), g, stack.stages[stage_index].control_spacing);
}

Eigen::Matrix3Xd loss_gradient(const ScalarVolume& fixed, const ScalarVolume& moving, const MaskVolume& mask,
                               const ObjectiveConfig& config, const StageStack& stack, int stage_index,
                               const Eigen::Matrix3Xd& raw, LossReport* report) {
    PairObjective objective = full_resolution_objective(fixed, moving, mask, config, stack, stage_index);
    const ObjectiveEvaluation ev = objective.evaluate(raw);
    if (report) *report = ev.report;
    return objective.gradient(ev);
}

double loss_value(const ScalarVolume& fixed, const ScalarVolume& moving, const MaskVolume& mask,
                  const ObjectiveConfig& config, const StageStack& stack, int stage_index,
                  const Eigen::Matrix3Xd& raw) {
    PairObjective objective = full_resolution_objective(fixed, moving, mask, config, stack, stage_index);
    return objective.evaluate(raw).loss;
}

} // namespace mindreg
