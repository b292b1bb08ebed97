#include "mindreg/registration.hpp"

#include <cmath>
#include <memory>
#include <random>

namespace mindreg {

LossWeights default_registration_weights() {
    LossWeights w;
    w.ndv = 1.0;
    w.group_consistency = 1.0;
    return w;
}

void RegistrationConfig::validate() const {
    if (levels < 1) throw DataError("levels must be at least 1");
    if (iterations_per_level < 1) throw DataError("iterations_per_level must be at least 1");
    if (final_phase_iterations < 0 || final_phase_iterations > iterations_per_level)
        throw DataError("final_phase_iterations must lie in [0, iterations_per_level]");
    if (!(learning_rate > 0.0)) throw DataError("learning rate must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_epsilon > 0.0))
        throw DataError("invalid Adam parameters");
    if (int(control_spacing_schedule.size()) != levels)
        throw DataError("control spacing schedule length must equal levels");
    for (size_t l = 0; l < control_spacing_schedule.size(); ++l) {
        if (control_spacing_schedule[l] < 1) throw DataError("control spacing must be positive");
        if (l > 0 && control_spacing_schedule[l] >= control_spacing_schedule[l - 1])
            throw DataError("control spacings must be strictly decreasing");
    }
    if (window_radius < 0) throw DataError("window radius must be nonnegative");
    if (!(init_perturbation >= 0.0)) throw DataError("init perturbation must be nonnegative");
    weights.validate();
    mind.validate();
}

std::vector<ScalarVolume> build_pyramid(const ScalarVolume& img, int levels) {
    if (levels < 1) throw DataError("build_pyramid: levels must be at least 1");
    std::vector<ScalarVolume> out{img};
    for (int l = 1; l < levels; ++l) {
        if ((out.back().geometry.shape < 8).any())
            throw DataError("image too small for the requested number of pyramid levels");
        out.push_back(downsample_by_two(out.back()));
    }
    return {out.rbegin(), out.rend()};
}

std::vector<MaskVolume> build_mask_pyramid(const MaskVolume& mask, int levels) {
    std::vector<MaskVolume> out{mask};
    for (int l = 1; l < levels; ++l) out.push_back(downsample_mask(out.back()));
    return {out.rbegin(), out.rend()};
}

MaskVolume similarity_mask(const ScalarVolume& fixed, const ScalarVolume& moving) {
    MaskVolume m = foreground_mask(fixed);
    m.data = m.data || foreground_mask(moving).data;
    return dilate(dilate(m));
}

namespace {

// Displacement of a point map sampled at positions factor * X of a coarser
// grid, in coarse voxels.
template <typename Map>
VectorField dense_on_level(const GridGeometry& target, int factor, Map map) {
    VectorField out(target);
    const auto& n = target.shape;
    for (int i = 0; i < n[0]; ++i)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                const Eigen::Vector3d p = double(factor) * Eigen::Vector3d(i, j, k);
                out(i, j, k) = (map(p) - p) / double(factor);
            }
    return out;
}

struct PairProblem {
    std::vector<FeatureStack> fixed_features;
    std::vector<FeatureStack> moving_features;
    std::vector<MaskVolume> masks;
    GridGeometry geometry;
    StageStack stack;
    std::vector<double> stage_losses;
    std::vector<double> stage_factors;
    std::mt19937_64 rng;
    RegistrationResult result;
};

PairProblem make_problem(const ScalarVolume& fixed, const ScalarVolume& moving, const RegistrationConfig& config) {
    require_same_geometry(fixed.geometry, moving.geometry, "register_pair");
    PairProblem p;
    p.geometry = fixed.geometry;
    p.rng.seed(config.seed);
    const auto fixed_pyr = build_pyramid(fixed, config.levels);
    const auto moving_pyr = build_pyramid(moving, config.levels);
    p.masks = build_mask_pyramid(similarity_mask(fixed, moving), config.levels);
    for (int l = 0; l < config.levels; ++l) {
        p.fixed_features.push_back(similarity_features(fixed_pyr[l], config.similarity_space, config.mind));
        p.moving_features.push_back(similarity_features(moving_pyr[l], config.similarity_space, config.mind));
    }
    return p;
}

struct Adam {
    Eigen::Matrix3Xd m, v;
    int t = 0;

    explicit Adam(Eigen::Index cols) : m(Eigen::Matrix3Xd::Zero(3, cols)), v(Eigen::Matrix3Xd::Zero(3, cols)) {}

    void step(Eigen::Matrix3Xd& x, const Eigen::Matrix3Xd& g, const RegistrationConfig& c) {
        ++t;
        m = c.adam_beta1 * m + (1.0 - c.adam_beta1) * g;
        v = c.adam_beta2 * v + (1.0 - c.adam_beta2) * g.cwiseProduct(g);
        const double bc1 = 1.0 - std::pow(c.adam_beta1, t);
        const double bc2 = 1.0 - std::pow(c.adam_beta2, t);
        x.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.adam_epsilon);
    }
};

void run_levels(std::vector<PairProblem>& problems, const RegistrationConfig& config, bool cycle) {
    const int L = config.levels;
    const InversionOptions tight{1e-10, 500};
    for (int l = 0; l < L; ++l) {
        const int factor = 1 << (L - 1 - l);
        const int spacing = config.control_spacing_schedule[l];
        const bool finest = l == L - 1;
        const double sf = finest ? 1.0 : config.weights.intermediate_stage_factor;
        LossWeights early = config.weights;
        early.ndv = 0.0;
        early.group_consistency = 0.0;

        std::vector<std::unique_ptr<PairObjective>> objectives;
        std::vector<Eigen::Matrix3Xd> raw;
        std::vector<Adam> adam;
        for (auto& p : problems) {
            ObjectiveContext ctx;
            ctx.fixed_features = p.fixed_features[l];
            ctx.moving_features = p.moving_features[l];
            ctx.mask = p.masks[l];
            const GridGeometry& g = ctx.mask.geometry;
            if (p.stack.stages.empty()) {
                ctx.before = VectorField(g);
                ctx.before_inverse = VectorField(g);
            } else {
                const InverseStack inv = inverse_of(p.stack);
                ctx.before = dense_on_level(g, factor, [&](const Eigen::Vector3d& x) { return map_point(p.stack, x); });
                ctx.before_inverse =
                    dense_on_level(g, factor, [&](const Eigen::Vector3d& x) { return map_point(inv, x, tight); });
            }
            ctx.factor = factor;
            ctx.window_radius = config.window_radius;
            ctx.weights = early;
            ctx.stage_factor = sf;
            objectives.push_back(std::make_unique<PairObjective>(std::move(ctx), p.geometry, spacing));

            Eigen::Matrix3Xd x = Eigen::Matrix3Xd::Zero(3, objectives.back()->coefficient_count());
            if (config.init_perturbation > 0.0) {
                const double half = config.init_perturbation * kBoundFactor * spacing;
                std::uniform_real_distribution<double> dist(-half, half);
                for (Eigen::Index e = 0; e < x.size(); ++e) x.data()[e] = dist(p.rng);
            }
            raw.push_back(std::move(x));
            adam.emplace_back(raw.back().cols());
        }

        const size_t n = problems.size();
        const int final_start = finest ? config.iterations_per_level - config.final_phase_iterations
                                       : config.iterations_per_level + 1;
        std::vector<double> start_total(n, 0.0);
        bool final_phase = false;

        // One pass over all problems; returns the per-problem reports and
        // optionally the gradients.
        auto evaluate_all = [&](int it, std::vector<Eigen::Matrix3Xd>* grads) {
            std::vector<ObjectiveEvaluation> evs;
            for (size_t k = 0; k < n; ++k) evs.push_back(objectives[k]->evaluate(raw[k]));
            std::vector<VectorField> cycle_grads;
            const bool gc_on = cycle && final_phase && config.weights.group_consistency != 0.0;
            double gc = 0.0;
            if (gc_on) {
                std::vector<VectorField> fields;
                for (const auto& ev : evs) fields.push_back(ev.forward);
                gc = group_consistency(fields, objectives[0]->context().mask, grads ? &cycle_grads : nullptr);
                for (auto& cg : cycle_grads) cg.data *= config.weights.group_consistency * sf;
            }
            std::vector<LossReport> reports;
            for (size_t k = 0; k < n; ++k) {
                LossReport rep = evs[k].report;
                rep.level = l;
                rep.iteration = it;
                rep.group_consistency = gc;
                rep.finalize(problems[k].stage_losses, problems[k].stage_factors, sf);
                reports.push_back(std::move(rep));
                if (grads) (*grads)[k] = objectives[k]->gradient(evs[k], gc_on ? &cycle_grads[k] : nullptr);
            }
            return reports;
        };

        std::vector<Eigen::Matrix3Xd> grads(n);
        for (int it = 0; it < config.iterations_per_level; ++it) {
            if (it == final_start) {
                final_phase = true;
                LossWeights w = config.weights;
                if (!cycle) w.group_consistency = 0.0;
                for (auto& o : objectives) o->set_weights(w);
            }
            const auto reports = evaluate_all(it, &grads);
            for (size_t k = 0; k < n; ++k) {
                if (it == 0) start_total[k] = reports[k].total;
                problems[k].result.loss_history.push_back(reports[k]);
                adam[k].step(raw[k], grads[k], config);
            }
        }
        const auto final_reports = evaluate_all(config.iterations_per_level, nullptr);
        for (size_t k = 0; k < n; ++k) {
            auto& p = problems[k];
            p.result.loss_history.push_back(final_reports[k]);
            p.result.converged_flags.push_back(final_reports[k].total <= start_total[k]);
            p.stage_losses.push_back(final_reports[k].stage_losses.back());
            p.stage_factors.push_back(sf);
            p.stack.stages.push_back(clamp_coefficients(raw[k], p.geometry, spacing));
        }
    }
    for (auto& p : problems) {
        p.result.geometry = p.geometry;
        p.result.forward_stack = p.stack;
        p.result.backward_stack = inverse_of(p.stack);
    }
}

} // namespace

RegistrationResult register_pair(const ScalarVolume& fixed, const ScalarVolume& moving,
                                 const RegistrationConfig& config) {
    config.validate();
    std::vector<PairProblem> problems;
    problems.push_back(make_problem(fixed, moving, config));
    run_levels(problems, config, false);
    return std::move(problems.front().result);
}

std::vector<RegistrationResult> register_triplet(const ScalarVolume& a, const ScalarVolume& b, const ScalarVolume& c,
                                                 const RegistrationConfig& config) {
    config.validate();
    require_same_geometry(a.geometry, b.geometry, "register_triplet");
    require_same_geometry(a.geometry, c.geometry, "register_triplet");
    std::vector<PairProblem> problems;
    problems.push_back(make_problem(a, b, config));
    problems.push_back(make_problem(b, c, config));
    problems.push_back(make_problem(c, a, config));
    run_levels(problems, config, true);
    std::vector<RegistrationResult> out;
    for (auto& p : problems) out.push_back(std::move(p.result));
    return out;
}

LossReport evaluate_result(const ScalarVolume& fixed, const ScalarVolume& moving, const RegistrationResult& result,
                           const RegistrationConfig& config) {
    require_same_geometry(fixed.geometry, moving.geometry, "evaluate_result");
    require_same_geometry(fixed.geometry, result.geometry, "evaluate_result");
    if (result.forward_stack.stages.empty()) throw DataError("evaluate_result: empty result");
    ObjectiveContext ctx;
    ctx.fixed_features = similarity_features(fixed, config.similarity_space, config.mind);
    ctx.moving_features = similarity_features(moving, config.similarity_space, config.mind);
    ctx.mask = similarity_mask(fixed, moving);
    ctx.before = result.forward_field();
    ctx.before_inverse = result.backward_field();
    ctx.window_radius = config.window_radius;
    ctx.weights = config.weights;
    ctx.weights.group_consistency = 0.0;
    const int spacing = result.forward_stack.stages.back().control_spacing;
    PairObjective objective(std::move(ctx), fixed.geometry, spacing);
    const Eigen::Matrix3Xd zero = Eigen::Matrix3Xd::Zero(3, objective.coefficient_count());
    LossReport rep = objective.evaluate(zero).report;
    rep.level = config.levels - 1;
    rep.iteration = config.iterations_per_level;
    rep.finalize({}, {}, 1.0);
    return rep;
}

} // namespace mindreg
