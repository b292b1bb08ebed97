#include "mindreg/ensemble.hpp"

namespace mindreg {

void EnsembleConfig::validate() const {
    if (members < 1) throw DataError("ensemble needs at least one member");
    if (!(perturbation_scale >= 0.0)) throw DataError("perturbation scale must be nonnegative");
}

std::vector<RegistrationResult> run_ensemble(const ScalarVolume& fixed, const ScalarVolume& moving,
                                             const RegistrationConfig& reg_config, const EnsembleConfig& ens_config) {
    ens_config.validate();
    std::vector<RegistrationResult> out;
    for (int i = 0; i < ens_config.members; ++i) {
        RegistrationConfig c = reg_config;
        c.seed = ens_config.seed_base + std::uint64_t(i);
        c.init_perturbation = i == 0 ? 0.0 : ens_config.perturbation_scale;
        out.push_back(register_pair(fixed, moving, c));
    }
    return out;
}

RegistrationResult ensemble_average(const std::vector<RegistrationResult>& results) {
    if (results.empty()) throw DataError("ensemble_average: no results");
    const RegistrationResult& first = results.front();
    const size_t stages = first.forward_stack.stages.size();
    for (const auto& r : results) {
        if (!(r.geometry == first.geometry) || r.forward_stack.stages.size() != stages)
            throw DataError("ensemble_average: members differ in structure");
        for (size_t s = 0; s < stages; ++s)
            if (r.forward_stack.stages[s].control_spacing != first.forward_stack.stages[s].control_spacing ||
                !(r.forward_stack.stages[s].image_geometry == first.forward_stack.stages[s].image_geometry))
                throw DataError("ensemble_average: members differ in stage structure");
    }
    RegistrationResult out;
    out.geometry = first.geometry;
    for (size_t s = 0; s < stages; ++s) {
        // Running mean, then clipped to the members' range so rounding never
        // leaves their convex hull (and hence the bound).
        BSplineField avg = first.forward_stack.stages[s];
        Eigen::Matrix3Xd lo = avg.coefficients, hi = avg.coefficients;
        for (size_t m = 1; m < results.size(); ++m) {
            const Eigen::Matrix3Xd& c = results[m].forward_stack.stages[s].coefficients;
            avg.coefficients += (c - avg.coefficients) / double(m + 1);
            lo = lo.cwiseMin(c);
            hi = hi.cwiseMax(c);
        }
        avg.coefficients = avg.coefficients.cwiseMax(lo).cwiseMin(hi);
        out.forward_stack.stages.push_back(std::move(avg));
    }
    out.backward_stack = inverse_of(out.forward_stack);
    out.converged_flags = first.converged_flags;
    for (const auto& r : results)
        for (size_t l = 0; l < out.converged_flags.size() && l < r.converged_flags.size(); ++l)
            out.converged_flags[l] = out.converged_flags[l] && r.converged_flags[l];
    return out;
}

RegistrationResult ensemble_average(const std::vector<RegistrationResult>& results, const ScalarVolume& fixed,
                                    const ScalarVolume& moving, const RegistrationConfig& config) {
    RegistrationResult out = ensemble_average(results);
    out.loss_history.push_back(evaluate_result(fixed, moving, out, config));
    return out;
}

} // namespace mindreg
