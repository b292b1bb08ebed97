#pragma once

#include <cstdint>
#include <vector>

#include "mindreg/registration.hpp"

namespace mindreg {

struct EnsembleConfig {
    int members = 5;
    std::uint64_t seed_base = 0;
    // Half-width of each non-first member's uniform initial raw coefficients,
    // as a fraction of the stage bound.
    double perturbation_scale = 0.1;

    void validate() const;
};

// Member i runs with seed seed_base + i; member 0 starts from zero.
std::vector<RegistrationResult> run_ensemble(const ScalarVolume& fixed, const ScalarVolume& moving,
                                             const RegistrationConfig& reg_config, const EnsembleConfig& ens_config);

// Averages the clamped stage coefficients in member order and rebuilds the
// backward stack from the averaged stages.
RegistrationResult ensemble_average(const std::vector<RegistrationResult>& results);
// Same, with a final full-resolution evaluation appended to loss_history.
RegistrationResult ensemble_average(const std::vector<RegistrationResult>& results, const ScalarVolume& fixed,
                                    const ScalarVolume& moving, const RegistrationConfig& config);

} // namespace mindreg
