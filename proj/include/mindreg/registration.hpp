#pragma once

#include <cstdint>
#include <vector>

#include "mindreg/deformation.hpp"
#include "mindreg/losses.hpp"
#include "mindreg/objective.hpp"

namespace mindreg {

// Weights used by the engine; NDV and group consistency only enter during the
// final phase of the finest level.
LossWeights default_registration_weights();

struct RegistrationConfig {
    int levels = 3;
    int iterations_per_level = 100;
    int final_phase_iterations = 30;
    double learning_rate = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::vector<int> control_spacing_schedule{8, 4, 2};  // full-resolution voxels, coarsest first
    LossWeights weights = default_registration_weights();
    SimilaritySpace similarity_space = SimilaritySpace::mind;
    MindParams mind;
    int window_radius = 4;
    std::uint64_t seed = 0;
    // Half-width of the uniform initial raw coefficients, as a fraction of
    // each stage's bound. Zero starts every level at the identity.
    double init_perturbation = 0.0;

    void validate() const;
};

struct RegistrationResult {
    GridGeometry geometry;
    StageStack forward_stack;    // fixed-space points to moving space
    InverseStack backward_stack;  // moving-space points to fixed space
    std::vector<LossReport> loss_history;
    std::vector<bool> converged_flags;  // per level: final total <= initial total

    VectorField forward_field() const { return stack_to_dense(forward_stack); }
    VectorField backward_field() const { return stack_to_dense(backward_stack); }
};

// Coarsest first; the last entry is the input.
std::vector<ScalarVolume> build_pyramid(const ScalarVolume& img, int levels);
std::vector<MaskVolume> build_mask_pyramid(const MaskVolume& mask, int levels);

// Region where similarity is measured: union of both foregrounds, dilated twice.
MaskVolume similarity_mask(const ScalarVolume& fixed, const ScalarVolume& moving);

RegistrationResult register_pair(const ScalarVolume& fixed, const ScalarVolume& moving,
                                 const RegistrationConfig& config);

// Registers a->b, b->c and c->a jointly; the cycle composition is penalized
// during the final phase with weight weights.group_consistency.
std::vector<RegistrationResult> register_triplet(const ScalarVolume& a, const ScalarVolume& b, const ScalarVolume& c,
                                                 const RegistrationConfig& config);

// Loss terms of a finished result at full resolution, all stages held fixed.
LossReport evaluate_result(const ScalarVolume& fixed, const ScalarVolume& moving, const RegistrationResult& result,
                           const RegistrationConfig& config);

} // namespace mindreg
