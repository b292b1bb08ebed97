#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "mindreg/deformation.hpp"
#include "mindreg/mind.hpp"
#include "mindreg/volume.hpp"

namespace mindreg {

struct LossWeights {
    double similarity = 1.0;
    double diffusion = 1.0;
    double ndv = 0.0;
    double group_consistency = 0.0;
    double intermediate_stage_factor = 0.01;

    void validate() const;
};

struct LossTerms {
    double similarity = 0.0;  // LNCC, higher is better
    double diffusion = 0.0;
    double ndv = 0.0;
};

struct LossReport {
    int level = 0;
    int iteration = 0;
    LossWeights weights;  // weights in effect for this evaluation
    LossTerms forward;
    LossTerms backward;
    double group_consistency = 0.0;
    // Loss of each stage up to and including the current one, and the
    // factor each enters the total with.
    std::vector<double> stage_losses;
    std::vector<double> stage_factors;
    double total = 0.0;

    // Weighted loss of the current stage from the term values.
    double current_stage_loss() const;
    // Fills in the current stage entry and recomputes total.
    void finalize(std::vector<double> earlier_losses, std::vector<double> earlier_factors, double current_factor);
};

inline constexpr double kLnccVarianceFloor = 1e-8;

// Window statistics of the image that stays fixed during optimization.
struct LnccReference {
    ScalarVolume image;
    MaskVolume mask;
    int radius = 4;
    Eigen::ArrayXd count;
    Eigen::ArrayXd sum;
    Eigen::ArrayXd sum_sq;
    Eigen::Index mask_count = 0;
};

LnccReference make_lncc_reference(const ScalarVolume& image, const MaskVolume& mask, int window_radius = 4);

// Mean local correlation between `a` and the reference image; optionally
// writes d lncc / d a (per voxel) into `grad`.
double lncc(const ScalarVolume& a, const LnccReference& ref, Eigen::ArrayXd* grad = nullptr);
double lncc(const ScalarVolume& a, const ScalarVolume& b, const MaskVolume& mask, int window_radius = 4);
double multichannel_lncc(const MindVolume& a, const MindVolume& b, const MaskVolume& mask, int window_radius = 4);

// Mean squared Frobenius norm of the forward-difference Jacobian over masked
// voxels that have a forward neighbor on every axis. A null mask selects all.
double diffusion_regularizer(const VectorField& u, const MaskVolume* mask = nullptr, VectorField* grad = nullptr,
                             double weight = 1.0);

double ndv_penalty(const VectorField& u, VectorField* grad = nullptr, double weight = 1.0);

// Mean squared displacement of the composed cycle over masked voxels. When
// `grads` is given it receives d loss / d field for every cycle member.
double group_consistency(std::span<const VectorField> cycle, const MaskVolume& mask,
                         std::vector<VectorField>* grads = nullptr);

} // namespace mindreg
