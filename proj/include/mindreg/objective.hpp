#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "mindreg/deformation.hpp"
#include "mindreg/losses.hpp"
#include "mindreg/mind.hpp"

namespace mindreg {

enum class SimilaritySpace { raw_intensity, mind };

using FeatureStack = std::vector<ScalarVolume>;

// One channel of raw intensities, or one channel per MIND offset.
FeatureStack similarity_features(const ScalarVolume& img, SimilaritySpace space, const MindParams& mind = {});

// Everything a single stage's objective needs on its working grid.
struct ObjectiveContext {
    FeatureStack fixed_features;
    FeatureStack moving_features;
    MaskVolume mask;
    VectorField before;          // composition of earlier stages
    VectorField before_inverse;  // its inverse
    std::optional<VectorField> after;
    std::optional<VectorField> after_inverse;
    int factor = 1;  // full-resolution voxels per working voxel
    int window_radius = 4;
    LossWeights weights;  // weights in effect; zero disables a term
    double stage_factor = 1.0;
};

struct ObjectiveEvaluation {
    LossReport report;  // term values; stage breakdown is left to the caller
    double loss = 0.0;  // stage_factor * current stage loss
    BSplineField stage;
    VectorField dense;          // the stage on the working grid
    VectorField inverse_stage;  // its fixed-point inverse
    VectorField forward_core;   // compose(before, dense)
    VectorField inverse_core;   // compose(after_inverse, inverse_stage)
    VectorField forward;
    VectorField backward;
    VectorField grad_forward;
    VectorField grad_backward;
};

// Two-direction registration loss of one B-spline stage as a function of its
// raw (pre-clamp) coefficients, with the analytic gradient.
class PairObjective {
public:
    PairObjective(ObjectiveContext context, const GridGeometry& full_geometry, int control_spacing);

    ObjectiveEvaluation evaluate(const Eigen::Matrix3Xd& raw);
    // `extra_forward_grad` is an additional d loss / d forward field, already
    // scaled the way it enters the minimized loss.
    Eigen::Matrix3Xd gradient(const ObjectiveEvaluation& eval, const VectorField* extra_forward_grad = nullptr) const;
    double loss_and_gradient(const Eigen::Matrix3Xd& raw, Eigen::Matrix3Xd& grad);

    const ObjectiveContext& context() const { return ctx_; }
    const GridGeometry& working_geometry() const { return ctx_.mask.geometry; }
    Eigen::Index coefficient_count() const { return BSplineField::control_grid_shape(full_geometry_, spacing_).prod(); }
    void set_weights(const LossWeights& weights) { ctx_.weights = weights; }
    void set_inversion(const InversionOptions& options) { inversion_ = options; }
    void reset_warm_start() { warm_inverse_.reset(); }

private:
    double warped_similarity(const FeatureStack& features, const std::vector<LnccReference>& refs,
                             const VectorField& disp, double grad_scale, VectorField& grad) const;

    ObjectiveContext ctx_;
    GridGeometry full_geometry_;
    int spacing_;
    std::vector<LnccReference> fixed_refs_;
    std::vector<LnccReference> moving_refs_;
    VectorField grid_;
    std::optional<VectorField> warm_inverse_;
    InversionOptions inversion_{1e-10, 500};
};

struct ObjectiveConfig {
    LossWeights weights;
    SimilaritySpace similarity_space = SimilaritySpace::mind;
    MindParams mind;
    int window_radius = 4;
};

// Objective of stack.stages[stage_index] on the full-resolution grid with the
// other stages held fixed.
PairObjective full_resolution_objective(const ScalarVolume& fixed, const ScalarVolume& moving, const MaskVolume& mask,
                                        const ObjectiveConfig& config, const StageStack& stack, int stage_index);

// Gradient of the total weighted loss with respect to the raw coefficients of
// stack.stages[stage_index] at full resolution; all other stages are held
// constant. `raw` replaces that stage's coefficients.
Eigen::Matrix3Xd loss_gradient(const ScalarVolume& fixed, const ScalarVolume& moving, const MaskVolume& mask,
                               const ObjectiveConfig& config, const StageStack& stack, int stage_index,
                               const Eigen::Matrix3Xd& raw, LossReport* report = nullptr);

// Total weighted loss for the same configuration (the function loss_gradient differentiates).
double loss_value(const ScalarVolume& fixed, const ScalarVolume& moving, const MaskVolume& mask,
                  const ObjectiveConfig& config, const StageStack& stack, int stage_index,
                  const Eigen::Matrix3Xd& raw);

} // namespace mindreg
