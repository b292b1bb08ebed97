#pragma once

#include <vector>

#include <Eigen/Core>

#include "mindreg/volume.hpp"

namespace mindreg {

// Coefficients bounded by this fraction of the control spacing keep a cubic
// B-spline displacement injective.
inline constexpr double kBoundFactor = 0.4;

// Cubic B-spline displacement field. Control point (a, b, c) sits at voxel
// position ((a - 1) * s, (b - 1) * s, (c - 1) * s), so the grid carries one
// control point of margin before the image and two after it.
struct BSplineField {
    GridGeometry image_geometry;
    int control_spacing = 1;
    Eigen::Array3i control_shape = Eigen::Array3i::Ones();
    Eigen::Matrix3Xd coefficients;

    double bound() const { return kBoundFactor * control_spacing; }
    Eigen::Index control_count() const { return Eigen::Index(control_shape.prod()); }
    bool within_bound() const;
    void validate() const;

    static Eigen::Array3i control_grid_shape(const GridGeometry& geometry, int control_spacing);
    static BSplineField zero(const GridGeometry& geometry, int control_spacing);
};

// bound * tanh(raw / bound), componentwise.
BSplineField clamp_coefficients(const Eigen::Matrix3Xd& raw, const GridGeometry& geometry, int control_spacing);
// d clamped / d raw for the coefficients of a clamped field.
Eigen::Matrix3Xd clamp_derivative(const BSplineField& clamped);

// Uniform cubic B-spline basis pieces, t in [0, 1).
Eigen::Vector4d cubic_bspline_weights(double t);

// Exact evaluation at a continuous point (voxel coordinates).
Eigen::Vector3d evaluate(const BSplineField& field, const Eigen::Vector3d& point);

VectorField bspline_to_dense(const BSplineField& field);

// Displacement sampled at full-resolution positions factor * X for every
// voxel X of `target`, expressed in target voxels (divided by factor).
VectorField bspline_to_dense(const BSplineField& field, const GridGeometry& target, int factor);

// Adjoint of bspline_to_dense(field, target, factor) with respect to the
// coefficients: maps a dense gradient to a coefficient-shaped gradient.
Eigen::Matrix3Xd bspline_to_dense_adjoint(const BSplineField& field, const VectorField& dense_gradient,
                                          int factor);

struct StageStack {
    std::vector<BSplineField> stages;  // coarsest first
};

// Stages applied in order, each through its exact pointwise inverse. The
// inverse of a StageStack holds its stages reversed.
struct InverseStack {
    std::vector<BSplineField> stages;
};

InverseStack inverse_of(const StageStack& stack);

// Per-stage dense inverses; applied in order they invert a StageStack.
struct DenseStack {
    std::vector<VectorField> stages;
};

// Displacement of x -> x + first(x) + second(x + first(x)).
VectorField compose(const VectorField& first, const VectorField& second);

// Accumulates gradients of compose(first, second) into grad_first and
// grad_second. Either output may be null.
void compose_adjoint(const VectorField& first, const VectorField& second, const VectorField& grad_out,
                     VectorField* grad_first, VectorField* grad_second);

struct InversionOptions {
    double tol = 1e-6;
    int max_iter = 50;
};

// Solves v(x) = -u(x + v(x)) by fixed-point iteration from -u (or `initial`).
VectorField invert_fixed_point(const VectorField& u, const InversionOptions& options = {},
                               const VectorField* initial = nullptr);

VectorField identity_field(const GridGeometry& geometry);

ScalarVolume jacobian_determinant(const VectorField& u);

// Mean over interior voxels of max(0, -det(I + grad u)).
double non_diffeomorphic_volume(const VectorField& u);
// Same value; adds its gradient with respect to u, scaled by `weight`, to `grad`.
double non_diffeomorphic_volume(const VectorField& u, VectorField* grad, double weight = 1.0);

ScalarVolume apply_warp(const ScalarVolume& img, const VectorField& u);
LabelVolume apply_warp_nearest(const LabelVolume& labels, const VectorField& u);

// x -> x + s0(x), then s1 at that point, and so on, with exact B-spline
// evaluation at every intermediate point.
Eigen::Vector3d map_point(const StageStack& stack, const Eigen::Vector3d& point);
// Solves q + field(q) = point by fixed-point iteration.
Eigen::Vector3d invert_point(const BSplineField& field, const Eigen::Vector3d& point,
                             const InversionOptions& options = {1e-10, 500});
Eigen::Vector3d map_point(const InverseStack& stack, const Eigen::Vector3d& point,
                          const InversionOptions& options = {1e-10, 500});

// Dense displacement of map_point at every voxel.
VectorField stack_to_dense(const StageStack& stack);
VectorField stack_to_dense(const InverseStack& stack, const InversionOptions& options = {1e-10, 500});
VectorField stack_to_dense(const DenseStack& stack);
// Per-stage dense inverses in reverse order.
DenseStack invert_stack(const StageStack& stack, const InversionOptions& options = {});

// Largest displacement norm of compose(backward, forward), i.e. of
// forward(backward(x)) - x, over voxels whose backward image stays inside the grid.
double inverse_consistency_residual(const VectorField& forward, const VectorField& backward);
// Same measure for point maps, without resampling either side.
double inverse_consistency_residual(const StageStack& forward, const InverseStack& backward,
                                    const InversionOptions& options = {1e-10, 500});

} // namespace mindreg
