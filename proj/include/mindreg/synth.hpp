#pragma once

#include <cstdint>
#include <vector>

#include "mindreg/deformation.hpp"
#include "mindreg/metrics.hpp"
#include "mindreg/volume.hpp"

namespace mindreg {

struct Contrast {
    enum class Mode { identity, inverted, gamma, monotone_lut };
    Mode mode = Mode::identity;
    double gamma = 1.0;
    std::uint64_t lut_seed = 0;
};

struct PhantomSpec {
    Eigen::Array3i shape{48, 48, 48};
    int blob_count = 8;
    std::uint64_t seed = 0;
    double deformation_max = 3.0;
    int control_spacing = 8;  // of the ground-truth field
    Contrast contrast;
    double noise_sigma = 0.0;  // added to the moving image

    void validate() const;
};

struct Phantom {
    ScalarVolume image;
    LabelVolume labels;
    LandmarkSet landmarks;
};

struct BenchCase {
    PhantomSpec spec;
    ScalarVolume fixed;
    ScalarVolume moving;
    BSplineField gt;
    VectorField gt_field;  // moving = base warped by gt_field; maps moving-space points to fixed space
    LabelVolume labels_fixed;
    LabelVolume labels_moving;
    LandmarkSet landmarks_fixed;
    LandmarkSet landmarks_moving;
    MaskVolume mask;
};

// Blobs with a flat core and compact support, intensities scaled to [0, 1].
Phantom make_phantom(const PhantomSpec& spec);

// Coefficients i.i.d. uniform in [-m, m] with m = min(max_displacement, bound).
BSplineField random_diffeomorphism(const GridGeometry& geometry, double max_displacement, int control_spacing,
                                   std::uint64_t seed);

// Coefficients trilinearly interpolated from lattice vectors `correlation`
// control points apart. Each lattice vector mixes one shared vector with
// components of magnitude in [0.5 m, 0.9 m] (weight 0.6) and an i.i.d. uniform
// one in [-m, m] (weight 0.4).
// Same bound as above.
BSplineField random_smooth_diffeomorphism(const GridGeometry& geometry, double max_displacement,
                                          int control_spacing, std::uint64_t seed, int correlation = 2);

// Rescales to [0, 1] by the global min and max, then applies the mode.
ScalarVolume contrast_remap(const ScalarVolume& img, const Contrast& contrast);

struct AugmentOp {
    enum class Kind { noise, blur, sign_inversion, gamma };
    Kind kind = Kind::noise;
    double value = 0.0;  // sigma for noise and blur, exponent for gamma
};

ScalarVolume augment(const ScalarVolume& img, const std::vector<AugmentOp>& ops, std::uint64_t seed);

BenchCase make_case(const PhantomSpec& spec);

} // namespace mindreg
