#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mindreg/deformation.hpp"
#include "mindreg/volume.hpp"

namespace mindreg {

struct LandmarkSet {
    std::vector<Eigen::Vector3d> points;  // voxel coordinates
    std::vector<std::string> identifiers;

    size_t size() const { return points.size(); }
    void validate(const GridGeometry& geometry) const;
};

struct DiceResult {
    std::map<int, double> per_label;  // nonzero labels present in either volume
    double mean = 0.0;
};

DiceResult dice(const LabelVolume& a, const LabelVolume& b);

MaskVolume label_mask(const LabelVolume& labels, int label);
// Voxels of the mask with at least one 6-neighbor outside it (the grid edge counts as outside).
MaskVolume boundary(const MaskVolume& mask);

// Exact Euclidean distance (physical units) from every voxel to the nearest
// true voxel of `features`.
ScalarVolume distance_transform(const MaskVolume& features);

// Max of the two directed 95th percentiles of boundary-to-boundary distances.
double hd95(const LabelVolume& a, const LabelVolume& b, int label);
double hd95(const MaskVolume& a, const MaskVolume& b);

struct TreResult {
    std::vector<double> per_landmark;
    double mean = 0.0;
};

// Distance between moving_lm and fixed_lm displaced by u (sampled trilinearly),
// scaled by the voxel spacing.
TreResult tre(const LandmarkSet& fixed_lm, const LandmarkSet& moving_lm, const VectorField& u,
              const Eigen::Vector3d& spacing);

double ndv_metric(const VectorField& u);

} // namespace mindreg
