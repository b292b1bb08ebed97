#pragma once

#include <vector>

#include <Eigen/Core>

#include "mindreg/volume.hpp"

namespace mindreg {

std::vector<Eigen::Vector3i> six_neighborhood();

struct MindParams {
    double sigma = 0.5;
    std::vector<Eigen::Vector3i> offsets = six_neighborhood();
    // Half-width of the patch lattice; 0 selects ceil(3 * sigma).
    int patch_radius = 0;
    double variance_floor_rel = 1e-6;

    int effective_patch_radius() const;
    void validate() const;
};

// One feature channel per offset, ordered as MindParams::offsets.
struct MindVolume {
    GridGeometry geometry;
    std::vector<ScalarVolume> channels;

    int channel_count() const { return int(channels.size()); }
};

// Gaussian-weighted patch SSD between x and x + offset for every voxel.
// The lattice weights exp(-|p|^2 / sigma^2) are not normalized.
ScalarVolume patch_ssd(const ScalarVolume& img, const Eigen::Vector3i& offset, const MindParams& params);

struct LocalVariance {
    ScalarVolume raw;      // voxelwise mean of the six-neighborhood distances
    ScalarVolume floored;  // raw clamped from below at `floor`
    double floor = 0.0;
};

LocalVariance local_variance(std::span<const ScalarVolume> six_distances, double variance_floor_rel = 1e-6);

MindVolume mind_transform(const ScalarVolume& img, const MindParams& params = {});

// Mean over masked voxels and channels of squared feature differences.
double mind_distance(const MindVolume& a, const MindVolume& b, const MaskVolume& mask);

// Voxels where the local variance is strictly above its floor.
MaskVolume mind_floor_inactive(const ScalarVolume& img, const MindParams& params = {});

} // namespace mindreg
