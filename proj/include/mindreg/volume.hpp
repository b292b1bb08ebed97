#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mindreg/errors.hpp"

namespace mindreg {

// Regular voxel grid. Voxel (i, j, k) is stored at ((i * n1) + j) * n2 + k,
// i.e. the last axis varies fastest.
struct GridGeometry {
    Eigen::Array3i shape = Eigen::Array3i::Ones();
    Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();

    GridGeometry() = default;
    explicit GridGeometry(const Eigen::Array3i& shape_,
                          const Eigen::Vector3d& spacing_ = Eigen::Vector3d::Ones(),
                          const Eigen::Vector3d& origin_ = Eigen::Vector3d::Zero());

    Eigen::Index voxel_count() const {
        return Eigen::Index(shape[0]) * shape[1] * shape[2];
    }
    Eigen::Index index(int i, int j, int k) const {
        return (Eigen::Index(i) * shape[1] + j) * shape[2] + k;
    }
    Eigen::Array3i coordinates(Eigen::Index idx) const;

    // Throws DataError unless every axis has at least `min_extent` voxels.
    void require_min_extent(int min_extent, const char* what) const;

    friend bool operator==(const GridGeometry& a, const GridGeometry& b) {
        return (a.shape == b.shape).all() && a.spacing == b.spacing && a.origin == b.origin;
    }
};

template <typename Scalar>
struct Volume {
    using value_type = Scalar;
    using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    GridGeometry geometry;
    Storage data;

    Volume() = default;
    explicit Volume(const GridGeometry& g, Scalar fill = Scalar(0))
        : geometry(g), data(Storage::Constant(g.voxel_count(), fill)) {}
    Volume(const GridGeometry& g, Storage values) : geometry(g), data(std::move(values)) {
        if (data.size() != geometry.voxel_count())
            throw DataError("volume data length does not match geometry");
    }

    Scalar& operator()(int i, int j, int k) { return data[geometry.index(i, j, k)]; }
    Scalar operator()(int i, int j, int k) const { return data[geometry.index(i, j, k)]; }
    Eigen::Index size() const { return data.size(); }
};

using ScalarVolume = Volume<double>;
using MaskVolume = Volume<bool>;
using LabelVolume = Volume<std::int32_t>;

// Dense displacement field, one column per voxel, in voxel units.
struct VectorField {
    GridGeometry geometry;
    Eigen::Matrix3Xd data;

    VectorField() = default;
    explicit VectorField(const GridGeometry& g)
        : geometry(g), data(Eigen::Matrix3Xd::Zero(3, g.voxel_count())) {}
    VectorField(const GridGeometry& g, Eigen::Matrix3Xd values) : geometry(g), data(std::move(values)) {
        if (data.cols() != geometry.voxel_count())
            throw DataError("vector field data length does not match geometry");
    }

    auto operator()(int i, int j, int k) { return data.col(geometry.index(i, j, k)); }
    auto operator()(int i, int j, int k) const { return data.col(geometry.index(i, j, k)); }
    Eigen::Index size() const { return data.cols(); }
};

void require_same_geometry(const GridGeometry& a, const GridGeometry& b, const char* what);

// Trilinear interpolation weights at a point in voxel coordinates. Points
// are clamped to [0, n-1] per axis; derivatives along clamped axes are zero.
struct TrilinearStencil {
    std::array<Eigen::Index, 8> index;
    std::array<double, 8> weight;
    std::array<Eigen::Vector3d, 8> dweight;
};

TrilinearStencil trilinear_stencil(const GridGeometry& geometry, const Eigen::Vector3d& point);

double sample(const ScalarVolume& vol, const Eigen::Vector3d& point);
Eigen::Vector3d sample(const VectorField& field, const Eigen::Vector3d& point);

// Value and spatial gradient of the trilinear interpolant.
double sample_with_gradient(const ScalarVolume& vol, const Eigen::Vector3d& point, Eigen::Vector3d& gradient);
// Value and 3x3 Jacobian (d component / d point) of the interpolated field.
Eigen::Vector3d sample_with_jacobian(const VectorField& field, const Eigen::Vector3d& point,
                                     Eigen::Matrix3d& jacobian);

std::vector<double> trilinear_sample(const ScalarVolume& vol, std::span<const Eigen::Vector3d> points);

// Separable filtering along one axis with a symmetric kernel of odd length.
// Out-of-bounds taps are dropped and the result is rescaled by
// (sum of all taps) / (sum of in-bounds taps).
void filter_axis(std::span<const double> in, std::span<double> out, const Eigen::Array3i& shape, int axis,
                 std::span<const double> kernel);

ScalarVolume separable_filter(const ScalarVolume& vol, std::span<const double> kernel);

// Truncated box sums over (2r+1)^3 windows; out-of-bounds voxels contribute nothing.
Eigen::ArrayXd box_sum(const Eigen::ArrayXd& values, const Eigen::Array3i& shape, int radius);
// Number of in-bounds voxels in each truncated window.
Eigen::ArrayXd box_count(const Eigen::Array3i& shape, int radius);

std::vector<double> gaussian_kernel(double sigma_voxels);
ScalarVolume gaussian_blur(const ScalarVolume& vol, double sigma_voxels);

ScalarVolume downsample_by_two(const ScalarVolume& vol);
MaskVolume downsample_mask(const MaskVolume& mask);
GridGeometry downsampled_geometry(const GridGeometry& geometry);

// Quantile with linear interpolation between order statistics.
double quantile(std::span<const double> values, double q);

MaskVolume dilate(const MaskVolume& mask);
MaskVolume erode(const MaskVolume& mask);
MaskVolume closing(const MaskVolume& mask);
MaskVolume foreground_mask(const ScalarVolume& vol, double q = 0.05);

} // namespace mindreg
