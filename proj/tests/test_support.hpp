#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include "mindreg/deformation.hpp"
#include "mindreg/volume.hpp"

namespace mindreg::testing {

inline GridGeometry cube(int n) { return GridGeometry(Eigen::Array3i::Constant(n)); }

inline ScalarVolume random_volume(const GridGeometry& g, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    ScalarVolume v(g);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data[i] = dist(rng);
    return v;
}

inline ScalarVolume fill_volume(const GridGeometry& g, const std::function<double(int, int, int)>& fn) {
    ScalarVolume v(g);
    for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int k = 0; k < g.shape[2]; ++k) v(i, j, k) = fn(i, j, k);
    return v;
}

inline VectorField fill_field(const GridGeometry& g, const std::function<Eigen::Vector3d(int, int, int)>& fn) {
    VectorField v(g);
    for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int k = 0; k < g.shape[2]; ++k) v(i, j, k) = fn(i, j, k);
    return v;
}

// Smooth blob image with structure on several scales.
inline ScalarVolume smooth_phantom(const GridGeometry& g, std::uint64_t seed, int blobs = 6) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ScalarVolume v(g);
    const Eigen::Array3d n = g.shape.cast<double>();
    for (int b = 0; b < blobs; ++b) {
        const Eigen::Array3d c = n * (0.25 + 0.5 * Eigen::Array3d(u(rng), u(rng), u(rng)));
        const Eigen::Array3d r = n * (0.08 + 0.12 * Eigen::Array3d(u(rng), u(rng), u(rng)));
        const double amp = 0.3 + 0.7 * u(rng);
        for (int i = 0; i < g.shape[0]; ++i)
            for (int j = 0; j < g.shape[1]; ++j)
                for (int k = 0; k < g.shape[2]; ++k) {
                    const Eigen::Array3d d = (Eigen::Array3d(i, j, k) - c) / r;
                    v(i, j, k) += amp * std::exp(-0.5 * d.square().sum());
                }
    }
    return v;
}

inline BSplineField random_bspline(const GridGeometry& g, int spacing, double fraction_of_bound,
                                   std::uint64_t seed) {
    BSplineField f = BSplineField::zero(g, spacing);
    std::mt19937_64 rng(seed);
    const double m = fraction_of_bound * f.bound();
    std::uniform_real_distribution<double> dist(-m, m);
    for (Eigen::Index i = 0; i < f.coefficients.size(); ++i) f.coefficients.data()[i] = dist(rng);
    return f;
}

inline MaskVolume full_mask(const GridGeometry& g) { return MaskVolume(g, true); }

} // namespace mindreg::testing
