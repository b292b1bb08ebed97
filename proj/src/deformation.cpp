#include "mindreg/deformation.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>

namespace mindreg {

Eigen::Array3i BSplineField::control_grid_shape(const GridGeometry& geometry, int control_spacing) {
    if (control_spacing < 1) throw DataError("control spacing must be a positive integer");
    return (geometry.shape - 1) / control_spacing + 4;
}

BSplineField BSplineField::zero(const GridGeometry& geometry, int control_spacing) {
    BSplineField f;
    f.image_geometry = geometry;
    f.control_spacing = control_spacing;
    f.control_shape = control_grid_shape(geometry, control_spacing);
    f.coefficients = Eigen::Matrix3Xd::Zero(3, f.control_count());
    return f;
}

bool BSplineField::within_bound() const {
    return coefficients.size() == 0 || coefficients.cwiseAbs().maxCoeff() <= bound();
}

void BSplineField::validate() const {
    if ((control_shape != control_grid_shape(image_geometry, control_spacing)).any())
        throw DataError("B-spline control grid does not cover the image domain");
    if (coefficients.cols() != control_count()) throw DataError("B-spline coefficient count mismatch");
    if (!coefficients.allFinite()) throw DataError("B-spline coefficients must be finite");
    if (!within_bound()) throw DataError("B-spline coefficients exceed the invertibility bound");
}

BSplineField clamp_coefficients(const Eigen::Matrix3Xd& raw, const GridGeometry& geometry, int control_spacing) {
    BSplineField f = BSplineField::zero(geometry, control_spacing);
    if (raw.cols() != f.control_count()) throw DataError("raw coefficient count mismatch");
    const double b = f.bound();
    f.coefficients = b * (raw.array() / b).tanh();
    return f;
}

Eigen::Matrix3Xd clamp_derivative(const BSplineField& clamped) {
    const double b = clamped.bound();
    return (1.0 - (clamped.coefficients.array() / b).square()).matrix();
}

Eigen::Vector4d cubic_bspline_weights(double t) {
    const double t2 = t * t, t3 = t2 * t, s = 1.0 - t;
    return {s * s * s / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0};
}

namespace {

struct AxisTable {
    std::vector<int> base;
    std::vector<Eigen::Vector4d> weights;
};

AxisTable axis_table(int target_extent, int factor, int spacing, int max_position) {
    AxisTable t;
    t.base.resize(target_extent);
    t.weights.resize(target_extent);
    for (int i = 0; i < target_extent; ++i) {
        const int x = std::min(factor * i, max_position);
        const int cell = x / spacing;
        t.base[i] = cell;
        t.weights[i] = cubic_bspline_weights(double(x - cell * spacing) / spacing);
    }
    return t;
}

void check_target(const BSplineField& field, const GridGeometry& target, int factor) {
    if (factor < 1) throw DataError("sampling factor must be positive");
    if (((target.shape - 1) * factor > field.image_geometry.shape - 1).any())
        throw DataError("sampling grid exceeds the B-spline image domain");
}

} // namespace

Eigen::Vector3d evaluate(const BSplineField& field, const Eigen::Vector3d& point) {
    if (!point.allFinite()) throw DataError("non-finite coordinate");
    std::array<int, 3> base;
    std::array<Eigen::Vector4d, 3> w;
    for (int a = 0; a < 3; ++a) {
        const double x = std::clamp(point[a], 0.0, double(field.image_geometry.shape[a] - 1));
        const double t = x / field.control_spacing;
        const int cell = std::min(int(std::floor(t)), field.control_shape[a] - 4);
        base[a] = cell;
        w[a] = cubic_bspline_weights(t - cell);
    }
    Eigen::Vector3d out = Eigen::Vector3d::Zero();
    const auto& cs = field.control_shape;
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
            for (int c = 0; c < 4; ++c) {
                const Eigen::Index idx = (Eigen::Index(base[0] + a) * cs[1] + base[1] + b) * cs[2] + base[2] + c;
                out += w[0][a] * w[1][b] * w[2][c] * field.coefficients.col(idx);
            }
    return out;
}

VectorField bspline_to_dense(const BSplineField& field) {
    return bspline_to_dense(field, field.image_geometry, 1);
}

VectorField bspline_to_dense(const BSplineField& field, const GridGeometry& target, int factor) {
    check_target(field, target, factor);
    const Eigen::Array3i& cs = field.control_shape;
    const Eigen::Array3i& n = target.shape;
    const int s = field.control_spacing;
    const AxisTable t0 = axis_table(n[0], factor, s, field.image_geometry.shape[0] - 1);
    const AxisTable t1 = axis_table(n[1], factor, s, field.image_geometry.shape[1] - 1);
    const AxisTable t2 = axis_table(n[2], factor, s, field.image_geometry.shape[2] - 1);

    // Contract the last axis, then the middle, then the first.
    Eigen::Matrix3Xd s1 = Eigen::Matrix3Xd::Zero(3, Eigen::Index(cs[0]) * cs[1] * n[2]);
    for (int a = 0; a < cs[0]; ++a)
        for (int b = 0; b < cs[1]; ++b)
            for (int k = 0; k < n[2]; ++k) {
                Eigen::Vector3d acc = Eigen::Vector3d::Zero();
                const Eigen::Index row = (Eigen::Index(a) * cs[1] + b) * cs[2] + t2.base[k];
                for (int c = 0; c < 4; ++c) acc += t2.weights[k][c] * field.coefficients.col(row + c);
                s1.col((Eigen::Index(a) * cs[1] + b) * n[2] + k) = acc;
            }

    Eigen::Matrix3Xd s2 = Eigen::Matrix3Xd::Zero(3, Eigen::Index(cs[0]) * n[1] * n[2]);
    for (int a = 0; a < cs[0]; ++a)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                Eigen::Vector3d acc = Eigen::Vector3d::Zero();
                for (int b = 0; b < 4; ++b)
                    acc += t1.weights[j][b] * s1.col((Eigen::Index(a) * cs[1] + t1.base[j] + b) * n[2] + k);
                s2.col((Eigen::Index(a) * n[1] + j) * n[2] + k) = acc;
            }

    VectorField out(target);
    const double inv_factor = 1.0 / factor;
    for (int i = 0; i < n[0]; ++i)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                Eigen::Vector3d acc = Eigen::Vector3d::Zero();
                for (int a = 0; a < 4; ++a)
                    acc += t0.weights[i][a] * s2.col((Eigen::Index(t0.base[i] + a) * n[1] + j) * n[2] + k);
                out.data.col(target.index(i, j, k)) = acc * inv_factor;
            }
    return out;
}

Eigen::Matrix3Xd bspline_to_dense_adjoint(const BSplineField& field, const VectorField& grad, int factor) {
    const GridGeometry& target = grad.geometry;
    check_target(field, target, factor);
    const Eigen::Array3i& cs = field.control_shape;
    const Eigen::Array3i& n = target.shape;
    const int s = field.control_spacing;
    const AxisTable t0 = axis_table(n[0], factor, s, field.image_geometry.shape[0] - 1);
    const AxisTable t1 = axis_table(n[1], factor, s, field.image_geometry.shape[1] - 1);
    const AxisTable t2 = axis_table(n[2], factor, s, field.image_geometry.shape[2] - 1);
    const double inv_factor = 1.0 / factor;

    Eigen::Matrix3Xd s2 = Eigen::Matrix3Xd::Zero(3, Eigen::Index(cs[0]) * n[1] * n[2]);
    for (int i = 0; i < n[0]; ++i)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                const Eigen::Vector3d g = grad.data.col(target.index(i, j, k)) * inv_factor;
                for (int a = 0; a < 4; ++a)
                    s2.col((Eigen::Index(t0.base[i] + a) * n[1] + j) * n[2] + k) += t0.weights[i][a] * g;
            }

    Eigen::Matrix3Xd s1 = Eigen::Matrix3Xd::Zero(3, Eigen::Index(cs[0]) * cs[1] * n[2]);
    for (int a = 0; a < cs[0]; ++a)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) {
                const Eigen::Vector3d g = s2.col((Eigen::Index(a) * n[1] + j) * n[2] + k);
                for (int b = 0; b < 4; ++b)
                    s1.col((Eigen::Index(a) * cs[1] + t1.base[j] + b) * n[2] + k) += t1.weights[j][b] * g;
            }

    Eigen::Matrix3Xd out = Eigen::Matrix3Xd::Zero(3, field.control_count());
    for (int a = 0; a < cs[0]; ++a)
        for (int b = 0; b < cs[1]; ++b)
            for (int k = 0; k < n[2]; ++k) {
                const Eigen::Vector3d g = s1.col((Eigen::Index(a) * cs[1] + b) * n[2] + k);
                const Eigen::Index row = (Eigen::Index(a) * cs[1] + b) * cs[2] + t2.base[k];
                for (int c = 0; c < 4; ++c) out.col(row + c) += t2.weights[k][c] * g;
            }
    return out;
}

VectorField identity_field(const GridGeometry& geometry) {
    VectorField out(geometry);
    Eigen::Index idx = 0;
    for (int i = 0; i < geometry.shape[0]; ++i)
        for (int j = 0; j < geometry.shape[1]; ++j)
            for (int k = 0; k < geometry.shape[2]; ++k) out.data.col(idx++) = Eigen::Vector3d(i, j, k);
    return out;
}

VectorField compose(const VectorField& first, const VectorField& second) {
    require_same_geometry(first.geometry, second.geometry, "compose");
    const VectorField grid = identity_field(first.geometry);
    VectorField out(first.geometry);
    for (Eigen::Index v = 0; v < out.size(); ++v) {
        const Eigen::Vector3d d = first.data.col(v);
        out.data.col(v) = d + sample(second, grid.data.col(v) + d);
    }
    return out;
}

void compose_adjoint(const VectorField& first, const VectorField& second, const VectorField& grad_out,
                     VectorField* grad_first, VectorField* grad_second) {
    require_same_geometry(first.geometry, second.geometry, "compose_adjoint");
    const VectorField grid = identity_field(first.geometry);
    for (Eigen::Index v = 0; v < first.size(); ++v) {
        const Eigen::Vector3d g = grad_out.data.col(v);
        const TrilinearStencil st = trilinear_stencil(second.geometry, grid.data.col(v) + first.data.col(v));
        if (grad_first) {
            Eigen::Matrix3d jac = Eigen::Matrix3d::Zero();
            for (int n = 0; n < 8; ++n) jac += second.data.col(st.index[n]) * st.dweight[n].transpose();
            grad_first->data.col(v) += g + jac.transpose() * g;
        }
        if (grad_second)
            for (int n = 0; n < 8; ++n) grad_second->data.col(st.index[n]) += st.weight[n] * g;
    }
}

VectorField invert_fixed_point(const VectorField& u, const InversionOptions& options, const VectorField* initial) {
    const VectorField grid = identity_field(u.geometry);
    VectorField v(u.geometry);
    if (initial) {
        require_same_geometry(initial->geometry, u.geometry, "invert_fixed_point initial");
        v.data = initial->data;
    } else {
        v.data = -u.data;
    }
    VectorField next(u.geometry);
    double change = 0.0;
    for (int it = 0; it < options.max_iter; ++it) {
        change = 0.0;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            next.data.col(i) = -sample(u, grid.data.col(i) + v.data.col(i));
            change = std::max(change, (next.data.col(i) - v.data.col(i)).cwiseAbs().maxCoeff());
        }
        std::swap(v.data, next.data);
        if (change < options.tol) return v;
    }
    throw NumericalError("fixed-point inversion did not converge", change);
}

namespace {

Eigen::Matrix3d central_gradient(const VectorField& u, int i, int j, int k) {
    const auto& n = u.geometry.shape;
    const std::array<int, 3> p{i, j, k};
    Eigen::Matrix3d g;
    for (int a = 0; a < 3; ++a) {
        std::array<int, 3> lo = p, hi = p;
        double h = 2.0;
        if (p[a] == 0) {
            hi[a] = 1;
            h = 1.0;
        } else if (p[a] == n[a] - 1) {
            lo[a] = n[a] - 2;
            h = 1.0;
        } else {
            lo[a] -= 1;
            hi[a] += 1;
        }
        g.col(a) = (u(hi[0], hi[1], hi[2]) - u(lo[0], lo[1], lo[2])) / h;
    }
    return g;
}

} // namespace

ScalarVolume jacobian_determinant(const VectorField& u) {
    u.geometry.require_min_extent(2, "jacobian_determinant");
    const auto& n = u.geometry.shape;
    ScalarVolume out(u.geometry);
    for (int i = 0; i < n[0]; ++i)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k)
                out(i, j, k) = (Eigen::Matrix3d::Identity() + central_gradient(u, i, j, k)).determinant();
    return out;
}

double non_diffeomorphic_volume(const VectorField& u) { return non_diffeomorphic_volume(u, nullptr); }

double non_diffeomorphic_volume(const VectorField& u, VectorField* grad, double weight) {
    u.geometry.require_min_extent(3, "non_diffeomorphic_volume");
    const auto& n = u.geometry.shape;
    const double interior = double(n[0] - 2) * (n[1] - 2) * (n[2] - 2);
    double total = 0.0;
    for (int i = 1; i < n[0] - 1; ++i)
        for (int j = 1; j < n[1] - 1; ++j)
            for (int k = 1; k < n[2] - 1; ++k) {
                const Eigen::Matrix3d a = Eigen::Matrix3d::Identity() + central_gradient(u, i, j, k);
                const double det = a.determinant();
                if (!(det < 0.0)) continue;
                total -= det;
                if (!grad) continue;
                const std::array<int, 3> p{i, j, k};
                for (int ax = 0; ax < 3; ++ax) {
                    // d det / d column ax of A.
                    const Eigen::Vector3d ddet = a.col((ax + 1) % 3).cross(a.col((ax + 2) % 3));
                    const Eigen::Vector3d g = -weight * ddet / (2.0 * interior);
                    std::array<int, 3> lo = p, hi = p;
                    lo[ax] -= 1;
                    hi[ax] += 1;
                    (*grad)(hi[0], hi[1], hi[2]) += g;
                    (*grad)(lo[0], lo[1], lo[2]) -= g;
                }
            }
    return total / interior;
}

ScalarVolume apply_warp(const ScalarVolume& img, const VectorField& u) {
    require_same_geometry(img.geometry, u.geometry, "apply_warp");
    const VectorField grid = identity_field(u.geometry);
    ScalarVolume out(img.geometry);
    for (Eigen::Index v = 0; v < out.size(); ++v) out.data[v] = sample(img, grid.data.col(v) + u.data.col(v));
    return out;
}

LabelVolume apply_warp_nearest(const LabelVolume& labels, const VectorField& u) {
    require_same_geometry(labels.geometry, u.geometry, "apply_warp_nearest");
    const auto& n = labels.geometry.shape;
    LabelVolume out(labels.geometry);
    const VectorField grid = identity_field(u.geometry);
    for (Eigen::Index v = 0; v < out.size(); ++v) {
        const Eigen::Vector3d p = grid.data.col(v) + u.data.col(v);
        if (!p.allFinite()) throw DataError("non-finite coordinate");
        std::array<int, 3> q;
        for (int a = 0; a < 3; ++a) q[a] = std::clamp(int(std::floor(p[a] + 0.5)), 0, n[a] - 1);
        out.data[v] = labels(q[0], q[1], q[2]);
    }
    return out;
}

Eigen::Vector3d map_point(const StageStack& stack, const Eigen::Vector3d& point) {
    Eigen::Vector3d p = point;
    for (const auto& stage : stack.stages) p += evaluate(stage, p);
    return p;
}

Eigen::Vector3d invert_point(const BSplineField& field, const Eigen::Vector3d& point, const InversionOptions& options) {
    Eigen::Vector3d q = point - evaluate(field, point);
    double change = 0.0;
    for (int it = 0; it < options.max_iter; ++it) {
        const Eigen::Vector3d next = point - evaluate(field, q);
        change = (next - q).cwiseAbs().maxCoeff();
        q = next;
        if (change < options.tol) return q;
    }
    throw NumericalError("pointwise inversion did not converge", change);
}

InverseStack inverse_of(const StageStack& stack) {
    return InverseStack{{stack.stages.rbegin(), stack.stages.rend()}};
}

Eigen::Vector3d map_point(const InverseStack& stack, const Eigen::Vector3d& point, const InversionOptions& options) {
    Eigen::Vector3d p = point;
    for (const auto& stage : stack.stages) p = invert_point(stage, p, options);
    return p;
}

namespace {

template <typename Stack, typename Map>
VectorField dense_from_map(const Stack& stack, Map map) {
    if (stack.stages.empty()) throw DataError("stack_to_dense: empty stack");
    const GridGeometry& g = stack.stages.front().image_geometry;
    for (const auto& stage : stack.stages) require_same_geometry(stage.image_geometry, g, "stack_to_dense");
    VectorField out(g);
    const VectorField grid = identity_field(g);
    for (Eigen::Index v = 0; v < out.size(); ++v) out.data.col(v) = map(grid.data.col(v)) - grid.data.col(v);
    return out;
}

} // namespace

VectorField stack_to_dense(const StageStack& stack) {
    if (stack.stages.size() == 1) return bspline_to_dense(stack.stages.front());
    return dense_from_map(stack, [&](const Eigen::Vector3d& p) { return map_point(stack, p); });
}

VectorField stack_to_dense(const InverseStack& stack, const InversionOptions& options) {
    return dense_from_map(stack, [&](const Eigen::Vector3d& p) { return map_point(stack, p, options); });
}

VectorField stack_to_dense(const DenseStack& stack) {
    if (stack.stages.empty()) throw DataError("stack_to_dense: empty stack");
    VectorField acc = stack.stages.front();
    for (size_t s = 1; s < stack.stages.size(); ++s) acc = compose(acc, stack.stages[s]);
    return acc;
}

DenseStack invert_stack(const StageStack& stack, const InversionOptions& options) {
    DenseStack out;
    for (auto it = stack.stages.rbegin(); it != stack.stages.rend(); ++it)
        out.stages.push_back(invert_fixed_point(bspline_to_dense(*it), options));
    return out;
}

double inverse_consistency_residual(const VectorField& forward, const VectorField& backward) {
    const VectorField round_trip = compose(backward, forward);
    const VectorField grid = identity_field(forward.geometry);
    const Eigen::Array3d upper = (forward.geometry.shape - 1).cast<double>();
    double worst = 0.0;
    for (Eigen::Index v = 0; v < forward.size(); ++v) {
        const Eigen::Array3d p = (grid.data.col(v) + backward.data.col(v)).array();
        if ((p < 0.0).any() || (p > upper).any()) continue;
        worst = std::max(worst, round_trip.data.col(v).norm());
    }
    return worst;
}

double inverse_consistency_residual(const StageStack& forward, const InverseStack& backward,
                                    const InversionOptions& options) {
    if (forward.stages.empty()) throw DataError("inverse_consistency_residual: empty stack");
    const GridGeometry& g = forward.stages.front().image_geometry;
    const Eigen::Array3d upper = (g.shape - 1).cast<double>();
    double worst = 0.0;
    for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int k = 0; k < g.shape[2]; ++k) {
                const Eigen::Vector3d x(i, j, k);
                const Eigen::Vector3d b = map_point(backward, x, options);
                if ((b.array() < 0.0).any() || (b.array() > upper).any()) continue;
                worst = std::max(worst, (map_point(forward, b) - x).norm());
            }
    return worst;
}

} // namespace mindreg
