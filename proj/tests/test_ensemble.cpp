#include "doctest.h"
#include "test_support.hpp"

#include "mindreg/ensemble.hpp"
#include "mindreg/synth.hpp"

using namespace mindreg;
using namespace mindreg::testing;

namespace {

RegistrationConfig quick_config() {
    RegistrationConfig c;
    c.levels = 2;
    c.control_spacing_schedule = {8, 4};
    c.iterations_per_level = 30;
    c.final_phase_iterations = 10;
    c.window_radius = 2;
    return c;
}

RegistrationResult synthetic_result(const GridGeometry& g, std::uint64_t seed, double fraction = 0.9) {
    RegistrationResult r;
    r.geometry = g;
    r.forward_stack.stages = {random_bspline(g, 8, fraction, seed), random_bspline(g, 4, fraction, seed + 1000)};
    r.backward_stack = inverse_of(r.forward_stack);
    r.converged_flags = {true, true};
    return r;
}

BenchCase small_case(std::uint64_t seed) {
    PhantomSpec spec;
    spec.shape = {24, 24, 24};
    spec.seed = seed;
    spec.deformation_max = 2.0;
    spec.control_spacing = 6;
    return make_case(spec);
}

} // namespace

TEST_CASE("ensemble_average algebra") {
    const GridGeometry g = cube(16);
    const RegistrationResult r = synthetic_result(g, 1);
    const RegistrationResult same = ensemble_average({r, r, r, r, r});
    for (size_t s = 0; s < 2; ++s) CHECK(same.forward_stack.stages[s].coefficients == r.forward_stack.stages[s].coefficients);

    RegistrationResult neg = r;
    for (auto& s : neg.forward_stack.stages) s.coefficients = -s.coefficients;
    const RegistrationResult zero = ensemble_average({r, neg});
    for (const auto& s : zero.forward_stack.stages) CHECK(s.coefficients.isZero(0));

    // Member-order running mean is close to any other order.
    std::vector<RegistrationResult> members;
    for (std::uint64_t m = 0; m < 5; ++m) members.push_back(synthetic_result(g, 10 + m));
    const RegistrationResult avg = ensemble_average(members);
    std::vector<RegistrationResult> reversed(members.rbegin(), members.rend());
    const RegistrationResult avg_rev = ensemble_average(reversed);
    for (size_t s = 0; s < 2; ++s) {
        Eigen::Matrix3Xd mean = Eigen::Matrix3Xd::Zero(3, avg.forward_stack.stages[s].coefficients.cols());
        for (const auto& m : members) mean += m.forward_stack.stages[s].coefficients / 5.0;
        CHECK((avg.forward_stack.stages[s].coefficients - mean).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((avg.forward_stack.stages[s].coefficients - avg_rev.forward_stack.stages[s].coefficients)
                  .cwiseAbs()
                  .maxCoeff() < 1e-14);
    }

    // Saturated members: the average never leaves the bound.
    std::vector<RegistrationResult> saturated;
    for (std::uint64_t m = 0; m < 7; ++m) {
        RegistrationResult s = synthetic_result(g, 50 + m);
        for (auto& st : s.forward_stack.stages) st.coefficients = st.coefficients.array().sign() * st.bound();
        saturated.push_back(s);
    }
    const RegistrationResult sat = ensemble_average(saturated);
    for (const auto& s : sat.forward_stack.stages) CHECK(s.within_bound());
    CHECK(non_diffeomorphic_volume(sat.forward_field()) == 0.0);

    RegistrationResult odd = r;
    odd.forward_stack.stages.pop_back();
    CHECK_THROWS_AS(ensemble_average({r, odd}), DataError);
    CHECK_THROWS_AS(ensemble_average({}), DataError);
}

TEST_CASE("run_ensemble") {
    const BenchCase c = small_case(3);
    const RegistrationConfig cfg = quick_config();

    EnsembleConfig one;
    one.members = 1;
    const auto single = run_ensemble(c.fixed, c.moving, cfg, one);
    REQUIRE(single.size() == 1);
    const RegistrationResult plain = register_pair(c.fixed, c.moving, cfg);
    for (size_t s = 0; s < plain.forward_stack.stages.size(); ++s)
        CHECK(single[0].forward_stack.stages[s].coefficients == plain.forward_stack.stages[s].coefficients);

    const EnsembleConfig five;
    const auto a = run_ensemble(c.fixed, c.moving, cfg, five);
    const auto b = run_ensemble(c.fixed, c.moving, cfg, five);
    REQUIRE(a.size() == 5);
    int distinct = 0;
    for (size_t m = 0; m < a.size(); ++m) {
        for (size_t s = 0; s < a[m].forward_stack.stages.size(); ++s)
            CHECK(a[m].forward_stack.stages[s].coefficients == b[m].forward_stack.stages[s].coefficients);
        if (m > 0 && a[m].forward_stack.stages.back().coefficients != a[0].forward_stack.stages.back().coefficients)
            ++distinct;
    }
    CHECK(distinct >= 1);

    const RegistrationResult avg = ensemble_average(a, c.fixed, c.moving, cfg);
    for (const auto& s : avg.forward_stack.stages) CHECK(s.within_bound());
    CHECK(non_diffeomorphic_volume(avg.forward_field()) == 0.0);
    CHECK(inverse_consistency_residual(avg.forward_stack, avg.backward_stack) < 0.05);
    REQUIRE(avg.loss_history.size() == 1);
    CHECK(std::isfinite(avg.loss_history[0].total));

    EnsembleConfig bad;
    bad.members = 0;
    CHECK_THROWS_AS(run_ensemble(c.fixed, c.moving, cfg, bad), DataError);
}
