#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "evi/relaxation.hpp"

using namespace evi;

namespace {

ForcingPath constant_path(const TimeGrid& tg, const SpaceGrid& g, double value) {
    ForcingPath h(tg, g);
    for (auto& v : h.values)
        for (long i = 0; i < v.size(); ++i) v[i] = value;
    return h;
}

MultimapSpec unit_interval_control() {
    MultimapSpec F;
    F.drift = Drift::zero();
    F.shape = ControlShape::interval(-1.0, 1.0);
    F.gains = {StateVector({1.0})};
    return F;
}

}  // namespace

TEST_CASE("chatter: centered target splits each window exactly in half") {
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 40};
    Trajectory u(tg, g);
    auto F = unit_interval_control();
    const double delta = 0.1;  // 4 steps per window

    auto beta = chatter(F, u, constant_path(tg, g, 0.0), delta);
    CHECK(beta.value(0)[0] == 1.0);
    CHECK(beta.value(1)[0] == 1.0);
    CHECK(beta.value(2)[0] == -1.0);
    CHECK(beta.value(3)[0] == -1.0);
    for (long k = 0; k < tg.n_steps; ++k)
        CHECK(std::abs(beta.value(k)[0]) == 1.0);

    // The sliding-window seminorm of the gap is exactly half a window: the
    // integral peaks at the mid-window switch.
    const double gap = weak_norm(sub(beta, constant_path(tg, g, 0.0)));
    CHECK(gap == Catch::Approx(delta / 2.0).epsilon(1e-12));
}

TEST_CASE("chatter: a target already at a vertex passes through unchanged") {
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 20};
    Trajectory u(tg, g);
    auto F = unit_interval_control();

    auto beta = chatter(F, u, constant_path(tg, g, 1.0), 0.2);
    for (long k = 0; k < tg.n_steps; ++k) CHECK(beta.value(k)[0] == 1.0);
    CHECK(weak_norm(sub(beta, constant_path(tg, g, 1.0))) == 0.0);
}

TEST_CASE("chatter: off-center target gets a three-quarter duty cycle") {
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 40};
    const double tau = tg.tau();
    Trajectory u(tg, g);
    auto F = unit_interval_control();
    auto target = constant_path(tg, g, 0.5);

    auto beta = chatter(F, u, target, 4.0 * tau);
    // Window integral 4*tau*0.5 = 2*tau needs three steps at +1 and one at -1.
    CHECK(beta.value(0)[0] == 1.0);
    CHECK(beta.value(1)[0] == 1.0);
    CHECK(beta.value(2)[0] == 1.0);
    CHECK(beta.value(3)[0] == -1.0);
    // Zero carry: every window repeats the same pattern.
    CHECK(beta.value(36)[0] == 1.0);
    CHECK(beta.value(39)[0] == -1.0);
    CHECK(weak_norm(sub(beta, target)) == Catch::Approx(1.5 * tau).epsilon(1e-12));
}

TEST_CASE("chatter: fractional duty cycles diffuse the rounding error") {
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 400};
    const double tau = tg.tau();
    Trajectory u(tg, g);
    auto F = unit_interval_control();
    auto target = constant_path(tg, g, 0.3);
    const double delta = 4.0 * tau;

    auto beta = chatter(F, u, target, delta);
    for (long k = 0; k < tg.n_steps; ++k)
        CHECK(std::abs(beta.value(k)[0]) == 1.0);
    // Carried rounding keeps the running integrals within one step of each
    // other, so the window seminorm stays below two steps' worth of range.
    CHECK(weak_norm(sub(beta, target)) <= 2.0 * delta);
    // The full-period integral is reproduced up to the final carry.
    double ib = 0.0;
    for (long k = 0; k < tg.n_steps; ++k) ib += tau * beta.value(k)[0];
    CHECK(ib == Catch::Approx(0.3).margin(2.0 * tau));
}

TEST_CASE("chatter: two box channels are filled independently") {
    auto g = SpaceGrid::line(1.0, 2);
    TimeGrid tg{1.0, 40};
    Trajectory u(tg, g);
    MultimapSpec F;
    F.drift = Drift::zero();
    F.shape = ControlShape::box(1.0, 2);
    F.gains = {StateVector({1.0, 0.0}), StateVector({0.0, 1.0})};

    ForcingPath target(tg, g);
    for (auto& v : target.values) {
        v[0] = 0.0;  // channel 1 centered
        v[1] = 0.5;  // channel 2 at three-quarter duty
    }
    auto beta = chatter(F, u, target, 4.0 * tg.tau());
    CHECK(beta.value(0)[0] == 1.0);
    CHECK(beta.value(0)[1] == 1.0);
    CHECK(beta.value(1)[0] == 1.0);
    CHECK(beta.value(1)[1] == 1.0);
    CHECK(beta.value(2)[0] == -1.0);
    CHECK(beta.value(2)[1] == 1.0);
    CHECK(beta.value(3)[0] == -1.0);
    CHECK(beta.value(3)[1] == -1.0);
}

TEST_CASE("chatter: input validation") {
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 40};
    Trajectory u(tg, g);
    auto F = unit_interval_control();
    auto target = constant_path(tg, g, 0.0);

    SECTION("window must be a whole number of steps") {
        CHECK_THROWS_AS(chatter(F, u, target, 1.5 * tg.tau()), ParameterError);
        CHECK_THROWS_AS(chatter(F, u, target, 0.25 * tg.tau()), ParameterError);
    }
    SECTION("finite control sets cannot chatter") {
        MultimapSpec Ffin;
        Ffin.shape = ControlShape::finite_set({{-1.0}, {1.0}});
        Ffin.gains = {StateVector({1.0})};
        CHECK_THROWS_AS(chatter(Ffin, u, target, 0.1), ParameterError);
    }
    SECTION("target grid must match the trajectory grid") {
        TimeGrid other{1.0, 20};
        CHECK_THROWS_AS(chatter(F, u, constant_path(other, g, 0.0), 0.1), DimensionError);
    }
}

TEST_CASE("gronwall gap bound evaluates its closed form") {
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 10};

    RelaxationRun rel;
    rel.convex_solution = Trajectory(tg, g);  // zero reference
    rel.convex_forcing = ForcingPath(tg, g);
    rel.lipschitz_modulus = 0.25;

    ExtremalRun run;
    run.eps_n = 0.5;
    run.trajectory = Trajectory(tg, g);
    for (long k = 0; k <= tg.n_steps; ++k) run.trajectory.state(k)[0] = 1.0;
    run.extremal_forcing = constant_path(tg, g, 0.5);
    run.projected_target = constant_path(tg, g, 0.0);

    // Pairing prefix grows linearly to 0.5 * b = 0.5, so the bound is
    // sqrt((2 * 0.5 + 0.5) * exp(2 * 0.25 * 1)).
    const double expect = std::sqrt(1.5 * std::exp(0.5));
    CHECK(gronwall_gap_bound(rel, run) == Catch::Approx(expect).epsilon(1e-12));

    // With no drift modulus the exponential factor drops out entirely.
    rel.lipschitz_modulus = 0.0;
    CHECK(gronwall_gap_bound(rel, run) == Catch::Approx(std::sqrt(1.5)).epsilon(1e-12));
}

TEST_CASE("relaxation runs: a control-free problem is reproduced exactly") {
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 40};
    StepConfig cfg;
    cfg.inner_tol = 1e-13;
    auto op = OperatorSpec::scalar_linear(1.0);

    MultimapSpec F;
    F.drift = Drift::constant(-1.0);
    F.shape = ControlShape::none();

    Trajectory u(tg, g);
    for (long k = 0; k <= tg.n_steps; ++k) u.state(k)[0] = 1.0;
    auto h = constant_path(tg, g, -1.0);

    auto rel = relax_approximate(op, PhiSpec::zero(), cfg, tg, F, u, h, {0.1, 0.05});
    REQUIRE(rel.runs.size() == 2);
    for (const auto& run : rel.runs) {
        CHECK(run.sup_gap <= 1e-15);  // one-step rounding only
        CHECK(run.weak_gap == 0.0);
        CHECK(run.refresh_residual <= 1e-15);
        CHECK(run.gronwall_bound >= 0.0);
    }
}

TEST_CASE("relaxation runs: halving the window halves the trajectory gap") {
    auto g = SpaceGrid::scalar();
    const double b = 1.0;
    TimeGrid tg{b, 3200};
    StepConfig cfg;
    cfg.inner_tol = 1e-12;
    auto op = OperatorSpec::scalar_linear(1.0);
    auto F = unit_interval_control();

    // The convex rest point: zero trajectory driven by the zero selection.
    Trajectory u(tg, g);
    ForcingPath h(tg, g);

    std::vector<double> schedule{b / 10, b / 20, b / 40, b / 80};
    auto rel = relax_approximate(op, PhiSpec::zero(), cfg, tg, F, u, h, schedule);
    REQUIRE(rel.runs.size() == 4);

    for (size_t i = 0; i < rel.runs.size(); ++i) {
        const auto& run = rel.runs[i];
        // Extreme-point forcing throughout.
        for (long k = 0; k < tg.n_steps; ++k)
            CHECK(std::abs(run.extremal_forcing.value(k)[0]) == 1.0);
        // Weak-gap certificate: within one window the integrals differ by at
        // most the window length times the forcing bound on either side.
        const double eta = observed_forcing_bound(run, g);
        CHECK(run.weak_gap <= run.delta * 2.0 * eta);
        // Predicted cap dominates the measured gap.
        CHECK(run.sup_gap <= run.gronwall_bound);
        // Strictly finer windows track strictly better.
        if (i > 0) {
            CHECK(run.sup_gap < rel.runs[i - 1].sup_gap);
            const double ratio = rel.runs[i - 1].sup_gap / run.sup_gap;
            CHECK(ratio >= 1.6);
            CHECK(ratio <= 2.4);
        }
    }
    // The square-wave response peaks near half a window after the first
    // switch, so the coarsest run sits near delta/2.
    CHECK(rel.runs[0].sup_gap == Catch::Approx(schedule[0] / 2.0).epsilon(0.15));
}

TEST_CASE("relaxation runs: a long enough halving schedule reaches one twentieth") {
    auto g = SpaceGrid::scalar();
    const double b = 1.0;
    TimeGrid tg{b, 3200};
    StepConfig cfg;
    cfg.inner_tol = 1e-12;
    auto op = OperatorSpec::scalar_linear(1.0);
    auto F = unit_interval_control();
    Trajectory u(tg, g);
    ForcingPath h(tg, g);

    std::vector<double> schedule{b / 10, b / 20, b / 40, b / 80, b / 160, b / 320};
    auto rel = relax_approximate(op, PhiSpec::zero(), cfg, tg, F, u, h, schedule);
    REQUIRE(rel.runs.size() == 6);
    CHECK(rel.runs.back().sup_gap <= 0.05 * rel.runs.front().sup_gap);
    CHECK(rel.runs.back().weak_gap <= rel.runs.back().delta * 2.0);
}

TEST_CASE("relaxation runs: state-dependent drift stays certified") {
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 800};
    StepConfig cfg;
    cfg.inner_tol = 1e-12;
    auto op = OperatorSpec::scalar_linear(1.0);

    MultimapSpec F;
    F.drift = Drift::saturating(0.5);
    F.shape = ControlShape::interval(-1.0, 1.0);
    F.gains = {StateVector({1.0})};

    // u = 0, h = 0 solves the convex problem: the drift vanishes at zero and
    // zero is an admissible control value.
    Trajectory u(tg, g);
    ForcingPath h(tg, g);

    auto rel = relax_approximate(op, PhiSpec::zero(), cfg, tg, F, u, h, {0.1, 0.05});
    CHECK(rel.lipschitz_modulus == 0.5);
    for (const auto& run : rel.runs) {
        const double eta = observed_forcing_bound(run, g);
        CHECK(eta <= 1.5);
        CHECK(run.weak_gap <= run.delta * 2.0 * eta);
        CHECK(run.sup_gap <= run.gronwall_bound);
        CHECK(run.sup_gap <= 2.0 * run.delta);
        // The refresh re-selects against the chattered trajectory; with the
        // drift Lipschitz modulus 1/2 it moves the trajectory by at most the
        // same order as the gap itself.
        CHECK(run.refresh_residual <= 2.0 * run.delta);
    }
    CHECK(rel.runs[1].sup_gap < rel.runs[0].sup_gap);
}

TEST_CASE("relaxation runs: schedule validation") {
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 40};
    StepConfig cfg;
    auto op = OperatorSpec::scalar_linear(1.0);
    auto F = unit_interval_control();
    Trajectory u(tg, g);
    ForcingPath h(tg, g);

    CHECK_THROWS_AS(relax_approximate(op, PhiSpec::zero(), cfg, tg, F, u, h, {}),
                    ParameterError);
    CHECK_THROWS_AS(relax_approximate(op, PhiSpec::zero(), cfg, tg, F, u, h, {0.1, 0.1}),
                    ParameterError);
    CHECK_THROWS_AS(relax_approximate(op, PhiSpec::zero(), cfg, tg, F, u, h, {0.1, -0.05}),
                    ParameterError);
}

TEST_CASE("relaxation table: stable four-column format") {
    RelaxationRun rel;
    ExtremalRun a;
    a.delta = 0.1;
    a.weak_gap = 0.05;
    a.sup_gap = 0.0125;
    a.gronwall_bound = 0.5;
    ExtremalRun b;
    b.delta = 0.05;
    b.weak_gap = 0.025;
    b.sup_gap = 1.0 / 3.0;
    b.gronwall_bound = 0.25;
    rel.runs = {a, b};

    const std::string csv = relaxation_csv(rel);
    CHECK(csv ==
          "delta,weak_gap,sup_gap,gronwall_bound\n"
          "0.1,0.05,0.0125,0.5\n"
          "0.05,0.025,0.333333333333333,0.25\n");
    // Byte-identical on repeated evaluation.
    CHECK(relaxation_csv(rel) == csv);
}
