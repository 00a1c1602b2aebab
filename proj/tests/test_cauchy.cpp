#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "evi/cauchy.hpp"

using namespace evi;

namespace {

ForcingPath zero_forcing(const TimeGrid& tg, const SpaceGrid& g) { return ForcingPath(tg, g); }

double exp_error(long n_steps) {
    // Backward Euler on u' = -u, u(0) = 1, b = 1: exact iterate (1 + tau)^{-n}.
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, n_steps};
    StepConfig cfg;
    cfg.inner_tol = 1e-13;
    auto traj = solve_cauchy(OperatorSpec::scalar_linear(1.0), PhiSpec::zero(), cfg, tg,
                             StateVector({1.0}), zero_forcing(tg, g));
    return std::abs(traj.state(n_steps)[0] - std::exp(-1.0));
}

}  // namespace

TEST_CASE("step config validation") {
    StepConfig cfg;
    CHECK_NOTHROW(validate_step_config(cfg));
    cfg.inner_max_iter = 0;
    CHECK_THROWS_AS(validate_step_config(cfg), ParameterError);
    cfg = StepConfig{};
    cfg.inner_tol = 0.0;
    CHECK_THROWS_AS(validate_step_config(cfg), ParameterError);
    cfg = StepConfig{};
    cfg.damping = 1.5;
    CHECK_THROWS_AS(validate_step_config(cfg), ParameterError);
    cfg = StepConfig{};
    cfg.damping = 0.0;
    CHECK_THROWS_AS(validate_step_config(cfg), ParameterError);
}

TEST_CASE("single implicit step: linear closed form 1/(1+tau a)") {
    auto g = SpaceGrid::scalar();
    StepConfig cfg;
    cfg.inner_tol = 1e-14;
    auto op = OperatorSpec::scalar_linear(1.0);
    auto phi = PhiSpec::zero();
    StateVector u_prev({1.0}), h(1, 0.0);

    SECTION("fixed point") {
        auto u = implicit_step(op, phi, cfg, g, 0.1, 0.1, u_prev, h);
        CHECK(u[0] == Catch::Approx(1.0 / 1.1).epsilon(1e-12));
    }
    SECTION("newton solves the linear problem immediately") {
        cfg.inner_method = StepConfig::InnerMethod::DampedNewtonOnSmoothPart;
        StepStats st;
        auto u = implicit_step(op, phi, cfg, g, 0.1, 0.1, u_prev, h, &st);
        CHECK(u[0] == Catch::Approx(1.0 / 1.1).epsilon(1e-12));
        CHECK(st.inner_iterations <= 3);
        CHECK(st.max_halving_depth == 0);
    }
    SECTION("bad tau rejected") {
        CHECK_THROWS_AS(implicit_step(op, phi, cfg, g, 0.1, 0.0, u_prev, h), ParameterError);
    }
}

TEST_CASE("single implicit step: soft threshold kills a small state") {
    auto g = SpaceGrid::scalar();
    StepConfig cfg;
    auto op = OperatorSpec::scalar_linear(0.0);
    auto phi = PhiSpec::absolute_value_subdifferential();
    auto u = implicit_step(op, phi, cfg, g, 0.1, 0.1, StateVector({0.05}), StateVector(1, 0.0));
    CHECK(u[0] == 0.0);
}

TEST_CASE("rest point stays at rest") {
    auto g = SpaceGrid::line(1.0, 7);
    TimeGrid tg{2.0, 40};
    StepConfig cfg;
    auto traj = solve_cauchy(OperatorSpec::discrete_p_laplacian(3.0),
                             PhiSpec::absolute_value_subdifferential(), cfg, tg,
                             StateVector(7, 0.0), zero_forcing(tg, g));
    for (long k = 0; k <= tg.n_steps; ++k)
        for (long i = 0; i < 7; ++i) CHECK(traj.state(k)[i] == 0.0);
}

TEST_CASE("scalar exponential benchmark and first-order convergence") {
    const double e1000 = exp_error(1000);
    CHECK(e1000 < 2e-3);

    // Halving the step size halves the error.
    const double e250 = exp_error(250);
    const double e500 = exp_error(500);
    CHECK(e250 / e500 == Catch::Approx(2.0).margin(0.2));
    CHECK(e500 / e1000 == Catch::Approx(2.0).margin(0.2));

    // The discrete solution is the exact resolvent power (1 + tau)^{-n}.
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 50};
    StepConfig cfg;
    cfg.inner_tol = 1e-14;
    auto traj = solve_cauchy(OperatorSpec::scalar_linear(1.0), PhiSpec::zero(), cfg, tg,
                             StateVector({1.0}), zero_forcing(tg, g));
    CHECK(traj.state(50)[0] == Catch::Approx(std::pow(1.0 + 0.02, -50)).epsilon(1e-11));
}

TEST_CASE("forcing is consumed at the step's right endpoint") {
    // With A = 0 and phi = 0 the scheme reduces to u_{k+1} = u_k - tau h_k.
    // Loading h_k with the right-endpoint time makes the quadrature exact for
    // the telescoped sum: u_N = -tau^2 (1 + 2 + ... + N) = -b^2 (1 + 1/N) / 2.
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 10};
    ForcingPath h(tg, g);
    for (long k = 0; k < 10; ++k) h.value(k)[0] = tg.time(k + 1);
    StepConfig cfg;
    auto traj = solve_cauchy(OperatorSpec::scalar_linear(0.0), PhiSpec::zero(), cfg, tg,
                             StateVector({0.0}), h);
    CHECK(traj.state(10)[0] == Catch::Approx(-0.55).epsilon(1e-12));
}

TEST_CASE("per-step contraction under strong monotonicity") {
    // |step(u) - step(v)| <= |u - v| / (1 + tau c); equality for linear A.
    auto g = SpaceGrid::line(1.0, 5);
    StepConfig cfg;
    cfg.inner_tol = 1e-13;
    auto op = OperatorSpec::scalar_linear(2.0);
    auto phi = PhiSpec::zero();
    const double tau = 0.25;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> noise;
    for (int trial = 0; trial < 25; ++trial) {
        StateVector u(5), v(5), h(5);
        for (long i = 0; i < 5; ++i) {
            u[i] = noise(rng);
            v[i] = noise(rng);
            h[i] = noise(rng);
        }
        auto su = implicit_step(op, phi, cfg, g, tau, tau, u, h);
        auto sv_ = implicit_step(op, phi, cfg, g, tau, tau, v, h);
        const double lhs = h_norm(sub(su, sv_), g);
        const double rhs = h_norm(sub(u, v), g) / (1.0 + tau * 2.0);
        CHECK(lhs <= rhs + 1e-10);
        CHECK(lhs == Catch::Approx(rhs).margin(1e-9));
    }

    // A proximal term adds its own modulus: the combined step contracts with
    // factor 1 / (1 + tau (c_A + c_phi)), exactly attained for linear parts.
    auto phi_lin = PhiSpec::linear(3.0);
    StateVector u({1.0, 0.5, -0.25, 2.0, 0.0}), v(5, 0.0), h(5, 0.0);
    auto su = implicit_step(op, phi_lin, cfg, g, tau, tau, u, h);
    auto sv_ = implicit_step(op, phi_lin, cfg, g, tau, tau, v, h);
    const double bound = h_norm(u, g) / (1.0 + tau * (2.0 + 3.0));
    CHECK(h_norm(sub(su, sv_), g) <= bound + 1e-10);
    CHECK(h_norm(sub(su, sv_), g) == Catch::Approx(bound).margin(1e-9));
}

TEST_CASE("discrete energy decay for the homogeneous coercive flow") {
    auto g = SpaceGrid::line(1.0, 9);
    TimeGrid tg{0.5, 20};
    StepConfig cfg;
    cfg.inner_tol = 1e-12;
    cfg.inner_max_iter = 400;
    // The quartic diffusion is stiff at this step size; the tridiagonal
    // Newton solver handles the full step directly.
    cfg.inner_method = StepConfig::InnerMethod::DampedNewtonOnSmoothPart;
    auto op = OperatorSpec::discrete_p_laplacian(4.0);
    auto x0 = sample_states(g, 1, 0.5, 31).front();
    auto traj = solve_cauchy(op, PhiSpec::zero(), cfg, tg, x0, zero_forcing(tg, g));

    const double tau = tg.tau();
    for (long k = 0; k < tg.n_steps; ++k) {
        const auto& a = traj.state(k);
        const auto& b = traj.state(k + 1);
        const double lhs = 0.5 * (dot_h(b, b, g) - dot_h(a, a, g));
        const double dissipation = dot_h(apply_A(op, tg.time(k + 1), b, g), b, g);
        CHECK(dissipation >= -1e-12);
        CHECK(lhs <= -tau * dissipation + 1e-9);
        CHECK(h_norm(b, g) <= h_norm(a, g) + 1e-12);
    }
}

TEST_CASE("newton and fixed point agree on a nonlinear nonsmooth problem") {
    // Step size chosen inside the fixed-point contraction zone so both
    // methods solve the identical discrete equation (no substepping).
    auto g = SpaceGrid::line(1.0, 9);
    TimeGrid tg{0.5, 200};
    ForcingPath h(tg, g);
    // The drive must beat the unit soft-threshold slope or every state pins
    // at zero and both methods trivially agree in one iteration.
    for (long k = 0; k < tg.n_steps; ++k)
        for (long i = 0; i < 9; ++i)
            h.value(k)[i] =
                -(1.0 + 0.05 * std::cos(tg.time(k + 1))) * (1.0 + 0.02 * static_cast<double>(i));

    auto op = OperatorSpec::discrete_p_laplacian(3.0);
    auto phi = PhiSpec::absolute_value_subdifferential();
    StateVector x0(9, 0.0);

    StepConfig fp;
    fp.inner_tol = 1e-12;
    fp.inner_max_iter = 500;
    StepConfig nw = fp;
    nw.inner_method = StepConfig::InnerMethod::DampedNewtonOnSmoothPart;

    StepStats st_fp, st_nw;
    auto traj_fp = solve_cauchy(op, phi, fp, tg, x0, h, &st_fp);
    auto traj_nw = solve_cauchy(op, phi, nw, tg, x0, h, &st_nw);
    CHECK(st_fp.max_halving_depth == 0);
    CHECK(st_nw.max_halving_depth == 0);
    CHECK(sup_distance(traj_fp, traj_nw) <= 1e-9);
    // Newton needs fewer inner iterations.
    CHECK(st_nw.inner_iterations < st_fp.inner_iterations);
}

TEST_CASE("inclusion defect is small after a converged solve") {
    auto g = SpaceGrid::line(1.0, 9);
    TimeGrid tg{1.0, 30};
    ForcingPath h(tg, g);
    for (long k = 0; k < tg.n_steps; ++k)
        for (long i = 0; i < 9; ++i) h.value(k)[i] = std::sin(tg.time(k + 1) + i);

    StepConfig cfg;
    cfg.inner_tol = 1e-11;
    cfg.inner_max_iter = 400;
    cfg.inner_method = StepConfig::InnerMethod::DampedNewtonOnSmoothPart;
    auto op = OperatorSpec::discrete_p_laplacian(3.0);
    auto phi = PhiSpec::absolute_value_subdifferential();
    StepStats st;
    auto traj = solve_cauchy(op, phi, cfg, tg, StateVector(9, 0.0), h, &st);
    REQUIRE(st.max_halving_depth == 0);

    const double tau = tg.tau();
    CHECK(inclusion_defect(op, phi, traj, h) <= 10.0 * cfg.inner_tol / tau);

    // Perturbing the trajectory inflates the defect.
    Trajectory bad = traj;
    bad.state(5)[3] += 0.01;
    CHECK(inclusion_defect(op, phi, bad, h) > 100.0 * cfg.inner_tol / tau);

    // Same contract on a gentle scalar problem with the fixed-point method.
    auto gs = SpaceGrid::scalar();
    ForcingPath hs(tg, gs);
    for (long k = 0; k < tg.n_steps; ++k) hs.value(k)[0] = -std::cos(tg.time(k + 1));
    StepConfig fp;
    fp.inner_tol = 1e-11;
    auto traj_s = solve_cauchy(OperatorSpec::scalar_linear(1.0),
                               PhiSpec::absolute_value_subdifferential(), fp, tg,
                               StateVector({0.5}), hs);
    CHECK(inclusion_defect(OperatorSpec::scalar_linear(1.0),
                           PhiSpec::absolute_value_subdifferential(), traj_s, hs) <=
          10.0 * fp.inner_tol / tau);
}

TEST_CASE("stiff linear problem triggers exactly the needed halving depth") {
    // tau * a = 3: the fixed-point map diverges until two halvings bring the
    // substep factor to 0.75.  Each substep then solves the linear resolvent
    // exactly, so the final state is a pure resolvent power.
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 10};
    StepConfig cfg;
    cfg.inner_tol = 1e-13;
    cfg.inner_max_iter = 400;
    auto op = OperatorSpec::scalar_linear(30.0);

    StepStats st;
    auto traj = solve_cauchy(op, PhiSpec::zero(), cfg, tg, StateVector({1.0}),
                             zero_forcing(tg, g), &st);
    CHECK(st.max_halving_depth == 2);
    CHECK(st.substeps > st.steps);
    const double sub_tau = tg.tau() / 4.0;
    CHECK(traj.state(1)[0] == Catch::Approx(std::pow(1.0 + 30.0 * sub_tau, -4.0)).epsilon(1e-9));
    // Absolute agreement at the end: the state decays to ~2e-10, so the
    // accumulated inner tolerance shows up relative to that scale.
    const double expect = std::pow(1.0 + 30.0 * sub_tau, -40.0);
    CHECK(traj.state(10)[0] == Catch::Approx(expect).margin(1e-12));

    // Newton handles the full step without halving.
    StepConfig nw = cfg;
    nw.inner_method = StepConfig::InnerMethod::DampedNewtonOnSmoothPart;
    StepStats st_nw;
    auto traj_nw = solve_cauchy(op, PhiSpec::zero(), nw, tg, StateVector({1.0}),
                                zero_forcing(tg, g), &st_nw);
    CHECK(st_nw.max_halving_depth == 0);
    CHECK(traj_nw.state(10)[0] == Catch::Approx(std::pow(1.0 + 3.0, -10.0)).epsilon(1e-10));
}

TEST_CASE("hopeless stiffness raises a convergence error with context") {
    auto g = SpaceGrid::scalar();
    TimeGrid tg{1.0, 4};
    StepConfig cfg;
    cfg.inner_max_iter = 50;
    auto op = OperatorSpec::scalar_linear(1.0e6);
    try {
        solve_cauchy(op, PhiSpec::zero(), cfg, tg, StateVector({1.0}), zero_forcing(tg, g));
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.step_index == 0);
        CHECK(e.iterations > 0);
        CHECK(std::string(e.what()).find("halvings") != std::string::npos);
    }
}

TEST_CASE("planar grids require the fixed-point inner method") {
    auto g = SpaceGrid::rectangle(1.0, 1.0, 3, 3);
    TimeGrid tg{0.5, 5};
    StepConfig nw;
    nw.inner_method = StepConfig::InnerMethod::DampedNewtonOnSmoothPart;
    auto op = OperatorSpec::discrete_p_laplacian(2.0);
    CHECK_THROWS_AS(solve_cauchy(op, PhiSpec::zero(), nw, tg, StateVector(9, 0.1),
                                 zero_forcing(tg, g)),
                    ParameterError);

    StepConfig fp;  // fixed point works fine
    CHECK_NOTHROW(solve_cauchy(op, PhiSpec::zero(), fp, tg, StateVector(9, 0.1),
                               zero_forcing(tg, g)));
}

TEST_CASE("uniqueness diagnostic: randomized warm starts land on the same trajectory") {
    auto g = SpaceGrid::line(1.0, 5);
    TimeGrid tg{1.0, 25};
    ForcingPath h(tg, g);
    for (long k = 0; k < tg.n_steps; ++k)
        for (long i = 0; i < 5; ++i) h.value(k)[i] = 0.3 * std::cos(tg.time(k + 1) + i);

    StepConfig cfg;
    cfg.inner_tol = 1e-12;
    cfg.inner_max_iter = 400;

    SECTION("smooth diffusion, tridiagonal newton") {
        StepConfig nw = cfg;
        nw.inner_method = StepConfig::InnerMethod::DampedNewtonOnSmoothPart;
        auto d = verify_uniqueness(OperatorSpec::discrete_p_laplacian(2.0), PhiSpec::zero(), nw,
                                   tg, StateVector(5, 0.1), h, 4, 0.1);
        CHECK(d.pass);
        CHECK(d.max_pairwise_gap <= 10.0 * cfg.inner_tol);
        CHECK(d.restarts == 4);
    }
    SECTION("nonsmooth proximal part, contractive fixed point") {
        auto d = verify_uniqueness(OperatorSpec::scalar_linear(1.0),
                                   PhiSpec::absolute_value_subdifferential(), cfg, tg,
                                   StateVector(5, 0.1), h, 4);
        CHECK(d.pass);
    }
    SECTION("zero jitter reproduces the baseline bit for bit") {
        auto d = verify_uniqueness(OperatorSpec::scalar_linear(1.0), PhiSpec::zero(), cfg, tg,
                                   StateVector(5, 0.1), h, 3, 0.0);
        CHECK(d.max_pairwise_gap == 0.0);
    }
    CHECK_THROWS_AS(verify_uniqueness(OperatorSpec::scalar_linear(1.0), PhiSpec::zero(), cfg, tg,
                                      StateVector(5, 0.1), h, 1),
                    ParameterError);
}
