#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "json.hpp"
#include "vsheet/compat.hpp"

#include <cmath>
#include <numbers>

using namespace vsheet;
using namespace vsheet::compat;

namespace {

constexpr double pi = std::numbers::pi;

GridSpec grid(int n = 32, int nt = 32) {
    GridSpec g;
    g.T = 0.5;
    g.L1 = 2.0;
    g.L2 = 2.0;
    g.n1 = n;
    g.n2 = n;
    g.nt = nt;
    return g;
}

const model::BackgroundSheet bg = model::BackgroundSheet::symmetric(1, 1, 4.2);

// C-infinity bump of radius r around (a, b)
double cbump(double x1, double x2, double a, double b, double r) {
    const double q = ((x1 - a) * (x1 - a) + (x2 - b) * (x2 - b)) / (r * r);
    return q < 1 ? std::exp(1 - 1 / (1 - q)) : 0.0;
}

// perturbation supported well inside the domain, away from x2 = 0
InitialData interior_data(const GridSpec& g, double amp, int mu = 2) {
    InitialData d = InitialData::zero(bg, g, mu);
    const double cp[4] = {0.5, -0.3, 0.8, 0.4}, cm[4] = {-0.2, 0.6, -0.5, 0.3};
    d.U0_plus.fill([&](double, double x1, double x2, int c) { return amp * cp[c] * cbump(x1, x2, 0.0, 0.6, 0.4); });
    d.U0_minus.fill([&](double, double x1, double x2, int c) { return amp * cm[c] * cbump(x1, x2, 0.1, 0.6, 0.35); });
    return d;
}

// Taylor polynomial of the traces, residual of d_tU = F1 and d_tPhi = F2 at time t
double taylor_residual(const TimeTraces& tr, Side s, double t) {
    const int L = tr.L;
    const GridSpec& g = tr.U_l(s, 0).grid();
    const double sg = linearized::side_sign(s);
    Field U = Field::slice(g, 4), dU = Field::slice(g, 4), P = Field::slice(g, 1), dP = Field::slice(g, 1);
    double fact = 1;
    for (int l = 0; l <= L + 1; ++l) {
        if (l > 0) fact *= l;
        if (l <= L) U.axpy(std::pow(t, l) / fact, tr.U_l(s, l));
        if (l >= 1 && l <= L) dU.axpy(std::pow(t, l - 1) / (fact / l), tr.U_l(s, l));
        P.axpy(std::pow(t, l) / fact, tr.Phi_l(s, l));
        if (l >= 1) dP.axpy(std::pow(t, l - 1) / (fact / l), tr.Phi_l(s, l));
    }
    const Field d1U = fields::d_1(U), d2U = fields::d_2(U), d1P = fields::d_1(P), d2P = fields::d_2(P);
    const model::PhaseState ub = s == Side::Right ? bg.right : bg.left;
    double r = 0;
    for (int j = 0; j < g.x1_nodes(); ++j)
        for (int k = 0; k < g.x2_nodes(); ++k) {
            Vec4 u, a, b, du;
            for (int c = 0; c < 4; ++c) {
                u(c) = ub.vec()(c) + U(0, j, k, c);
                a(c) = d1U(0, j, k, c);
                b(c) = d2U(0, j, k, c);
                du(c) = dU(0, j, k, c);
            }
            const auto st = model::PhaseState::from(u);
            const auto [A1, A2] = model::flux_jacobians(st, bg.law);
            const Mat4 N = model::normal_matrix(st, dP(0, j, k), d1P(0, j, k), sg + d2P(0, j, k), bg.law);
            r = std::max(r, (du + A1 * a + N * b).cwiseAbs().maxCoeff());
            r = std::max(r, std::abs(dP(0, j, k) + st.v * d1P(0, j, k) - st.u));
        }
    return r;
}

InitialData taylor_data(const GridSpec& g) {
    InitialData d = interior_data(g, 0.02);
    d.U0_plus.fill([&](double, double x1, double x2, int c) {
        return 0.02 * (c + 1) * cbump(x1, x2, 0.0, 0.2, 0.75);
    });
    for (int j = 0; j < g.x1_nodes(); ++j) d.phi0[j] = 0.01 * cbump(g.x1(j), 0.0, 0.0, 0.0, 0.8);
    return d;
}

} // namespace

TEST_CASE("extend_front: zero data, exact trace, support") {
    const GridSpec g = grid();
    std::vector<double> zero(g.x1_nodes(), 0.0);
    CHECK(extend_front(zero, g, bg).Phi0.max_abs() == 0.0);

    std::vector<double> phi(g.x1_nodes());
    for (int j = 0; j < g.x1_nodes(); ++j) phi[j] = 0.05 * cbump(g.x1(j), 0, 0.1, 0, 0.7);
    const ExtendedFront e = extend_front(phi, g, bg);
    for (int j = 0; j < g.x1_nodes(); ++j) CHECK(e.Phi0(0, j, 0) == phi[j]);
    CHECK(e.support <= e.support_bound);
    CHECK(e.support_bound == doctest::Approx(1 + 0.5 * bg.lambda_max() * g.T));
    CHECK(e.ratio() > 0);
    CHECK(std::isfinite(e.ratio()));
}

TEST_CASE("time traces: zero data gives zero traces") {
    const InitialData d = InitialData::zero(bg, grid(), 3);
    const TimeTraces tr = time_derivative_traces(d, 3);
    for (Side s : {Side::Right, Side::Left}) {
        for (int l = 0; l <= 3; ++l) CHECK(tr.U_l(s, l).max_abs() == 0.0);
        for (int l = 0; l <= 4; ++l) CHECK(tr.Phi_l(s, l).max_abs() == 0.0);
    }
}

TEST_CASE("time traces: first trace equals minus the spatial operator") {
    const GridSpec g = grid();
    const InitialData d = taylor_data(g);
    const ExtendedFront e = extend_front(d.phi0, g, bg);
    const TimeTraces tr = time_derivative_traces(d, e.Phi0, 1);
    const Field d1U = fields::d_1(d.U0_plus), d2U = fields::d_2(d.U0_plus);
    const Field d1P = fields::d_1(e.Phi0), d2P = fields::d_2(e.Phi0);
    double err = 0;
    for (int j = 0; j < g.x1_nodes(); ++j)
        for (int k = 0; k < g.x2_nodes(); ++k) {
            Vec4 u, a, b, u1;
            for (int c = 0; c < 4; ++c) {
                u(c) = bg.right.vec()(c) + d.U0_plus(0, j, k, c);
                a(c) = d1U(0, j, k, c);
                b(c) = d2U(0, j, k, c);
                u1(c) = tr.U_l(Side::Right, 1)(0, j, k, c);
            }
            const auto st = model::PhaseState::from(u);
            const double dtphi = st.u - st.v * d1P(0, j, k);
            CHECK(tr.Phi_l(Side::Right, 1)(0, j, k) == doctest::Approx(dtphi).epsilon(1e-12));
            const auto [A1, A2] = model::flux_jacobians(st, bg.law);
            const Mat4 N = model::normal_matrix(st, dtphi, d1P(0, j, k), 1 + d2P(0, j, k), bg.law);
            err = std::max(err, (u1 + A1 * a + N * b).cwiseAbs().maxCoeff());
        }
    CHECK(err < 1e-14);
}

TEST_CASE("time traces: Taylor polynomial solves the system to order t^L") {
    const InitialData d = taylor_data(grid());
    for (int L = 1; L <= 3; ++L) {
        const TimeTraces tr = time_derivative_traces(d, L);
        for (Side s : {Side::Right, Side::Left}) {
            const double r1 = taylor_residual(tr, s, 0.04), r2 = taylor_residual(tr, s, 0.02);
            const double order = std::log2(r1 / r2);
            MESSAGE("L=" << L << " residual " << r1 << " -> " << r2 << " order " << order);
            CHECK(order == doctest::Approx(L).epsilon(0.1));
        }
    }
}

TEST_CASE("time traces: order and resolution limits") {
    const InitialData d = InitialData::zero(bg, grid(), 2);
    CHECK_THROWS_AS(time_derivative_traces(d, 4), std::invalid_argument);
    GridSpec coarse = grid(8);
    coarse.n2 = 4;
    CHECK_THROWS_AS(time_derivative_traces(InitialData::zero(bg, coarse, 2), 3), ResolutionError);
}

TEST_CASE("time traces: supports stay near the data support") {
    const InitialData d = interior_data(grid(), 0.05, 3);
    const TimeTraces tr = time_derivative_traces(d, 3);
    const double h = grid().dx1();
    for (int l = 0; l <= 3; ++l) CHECK(tr.support(Side::Right, l, false) <= 1.0 + (l + 1) * 2 * h);
    for (int l = 0; l <= 4; ++l) CHECK(tr.support(Side::Right, l, true) <= 1.0 + 0.5 * bg.lambda_max() * 0.5);
}

TEST_CASE("compatibility: zero data compatible to every order") {
    const InitialData d = InitialData::zero(bg, grid(), 3);
    for (int mu = 0; mu <= 3; ++mu) {
        const CompatReport r = check_compatibility(d, mu);
        CHECK(r.compatible);
        CHECK(r.max_violation == 0.0);
        for (const auto& e : r.integrals) CHECK(e.value == 0.0);
    }
}

TEST_CASE("compatibility: constant mass jump flagged at (0,0)") {
    const GridSpec g = grid();
    InitialData d = InitialData::zero(bg, g, 2);
    const double c = 0.03;
    d.U0_plus.fill([&](double, double x1, double x2, int k) { return k == 0 ? c * cbump(x1, x2, 0, 0, 0.9) : 0.0; });
    const CompatReport r = check_compatibility(d, 2);
    CHECK_FALSE(r.compatible);
    CHECK(std::abs(r.violation("m", 0, 0) - c) < 1e-12);
    CHECK(r.violation("n", 0, 0) == 0.0);

    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["conditions"].size() == r.conditions.size());
    CHECK(j["compatible"] == false);

    // lower-order condition sets are subsets with the same values
    for (int mu = 0; mu < 2; ++mu) {
        const CompatReport lo = check_compatibility(d, mu);
        for (const auto& e : lo.conditions) CHECK(e.violation == r.violation(e.quantity, e.l, e.j));
    }
}

TEST_CASE("compatibility: jump vanishing linearly at the boundary") {
    const GridSpec g = grid();
    InitialData d = InitialData::zero(bg, g, 1);
    d.U0_plus.fill([&](double, double x1, double x2, int k) {
        return k == 0 ? 0.05 * x2 * cbump(x1, x2, 0, 0, 0.95) : 0.0;
    });
    const CompatReport r = check_compatibility(d, 1);
    CHECK(r.violation("m", 0, 0) == 0.0);
    for (const auto& e : r.integrals) CHECK(std::isfinite(e.value));
}

TEST_CASE("weighted boundary integral: finite for x2 g, logarithmic for nonvanishing traces") {
    auto integral = [](int n, bool linear) {
        Field u = Field::slice(grid(n), 1);
        u.fill([&](double, double x1, double x2, int) {
            return (linear ? x2 : 1.0) * std::exp(-x2 * x2) * std::cos(pi * x1 / 2);
        });
        return weighted_boundary_integral(u);
    };
    const double exact = 2.0 * (1 - std::exp(-8.0)) / 4;
    CHECK(std::abs(integral(64, true) - exact) < 1e-3);
    CHECK(std::abs(integral(128, true) - exact) < std::abs(integral(64, true) - exact));
    const double growth = integral(128, false) - integral(64, false);
    CHECK(growth == doctest::Approx(2.0 * std::log(2.0)).epsilon(0.05));
}

TEST_CASE("compatibility: interior data compatible and monotone in the order") {
    const InitialData d = interior_data(grid(), 0.05, 3);
    for (int mu = 0; mu <= 3; ++mu) {
        const CompatReport r = check_compatibility(d, mu);
        CHECK(r.compatible);
        CHECK(r.max_violation == 0.0);
    }
}

TEST_CASE("build_approximate: zero data gives the exact background") {
    const GridSpec g = grid();
    const ApproxSolution a = build_approximate(InitialData::zero(bg, g, 2));
    bool exact = true;
    for (std::size_t i = 0; i < a.U_plus.nodes(); ++i)
        for (int c = 0; c < 4; ++c) {
            exact &= a.U_plus.data()[4 * i + c] == bg.right.vec()(c);
            exact &= a.U_minus.data()[4 * i + c] == bg.left.vec()(c);
        }
    for (int it = 0; it < g.time_nodes(); ++it)
        for (int j = 0; j < g.x1_nodes(); ++j)
            for (int k = 0; k < g.x2_nodes(); ++k) {
                exact &= a.Phi_plus(it, j, k) == g.x2(k);
                exact &= a.Phi_minus(it, j, k) == -g.x2(k);
            }
    CHECK(exact);
    CHECK(a.phi.max_abs() == 0.0);
    CHECK(a.f_a.max_abs() == 0.0);

    const VProblem vp = assemble_V_problem(a);
    const Field V = Field::volume(g, 8), Psi = Field::volume(g, 2), psi = Field::trace_of(g, 1);
    CHECK(vp.residual(V, Psi, psi).max() == 0.0);
}

TEST_CASE("build_approximate: interior data") {
    const GridSpec g = grid();
    const ApproxSolution a = build_approximate(interior_data(g, 0.005));
    CHECK(a.report.compatible);
    CHECK(a.eikonal_residual < 1e-13);
    CHECK(a.boundary_residual < 1e-13);
    CHECK(a.front_mismatch == 0.0);
    CHECK(a.front_min >= 0.75);
    CHECK(a.f_a.max_abs_past() == 0.0);
    CHECK(a.f_a.max_abs() > 0.0);
    const double bound = 1 + bg.lambda_max() * g.T;
    CHECK(a.support_U <= bound);
    CHECK(a.support_Phi <= bound);
    CHECK(a.support_f <= bound);
    CHECK(a.basic_state().validate().within(1e-12));
}

TEST_CASE("build_approximate: residual time derivatives at t = 0 shrink with the time step") {
    const ApproxSolution a = build_approximate(interior_data(grid(32, 32), 0.002, 3));
    const ApproxSolution b = build_approximate(interior_data(grid(32, 64), 0.002, 3));
    CHECK(a.residual_dt.size() == 3);
    for (std::size_t j = 0; j < a.residual_dt.size(); ++j) {
        MESSAGE("j=" << j << " " << a.residual_dt[j] << " -> " << b.residual_dt[j]);
        CHECK(b.residual_dt[j] < a.residual_dt[j] / 3);
    }
    CHECK(b.residual_dt[0] < CompatConfig{}.residual_tol);
}

TEST_CASE("build_approximate: norms scale with the data") {
    const GridSpec g = grid();
    std::vector<double> ratio, nf;
    for (double amp : {0.004, 0.002, 0.001, 0.0005}) {
        const ApproxSolution a = build_approximate(interior_data(g, amp));
        ratio.push_back(a.norm_approx / a.norm_data);
        nf.push_back(a.norm_f);
    }
    for (std::size_t i = 1; i < ratio.size(); ++i) {
        CHECK(ratio[i] == doctest::Approx(ratio[0]).epsilon(0.05));
        CHECK(nf[i] < nf[i - 1]);
    }
}

TEST_CASE("build_approximate: incompatible and degenerate data") {
    const GridSpec g = grid();
    InitialData d = InitialData::zero(bg, g, 2);
    d.U0_plus.fill([&](double, double x1, double x2, int k) { return k == 1 ? 0.02 * cbump(x1, x2, 0, 0, 0.9) : 0.0; });
    CHECK_THROWS_AS(build_approximate(d), CompatibilityError);

    InitialData steep = InitialData::zero(bg, g, 2);
    for (int j = 0; j < g.x1_nodes(); ++j) steep.phi0[j] = 0.5 * cbump(g.x1(j), 0, 0, 0, 0.4);
    CompatConfig cfg;
    cfg.small_data = 1.0;
    CHECK_THROWS_AS(build_approximate(steep, cfg), FrontDegeneracyError);

    InitialData wide = InitialData::zero(bg, g, 2);
    wide.U0_plus.fill([&](double, double x1, double x2, int) { return 0.01 * cbump(x1, x2, 0, 0.5, 0.9); });
    CHECK_THROWS_AS(wide.validate({}), std::invalid_argument);
}

TEST_CASE("V problem: zero correction leaves f^a, substitution identity") {
    const GridSpec g = grid();
    const ApproxSolution a = build_approximate(interior_data(g, 0.005));
    const VProblem vp = assemble_V_problem(a);
    Field V = Field::volume(g, 8), Psi = Field::volume(g, 2);
    const Field psi0 = Field::trace_of(g, 1);

    CHECK(vp.L(V, Psi).max_abs() == 0.0);
    CHECK(vp.residual(V, Psi, psi0).L == a.f_a.max_abs());

    auto ramp = [](double t) { return t > 0 ? t * t * t : 0.0; };
    V.fill([&](double t, double x1, double x2, int c) {
        return 0.01 * ramp(t) * std::cos(pi * x1 / 2 + c) * std::exp(-(x2 - 0.4) * (x2 - 0.4) * 4);
    });
    Psi.fill([&](double t, double x1, double x2, int c) {
        return 0.01 * ramp(t) * std::sin(pi * x1 / 2) * (1 + 0.5 * c * x2) * std::exp(-x2 * x2);
    });
    const VProblem::Substitution s = vp.substitution(V, Psi);
    CHECK(s.interior < 1e-12);
    CHECK(s.eikonal < 1e-13);

    const Field psi = Psi.trace().component(0);
    const VResidual r = vp.residual(V, Psi, psi);
    CHECK(r.front < 1e-15);
    CHECK(r.past == 0.0);
    CHECK(r.L > 0.0);
}
