#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "vsheet/nashmoser.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vsheet;
using namespace vsheet::nashmoser;
using compat::ApproxSolution;
using compat::InitialData;

namespace {

const model::BackgroundSheet bg = model::BackgroundSheet::symmetric(1, 1, 4.2);

GridSpec grid(int n1 = 32, int n2 = 16, int nt = 16) {
    GridSpec g;
    g.T = 0.1;
    g.L1 = 2.0;
    g.L2 = 1.0;
    g.n1 = n1;
    g.n2 = n2;
    g.nt = nt;
    return g;
}

double cbump(double x1, double x2, double a, double b, double r) {
    const double q = ((x1 - a) * (x1 - a) + (x2 - b) * (x2 - b)) / (r * r);
    return q < 1 ? std::exp(1 - 1 / (1 - q)) : 0.0;
}

InitialData bump(const GridSpec& g, double amp) {
    InitialData d = InitialData::zero(bg, g, 3);
    const double cp[4] = {0.5, -0.3, 0.8, 0.4}, cm[4] = {-0.2, 0.6, -0.5, 0.3};
    d.U0_plus.fill([&](double, double x1, double x2, int c) { return amp * cp[c] * cbump(x1, x2, 0.0, 0.6, 0.4); });
    d.U0_minus.fill([&](double, double x1, double x2, int c) { return amp * cm[c] * cbump(x1, x2, 0.1, 0.6, 0.35); });
    return d;
}

const ApproxSolution& small_bump() {
    static const ApproxSolution a = compat::build_approximate(bump(grid(), 1e-3));
    return a;
}

const NashMoserResult& small_run() {
    static const NashMoserResult r = [] {
        SchemeParams p;
        p.max_iters = 6;
        return run_nash_moser(small_bump(), p);
    }();
    return r;
}

// smooth state vanishing for t <= 0 with common front traces
IterationState test_state(const GridSpec& g, int i) {
    IterationState st = IterationState::zero(g);
    st.i = i;
    auto prof = [](double t, double x1, double x2, int c) {
        if (t <= 0) return 0.0;
        return 1e-3 * t * t * (1 + 0.3 * c) * std::cos(std::numbers::pi * x1 / 2 + c) * std::exp(-x2 * (1 + c % 3));
    };
    st.V.fill(prof);
    st.Psi.fill([&](double t, double x1, double x2, int c) { return prof(t, x1, x2 * (1 + c), 0); });
    st.psi = st.Psi.trace().component(0);
    return st;
}

double max_diff(const Field& a, const Field& b) { return (a - b).max_abs(); }

} // namespace

TEST_CASE("theta sequence: increments bracketed") {
    SchemeParams p;
    CHECK(theta(p, 0) == 1.0);
    CHECK(theta_step(p, 0) == doctest::Approx(0.41421356237).epsilon(1e-10));
    for (double t0 : {1.0, 2.5, 10.0}) {
        p.theta0 = t0;
        for (int i = 0; i < 2000; ++i) {
            const double th = theta(p, i), d = theta_step(p, i);
            CHECK(th * th == doctest::Approx(t0 * t0 + i));
            CHECK(d >= 1 / (3 * th));
            CHECK(d <= 1 / (2 * th));
        }
    }
}

TEST_CASE("exponents of the error estimates") {
    CHECK(exponent_L1(2, 15) == -18);
    CHECK(exponent_L1(20, 15) == -3);
    CHECK(exponent_L2(7, 15) == -14);
    CHECK(exponent_L3(19, 15) == -1);
    CHECK(exponent_L4(7, 15) == -10);
    CHECK(exponent_L4(2, 3) == 14);
    SchemeParams p;
    p.alpha = 15;
    CHECK(p.alpha_tilde() == 19);
    CHECK(p.mu() == 22);
}

TEST_CASE("parameters: validation and json round trip") {
    SchemeParams p;
    p.alpha = 4;
    p.theta0 = 2;
    p.smoother.k_scale = 5;
    p.linear.cfl = 0.6;
    const SchemeParams q = params_from_json(params_to_json(p));
    CHECK(q.alpha == 4);
    CHECK(q.theta0 == 2);
    CHECK(q.smoother.k_scale == 5);
    CHECK(q.linear.cfl == 0.6);
    p.theta0 = 0.5;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    CHECK_THROWS_AS(params_from_json("{\"s_min\": 3, \"s_max\": 2}"), std::invalid_argument);
}

TEST_CASE("smoother index below zero is the zero operator") {
    const GridSpec g = grid();
    const IterationState st = test_state(g, 0);
    SchemeParams p;
    CHECK(smoother(st.V, p, -1).max_abs() == 0.0);
    CHECK(smoother(st.V, p, 0).max_abs() > 0.0);
}

TEST_CASE("modified state: zero state and exact trace equalities") {
    const ApproxSolution& a = small_bump();
    const compat::VProblem vp(a);
    SchemeParams p;
    const ModifiedState z = modified_state(vp, IterationState::zero(a.grid()), p);
    CHECK(z.V.max_abs() == 0.0);
    CHECK(z.Psi.max_abs() == 0.0);
    CHECK(z.psi.max_abs() == 0.0);

    for (int i : {0, 3}) {
        const IterationState st = test_state(a.grid(), i);
        const ModifiedState m = modified_state(vp, st, p);
        CHECK(m.jump_m == 0.0);
        CHECK(m.jump_n == 0.0);
        CHECK(m.jump_front == 0.0);
        CHECK(max_diff(m.Psi.trace().component(0), m.psi) == 0.0);
        CHECK(m.past == 0.0);
        CHECK(m.eikonal < 1e-15);
        CHECK(m.V.max_abs() > 0.0);
        const auto rep = m.basic.validate();
        CHECK(rep.boundary_front == 0.0);
        CHECK(rep.boundary_normal < 1e-14);
        CHECK(rep.boundary_transport < 1e-14);
    }
}

TEST_CASE("modified state: loss of the front bound is reported") {
    const ApproxSolution& a = small_bump();
    const compat::VProblem vp(a);
    SchemeParams p;
    IterationState st = IterationState::zero(a.grid());
    st.Psi.fill([](double t, double, double x2, int c) { return t > 0 ? (c == 0 ? -1 : 1) * 20 * t * x2 : 0.0; });
    st.psi = st.Psi.trace().component(0);
    CHECK_THROWS_AS(modified_state(vp, st, p), FrontDegeneracyError);
}

TEST_CASE("source terms: first step and error-free telescoping") {
    const ApproxSolution& a = small_bump();
    const compat::VProblem vp(a);
    SchemeParams p;
    const Sources s0 = source_terms(vp, IterationState::zero(a.grid()), p);
    CHECK(max_diff(s0.f, smoother(a.f_a, p, 0)) == 0.0);
    CHECK(s0.g.max_abs() == 0.0);
    CHECK(s0.h.max_abs() == 0.0);
    CHECK(s0.fg_f == 0.0);

    IterationState st = IterationState::zero(a.grid());
    st.i = 2;
    st.sum_f = smoother(a.f_a, p, 1);
    const Sources s2 = source_terms(vp, st, p);
    CHECK(max_diff(s2.f, smoother(a.f_a, p, 2) - smoother(a.f_a, p, 1)) < 1e-15);
    CHECK(s2.g.max_abs() == 0.0);
    CHECK(s2.fg_f < 1e-15);
    CHECK(s2.f.max_abs_past() == 0.0);
}

TEST_CASE("linear step: zero sources give a zero step") {
    const ApproxSolution& a = small_bump();
    const compat::VProblem vp(a);
    SchemeParams p;
    const ModifiedState m = modified_state(vp, test_state(a.grid(), 1), p);
    Sources s;
    s.f = Field::volume(a.grid(), 8);
    s.g = Field::trace_of(a.grid(), 3);
    s.h = Field::volume(a.grid(), 2);
    const LinearStep st = linear_step(m, s, p);
    CHECK(st.Vdot.max_abs() == 0.0);
    CHECK(st.dpsi.max_abs() == 0.0);
    const FrontLift fl = front_lift(vp, m, st, s, p);
    CHECK(fl.dPsi.max_abs() == 0.0);
}

TEST_CASE("front lift: unforced transport on the background stays zero") {
    const GridSpec g = grid();
    const ApproxSolution a = compat::build_approximate(InitialData::zero(bg, g, 2));
    const compat::VProblem vp(a);
    SchemeParams p;
    const ModifiedState m = modified_state(vp, IterationState::zero(g), p);
    Sources s;
    s.f = Field::volume(g, 8);
    s.g = Field::trace_of(g, 3);
    s.h = Field::volume(g, 2);
    LinearStep st;
    st.Vdot = Field::volume(g, 8);
    st.Vdot.fill([](double t, double x1, double x2, int c) {
        return (c % 4 < 2 && t > 0) ? t * std::sin(x1) * std::exp(-x2) : 0.0;
    });
    st.dpsi = Field::trace_of(g, 1);
    const FrontLift fl = front_lift(vp, m, st, s, p);
    CHECK(fl.dPsi.max_abs() == 0.0);
    CHECK(fl.trace_gap == 0.0);
}

TEST_CASE("front lift: trace gap shrinks at first order under refinement") {
    std::vector<double> gap;
    for (int r : {0, 1}) {
        const GridSpec g = grid(32 << r, 16 << r, 16 << r);
        const ApproxSolution a = compat::build_approximate(InitialData::zero(bg, g, 2));
        const compat::VProblem vp(a);
        SchemeParams p;
        const ModifiedState m = modified_state(vp, IterationState::zero(g), p);
        Sources s;
        s.f = Field::volume(g, 8);
        s.h = Field::volume(g, 2);
        s.g = Field::trace_of(g, 3);
        s.g.fill([](double t, double x1, double, int c) {
            return c == 1 && t > 0 ? 1e-3 * t * t * std::cos(std::numbers::pi * x1 / 2) : 0.0;
        });
        const LinearStep st = linear_step(m, s, p);
        const FrontLift fl = front_lift(vp, m, st, s, p);
        REQUIRE(st.dpsi.max_abs() > 0);
        gap.push_back(fl.trace_gap / st.dpsi.max_abs());
        for (int c = 0; c < 2; ++c) CHECK(max_diff(fl.dPsi.trace().component(c), st.dpsi) == 0.0);
    }
    MESSAGE("relative trace gaps " << gap[0] << " " << gap[1]);
    CHECK(gap[1] < gap[0] / 1.6);
}

TEST_CASE("reconstruction: zero lift gives the plain increment") {
    const ApproxSolution& a = small_bump();
    const compat::VProblem vp(a);
    SchemeParams p;
    IterationState st = test_state(a.grid(), 1);
    const ModifiedState m = modified_state(vp, st, p);
    const Sources s = source_terms(vp, st, p);
    LinearStep ls;
    ls.Vdot = test_state(a.grid(), 0).V;
    ls.Vdot *= 0.5;
    ls.dpsi = Field::trace_of(a.grid(), 1);
    FrontLift fl;
    fl.dPsi = Field::volume(a.grid(), 2);
    const Field V0 = st.V;
    const StepErrors er = reconstruct_and_account(vp, st, m, ls, fl, s, p);
    CHECK(max_diff(er.dV, ls.Vdot) == 0.0);
    CHECK(max_diff(st.V, V0 + ls.Vdot) == 0.0);
    CHECK(st.i == 2);
    // the pieces sum to the full increment
    const Field total = er.L_next - vp.L(V0, test_state(a.grid(), 1).Psi) - s.f;
    CHECK(max_diff(er.e, total) < 1e-12 * std::max(1.0, total.max_abs()));
}

TEST_CASE("zero data: the iteration stays at zero") {
    const ApproxSolution a = compat::build_approximate(InitialData::zero(bg, grid(), 2));
    SchemeParams p;
    p.max_iters = 3;
    p.stop_tol = -1;
    const NashMoserResult r = run_nash_moser(a, p);
    CHECK(r.status == NashMoserResult::Status::Completed);
    REQUIRE(r.rows.size() == 3);
    for (const IterationRow& row : r.rows) {
        for (const BandNorms& b : row.band) {
            CHECK(b.dV == 0.0);
            CHECK(b.res_L == 0.0);
            CHECK(b.res_B == 0.0);
            CHECK(b.e == 0.0);
        }
        CHECK(row.H_pass());
        CHECK(row.telescoping() == 0.0);
    }
    CHECK(r.final_state.V.max_abs() == 0.0);
    CHECK(r.final_state.psi.max_abs() == 0.0);
}

TEST_CASE("zero data converges at the first step") {
    const ApproxSolution a = compat::build_approximate(InitialData::zero(bg, grid(), 2));
    const NashMoserResult r = run_nash_moser(a, SchemeParams{});
    CHECK(r.status == NashMoserResult::Status::Converged);
    CHECK(r.rows.size() == 1);
    CHECK(r.residual(2).front() == 0.0);
    CHECK(to_string(r.status) == "converged");
}

TEST_CASE("delta only moves the H bounds") {
    NashMoserResult r = small_run();
    SchemeParams p;
    p.max_iters = 6;
    p.delta = 10.0;
    apply_bounds(r, p);
    const auto& base = small_run();
    for (std::size_t k = 0; k < r.rows.size(); ++k) {
        CHECK(r.rows[k].band[0].Hb == base.rows[k].band[0].Hb);
        CHECK(r.rows[k].band[0].Hb_bound == doctest::Approx(1000 * base.rows[k].band[0].Hb_bound).epsilon(1e-12));
        CHECK(r.rows[k].Hd_bound == doctest::Approx(1000 * base.rows[k].Hd_bound).epsilon(1e-12));
    }
}

TEST_CASE("small bump: telescoping, consistency and invariants at every step") {
    const NashMoserResult& r = small_run();
    REQUIRE(r.status == NashMoserResult::Status::Completed);
    REQUIRE(r.rows.size() == 6);
    for (const IterationRow& row : r.rows) {
        CHECK(row.fg_f < 1e-10);
        CHECK(row.fg_g < 1e-10);
        CHECK(row.plus < 1e-10);
        CHECK(row.minus < 1e-10);
        CHECK(row.lb < 1e-10);
        CHECK(row.lb2 < 1e-10);
        CHECK(row.jump_m == 0.0);
        CHECK(row.jump_n == 0.0);
        CHECK(row.jump_front == 0.0);
        CHECK(row.mod_eikonal < 1e-14);
        CHECK(row.past == 0.0);
        CHECK(row.Delta >= 1 / (3 * row.theta));
        CHECK(row.Delta <= 1 / (2 * row.theta));
    }
    const IterationState& st = r.final_state;
    for (int c = 0; c < 2; ++c) CHECK(max_diff(st.Psi.trace().component(c), st.psi) == 0.0);
    CHECK(r.rows[0].at(2).e2 == 0.0);
    CHECK(r.rows[0].at(2).e3 == 0.0);
}

TEST_CASE("small bump: residual decreases over the first iterations") {
    const NashMoserResult& r = small_run();
    for (int s = 2; s <= 4; ++s) {
        const std::vector<double> res = r.residual(s);
        for (std::size_t k = 1; k < 5; ++k) CHECK(res[k] < res[k - 1]);
    }
    const compat::VProblem vp(small_bump());
    const double r0 = norms::aniso_norm(small_bump().f_a, {2, 1.0});
    CHECK(r.residual(2).back() < 0.5 * r0);
}

TEST_CASE("small bump: quadratic error matches the integral remainder") {
    const NashMoserResult& r = small_run();
    CHECK(r.oracle.step == 1);
    CHECK(r.oracle.relative < 1e-4);
    for (const IterationRow& row : r.rows) CHECK(row.at(2).e1 < 1e-2 * row.at(2).dV);
}

TEST_CASE("small bump: monitor output") {
    const NashMoserResult& r = small_run();
    CHECK(r.fits.size() == 12);
    for (const ExponentFit& f : r.fits) CHECK(std::isfinite(f.slope));
    CHECK(r.history.size() == 7);
    SchemeParams p;
    p.delta = 100;
    // (H_0)(a) with a budget large against the data
    const IterationRow& row = r.rows[0];
    const BandNorms& b = row.at(2);
    CHECK(b.Ha <= p.delta * std::pow(row.theta, 2 - p.alpha - 1) * row.Delta);
}

TEST_CASE("shrinking data: final residual decreases with the data size") {
    SchemeParams p;
    p.max_iters = 3;
    p.monitor = false;
    double prev = INFINITY;
    for (int j = 0; j < 3; ++j) {
        const ApproxSolution a = compat::build_approximate(bump(grid(), 1e-3 * std::ldexp(1.0, -j)));
        const NashMoserResult r = run_nash_moser(a, p);
        CHECK(r.history.size() <= 2);
        const double res = r.residual(2).back();
        CHECK(res < prev);
        prev = res;
    }
}

TEST_CASE("divergence guard: growing increments abort the run") {
    SchemeParams p;
    p.smoother = norms::SmootherSpec{};
    p.max_iters = 8;
    p.divergence_window = 2;
    const NashMoserResult r = run_nash_moser(small_bump(), p);
    CHECK(r.status == NashMoserResult::Status::Diverged);
    CHECK(r.rows.size() < 8);
    CHECK(r.diagnostic.find("consecutive") != std::string::npos);
}

TEST_CASE("iteration csv and manifest are reproducible") {
    const auto dir = std::filesystem::temp_directory_path() / "vsheet_nm_test";
    std::filesystem::create_directories(dir);
    SchemeParams p;
    p.max_iters = 2;
    p.monitor = false;
    std::string text[2];
    for (int k = 0; k < 2; ++k) {
        const NashMoserResult r = run_nash_moser(small_bump(), p);
        const std::string path = (dir / ("it" + std::to_string(k) + ".csv")).string();
        write_iteration_csv(path, r, p);
        std::ifstream is(path);
        std::stringstream ss;
        ss << is.rdbuf();
        text[k] = ss.str();
        const std::string m = manifest_json(r, p, small_bump().grid());
        CHECK(m.find("\"status\": \"completed\"") != std::string::npos);
    }
    CHECK(text[0] == text[1]);
    CHECK(text[0].rfind("# ", 0) == 0);
    std::istringstream lines(text[0]);
    std::string l;
    int n = 0;
    while (std::getline(lines, l)) ++n;
    CHECK(n == 4);
}
