#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "vsheet/fields.hpp"
#include "vsheet/model.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

using namespace vsheet;
using namespace vsheet::fields;

namespace {

GridSpec small_grid(int f = 1) {
    GridSpec g;
    g.T = 1.0;
    g.L1 = 2.0;
    g.L2 = 2.0;
    g.nt = 16 * f;
    g.n1 = 32 * f;
    g.n2 = 32 * f;
    return g;
}

} // namespace

TEST_CASE("sigma weight") {
    CHECK(sigma_weight(0.0) == 0.0);
    CHECK(sigma_weight(2.0) == 1.0);
    CHECK(sigma_weight(0.25) == 0.25);
    CHECK_THROWS_AS(sigma_weight(-0.1), DomainError);
    double prev = 0;
    for (int i = 1; i <= 400; ++i) {
        const double x = i * 0.0025, s = sigma_weight(x);
        CHECK(s >= prev);
        prev = s;
    }
    // continuity of value and slope at the blend ends
    const double h = 1e-7;
    CHECK((sigma_weight(0.5 + h) - sigma_weight(0.5)) / h == doctest::Approx(1.0).epsilon(1e-5));
    CHECK((sigma_weight(1.0) - sigma_weight(1.0 - h)) / h == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("tangential derivatives") {
    GridSpec g = small_grid();
    Field c = Field::volume(g);
    c.fill([](double, double, double, int) { return 3.0; });
    CHECK(tangential_derivative(c, {1, 1, 1}).max_abs() < 1e-12);

    Field f = Field::volume(g);
    f.fill([](double, double, double x2, int) { return x2; });
    Field s = tangential_derivative(f, {0, 0, 1});
    for (int k = 0; k < f.n2(); ++k)
        if (f.x2(k) <= 0.5) CHECK(s(3, 4, k) == doctest::Approx(f.x2(k)));
    for (int j = 0; j < f.n1(); ++j) CHECK(s(3, j, 0) == 0.0);

    const double err_coarse = [&] {
        Field w = Field::volume(g);
        w.fill([&](double, double x1, double, int) { return std::sin(std::numbers::pi * x1 / g.L1); });
        Field d = tangential_derivative(w, {0, 2, 0});
        d.axpy(std::pow(std::numbers::pi / g.L1, 2), w);
        return d.max_abs();
    }();
    GridSpec g2 = small_grid(2);
    const double err_fine = [&] {
        Field w = Field::volume(g2);
        w.fill([&](double, double x1, double, int) { return std::sin(std::numbers::pi * x1 / g2.L1); });
        Field d = tangential_derivative(w, {0, 2, 0});
        d.axpy(std::pow(std::numbers::pi / g2.L1, 2), w);
        return d.max_abs();
    }();
    CHECK(err_coarse < 0.05);
    CHECK(err_coarse / err_fine == doctest::Approx(4.0).epsilon(0.1));

    // mixed derivatives commute on smooth data
    Field w = Field::volume(g);
    w.fill([](double t, double x1, double x2, int) { return std::sin(t + x1) * std::exp(-x2 * x2); });
    Field a = d_t(d_1(w)), b = d_1(d_t(w));
    CHECK((a - b).max_abs() < 1e-10);
}

TEST_CASE("resolution errors") {
    GridSpec g;
    g.nt = 4;
    g.n1 = 4;
    g.n2 = 4;
    Field f = Field::volume(g);
    CHECK_THROWS_AS(tangential_derivative(f, {0, 0, 3}), ResolutionError);
    CHECK_THROWS_AS(d_2(Field::trace_of(g)), ResolutionError);
}

TEST_CASE("conjugated time difference equals weighted difference") {
    GridSpec g = small_grid();
    Field u = Field::volume(g);
    u.fill([](double t, double x1, double x2, int) { return (t > 0 ? t * t : 0.0) * std::cos(x1) * std::exp(-x2); });
    const double lam = 3.0;
    Field wu = u;
    for (int it = 0; it < u.nT(); ++it)
        for (int j = 0; j < u.n1(); ++j)
            for (int k = 0; k < u.n2(); ++k) wu(it, j, k) *= std::exp(-lam * u.t(it));
    Field a = diff_t_conjugated(u, lam), b = d_t(wu);
    for (int it = 0; it < u.nT(); ++it)
        for (int j = 0; j < u.n1(); j += 5)
            for (int k = 0; k < u.n2(); k += 5)
                CHECK(a(it, j, k) * std::exp(-lam * u.t(it)) == doctest::Approx(b(it, j, k)).epsilon(1e-12));
}

TEST_CASE("eikonal residual examples") {
    GridSpec g = small_grid();
    Field U = Field::volume(g, 4), Phi = Field::volume(g);
    U.fill([](double, double, double, int c) { return c < 2 ? 1.0 : c == 2 ? 4.2 : 0.0; });
    Phi.fill([](double, double, double x2, int) { return x2; });
    CHECK(eikonal_residual(U, Phi).max_abs() < 1e-14);

    U.fill([](double, double, double, int c) { return c < 2 ? 1.0 : c == 2 ? 0.0 : 0.7; });
    Phi.fill([](double t, double, double x2, int) { return x2 + 0.7 * t; });
    CHECK(eikonal_residual(U, Phi).max_abs() < 1e-12);

    GridSpec gb = g;
    gb.x1_periodic = false;
    Field Ub = Field::volume(gb, 4), Pb = Field::volume(gb);
    Ub.fill([](double, double, double, int c) { return c < 2 ? 1.0 : c == 2 ? 1.0 : 2.0; });
    Pb.fill([](double, double x1, double x2, int) { return x2 + x1; });
    Field rs = eikonal_residual(Ub, Pb);
    CHECK(rs(5, 3, 2) == doctest::Approx(-1.0));
    Pb.fill([](double t, double x1, double x2, int) { return x2 + x1 + t; });
    CHECK(eikonal_residual(Ub, Pb).max_abs() < 1e-12);
}

TEST_CASE("enforce_eikonal") {
    GridSpec g = small_grid();
    Field U = Field::volume(g, 4);
    U.fill([](double, double, double, int c) { return c < 2 ? 1.0 : c == 2 ? 4.2 : 0.0; });
    Field Phi0 = Field::slice(g);
    Phi0.fill([](double, double, double x2, int) { return x2; });
    Field Phi = enforce_eikonal(U, Phi0, +1);
    for (int it = 0; it < g.time_nodes(); ++it) CHECK(Phi(it, 3, 5) == doctest::Approx(g.x2(5)));

    U.fill([](double, double, double, int c) { return c < 2 ? 1.0 : 1.0; });
    Phi = enforce_eikonal(U, Phi0, +1);
    CHECK(Phi(g.time_nodes() - 1, 7, 9) == doctest::Approx(g.x2(9) + g.T).epsilon(1e-10));

    // shear-free stretching u = eps x2: d2Phi grows like e^{eps t}
    const double eps = 0.2;
    U.fill([&](double, double, double x2, int c) { return c < 2 ? 1.0 : c == 2 ? 0.0 : eps * x2; });
    Phi = enforce_eikonal(U, Phi0, +1);
    Field d = d_2(Phi);
    CHECK(d(g.time_nodes() - 1, 0, 8) == doctest::Approx(1 + eps * g.T).epsilon(1e-6));

    // transported ripple: residual O(h^2)
    auto residual = [](int f) {
        GridSpec gg = small_grid(f);
        Field UU = Field::volume(gg, 4);
        UU.fill([](double t, double x1, double, int c) {
            return c < 2 ? 1.0 : c == 2 ? 1.0 + 0.3 * std::sin(x1 * std::numbers::pi / 2) : 0.2 * std::cos(t);
        });
        Field P0 = Field::slice(gg);
        P0.fill([](double, double x1, double x2, int) { return x2 + 0.1 * std::sin(std::numbers::pi * x1 / 2); });
        Field P = enforce_eikonal(UU, P0, +1);
        Field r = eikonal_residual(UU, P);
        double m = 0;
        for (int it = gg.t0() + 1; it + 1 < gg.time_nodes(); ++it)
            for (int j = 0; j < gg.x1_nodes(); ++j) m = std::max(m, std::abs(r(it, j, 3)));
        return m;
    };
    const double r1 = residual(1), r2 = residual(2);
    CHECK(r1 < 2e-2);
    CHECK(r1 / r2 > 3.0);

    // degenerate initial front
    Field bad = Field::slice(g);
    bad.fill([](double, double, double x2, int) { return 0.5 * x2; });
    CHECK_THROWS_AS(enforce_eikonal(U, bad, +1), FrontDegeneracyError);
    // compression drives the front below kappa0
    U.fill([&](double, double, double x2, int c) { return c < 2 ? 1.0 : c == 2 ? 0.0 : -2.0 * x2; });
    CHECK_THROWS_AS(enforce_eikonal(U, Phi0, +1, 0.5), FrontDegeneracyError);
}

TEST_CASE("norm of weighted field and serialization round trip") {
    GridSpec g = small_grid();
    Field w = Field::volume(g, 2);
    w.fill([](double t, double x1, double x2, int c) { return (c + 1) * std::sin(x1) * std::exp(-x2) * (1 + t); });
    const double lam = 2.0;
    Field u = w;
    for (int it = 0; it < u.nT(); ++it)
        for (int j = 0; j < u.n1(); ++j)
            for (int k = 0; k < u.n2(); ++k)
                for (int c = 0; c < 2; ++c) u(it, j, k, c) *= std::exp(lam * u.t(it));
    CHECK(l2_norm_weighted(u, lam) == doctest::Approx(l2_norm(w)).epsilon(1e-12));

    const std::string path = "test_fields_roundtrip.vsf";
    write_field(path, w);
    Field r = read_field(path);
    CHECK(r.same_shape(w));
    CHECK(r.grid() == w.grid());
    CHECK(r.data() == w.data());
    std::remove(path.c_str());

    Field tr = w.trace();
    CHECK(tr.kind() == FieldKind::Trace);
    CHECK(tr(3, 4, 0, 1) == w(3, 4, 0, 1));
}

TEST_CASE("past vanishing helpers") {
    GridSpec g = small_grid();
    Field u = Field::volume(g);
    u.fill([](double t, double, double, int) { return 1.0 + t; });
    CHECK(u.max_abs_past() > 0);
    u.zero_past();
    CHECK(u.max_abs_past() == 0.0);
    CHECK(u(g.t0(), 0, 0) == 1.0);
}
