// One line per acceptance criterion; exit status 1 if any criterion fails.

#include "vsheet/compat.hpp"
#include "vsheet/linearized.hpp"
#include "vsheet/model.hpp"
#include "vsheet/nashmoser.hpp"
#include "vsheet/norms.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

using namespace vsheet;
namespace fs = std::filesystem;

namespace {

constexpr double pi = std::numbers::pi;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " FAILED[" << what << "]";
        }
    }
};

double since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_entry(const Mat4& A) { return A.cwiseAbs().maxCoeff(); }

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

double cbump(double x1, double x2, double a, double b, double r) {
    const double q = ((x1 - a) * (x1 - a) + (x2 - b) * (x2 - b)) / (r * r);
    return q < 1 ? std::exp(1 - 1 / (1 - q)) : 0.0;
}

// ---------------------------------------------------------------- 1

// smooth perturbation with m, n and the front shared across x2 = 0
linearized::BasicState random_state(std::mt19937_64& rng, const GridSpec& g) {
    std::uniform_real_distribution<double> mass(0.5, 2.0), vb(2.0, 6.0), gam(1.3, 3.0), amp(-0.08, 0.08);
    const auto bg = model::BackgroundSheet::symmetric(mass(rng), mass(rng), vb(rng), model::PressureLaw{gam(rng)});
    double cr[4], cl[4];
    for (int c = 0; c < 4; ++c) {
        cr[c] = amp(rng);
        cl[c] = c < 2 ? cr[c] : amp(rng);
    }
    const double a = amp(rng), x0 = amp(rng);
    Field ur = Field::volume(g, 4), ul = Field::volume(g, 4), pr = Field::volume(g), pl = Field::volume(g);
    auto b = [](double x1, double x2) { return std::exp(-4 * (x1 * x1 + (x2 - 0.3) * (x2 - 0.3))); };
    ur.fill([&](double t, double x1, double x2, int c) { return cr[c] * (1 + t) * b(x1, x2); });
    ul.fill([&](double t, double x1, double x2, int c) { return cl[c] * (1 + t) * b(x1 + (c < 2 ? 0 : x0), x2); });
    pr.fill([&](double t, double x1, double x2, int) { return a * std::sin(pi * x1) * (1 + t) * std::exp(-x2 * x2); });
    pl.fill([&](double t, double x1, double x2, int) { return a * std::sin(pi * x1) * (1 + t) * std::exp(-2 * x2 * x2); });
    return linearized::make_basic_state(bg, g, ur, ul, pr, pl);
}

Outcome algebra_suite() {
    Outcome o;
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> pos(0.2, 3.0), vel(-3, 3), gam(1.2, 3.0), slope(-1.5, 1.5);
    double eig = 0, tt = 0, sym = 0;
    const int states = 200;
    for (int trial = 0; trial < states; ++trial) {
        const model::PressureLaw law{gam(rng)};
        const model::PhaseState U{pos(rng), pos(rng), vel(rng), vel(rng)};
        const auto [A1, A2] = model::flux_jacobians(U, law);
        const double c = model::sound_speed(U.m, U.n, law);
        Eigen::EigenSolver<Mat4> es(A1);
        std::vector<double> ev;
        for (int i = 0; i < 4; ++i) {
            ev.push_back(es.eigenvalues()(i).real());
            eig = std::max(eig, std::abs(es.eigenvalues()(i).imag()));
        }
        std::sort(ev.begin(), ev.end());
        const double expect[4] = {U.v - c, U.v, U.v, U.v + c};
        for (int i = 0; i < 4; ++i) eig = std::max(eig, std::abs(ev[i] - expect[i]));
        const auto D = model::diagonalizer(U, slope(rng), law);
        tt = std::max(tt, max_entry(D.T * D.T_inv - Mat4::Identity()));
        const Mat4 S = model::symmetrizer(U, law);
        sym = std::max(sym, max_entry(S * A1 - (S * A1).transpose()));
    }
    GridSpec g;
    g.T = 0.5;
    g.L1 = 1.0;
    g.L2 = 1.0;
    g.n1 = g.n2 = 8;
    g.nt = 8;
    double dual = 0;
    const int dual_states = 100;
    std::uniform_int_distribution<int> node(0, 7);
    for (int trial = 0; trial < dual_states; ++trial) {
        const auto bs = random_state(rng, g);
        dual = std::max(dual, linearized::dual_matrices(bs, 2 + node(rng) % 8, node(rng)).block_residual);
    }
    o.check(eig < 1e-9, "eigenvalues");
    o.check(tt < 1e-12, "T T^-1");
    o.check(sym < 1e-12, "S A1 symmetric");
    o.check(dual < 1e-10, "dual identity");
    o.detail << states << " states: eig err " << eig << ", |T T^-1 - I| " << tt << ", |SA1 - (SA1)^T| " << sym << "; "
             << dual_states << " states: dual identity " << dual;
    return o;
}

// ---------------------------------------------------------------- 2

Outcome stability_suite() {
    Outcome o;
    using model::Stability;
    const auto v = model::check_supersonic(model::BackgroundSheet::symmetric(1, 1, 4.2));
    o.check(std::abs(v.threshold - 8.0) < 1e-14, "threshold 8");
    o.check(v.cls == Stability::Stable, "4.2 stable");
    auto cls = [](double jump, double tol) {
        return model::check_supersonic(model::BackgroundSheet::symmetric(1, 1, jump / 2), tol).cls;
    };
    o.check(cls(8 + 1e-9, 1e-12) == Stability::Stable, "flip above");
    o.check(cls(8 - 1e-9, 1e-12) == Stability::NotCovered, "flip below");
    o.check(cls(8.0, 1e-9) == Stability::CriticalExcluded, "critical at 8");

    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> shift(-20, 20);
    std::vector<model::BackgroundSheet> sheets{model::BackgroundSheet::symmetric(1, 1, 4.2),
                                              model::BackgroundSheet::symmetric(1, 1, 3.0),
                                              model::BackgroundSheet::symmetric(1, 1, 4.0)};
    model::BackgroundSheet asym;
    asym.right = {1.5, 0.5, 3.0, 0};
    asym.left = {0.5, 1.5, -2.5, 0};
    sheets.push_back(asym);
    int same = 0, total = 0;
    for (int k = 0; k < 50; ++k) {
        const double w = shift(rng);
        for (auto bg : sheets) {
            const auto ref = model::check_supersonic(bg).cls;
            bg.right.v += w;
            bg.left.v += w;
            same += model::check_supersonic(bg).cls == ref;
            ++total;
        }
    }
    o.check(same == total, "galilean");
    o.detail << "threshold " << v.threshold << ", margin(4.2) " << v.margin() << ", flip at 8 +- 1e-9, galilean "
             << same << "/" << total;
    return o;
}

// ---------------------------------------------------------------- 3

Outcome norm_suite() {
    Outcome o;
    GridSpec g;
    g.T = 1.0;
    g.L1 = g.L2 = 2.0;
    g.nt = 16;
    g.n1 = g.n2 = 32;
    double worst = 0;
    for (const auto& e : norms::make_corpus(8, 3)) {
        const Field u = norms::sample(e, g);
        for (double lam : {1.0, 2.0, 4.0, 8.0})
            for (int s = 0; s <= 4; ++s) {
                const double a = norms::aniso_norm(u, {s, lam});
                const double b = norms::aniso_star_norm(norms::exp_weight(u, lam), {s, lam});
                worst = std::max(worst, std::abs(a - b) / b);
            }
    }
    o.check(worst < 1e-8, "weighted identity");
    o.detail << "identity rel " << worst;

    for (const auto& r : norms::smoothing_law_study(norms::SmoothingLawConfig::standard())) {
        o.check(std::abs(r.slope - (r.beta - r.alpha)) <= 0.3, "smoothing slope");
        o.detail << "; slope(" << r.alpha << "," << r.beta << ") " << r.slope;
    }

    norms::HarnessConfig hc;
    hc.grid = g;
    const auto rows = norms::appendix_a_harness(hc);
    for (const char* name : {"trace_s2", "trace_s3"}) {
        double lo = 1e300, hi = 0;
        for (const auto& r : rows)
            if (r.inequality == name) {
                lo = std::min(lo, r.constant);
                hi = std::max(hi, r.constant);
            }
        o.check(hi > 0 && hi / lo < 2.0, name);
        o.detail << "; " << name << " spread " << hi / lo;
    }
    return o;
}

// ---------------------------------------------------------------- 4

double ramp4(double t) { return t > 0 ? t * t * t * t : 0.0; }

// manufactured V_c = t^4 a_c cos(pi x1 + p_c) e^{-x2}, psi = 0.3 t^4 sin(pi x1) on the background
double manufactured_error(int n2) {
    using namespace linearized;
    const auto bgs = model::BackgroundSheet::symmetric(1, 1, 4.2);
    const double ph[8] = {0.1, 0.7, 1.3, 1.9, 2.5, 3.1, 3.7, 4.3};
    const double amp[8] = {0.5, 0.4, 1.0, 0.8, 0.5, 0.4, -0.9, 0.7};
    GridSpec g;
    g.T = 0.4;
    g.L1 = 2.0;
    g.L2 = 1.0;
    g.n1 = 2 * n2;
    g.n2 = n2;
    g.nt = 10 * n2;
    const BasicState bs = BasicState::from_background(bgs, g);
    Field exact = Field::volume(g, 8), f = Field::volume(g, 8);
    exact.fill([&](double t, double x1, double x2, int c) { return ramp4(t) * amp[c] * std::cos(pi * x1 + ph[c]) * std::exp(-x2); });
    Mat4 A1s[2], Ns[2];
    for (int s = 0; s < 2; ++s) {
        const model::PhaseState st = s == 0 ? bgs.right : bgs.left;
        A1s[s] = model::flux_jacobians(st, bgs.law).first;
        Ns[s] = model::normal_matrix(st, 0.0, 0.0, s == 0 ? 1.0 : -1.0, bgs.law);
    }
    for (int it = 0; it < g.time_nodes(); ++it) {
        const double t = g.t(it), r = ramp4(t), dr = t > 0 ? 4 * t * t * t : 0.0;
        for (int j = 0; j < g.x1_nodes(); ++j)
            for (int k = 0; k < g.x2_nodes(); ++k) {
                const double x1 = g.x1(j), e = std::exp(-g.x2(k));
                for (int s = 0; s < 2; ++s) {
                    Vec4 vt, v1, v2;
                    for (int c = 0; c < 4; ++c) {
                        const int q = 4 * s + c;
                        vt(c) = dr * amp[q] * std::cos(pi * x1 + ph[q]) * e;
                        v1(c) = -r * amp[q] * pi * std::sin(pi * x1 + ph[q]) * e;
                        v2(c) = -r * amp[q] * std::cos(pi * x1 + ph[q]) * e;
                    }
                    const Vec4 res = vt + A1s[s] * v1 + Ns[s] * v2;
                    for (int c = 0; c < 4; ++c) f(it, j, k, 4 * s + c) = res(c);
                }
            }
    }
    Field psi = Field::trace_of(g), psit = Field::trace_of(g), psi1 = Field::trace_of(g);
    psi.fill([](double t, double x1, double, int) { return 0.3 * ramp4(t) * std::sin(pi * x1); });
    psit.fill([](double t, double x1, double, int) { return t > 0 ? 1.2 * t * t * t * std::sin(pi * x1) : 0.0; });
    psi1.fill([](double t, double x1, double, int) { return 0.3 * pi * ramp4(t) * std::cos(pi * x1); });
    const Field V0 = exact.trace();
    const BoundaryCoefficients bc(bs);
    Field gb = Field::trace_of(g, 3);
    for (int it = 0; it < g.time_nodes(); ++it)
        for (int j = 0; j < gb.n1(); ++j) {
            const BoundaryPoint p = bc.at(it, j);
            Eigen::Matrix<double, 8, 1> v;
            for (int c = 0; c < 8; ++c) v(c) = V0(it, j, 0, c);
            const Eigen::Vector3d r = p.b * Eigen::Vector2d(psit(it, j, 0), psi1(it, j, 0)) + p.M * v;
            for (int c = 0; c < 3; ++c) gb(it, j, 0, c) = r(c);
        }
    const WForm wf(bs);
    const Field Wex = wf.to_W(exact);
    Field far = Field::trace_of(g, 8);
    for (int it = 0; it < g.time_nodes(); ++it)
        for (int j = 0; j < far.n1(); ++j)
            for (int c = 0; c < 8; ++c) far(it, j, 0, c) = Wex(it, j, g.n2, c);
    const auto sol = solve_linearized(bs, f, gb, SchemeParams{}, far);
    return std::max((sol.Vdot - exact).max_abs(), (sol.psi - psi).max_abs());
}

Outcome linearized_suite() {
    using namespace linearized;
    Outcome o;
    // 128 x 64 tangential x normal
    GridSpec g;
    g.T = 1.0;
    g.L1 = 2.0;
    g.L2 = 2.0;
    g.n1 = 128;
    g.n2 = 64;
    g.nt = 400;
    {
        std::mt19937_64 rng(404);
        GridSpec gz = g;
        gz.T = 0.25;
        gz.nt = 8;
        const double speed = random_state(rng, gz).background.lambda_max();
        gz.nt = static_cast<int>(std::ceil(gz.T * speed * (1 / gz.dx1() + 1 / gz.dx2()) / 0.6));
        rng.seed(404);
        const auto bs = random_state(rng, gz);
        const auto sol = solve_linearized(bs, Field::volume(gz, 8), Field::trace_of(gz, 3));
        const bool zero = sol.W.max_abs() == 0.0 && sol.psi.max_abs() == 0.0 && sol.Vdot.max_abs() == 0.0;
        o.check(zero, "zero sources");
        o.detail << "zero sources -> " << (zero ? "zero" : "nonzero");
    }
    {
        double err[3];
        int q = 0;
        for (int n2 : {16, 32, 64}) err[q++] = manufactured_error(n2);
        const double p = std::log2(err[1] / err[2]);
        o.check(p >= 1.7, "convergence order");
        o.detail << "; manufactured errors " << err[0] << " " << err[1] << " " << err[2] << " (finest 128x64), order "
                 << std::log2(err[0] / err[1]) << " " << p;
    }
    {
        const auto bs = BasicState::from_background(model::BackgroundSheet::symmetric(1, 1, 4.2), g);
        Field f = Field::volume(g, 8);
        f.fill([](double t, double x1, double x2, int c) {
            return t > 0 ? t * t * std::exp(-8 * (x1 * x1 + (x2 - 0.7) * (x2 - 0.7))) * (c == 2 || c == 6 ? 1 : 0.3) : 0.0;
        });
        const auto sol = solve_linearized(bs, f, Field());
        double lo = 1e300, hi = 0;
        for (double lam : {5.0, 10.0, 20.0}) {
            const double r = energy_estimate(sol, f, Field(), lam).ratio();
            o.check(std::isfinite(r) && r > 0, "energy ratio finite");
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        }
        o.check(hi / lo < 2.0, "energy ratio spread");
        o.detail << "; energy ratio in [" << lo << ", " << hi << "]";
    }
    {
        GridSpec gp = g;
        gp.T = 2.0;
        gp.L2 = 4.0;
        gp.nt = 1000;
        Field gb = Field::trace_of(gp, 3);
        gb.fill([](double t, double x1, double, int c) { return c == 2 && t > 0 ? std::min(t, 0.1) * std::cos(1.5 * pi * x1) : 0.0; });
        double rate[2];
        for (int k = 0; k < 2; ++k) {
            const auto bgs = model::BackgroundSheet::symmetric(1, 1, k == 0 ? 4.2 : 3.0);
            rate[k] = growth_rate(solve_linearized(BasicState::from_background(bgs, gp), Field(), gb));
        }
        o.check(rate[1] > 0 && rate[1] >= 5 * std::max(rate[0], 0.0), "instability probe");
        o.detail << "; growth stable " << rate[0] << ", not covered " << rate[1];
    }
    return o;
}

// ---------------------------------------------------------------- 5

Outcome compat_suite() {
    using namespace compat;
    Outcome o;
    GridSpec g;
    g.T = 0.5;
    g.L1 = g.L2 = 2.0;
    g.n1 = g.n2 = 32;
    g.nt = 32;
    const auto bg = model::BackgroundSheet::symmetric(1, 1, 4.2);
    const InitialData zero = InitialData::zero(bg, g, 3);
    double worst = 0;
    bool compatible = true;
    for (int mu = 0; mu <= 3; ++mu) {
        const CompatReport r = check_compatibility(zero, mu);
        compatible = compatible && r.compatible;
        worst = std::max(worst, r.max_violation);
    }
    o.check(compatible && worst == 0.0, "zero data");

    InitialData d = InitialData::zero(bg, g, 2);
    const double c = 0.03;
    d.U0_plus.fill([&](double, double x1, double x2, int k) { return k == 0 ? c * cbump(x1, x2, 0, 0, 0.9) : 0.0; });
    const CompatReport r = check_compatibility(d, 2);
    const double err = std::abs(r.violation("m", 0, 0) - c);
    o.check(!r.compatible && err < 1e-12, "constant jump");

    const ApproxSolution a = build_approximate(InitialData::zero(bg, g, 2));
    bool exact = a.phi.max_abs() == 0.0 && a.f_a.max_abs() == 0.0;
    for (std::size_t i = 0; i < a.U_plus.nodes(); ++i)
        for (int k = 0; k < 4; ++k) {
            exact &= a.U_plus.data()[4 * i + k] == bg.right.vec()(k);
            exact &= a.U_minus.data()[4 * i + k] == bg.left.vec()(k);
        }
    for (int it = 0; it < g.time_nodes(); ++it)
        for (int j = 0; j < g.x1_nodes(); ++j)
            for (int k = 0; k < g.x2_nodes(); ++k) exact &= a.Phi_plus(it, j, k) == g.x2(k) && a.Phi_minus(it, j, k) == -g.x2(k);
    o.check(exact, "zero approximate solution");
    o.detail << "zero data max violation " << worst << " (mu 0..3); jump 0.03 flagged at (0,0) with error " << err
             << "; approximate solution of zero data " << (exact ? "bit-exact" : "not exact");
    return o;
}

// ---------------------------------------------------------------- 6

Outcome nash_moser_suite() {
    using namespace nashmoser;
    Outcome o;
    GridSpec g;
    g.T = 0.1;
    g.L1 = 2.0;
    g.L2 = 1.0;
    g.n1 = 64;
    g.n2 = 32;
    g.nt = 32;
    const auto bg = model::BackgroundSheet::symmetric(1, 1, 4.2);
    compat::InitialData d = compat::InitialData::zero(bg, g, 3);
    const double amp = 1e-3, cp[4] = {0.5, -0.3, 0.8, 0.4}, cm[4] = {-0.2, 0.6, -0.5, 0.3};
    d.U0_plus.fill([&](double, double x1, double x2, int c) { return amp * cp[c] * cbump(x1, x2, 0.0, 0.6, 0.4); });
    d.U0_minus.fill([&](double, double x1, double x2, int c) { return amp * cm[c] * cbump(x1, x2, 0.1, 0.6, 0.35); });
    const auto a = compat::build_approximate(d);
    SchemeParams p;
    p.max_iters = 10;
    const NashMoserResult r = run_nash_moser(a, p);
    o.check(r.status == NashMoserResult::Status::Completed && r.rows.size() == 10, "ten steps");
    double tel = 0, jumps = 0, eight = 0;
    bool bracket = true;
    for (const IterationRow& row : r.rows) {
        tel = std::max({tel, row.fg_f, row.fg_g, row.plus, row.minus});
        jumps = std::max({jumps, row.jump_m, row.jump_n, row.jump_front});
        bracket = bracket && row.Delta >= 1 / (3 * row.theta) && row.Delta <= 1 / (2 * row.theta);
        if (row.i < 8) eight += row.seconds;
    }
    o.check(tel < 1e-10, "telescoping");
    o.check(jumps == 0.0, "modified-state traces");
    o.check(bracket, "Delta bracket");
    const auto res = r.residual(2);
    bool mono = res.size() >= 5;
    for (std::size_t k = 1; mono && k < 5; ++k) mono = res[k] < res[k - 1];
    o.check(mono, "residual decrease");
    o.check(eight < 1800, "runtime");
    o.detail << r.rows.size() << " steps at 64x32: telescoping " << tel << ", trace jumps " << jumps << ", residual_2";
    for (std::size_t k = 0; k < std::min<std::size_t>(res.size(), 5); ++k) o.detail << ' ' << res[k];
    o.detail << ", 8 iterations in " << eight << " s";
    return o;
}

// ---------------------------------------------------------------- 7

std::string harness_csv(std::uint64_t seed, const fs::path& dir, const std::string& name) {
    norms::HarnessConfig hc;
    hc.grid.T = 1.0;
    hc.grid.nt = 8;
    hc.grid.n1 = hc.grid.n2 = 16;
    hc.seed = seed;
    const fs::path p = dir / name;
    norms::write_harness_csv(p.string(), norms::appendix_a_harness(hc));
    return slurp(p);
}

std::vector<std::string> csv_files(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".csv") out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

Outcome reproducibility_suite(const std::string& cli) {
    Outcome o;
    const fs::path dir = fs::temp_directory_path() / "vsheet_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    o.check(harness_csv(5, dir, "a.csv") == harness_csv(5, dir, "b.csv"), "in-process harness");

    const std::string configs[3][2] = {
        {"linearized-run", R"({"schema":1,"background":{"symmetric":{"vbar":4.2}},
            "grid":{"T":0.5,"L1":2,"L2":2,"nt":64,"n1":16,"n2":16},"source":{"kind":"interior_modes","amp":0.1},
            "probe":{"background":{"symmetric":{"vbar":3}}}})"},
        {"nash-moser-run", R"({"schema":1,"background":{"symmetric":{"vbar":4.2}},"data":{"kind":"bump","amp":1e-3},
            "scheme":{"max_iters":3},"sweep":{"theta0":[1,2]}})"},
        {"norms-bench", R"({"schema":1,"grid":{"T":1,"L1":2,"L2":2,"nt":8,"n1":16,"n2":16},"corpus_size":3})"}};
    int compared = 0;
    for (const auto& [cmd, text] : configs) {
        const fs::path cfg = dir / (cmd + ".json");
        std::ofstream(cfg) << text;
        std::string out[2];
        for (int k = 0; k < 2; ++k) {
            out[k] = (dir / (cmd + "_" + std::to_string(k))).string();
            const std::string line = cli + " " + cmd + " --config " + cfg.string() + " --out " + out[k] + " --seed 11 > /dev/null";
            o.check(std::system(line.c_str()) == 0, cmd + " exit");
        }
        const auto files = csv_files(out[0]);
        o.check(!files.empty() && files == csv_files(out[1]), cmd + " files");
        for (const auto& f : files) {
            o.check(slurp(fs::path(out[0]) / f) == slurp(fs::path(out[1]) / f), cmd + "/" + f);
            ++compared;
        }
    }
    o.detail << "harness csv identical in process; " << compared << " CLI csv files byte-identical on rerun (seed 11)";
    fs::remove_all(dir);
    return o;
}

} // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "vsheet";
    struct Entry {
        int id;
        const char* name;
        double budget;
        std::function<Outcome()> run;
    };
    const std::vector<Entry> suites{
        {1, "algebra", 10, algebra_suite},
        {2, "stability condition", 1, stability_suite},
        {3, "norms", 120, norm_suite},
        {4, "linearized solver", 600, linearized_suite},
        {5, "compatibility", 60, compat_suite},
        {6, "nash-moser", 1800, nash_moser_suite},
        {7, "reproducibility", 600, [&] { return reproducibility_suite(cli); }},
    };
    bool all = true;
    for (const Entry& e : suites) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = e.run();
        } catch (const std::exception& ex) {
            o.check(false, std::string("exception: ") + ex.what());
        }
        const double s = since(t0);
        o.check(s < e.budget, "runtime budget " + std::to_string(static_cast<int>(e.budget)) + " s");
        all = all && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << e.id << " (" << e.name << ", " << std::setprecision(3)
                  << s << " s): " << std::setprecision(4) << o.detail.str() << std::endl;
    }
    return all ? 0 : 1;
}
