#include "vsheet/compat.hpp"

#include "vsheet/norms.hpp"

#include <fftw3.h>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>

namespace vsheet::compat {

namespace {

using fields::Axis;

constexpr std::array<Side, 2> kSides{Side::Right, Side::Left};

int idx(Side s) { return static_cast<int>(s); }

const model::PhaseState& bar(const BackgroundSheet& bg, Side s) { return s == Side::Right ? bg.right : bg.left; }

double factorial(int n) {
    double f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

// truncated Taylor coefficients (normalized: c_l = d_t^l / l!)
using Jet = std::vector<double>;

Jet operator+(Jet a, const Jet& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}
Jet operator-(Jet a, const Jet& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
    return a;
}
Jet operator*(const Jet& a, const Jet& b) {
    Jet c(a.size(), 0.0);
    for (std::size_t k = 0; k < a.size(); ++k)
        for (std::size_t i = 0; i <= k; ++i) c[k] += a[i] * b[k - i];
    return c;
}
Jet operator/(const Jet& a, const Jet& b) {
    Jet c(a.size(), 0.0);
    for (std::size_t k = 0; k < a.size(); ++k) {
        double s = a[k];
        for (std::size_t i = 1; i <= k; ++i) s -= b[i] * c[k - i];
        c[k] = s / b[0];
    }
    return c;
}
Jet operator*(double s, Jet a) {
    for (double& x : a) x *= s;
    return a;
}
/// s^alpha via s w' = alpha s' w
Jet power(const Jet& s, double alpha) {
    Jet w(s.size(), 0.0);
    w[0] = std::pow(s[0], alpha);
    for (std::size_t k = 1; k < s.size(); ++k) {
        double acc = 0;
        for (std::size_t j = 1; j <= k; ++j)
            acc += (alpha * static_cast<double>(j) - static_cast<double>(k - j)) * s[j] * w[k - j];
        w[k] = acc / (static_cast<double>(k) * s[0]);
    }
    return w;
}

struct Coeffs {
    std::vector<Field> c, d1, d2;

    void push(Field f) {
        d1.push_back(fields::d_1(f));
        d2.push_back(fields::d_2(f));
        c.push_back(std::move(f));
    }
    Jet jet(const std::vector<Field>& v, int j, int k, int comp, int K) const {
        Jet out(K + 1);
        for (int l = 0; l <= K; ++l) out[l] = v[l](0, j, k, comp);
        return out;
    }
};

double radius(const GridSpec& g, int j, int k) { return std::hypot(g.x1(j), g.x2(k)); }

double support_of(const Field& f) {
    const double m = f.max_abs();
    if (m == 0.0) return 0.0;
    double r = 0;
    for (int it = 0; it < f.nT(); ++it)
        for (int j = 0; j < f.n1(); ++j)
            for (int k = 0; k < f.n2(); ++k)
                for (int c = 0; c < f.ncomp(); ++c)
                    if (std::abs(f(it, j, k, c)) > 1e-12 * m) r = std::max(r, radius(f.grid(), j, k));
    return r;
}

Field repeated_d2(Field f, int times) {
    for (int i = 0; i < times; ++i) f = fields::d_2(f);
    return f;
}

double boundary_max(const Field& f) {
    double m = 0;
    for (int j = 0; j < f.n1(); ++j) m = std::max(m, std::abs(f(0, j, 0, 0)));
    return m;
}

Field x2_field(const GridSpec& g, double sign, FieldKind kind) {
    Field f(g, 1, kind);
    for (int it = 0; it < f.nT(); ++it)
        for (int j = 0; j < f.n1(); ++j)
            for (int k = 0; k < f.n2(); ++k) f(it, j, k) = sign * g.x2(k);
    return f;
}

Field background_field(const GridSpec& g, const model::PhaseState& s) {
    Field f = Field::volume(g, 4);
    const Vec4 v = s.vec();
    for (std::size_t i = 0; i < f.nodes(); ++i)
        for (int c = 0; c < 4; ++c) f.data()[i * 4 + c] = v(c);
    return f;
}

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    std::vector<double> in(x);
    std::vector<std::complex<double>> out(n / 2 + 1);
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
    fftw_execute(p);
    fftw_destroy_plan(p);
    return out;
}

std::vector<double> irfft(std::vector<std::complex<double>> spec, int n) {
    std::vector<double> out(n);
    fftw_plan p = fftw_plan_dft_c2r_1d(n, reinterpret_cast<fftw_complex*>(spec.data()), out.data(), FFTW_ESTIMATE);
    fftw_execute(p);
    fftw_destroy_plan(p);
    for (double& v : out) v /= n;
    return out;
}

void require_periodic(const GridSpec& g) {
    if (!g.x1_periodic || g.n1 % 2 != 0)
        throw std::invalid_argument("compat: x1 must be periodic with an even number of nodes");
}

} // namespace

InitialData InitialData::zero(const BackgroundSheet& bg, const GridSpec& g, int mu) {
    InitialData d;
    d.background = bg;
    d.grid = g;
    d.U0_plus = Field::slice(g, 4);
    d.U0_minus = Field::slice(g, 4);
    d.phi0.assign(g.x1_nodes(), 0.0);
    d.mu = mu;
    return d;
}

void InitialData::validate(const CompatConfig& cfg) const {
    grid.validate();
    require_periodic(grid);
    for (const Field* f : {&U0_plus, &U0_minus}) {
        if (f->kind() != FieldKind::Slice || f->ncomp() != 4 || !(f->grid() == grid))
            throw std::invalid_argument("initial data: Udot0 must be 4-component slices on the data grid");
        if (f->max_abs() > cfg.small_data) throw std::invalid_argument("initial data: Udot0 is not small");
        for (int j = 0; j < f->n1(); ++j)
            for (int k = 0; k < f->n2(); ++k)
                if (radius(grid, j, k) > cfg.support_radius)
                    for (int c = 0; c < 4; ++c)
                        if (std::abs((*f)(0, j, k, c)) > cfg.support_tol)
                            throw std::invalid_argument("initial data: Udot0 not supported in the unit half-disk");
    }
    if (static_cast<int>(phi0.size()) != grid.x1_nodes())
        throw std::invalid_argument("initial data: phi0 must live on the x1 nodes");
    for (int j = 0; j < grid.x1_nodes(); ++j) {
        if (std::abs(phi0[j]) > cfg.small_data) throw std::invalid_argument("initial data: phi0 is not small");
        if (std::abs(grid.x1(j)) > cfg.support_radius && std::abs(phi0[j]) > cfg.support_tol)
            throw std::invalid_argument("initial data: phi0 not supported in [-1,1]");
    }
    if (mu < 0 || mu > cfg.max_order)
        throw std::invalid_argument("initial data: mu outside [0, " + std::to_string(cfg.max_order) + "]");
}

double hs_norm_1d(const std::vector<double>& phi, const GridSpec& g, int s) {
    require_periodic(g);
    const int n = static_cast<int>(phi.size());
    const auto spec = rfft(phi);
    double acc = 0;
    for (int k = 0; k <= n / 2; ++k) {
        const double xi = std::numbers::pi * k / g.L1;
        const double w = (k == 0 || k == n / 2) ? 1.0 : 2.0;
        acc += w * std::pow(1.0 + xi * xi, s) * std::norm(spec[k]);
    }
    return std::sqrt(acc * g.dx1() / n);
}

ExtendedFront extend_front(const std::vector<double>& phi0, const GridSpec& g, const BackgroundSheet& bg,
                           int norm_order) {
    require_periodic(g);
    const int n = g.x1_nodes();
    if (static_cast<int>(phi0.size()) != n) throw std::invalid_argument("extend_front: phi0 size mismatch");
    if (g.L1 <= 1.0) throw std::invalid_argument("extend_front: L1 must exceed the data support");
    ExtendedFront out;
    out.Phi0 = Field::slice(g, 1);
    out.support_bound = 1.0 + 0.5 * bg.lambda_max() * g.T;
    const double r1 = std::min(out.support_bound, g.L1);
    const auto spec = rfft(phi0);
    for (int k = 0; k < g.x2_nodes(); ++k) {
        const double x2 = g.x2(k);
        auto s = spec;
        for (int q = 0; q <= n / 2; ++q) {
            const double xi = std::numbers::pi * q / g.L1;
            s[q] *= std::exp(-std::sqrt(1.0 + xi * xi) * x2);
        }
        const auto row = k == 0 ? phi0 : irfft(std::move(s), n);
        for (int j = 0; j < n; ++j) {
            const double cut = k == 0 ? 1.0 : fields::smooth_step_down((radius(g, j, k) - 1.0) / (r1 - 1.0));
            out.Phi0(0, j, k) = cut * row[j];
        }
    }
    for (int j = 0; j < n; ++j) out.Phi0(0, j, 0) = phi0[j];
    out.support = support_of(out.Phi0);
    out.norm = norms::aniso_star_norm(out.Phi0, {norm_order + 1, 1.0});
    out.data_norm = hs_norm_1d(phi0, g, norm_order);
    return out;
}

double TimeTraces::support(Side s, int l, bool front) const {
    return support_of(front ? Phi_l(s, l) : U_l(s, l));
}

TimeTraces time_derivative_traces(const InitialData& data, int L, const CompatConfig& cfg) {
    const ExtendedFront ext = extend_front(data.phi0, data.grid, data.background);
    return time_derivative_traces(data, ext.Phi0, L, cfg);
}

TimeTraces time_derivative_traces(const InitialData& data, const Field& Phi0, int L, const CompatConfig& cfg) {
    if (L < 0 || L > cfg.max_order)
        throw std::invalid_argument("time_derivative_traces: order outside [0, " + std::to_string(cfg.max_order) + "]");
    const GridSpec& g = data.grid;
    fields::require_capacity(Phi0, Axis::X1, L + 2);
    fields::require_capacity(Phi0, Axis::X2, L + 2);
    const double gamma = data.background.law.gamma;

    TimeTraces tr;
    tr.L = L;
    for (Side s : kSides) {
        const model::PhaseState ub = bar(data.background, s);
        const double sigma = linearized::side_sign(s);
        std::array<Coeffs, 4> U;
        Coeffs P;
        for (int c = 0; c < 4; ++c) U[c].push(data.U0(s).component(c));
        P.push(Phi0);
        for (int l = 0; l <= L; ++l) {
            Field F1 = Field::slice(g, 4), F2 = Field::slice(g, 1);
            for (int j = 0; j < g.x1_nodes(); ++j)
                for (int k = 0; k < g.x2_nodes(); ++k) {
                    std::array<Jet, 4> u, u1, u2;
                    for (int c = 0; c < 4; ++c) {
                        u[c] = U[c].jet(U[c].c, j, k, 0, l);
                        u[c][0] += ub.vec()(c);
                        u1[c] = U[c].jet(U[c].d1, j, k, 0, l);
                        u2[c] = U[c].jet(U[c].d2, j, k, 0, l);
                    }
                    const Jet p1 = P.jet(P.d1, j, k, 0, l);
                    Jet p2 = P.jet(P.d2, j, k, 0, l);
                    p2[0] += sigma;
                    const Jet &m = u[0], &n = u[1], &v = u[2], &w = u[3];
                    const Jet dtP = w - v * p1;
                    const Jet q = (gamma * (gamma - 1.0)) * power(m + n, gamma - 1.0) / n;
                    auto A1 = [&](const std::array<Jet, 4>& d) {
                        return std::array<Jet, 4>{v * d[0] + m * d[2], v * d[1] + n * d[2], q * (d[0] + d[1]) + v * d[2],
                                                  v * d[3]};
                    };
                    auto A2 = [&](const std::array<Jet, 4>& d) {
                        return std::array<Jet, 4>{w * d[0] + m * d[3], w * d[1] + n * d[3], w * d[2],
                                                  q * (d[0] + d[1]) + w * d[3]};
                    };
                    const auto a1 = A1(u1), a2 = A2(u2), a12 = A1(u2);
                    for (int c = 0; c < 4; ++c) {
                        const Jet normal = (a2[c] - dtP * u2[c] - p1 * a12[c]) / p2;
                        F1(0, j, k, c) = -(a1[c][l] + normal[l]);
                    }
                    F2(0, j, k) = dtP[l];
                }
            F2 *= 1.0 / (l + 1);
            P.push(F2);
            if (l < L) {
                F1 *= 1.0 / (l + 1);
                for (int c = 0; c < 4; ++c) U[c].push(F1.component(c));
            }
        }
        auto& Uo = tr.U[idx(s)];
        auto& Po = tr.Phi[idx(s)];
        for (int l = 0; l <= L; ++l) {
            Field f = Field::slice(g, 4);
            for (int c = 0; c < 4; ++c) f.set_component(c, U[c].c[l]);
            f *= factorial(l);
            Uo.push_back(std::move(f));
        }
        for (int l = 0; l <= L + 1; ++l) Po.push_back(factorial(l) * P.c[l]);
    }
    return tr;
}

double weighted_boundary_integral(const Field& u) {
    const GridSpec& g = u.grid();
    double acc = 0;
    for (int j = 0; j < u.n1(); ++j) {
        const double w1 = g.x1_periodic || (j > 0 && j + 1 < u.n1()) ? g.dx1() : 0.5 * g.dx1();
        for (int k = 0; k + 1 < u.n2(); ++k) {
            const double mid = 0.5 * (u(0, j, k) + u(0, j, k + 1));
            acc += w1 * g.dx2() * mid * mid / ((k + 0.5) * g.dx2());
        }
    }
    return acc;
}

double CompatReport::violation(const std::string& q, int l, int j) const {
    for (const auto& e : conditions)
        if (e.quantity == q && e.l == l && e.j == j) return e.violation;
    throw std::out_of_range("no condition " + q + "(" + std::to_string(l) + "," + std::to_string(j) + ")");
}

double CompatReport::integral(const std::string& q, int j) const {
    for (const auto& e : integrals)
        if (e.quantity == q && e.j == j) return e.value;
    throw std::out_of_range("no integral " + q + "(" + std::to_string(j) + ")");
}

std::string CompatReport::to_json() const {
    nlohmann::json j;
    j["mu"] = mu;
    j["tol"] = tol;
    j["integral_limit"] = std::isfinite(integral_limit) ? nlohmann::json(integral_limit) : nlohmann::json("inf");
    j["compatible"] = compatible;
    j["max_violation"] = max_violation;
    for (const auto& e : conditions)
        j["conditions"].push_back({{"quantity", e.quantity}, {"l", e.l}, {"j", e.j}, {"violation", e.violation}});
    for (const auto& e : integrals)
        j["integrals"].push_back({{"quantity", e.quantity}, {"j", e.j}, {"order", e.order}, {"value", e.value}});
    return j.dump(2);
}

CompatReport check_compatibility(const TimeTraces& tr, int mu, const CompatConfig& cfg) {
    if (mu < 0 || mu > tr.L) throw std::invalid_argument("check_compatibility: traces computed to order < mu");
    CompatReport rep;
    rep.mu = mu;
    rep.tol = cfg.tol;
    rep.integral_limit = cfg.integral_limit;
    auto jump_U = [&](int l, int c) { return tr.U_l(Side::Right, l).component(c) - tr.U_l(Side::Left, l).component(c); };
    auto jump_P = [&](int l) { return tr.Phi_l(Side::Right, l) - tr.Phi_l(Side::Left, l); };
    auto add = [&](const std::string& q, int l, int j, const Field& jump) {
        rep.conditions.push_back({q, l, j, boundary_max(repeated_d2(jump, j))});
    };
    for (int l = 0; l <= mu; ++l)
        for (int j = 0; j <= mu - l; ++j) add("Phi", l, j, jump_P(l));
    for (int c = 0; c < 2; ++c)
        for (int l = 0; l <= mu - 1; ++l)
            for (int j = 0; j <= mu - 1 - l; ++j) add(c == 0 ? "m" : "n", l, j, jump_U(l, c));
    for (int j = 0; j <= mu + 1; ++j)
        rep.integrals.push_back({"Phi", j, mu + 1 - j, weighted_boundary_integral(repeated_d2(jump_P(j), mu + 1 - j))});
    for (int c = 0; c < 2; ++c)
        for (int j = 0; j <= mu; ++j)
            rep.integrals.push_back(
                {c == 0 ? "m" : "n", j, mu - j, weighted_boundary_integral(repeated_d2(jump_U(j, c), mu - j))});
    for (const auto& e : rep.conditions) {
        rep.max_violation = std::max(rep.max_violation, e.violation);
        if (!(e.violation <= cfg.tol)) rep.compatible = false;
    }
    for (const auto& e : rep.integrals)
        if (!(e.value <= cfg.integral_limit)) rep.compatible = false;
    return rep;
}

CompatReport check_compatibility(const InitialData& data, int mu, const CompatConfig& cfg) {
    data.validate(cfg);
    return check_compatibility(time_derivative_traces(data, mu, cfg), mu, cfg);
}

Field residual_L(const Field& U, const Field& Phi, Side s, const BackgroundSheet& bg) {
    const GridSpec& g = U.grid();
    const double sigma = linearized::side_sign(s);
    const Field Ud = U - background_field(g, bar(bg, s));
    const Field Pd = Phi - x2_field(g, sigma, FieldKind::Volume);
    const Field dtU = fields::d_t(Ud), d1U = fields::d_1(Ud), d2U = fields::d_2(Ud);
    const Field dtP = fields::d_t(Pd), d1P = fields::d_1(Pd), d2P = fields::d_2(Pd);
    Field R = Field::volume(g, 4);
    for (std::size_t i = 0; i < U.nodes(); ++i) {
        const auto st = model::PhaseState::from(Eigen::Map<const Vec4>(&U.data()[4 * i]));
        const auto [A1, A2] = model::flux_jacobians(st, bg.law);
        const Mat4 N = (A2 - dtP.data()[i] * Mat4::Identity() - d1P.data()[i] * A1) / (sigma + d2P.data()[i]);
        const Vec4 r = Eigen::Map<const Vec4>(&dtU.data()[4 * i]) + A1 * Eigen::Map<const Vec4>(&d1U.data()[4 * i]) +
                       N * Eigen::Map<const Vec4>(&d2U.data()[4 * i]);
        for (int c = 0; c < 4; ++c) R.data()[4 * i + c] = r(c);
    }
    return R;
}

Field boundary_B(const Field& Up, const Field& Um, const Field& phi) {
    const Field dt = fields::d_t(phi), d1 = fields::d_1(phi);
    Field B = Field::trace_of(phi.grid(), 3);
    for (int it = 0; it < phi.nT(); ++it)
        for (int j = 0; j < phi.n1(); ++j) {
            const double a = d1(it, j, 0);
            B(it, j, 0, 0) = (Up(it, j, 0, 2) - Um(it, j, 0, 2)) * a - (Up(it, j, 0, 3) - Um(it, j, 0, 3));
            B(it, j, 0, 1) = dt(it, j, 0) + Up(it, j, 0, 2) * a - Up(it, j, 0, 3);
            B(it, j, 0, 2) = (Up(it, j, 0, 0) + Up(it, j, 0, 1)) - (Um(it, j, 0, 0) + Um(it, j, 0, 1));
        }
    return B;
}

linearized::BasicState ApproxSolution::basic_state(double kappa0) const {
    linearized::BasicState bs;
    bs.U_r = U_plus;
    bs.U_l = U_minus;
    bs.Phi_r = Phi_plus;
    bs.Phi_l = Phi_minus;
    bs.background = background;
    bs.kappa0 = kappa0;
    return bs;
}

void ApproxSolution::write(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    fields::write_field(dir + "/U_plus.bin", U_plus);
    fields::write_field(dir + "/U_minus.bin", U_minus);
    fields::write_field(dir + "/Phi_plus.bin", Phi_plus);
    fields::write_field(dir + "/Phi_minus.bin", Phi_minus);
    fields::write_field(dir + "/phi.bin", phi);
    fields::write_field(dir + "/f_a.bin", f_a);
}

ApproxSolution build_approximate(const InitialData& data, const CompatConfig& cfg) {
    data.validate(cfg);
    if (cfg.j_max < 0 || cfg.j_max > 2) throw std::invalid_argument("build_approximate: j_max must be in [0,2]");
    const GridSpec& g = data.grid;
    const BackgroundSheet& bg = data.background;
    const int L = data.mu;

    const ExtendedFront ext = extend_front(data.phi0, g, bg, cfg.data_norm_order);
    for (Side s : kSides)
        fields::check_front_bound(ext.Phi0 + x2_field(g, linearized::side_sign(s), FieldKind::Slice),
                                  linearized::side_sign(s), cfg.initial_front_bound);
    const TimeTraces tr = time_derivative_traces(data, ext.Phi0, L, cfg);

    ApproxSolution a;
    a.background = bg;
    a.report = check_compatibility(tr, L, cfg);
    if (!a.report.compatible) throw CompatibilityError("initial data not compatible:\n" + a.report.to_json());

    if (!(cfg.time_flat >= 0 && cfg.time_flat < 1)) throw std::invalid_argument("build_approximate: time_flat in [0,1)");
    const double t_flat = cfg.time_flat * g.T;
    auto chi = [&](double t) { return fields::smooth_step_down((std::abs(t) - t_flat) / (g.T - t_flat)); };
    std::array<Field, 2> Ud{Field::volume(g, 4), Field::volume(g, 4)}, Pd{Field::volume(g, 1), Field::volume(g, 1)};
    for (Side s : kSides)
        for (int it = 0; it < g.time_nodes(); ++it) {
            const double t = g.t(it), w = chi(t);
            if (w == 0.0) continue;
            Field su = Field::slice(g, 4), sp = Field::slice(g, 1);
            for (int l = 0; l <= L; ++l) su.axpy(w * std::pow(t, l) / factorial(l), tr.U_l(s, l));
            for (int l = 0; l <= L + 1; ++l) sp.axpy(w * std::pow(t, l) / factorial(l), tr.Phi_l(s, l));
            Ud[idx(s)].set_time_slice(it, su);
            Pd[idx(s)].set_time_slice(it, sp);
        }

    // common front trace
    a.phi = Pd[0].trace();
    a.phi += Pd[1].trace();
    a.phi *= 0.5;
    for (Side s : kSides) {
        Field& P = Pd[idx(s)];
        P += norms::lift_boundary(a.phi - P.trace());
        for (int it = 0; it < g.time_nodes(); ++it)
            for (int j = 0; j < g.x1_nodes(); ++j) P(it, j, 0) = a.phi(it, j, 0);
    }

    // total mass continuity
    const double bar_jump = (bg.right.m + bg.right.n) - (bg.left.m + bg.left.n);
    Field dm = Field::trace_of(g, 1);
    for (int it = 0; it < g.time_nodes(); ++it)
        for (int j = 0; j < g.x1_nodes(); ++j)
            dm(it, j, 0) = 0.5 * (bar_jump + Ud[0](it, j, 0, 0) + Ud[0](it, j, 0, 1) - Ud[1](it, j, 0, 0) -
                                  Ud[1](it, j, 0, 1));
    if (dm.max_abs() > 0) {
        const Field lift = norms::lift_boundary(dm);
        for (std::size_t i = 0; i < lift.nodes(); ++i) {
            Ud[0].data()[4 * i] -= lift.data()[i];
            Ud[1].data()[4 * i] += lift.data()[i];
        }
    }

    // u from the eikonal equation
    for (Side s : kSides) {
        const model::PhaseState ub = bar(bg, s);
        Field& U = Ud[idx(s)];
        const Field dtP = fields::d_t(Pd[idx(s)]), d1P = fields::d_1(Pd[idx(s)]);
        for (std::size_t i = 0; i < U.nodes(); ++i)
            U.data()[4 * i + 3] = dtP.data()[i] + (ub.v + U.data()[4 * i + 2]) * d1P.data()[i] - ub.u;
    }

    a.U_plus = background_field(g, bg.right) + Ud[0];
    a.U_minus = background_field(g, bg.left) + Ud[1];
    a.Phi_plus = x2_field(g, 1.0, FieldKind::Volume) + Pd[0];
    a.Phi_minus = x2_field(g, -1.0, FieldKind::Volume) + Pd[1];

    for (const Field* U : {&a.U_plus, &a.U_minus})
        for (std::size_t i = 0; i < U->nodes(); ++i) model::require_valid(U->data()[4 * i], U->data()[4 * i + 1]);
    a.front_min = std::numeric_limits<double>::infinity();
    for (Side s : kSides) {
        const Field d2 = fields::d_2(Pd[idx(s)]);
        const double sg = linearized::side_sign(s);
        for (double v : d2.data()) a.front_min = std::min(a.front_min, 1.0 + sg * v);
        fields::check_front_bound(a.Phi(s), linearized::side_sign(s), cfg.front_bound);
    }

    a.f_a = Field::volume(g, 8);
    std::array<Field, 2> R;
    for (Side s : kSides) {
        R[idx(s)] = residual_L(a.U(s), a.Phi(s), s, bg);
        a.f_a.set_components(4 * idx(s), R[idx(s)]);
    }
    a.f_a *= -1.0;
    a.f_a.zero_past();

    const int t0 = g.t0();
    const double dt = g.dt();
    // forward stencils: the first ghost slice carries a one-sided time difference
    a.residual_dt.assign(std::max(0, std::min(cfg.j_max, L - 1)) + 1, 0.0);
    for (const Field& r : R)
        for (int j = 0; j < g.x1_nodes(); ++j)
            for (int k = 0; k < g.x2_nodes(); ++k)
                for (int c = 0; c < 4; ++c) {
                    double v[4];
                    for (int q = 0; q < 4; ++q) v[q] = r(t0 + q, j, k, c);
                    const double d[3] = {v[0], (-3 * v[0] + 4 * v[1] - v[2]) / (2 * dt),
                                         (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / (dt * dt)};
                    for (std::size_t q = 0; q < a.residual_dt.size(); ++q)
                        a.residual_dt[q] = std::max(a.residual_dt[q], std::abs(d[q]));
                }

    for (Side s : kSides)
        a.eikonal_residual = std::max(a.eikonal_residual, fields::eikonal_residual(a.U(s), a.Phi(s)).max_abs());
    a.boundary_residual = boundary_B(a.U_plus.trace(), a.U_minus.trace(), a.phi).max_abs();
    a.front_mismatch = std::max((a.Phi_plus.trace() - a.phi).max_abs(), (a.Phi_minus.trace() - a.phi).max_abs());

    const norms::NormParams pa{cfg.approx_norm_order, 1.0}, pf{std::max(cfg.approx_norm_order - 1, 0), 1.0},
        pd{cfg.data_norm_order, 1.0};
    a.norm_approx = norms::aniso_star_norm(a.phi, pa);
    a.norm_data = hs_norm_1d(data.phi0, g, cfg.data_norm_order);
    for (Side s : kSides) {
        a.norm_approx += norms::aniso_star_norm(Ud[idx(s)], pa) +
                         norms::aniso_star_norm(Pd[idx(s)], {cfg.approx_norm_order + 1, 1.0});
        a.norm_data += norms::aniso_star_norm(data.U0(s), pd);
        a.support_U = std::max(a.support_U, support_of(Ud[idx(s)]));
        a.support_Phi = std::max(a.support_Phi, support_of(Pd[idx(s)]));
    }
    a.norm_f = norms::aniso_star_norm(a.f_a, pf);
    a.support_f = support_of(a.f_a);
    return a;
}

double VResidual::max() const { return std::max({L, E, B, front, past}); }

VProblem::VProblem(const ApproxSolution& a) : a_(&a), L0_(Field::volume(a.grid(), 8)) {
    for (Side s : kSides) L0_.set_components(4 * idx(s), residual_L(a.U(s), a.Phi(s), s, a.background));
}

Field VProblem::L(const Field& V, const Field& Psi) const {
    const ApproxSolution& a = *a_;
    Field out = Field::volume(a.grid(), 8);
    for (Side s : kSides) {
        const Field U = a.U(s) + V.components(4 * idx(s), 4);
        const Field P = a.Phi(s) + Psi.component(idx(s));
        out.set_components(4 * idx(s), residual_L(U, P, s, a.background));
    }
    return out - L0_;
}

Field VProblem::E(const Field& V, const Field& Psi) const {
    const ApproxSolution& a = *a_;
    Field out = Field::volume(a.grid(), 2);
    for (Side s : kSides) {
        const Field P = Psi.component(idx(s));
        const Field dtP = fields::d_t(P), d1P = fields::d_1(P), d1Pa = fields::d_1(a.Phi(s));
        const Field& Ua = a.U(s);
        for (std::size_t i = 0; i < P.nodes(); ++i) {
            const double v = V.data()[8 * i + 4 * idx(s) + 2], u = V.data()[8 * i + 4 * idx(s) + 3];
            out.data()[2 * i + idx(s)] =
                dtP.data()[i] + (Ua.data()[4 * i + 2] + v) * d1P.data()[i] - u + v * d1Pa.data()[i];
        }
    }
    return out;
}

Field VProblem::B(const Field& V_trace, const Field& psi) const {
    const ApproxSolution& a = *a_;
    return boundary_B(a.U_plus.trace() + V_trace.components(0, 4), a.U_minus.trace() + V_trace.components(4, 4),
                      a.phi + psi);
}

VResidual VProblem::residual(const Field& V, const Field& Psi, const Field& psi) const {
    VResidual r;
    r.L = (L(V, Psi) - a_->f_a).max_abs();
    r.E = E(V, Psi).max_abs();
    r.B = B(V.trace(), psi).max_abs();
    const Field tr = Psi.trace();
    for (int c = 0; c < 2; ++c) r.front = std::max(r.front, (tr.component(c) - psi).max_abs());
    r.past = std::max({V.max_abs_past(), Psi.max_abs_past(), psi.max_abs_past()});
    return r;
}

VProblem::Substitution VProblem::substitution(const Field& V, const Field& Psi) const {
    const ApproxSolution& a = *a_;
    Substitution out;
    Field lhs = Field::volume(a.grid(), 8), eik = Field::volume(a.grid(), 2);
    for (Side s : kSides) {
        const Field U = a.U(s) + V.components(4 * idx(s), 4);
        const Field P = a.Phi(s) + Psi.component(idx(s));
        lhs.set_components(4 * idx(s), linearized::nonlinear_operator(U, P, a.background.law));
        eik.set_component(idx(s), fields::eikonal_residual(U, P));
    }
    Field d = lhs - (L(V, Psi) - a.f_a);
    d.zero_past();
    out.interior = d.max_abs();
    out.eikonal = (eik - E(V, Psi)).max_abs();
    return out;
}

VProblem assemble_V_problem(const ApproxSolution& a) { return VProblem(a); }

} // namespace vsheet::compat
