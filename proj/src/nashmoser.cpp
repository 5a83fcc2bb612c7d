#include "vsheet/nashmoser.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace vsheet::nashmoser {

namespace {

constexpr std::array<Side, 2> kSides{Side::Right, Side::Left};
int idx(Side s) { return static_cast<int>(s); }

using fields::d_1;
using fields::d_2;
using fields::d_t;

Field zero_like(const Field& u) { return Field(u.grid(), u.ncomp(), u.kind()); }

Field lift(const Field& tr, const SchemeParams& p) { return norms::lift_boundary(tr, p.lift_width); }

double max_past(std::initializer_list<const Field*> fs) {
    double m = 0;
    for (const Field* f : fs)
        if (f->size()) m = std::max(m, f->max_abs_past());
    return m;
}

// d/dk L(U^a + W + k dV, Phi^a + Psi + k dPsi), both sides
Field lin_L(const compat::ApproxSolution& a, const Field& W, const Field& Psi, const Field& dV, const Field& dPsi) {
    Field out = Field::volume(a.grid(), 8);
    for (Side s : kSides) {
        const int k = idx(s);
        out.set_components(4 * k, linearized::linearized_operator(a.U(s) + W.components(4 * k, 4),
                                                                  a.Phi(s) + Psi.component(k), dV.components(4 * k, 4),
                                                                  dPsi.component(k), a.background.law));
    }
    return out;
}

// E'(W, Psi)(dV, dPsi)
Field lin_E(const compat::ApproxSolution& a, const Field& W, const Field& Psi, const Field& dV, const Field& dPsi) {
    Field out = Field::volume(a.grid(), 2);
    for (Side s : kSides) {
        const int k = idx(s);
        const Field dP = dPsi.component(k);
        const Field dt = d_t(dP), d1 = d_1(dP), P1 = d_1(a.Phi(s) + Psi.component(k));
        const Field& Ua = a.U(s);
        for (std::size_t q = 0; q < dP.nodes(); ++q) {
            const double v = Ua.data()[4 * q + 2] + W.data()[8 * q + 4 * k + 2];
            const double dv = dV.data()[8 * q + 4 * k + 2], du = dV.data()[8 * q + 4 * k + 3];
            out.data()[2 * q + k] = dt.data()[q] + v * d1.data()[q] + dv * P1.data()[q] - du;
        }
    }
    return out;
}

// B'(U^a + W, phi^a + psi)(dV, dpsi) on x2 = 0; W and dV are 8-component traces
Field lin_B(const compat::ApproxSolution& a, const Field& W, const Field& psi, const Field& dV, const Field& dpsi) {
    const Field Ur = a.U_plus.trace(), Ul = a.U_minus.trace();
    const Field p1 = d_1(a.phi + psi), dt = d_t(dpsi), d1 = d_1(dpsi);
    Field out = Field::trace_of(a.grid(), 3);
    for (std::size_t q = 0; q < out.nodes(); ++q) {
        const double vr = Ur.data()[4 * q + 2] + W.data()[8 * q + 2], vl = Ul.data()[4 * q + 2] + W.data()[8 * q + 6];
        const double* d = dV.data().data() + 8 * q;
        const double a1 = p1.data()[q];
        out.data()[3 * q] = (d[2] - d[6]) * a1 + (vr - vl) * d1.data()[q] - (d[3] - d[7]);
        out.data()[3 * q + 1] = dt.data()[q] + d[2] * a1 + vr * d1.data()[q] - d[3];
        out.data()[3 * q + 2] = d[0] + d[1] - d[4] - d[5];
    }
    return out;
}

// (E+ - R_T B2, E- - R_T B2 + R_T B1) for an eikonal-type volume field and a boundary-type trace
Field eikonal_combination(const Field& Eh, const Field& Et, const SchemeParams& p) {
    const Field r2 = lift(Et.component(1), p), r1 = lift(Et.component(0), p);
    Field out = Eh;
    for (std::size_t q = 0; q < r1.nodes(); ++q) {
        out.data()[2 * q] -= r2.data()[q];
        out.data()[2 * q + 1] += r1.data()[q] - r2.data()[q];
    }
    return out;
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sx += x[k];
        sy += y[k];
        sxx += x[k] * x[k];
        sxy += x[k] * y[k];
    }
    const double den = n * sxx - sx * sx;
    return den > 0 ? (n * sxy - sx * sy) / den : 0.0;
}

double aniso(const Field& u, int s, double lambda) { return norms::aniso_norm(u, {s, lambda}); }
double hs(const Field& u, int s, double lambda) { return norms::weighted_norm(u, {s, lambda}); }

// integral remainder int_0^1 (1 - t) L''(W + t dV)(dV, dV) dt, four Gauss points, central difference in t
Field quadratic_integral(const compat::ApproxSolution& a, const Field& V, const Field& Psi, const Field& dV,
                         const Field& dPsi) {
    static const double xg[4] = {0.0694318442029737, 0.3300094782075719, 0.6699905217924281, 0.9305681557970263};
    static const double wg[4] = {0.1739274225687269, 0.3260725774312731, 0.3260725774312731, 0.1739274225687269};
    const double h = 0.05;
    Field out = Field::volume(a.grid(), 8);
    for (int q = 0; q < 4; ++q) {
        Field Wp = V, Pp = Psi, Wm = V, Pm = Psi;
        Wp.axpy(xg[q] + h, dV);
        Pp.axpy(xg[q] + h, dPsi);
        Wm.axpy(xg[q] - h, dV);
        Pm.axpy(xg[q] - h, dPsi);
        Field d = lin_L(a, Wp, Pp, dV, dPsi) - lin_L(a, Wm, Pm, dV, dPsi);
        out.axpy(wg[q] * (1 - xg[q]) / (2 * h), d);
    }
    return out;
}

IterationState slim(const IterationState& st) {
    IterationState s;
    s.i = st.i;
    s.V = st.V;
    s.Psi = st.Psi;
    s.psi = st.psi;
    return s;
}

} // namespace

// ---------------------------------------------------------------- parameters

void SchemeParams::validate() const {
    if (!(theta0 >= 1.0)) throw std::invalid_argument("theta0 must be >= 1");
    if (!(delta > 0)) throw std::invalid_argument("delta must be positive");
    if (!(lambda >= 1.0)) throw std::invalid_argument("lambda must be >= 1");
    if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
    if (s_min < 0 || s_max < s_min) throw std::invalid_argument("invalid s band");
    if (eikonal_order < 0) throw std::invalid_argument("eikonal_order must be >= 0");
    if (!(kappa0 > 0)) throw std::invalid_argument("kappa0 must be positive");
    if (divergence_window < 1) throw std::invalid_argument("divergence_window must be >= 1");
    smoother.validate();
}

double theta(const SchemeParams& p, int i) { return std::sqrt(p.theta0 * p.theta0 + i); }

double theta_step(const SchemeParams& p, int i) { return theta(p, i + 1) - theta(p, i); }

double exponent_L1(double s, double a) { return std::max(std::max(s + 2 - a, 0.0) + 12 - 2 * a, s + 7 - 2 * a); }
double exponent_L2(double s, double a) { return std::max(std::max(s + 2 - a, 0.0) + 14 - 2 * a, s + 9 - 2 * a); }
double exponent_L3(double s, double a) { return std::max(std::max(s + 2 - a, 0.0) + 16 - 2 * a, s + 10 - 2 * a); }
double exponent_L4(double s, double a) {
    return std::max({s + 13 - 2 * a, std::max(s + 4 - a, 0.0) + 16 - 2 * a, std::max(s + 2 - a, 0.0) + 19 - 2 * a});
}

Field smoother(const Field& u, const SchemeParams& p, int i) {
    if (i < 0) return zero_like(u);
    norms::SmootherSpec sp = p.smoother;
    sp.theta = theta(p, i);
    return norms::smooth(u, sp);
}

IterationState IterationState::zero(const GridSpec& g) {
    IterationState s;
    s.V = Field::volume(g, 8);
    s.Psi = Field::volume(g, 2);
    s.psi = Field::trace_of(g, 1);
    s.E = s.e = s.sum_f = s.f = Field::volume(g, 8);
    s.E_tilde = s.e_tilde = s.sum_g = s.g = Field::trace_of(g, 3);
    s.E_hat = s.e_hat = s.sum_h = s.h = Field::volume(g, 2);
    return s;
}

// ---------------------------------------------------------------- modified state

ModifiedState modified_state(const compat::VProblem& vp, const IterationState& st, const SchemeParams& p) {
    const compat::ApproxSolution& a = vp.approx();
    ModifiedState m;
    const Field SV = smoother(st.V, p, st.i);
    m.Psi = smoother(st.Psi, p, st.i);
    m.psi = m.Psi.trace().component(0);
    m.V = SV;

    const Field tr = SV.trace();
    for (int c : {0, 1}) {
        const Field eps = tr.component(c) - tr.component(4 + c);
        const Field R = lift(eps, p);
        for (std::size_t q = 0; q < R.nodes(); ++q) {
            m.V.data()[8 * q + c] -= 0.5 * R.data()[q];
            m.V.data()[8 * q + 4 + c] += 0.5 * R.data()[q];
        }
        for (int it = 0; it < m.V.nT(); ++it)
            for (int j = 0; j < m.V.n1(); ++j) {
                const double avg = 0.5 * (tr(it, j, 0, c) + tr(it, j, 0, 4 + c));
                m.V(it, j, 0, c) = avg;
                m.V(it, j, 0, 4 + c) = avg;
            }
    }

    for (Side s : kSides) {
        const int k = idx(s);
        const Field P = m.Psi.component(k);
        const Field dtP = d_t(P), d1P = d_1(P), d1Pa = d_1(a.Phi(s));
        const Field& Ua = a.U(s);
        for (std::size_t q = 0; q < P.nodes(); ++q) {
            const double v = m.V.data()[8 * q + 4 * k + 2];
            m.V.data()[8 * q + 4 * k + 3] =
                dtP.data()[q] + (Ua.data()[4 * q + 2] + v) * d1P.data()[q] + v * d1Pa.data()[q];
        }
    }

    const Field mt = m.V.trace(), pt = m.Psi.trace();
    for (std::size_t q = 0; q < pt.nodes(); ++q) {
        m.jump_m = std::max(m.jump_m, std::abs(mt.data()[8 * q] - mt.data()[8 * q + 4]));
        m.jump_n = std::max(m.jump_n, std::abs(mt.data()[8 * q + 1] - mt.data()[8 * q + 5]));
        m.jump_front = std::max(m.jump_front, std::abs(pt.data()[2 * q] - pt.data()[2 * q + 1]));
    }
    m.eikonal = vp.E(m.V, m.Psi).max_abs();
    m.past = max_past({&m.V, &m.Psi, &m.psi});

    linearized::BasicState& bs = m.basic;
    bs.background = a.background;
    bs.kappa0 = p.kappa0;
    bs.U_r = a.U_plus + m.V.components(0, 4);
    bs.U_l = a.U_minus + m.V.components(4, 4);
    bs.Phi_r = a.Phi_plus + m.Psi.component(0);
    bs.Phi_l = a.Phi_minus + m.Psi.component(1);
    bs.validate();
    return m;
}

// ---------------------------------------------------------------- sources

Sources source_terms(const compat::VProblem& vp, const IterationState& st, const SchemeParams& p) {
    const int i = st.i;
    const Field& fa = vp.f_a();
    Sources s;
    if (i == 0) {
        s.f = smoother(fa, p, 0);
        s.g = zero_like(st.sum_g);
        s.h = zero_like(st.sum_h);
    } else {
        auto dS = [&](const Field& u) { return smoother(u, p, i) - smoother(u, p, i - 1); };
        const Field E_prev = st.E - st.e, Et_prev = st.E_tilde - st.e_tilde, Eh_prev = st.E_hat - st.e_hat;
        s.f = dS(fa - E_prev) - smoother(st.e, p, i);
        s.g = -1.0 * dS(Et_prev) - smoother(st.e_tilde, p, i);
        s.h = -1.0 * dS(eikonal_combination(Eh_prev, Et_prev, p)) -
              smoother(eikonal_combination(st.e_hat, st.e_tilde, p), p, i);
    }

    const Field rf = st.sum_f + s.f + smoother(st.E, p, i) - smoother(fa, p, i);
    const Field rg = st.sum_g + s.g + smoother(st.E_tilde, p, i);
    const Field rh = smoother(eikonal_combination(st.E_hat, st.E_tilde, p), p, i) + st.sum_h + s.h;
    s.fg_f = rf.max_abs();
    s.fg_g = rg.max_abs();
    s.plus = rh.component(0).max_abs();
    s.minus = rh.component(1).max_abs();
    return s;
}

// ---------------------------------------------------------------- linear step

LinearStep linear_step(const ModifiedState& mod, const Sources& src, const SchemeParams& p) {
    linearized::LinearizedSolution sol = linearized::solve_linearized(mod.basic, src.f, src.g, p.linear);
    LinearStep out;
    out.Vdot = std::move(sol.Vdot);
    out.dpsi = std::move(sol.psi);
    out.warnings = std::move(sol.warnings);
    return out;
}

// ---------------------------------------------------------------- front lift

FrontLift front_lift(const compat::VProblem& vp, const ModifiedState& mod, const LinearStep& step, const Sources& src,
                     const SchemeParams& p) {
    const compat::ApproxSolution& a = vp.approx();
    const GridSpec& g = a.grid();
    if (!g.x1_periodic) throw std::invalid_argument("front_lift requires a periodic x1 axis");
    const double dt = g.dt(), dx = g.dx1();
    const int nT = g.time_nodes(), n1 = g.x1_nodes(), n2 = g.x2_nodes();

    const Field rg2 = lift(src.g.component(1), p), rg21 = lift(src.g.component(1) - src.g.component(0), p);
    FrontLift out;
    out.dPsi = Field::volume(g, 2);

    for (Side s : kSides) {
        const int k = idx(s);
        const Field& U = mod.basic.U(s);
        const Field& Phi = mod.basic.Phi(s);
        const Field P1 = d_1(Phi), P2 = d_2(Phi), v2 = d_2(U.component(2)), u2 = d_2(U.component(3));
        const Field& rhs = k == 0 ? rg2 : rg21;

        // X_t = -a X_1 - c X + S
        Field A = Field::volume(g), C = Field::volume(g), S = Field::volume(g);
        double amax = 0;
        for (std::size_t q = 0; q < A.nodes(); ++q) {
            const double p2 = P2.data()[q];
            if (std::abs(p2) < p.kappa0)
                throw FrontDegeneracyError("front lift: |d2 Phi| below kappa0 at the modified state");
            A.data()[q] = U.data()[4 * q + 2];
            C.data()[q] = (P1.data()[q] * v2.data()[q] - u2.data()[q]) / p2;
            const double dv = step.Vdot.data()[8 * q + 4 * k + 2], du = step.Vdot.data()[8 * q + 4 * k + 3];
            S.data()[q] = rhs.data()[q] + src.h.data()[2 * q + k] - (P1.data()[q] * dv - du);
            amax = std::max(amax, std::abs(A.data()[q]));
        }
        if (amax * dt / dx > 1.0)
            throw CflError("front lift: |v| dt/dx1 = " + std::to_string(amax * dt / dx) + " exceeds 1");

        const std::size_t per = static_cast<std::size_t>(n1) * n2;
        std::vector<double> X(per, 0.0), X1(per), X2(per), a_h(per), c_h(per), s_h(per);
        auto rate = [&](const std::vector<double>& x, const double* av, const double* cv, const double* sv,
                        std::vector<double>& r) {
            for (int j = 0; j < n1; ++j) {
                const int jm = (j + n1 - 1) % n1, jp = (j + 1) % n1;
                for (int kk = 0; kk < n2; ++kk) {
                    const std::size_t q = static_cast<std::size_t>(j) * n2 + kk;
                    const double av_ = av[q];
                    const double dx1 = av_ > 0 ? (x[q] - x[static_cast<std::size_t>(jm) * n2 + kk]) / dx
                                               : (x[static_cast<std::size_t>(jp) * n2 + kk] - x[q]) / dx;
                    r[q] = -av_ * dx1 - cv[q] * x[q] + sv[q];
                }
            }
        };
        std::vector<double> r(per);
        for (int it = g.t0(); it + 1 < nT; ++it) {
            const double* a0 = A.data().data() + it * per;
            const double* a1 = A.data().data() + (it + 1) * per;
            const double* c0 = C.data().data() + it * per;
            const double* c1 = C.data().data() + (it + 1) * per;
            const double* s0 = S.data().data() + it * per;
            const double* s1 = S.data().data() + (it + 1) * per;
            for (std::size_t q = 0; q < per; ++q) {
                a_h[q] = 0.5 * (a0[q] + a1[q]);
                c_h[q] = 0.5 * (c0[q] + c1[q]);
                s_h[q] = 0.5 * (s0[q] + s1[q]);
            }
            rate(X, a0, c0, s0, r);
            for (std::size_t q = 0; q < per; ++q) X1[q] = X[q] + dt * r[q];
            rate(X1, a1, c1, s1, r);
            for (std::size_t q = 0; q < per; ++q) X2[q] = 0.75 * X[q] + 0.25 * (X1[q] + dt * r[q]);
            rate(X2, a_h.data(), c_h.data(), s_h.data(), r);
            for (std::size_t q = 0; q < per; ++q) X[q] = X[q] / 3.0 + 2.0 / 3.0 * (X2[q] + dt * r[q]);
            for (std::size_t q = 0; q < per; ++q) out.dPsi.data()[2 * ((it + 1) * per + q) + k] = X[q];
        }
    }

    const Field tr = out.dPsi.trace();
    Field gap = Field::trace_of(g, 2);
    for (std::size_t q = 0; q < tr.nodes(); ++q)
        for (int k = 0; k < 2; ++k) {
            gap.data()[2 * q + k] = step.dpsi.data()[q] - tr.data()[2 * q + k];
            out.trace_gap = std::max(out.trace_gap, std::abs(gap.data()[2 * q + k]));
        }
    out.dPsi += lift(gap, p);
    for (int it = 0; it < nT; ++it)
        for (int j = 0; j < n1; ++j)
            for (int k = 0; k < 2; ++k) out.dPsi(it, j, 0, k) = step.dpsi(it, j, 0);
    return out;
}

// ---------------------------------------------------------------- reconstruction and errors

StepErrors reconstruct_and_account(const compat::VProblem& vp, IterationState& st, const ModifiedState& mod,
                                   const LinearStep& step, const FrontLift& lift_, const Sources& src,
                                   const SchemeParams& p) {
    const compat::ApproxSolution& a = vp.approx();
    const int i = st.i;
    StepErrors r;
    r.dPsi = lift_.dPsi;
    r.dpsi = step.dpsi;
    r.dV = step.Vdot;
    for (Side s : kSides) {
        const int k = idx(s);
        const Field U2 = d_2(mod.basic.U(s)), P2 = d_2(mod.basic.Phi(s));
        for (std::size_t q = 0; q < P2.nodes(); ++q) {
            const double w = r.dPsi.data()[2 * q + k] / P2.data()[q];
            for (int c = 0; c < 4; ++c) r.dV.data()[8 * q + 4 * k + c] += w * U2.data()[4 * q + c];
        }
    }

    const Field V1 = st.V + r.dV, Psi1 = st.Psi + r.dPsi, psi1 = st.psi + r.dpsi;
    const Field SV = smoother(st.V, p, i), SPsi = smoother(st.Psi, p, i);

    // interior
    const Field L0 = vp.L(st.V, st.Psi);
    r.L_next = vp.L(V1, Psi1);
    const Field A0 = lin_L(a, st.V, st.Psi, r.dV, r.dPsi);
    const Field A1 = lin_L(a, SV, SPsi, r.dV, r.dPsi);
    const Field A2 = lin_L(a, mod.V, mod.Psi, r.dV, r.dPsi);
    const Field eff = linearized::effective_linear_op(mod.basic, step.Vdot);
    r.eD = Field::volume(a.grid(), 8);
    for (Side s : kSides) {
        const int k = idx(s);
        const Field Lh = compat::residual_L(mod.basic.U(s), mod.basic.Phi(s), s, a.background);
        const Field dL = d_2(Lh), P2 = d_2(mod.basic.Phi(s));
        for (std::size_t q = 0; q < P2.nodes(); ++q) {
            const double w = r.dPsi.data()[2 * q + k] / P2.data()[q];
            for (int c = 0; c < 4; ++c) r.eD.data()[8 * q + 4 * k + c] = w * dL.data()[4 * q + c];
        }
    }
    r.e1 = r.L_next - L0 - A0;
    r.e2 = A0 - A1;
    r.e3 = A1 - A2;
    r.e_identity = A2 - eff - r.eD;
    r.e_solve = eff - src.f;
    r.e = r.e1 + r.e2 + r.e3 + r.eD + r.e_identity + r.e_solve;

    // boundary
    const Field B0 = vp.B(st.V.trace(), st.psi);
    r.B_next = vp.B(V1.trace(), psi1);
    const Field dVt = r.dV.trace();
    const Field Bl0 = lin_B(a, st.V.trace(), st.psi, dVt, r.dpsi);
    const Field Bl1 = lin_B(a, SV.trace(), SPsi.trace().component(0), dVt, r.dpsi);
    const Field Beff = linearized::boundary_op(mod.basic, step.Vdot.trace(), r.dpsi);
    r.te1 = r.B_next - B0 - Bl0;
    r.te2 = Bl0 - Bl1;
    r.te3 = Bl1 - Beff;
    r.te_solve = Beff - src.g;
    r.e_tilde = r.te1 + r.te2 + r.te3 + r.te_solve;

    // eikonal
    const Field E0 = vp.E(st.V, st.Psi);
    r.E_next = vp.E(V1, Psi1);
    const Field H0 = lin_E(a, st.V, st.Psi, r.dV, r.dPsi);
    const Field H1 = lin_E(a, SV, SPsi, r.dV, r.dPsi);
    const Field H2 = lin_E(a, mod.V, mod.Psi, r.dV, r.dPsi);
    Field forcing = src.h;
    {
        const Field g2 = lift(src.g.component(1), p), g21 = lift(src.g.component(1) - src.g.component(0), p);
        for (std::size_t q = 0; q < g2.nodes(); ++q) {
            forcing.data()[2 * q] += g2.data()[q];
            forcing.data()[2 * q + 1] += g21.data()[q];
        }
    }
    r.he1 = r.E_next - E0 - H0;
    r.he2 = H0 - H1;
    r.he3 = H1 - H2;
    r.he_transport = H2 - forcing;
    r.e_hat = r.he1 + r.he2 + r.he3 + r.he_transport;

    // consistency with the accumulated sums
    const Field SE = smoother(st.E, p, i), SEt = smoother(st.E_tilde, p, i);
    r.lb = (r.L_next - (smoother(vp.f_a(), p, i) + st.E - SE + r.e)).max_abs();
    r.lb2 = (r.B_next - (st.E_tilde - SEt + r.e_tilde)).max_abs();

    st.V = V1;
    st.Psi = Psi1;
    st.psi = psi1;
    st.E += r.e;
    st.E_tilde += r.e_tilde;
    st.E_hat += r.e_hat;
    st.e = r.e;
    st.e_tilde = r.e_tilde;
    st.e_hat = r.e_hat;
    st.sum_f += src.f;
    st.sum_g += src.g;
    st.sum_h += src.h;
    st.f = src.f;
    st.g = src.g;
    st.h = src.h;
    st.i = i + 1;
    return r;
}

// ---------------------------------------------------------------- monitor

const BandNorms& IterationRow::at(int s) const {
    for (const BandNorms& b : band)
        if (b.s == s) return b;
    throw std::out_of_range("s outside the monitored band");
}

bool IterationRow::H_pass() const {
    for (const BandNorms& b : band)
        if (b.Ha > b.Ha_bound || b.Hb > b.Hb_bound || b.Hc > b.Hc_bound) return false;
    return res_E <= Hd_bound;
}

double IterationRow::telescoping() const { return std::max({fg_f, fg_g, plus, minus, lb, lb2}); }

std::vector<double> NashMoserResult::residual(int s) const {
    std::vector<double> out;
    for (const IterationRow& r : rows) out.push_back(r.at(s).res_L);
    return out;
}

std::vector<ExponentFit> inductive_monitor(const std::vector<IterationRow>& rows, const SchemeParams& p) {
    std::vector<ExponentFit> out;
    if (rows.empty()) return out;
    struct Kind {
        const char* name;
        double BandNorms::*m;
        double (*L)(double, double);
    };
    const Kind kinds[] = {{"e1", &BandNorms::e1, exponent_L1},
                          {"e2", &BandNorms::e2, exponent_L2},
                          {"e3", &BandNorms::e3, exponent_L3},
                          {"eD", &BandNorms::eD, exponent_L4}};
    for (const Kind& kd : kinds)
        for (int s = p.s_min; s <= p.s_max; ++s) {
            std::vector<double> x, y;
            for (const IterationRow& r : rows) {
                const double v = r.at(s).*kd.m;
                if (v > 0 && std::isfinite(v)) {
                    x.push_back(std::log(r.theta));
                    y.push_back(std::log(v / r.Delta));
                }
            }
            ExponentFit f;
            f.error = kd.name;
            f.s = s;
            f.points = static_cast<int>(x.size());
            f.slope = x.size() >= 2 ? fit_slope(x, y) : 0.0;
            f.exponent = kd.L(s, p.alpha) - 1;
            out.push_back(f);
        }
    return out;
}

// ---------------------------------------------------------------- driver

namespace {
void set_bounds(IterationRow& row, const SchemeParams& p) {
    const double th1 = theta(p, row.i + 1);
    for (BandNorms& b : row.band) {
        b.Ha_bound = p.delta * std::pow(row.theta, b.s - p.alpha - 1) * row.Delta;
        b.Hb_bound = 2 * p.delta * std::pow(th1, b.s - p.alpha - 1);
        b.Hc_bound = p.delta * std::pow(th1, b.s - p.alpha - 1);
    }
    row.Hd_bound = p.delta * std::pow(th1, p.eikonal_order - 1 - p.alpha);
}
} // namespace

void apply_bounds(NashMoserResult& r, const SchemeParams& p) {
    p.validate();
    for (IterationRow& row : r.rows) set_bounds(row, p);
}

NashMoserResult run_nash_moser(const compat::ApproxSolution& a, const SchemeParams& p) {
    p.validate();
    const auto start = std::chrono::steady_clock::now();
    const compat::VProblem vp(a);
    NashMoserResult res;
    IterationState st = IterationState::zero(a.grid());
    if (p.monitor) res.history.push_back(slim(st));

    int growth = 0;
    double prev_dV = -1;
    for (int i = 0; i < p.max_iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const ModifiedState mod = modified_state(vp, st, p);
        const Sources src = source_terms(vp, st, p);
        const LinearStep step = linear_step(mod, src, p);
        const FrontLift fl = front_lift(vp, mod, step, src, p);
        const Field V_i = st.V, Psi_i = st.Psi;
        const StepErrors er = reconstruct_and_account(vp, st, mod, step, fl, src, p);

        if (i == p.oracle_step) {
            const Field q = quadratic_integral(a, V_i, Psi_i, er.dV, er.dPsi);
            const double ref = er.e1.max_abs();
            res.oracle.step = i;
            res.oracle.relative = ref > 0 ? (q - er.e1).max_abs() / ref : (q - er.e1).max_abs();
        }

        IterationRow row;
        row.i = i;
        row.theta = theta(p, i);
        row.Delta = theta_step(p, i);
        const Field resL = er.L_next - vp.f_a();
        for (int s = p.s_min; s <= p.s_max; ++s) {
            BandNorms b;
            b.s = s;
            b.dV = aniso(er.dV, s, p.lambda);
            b.dPsi = aniso(er.dPsi, s, p.lambda);
            b.dpsi = hs(er.dpsi, s + 1, p.lambda);
            b.e = aniso(er.e, s, p.lambda);
            b.e_tilde = hs(er.e_tilde, s, p.lambda);
            b.e_hat = aniso(er.e_hat, s, p.lambda);
            b.e1 = aniso(er.e1, s, p.lambda);
            b.e2 = aniso(er.e2, s, p.lambda);
            b.e3 = aniso(er.e3, s, p.lambda);
            b.eD = aniso(er.eD, s, p.lambda);
            b.res_L = aniso(resL, s, p.lambda);
            b.res_B = hs(er.B_next, s, p.lambda);
            b.Ha = b.dV + b.dPsi + b.dpsi;
            b.Hb = b.res_L;
            b.Hc = b.res_B;
            row.band.push_back(b);
        }
        row.res_E = hs(er.E_next, p.eikonal_order, p.lambda);
        set_bounds(row, p);
        row.fg_f = src.fg_f;
        row.fg_g = src.fg_g;
        row.plus = src.plus;
        row.minus = src.minus;
        row.lb = er.lb;
        row.lb2 = er.lb2;
        row.jump_m = mod.jump_m;
        row.jump_n = mod.jump_n;
        row.jump_front = mod.jump_front;
        row.mod_eikonal = mod.eikonal;
        row.past = std::max({mod.past, max_past({&src.f, &src.g, &src.h, &step.Vdot, &step.dpsi, &er.dV, &er.dPsi,
                                                 &er.e, &er.e_tilde, &er.e_hat, &st.V, &st.Psi, &st.psi})});
        row.trace_gap = fl.trace_gap;
        row.solve_defect = std::max(er.e_solve.max_abs(), er.te_solve.max_abs());
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.rows.push_back(row);

        if (p.monitor) res.history.push_back(slim(st));
        else {
            if (res.history.size() >= 2) res.history.erase(res.history.begin());
            res.history.push_back(slim(st));
        }

        if (row.band.front().res_L <= p.stop_tol) {
            res.status = NashMoserResult::Status::Converged;
            res.diagnostic = "[L - f^a]_" + std::to_string(p.s_min) + " <= stop_tol at i = " + std::to_string(i);
            break;
        }
        const double dV = row.band.front().dV;
        growth = prev_dV >= 0 && dV > prev_dV ? growth + 1 : 0;
        prev_dV = dV;
        if (growth >= p.divergence_window) {
            res.status = NashMoserResult::Status::Diverged;
            res.diagnostic = "[dV]_" + std::to_string(p.s_min) + " grew for " + std::to_string(growth) +
                             " consecutive steps (last " + std::to_string(dV) + " at i = " + std::to_string(i) + ")";
            break;
        }
    }
    if (p.monitor) res.fits = inductive_monitor(res.rows, p);
    res.final_state = std::move(st);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

// ---------------------------------------------------------------- output

void write_iteration_csv(const std::string& path, const NashMoserResult& r, const SchemeParams& p) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "# i: step; theta, Delta: smoothing parameter and its increment; per s: [dV]_s [dPsi]_s ||dpsi||_{s+1} "
          "[e]_s ||e~||_s [e^]_s, residuals [L-f^a]_s ||B||_s after the step, flags of the inductive bounds on the step, the residual and the boundary residual; res_E and its flag Hd; "
          "telescoping checks; modified-state trace jumps; past sup; front trace gap; linear-solve defect\n";
    os << "i,theta,Delta";
    for (int s = p.s_min; s <= p.s_max; ++s)
        for (const char* c : {"dV", "dPsi", "dpsi", "e", "e_tilde", "e_hat", "res_L", "res_B", "Ha", "Hb", "Hc"})
            os << ',' << c << '_' << s;
    os << ",res_E,Hd,fg_f,fg_g,plus,minus,lb,lb2,jump_m,jump_n,jump_front,mod_eikonal,past,trace_gap,solve_defect\n";
    os << std::setprecision(12);
    for (const IterationRow& row : r.rows) {
        os << row.i << ',' << row.theta << ',' << row.Delta;
        for (const BandNorms& b : row.band)
            os << ',' << b.dV << ',' << b.dPsi << ',' << b.dpsi << ',' << b.e << ',' << b.e_tilde << ',' << b.e_hat
               << ',' << b.res_L << ',' << b.res_B << ',' << (b.Ha <= b.Ha_bound) << ',' << (b.Hb <= b.Hb_bound)
               << ',' << (b.Hc <= b.Hc_bound);
        os << ',' << row.res_E << ',' << (row.res_E <= row.Hd_bound) << ',' << row.fg_f << ',' << row.fg_g << ','
           << row.plus << ',' << row.minus << ',' << row.lb << ',' << row.lb2 << ',' << row.jump_m << ','
           << row.jump_n << ',' << row.jump_front << ',' << row.mod_eikonal << ',' << row.past << ','
           << row.trace_gap << ',' << row.solve_defect << '\n';
    }
}

std::string to_string(NashMoserResult::Status s) {
    switch (s) {
    case NashMoserResult::Status::Completed: return "completed";
    case NashMoserResult::Status::Converged: return "converged";
    case NashMoserResult::Status::Diverged: return "diverged";
    }
    return "unknown";
}

std::string params_to_json(const SchemeParams& p) {
    nlohmann::json j{{"alpha", p.alpha},
                     {"theta0", p.theta0},
                     {"delta", p.delta},
                     {"lambda", p.lambda},
                     {"max_iters", p.max_iters},
                     {"s_min", p.s_min},
                     {"s_max", p.s_max},
                     {"eikonal_order", p.eikonal_order},
                     {"kappa0", p.kappa0},
                     {"lift_width", p.lift_width},
                     {"monitor", p.monitor},
                     {"divergence_window", p.divergence_window},
                     {"oracle_step", p.oracle_step},
                     {"stop_tol", p.stop_tol},
                     {"smoother",
                      {{"k_scale", p.smoother.k_scale},
                       {"t_scale", p.smoother.t_scale},
                       {"x2_scale", p.smoother.x2_scale},
                       {"moments", p.smoother.moments}}},
                     {"linear", {{"cfl", p.linear.cfl}, {"dissipation", p.linear.dissipation}}}};
    return j.dump();
}

SchemeParams params_from_json(const std::string& s) {
    const auto j = nlohmann::json::parse(s);
    SchemeParams p;
    p.alpha = j.value("alpha", p.alpha);
    p.theta0 = j.value("theta0", p.theta0);
    p.delta = j.value("delta", p.delta);
    p.lambda = j.value("lambda", p.lambda);
    p.max_iters = j.value("max_iters", p.max_iters);
    p.s_min = j.value("s_min", p.s_min);
    p.s_max = j.value("s_max", p.s_max);
    p.eikonal_order = j.value("eikonal_order", p.eikonal_order);
    p.kappa0 = j.value("kappa0", p.kappa0);
    p.lift_width = j.value("lift_width", p.lift_width);
    p.monitor = j.value("monitor", p.monitor);
    p.divergence_window = j.value("divergence_window", p.divergence_window);
    p.oracle_step = j.value("oracle_step", p.oracle_step);
    p.stop_tol = j.value("stop_tol", p.stop_tol);
    if (j.contains("smoother")) {
        const auto& m = j["smoother"];
        p.smoother.k_scale = m.value("k_scale", p.smoother.k_scale);
        p.smoother.t_scale = m.value("t_scale", p.smoother.t_scale);
        p.smoother.x2_scale = m.value("x2_scale", p.smoother.x2_scale);
        p.smoother.moments = m.value("moments", p.smoother.moments);
    }
    if (j.contains("linear")) {
        const auto& m = j["linear"];
        p.linear.cfl = m.value("cfl", p.linear.cfl);
        p.linear.dissipation = m.value("dissipation", p.linear.dissipation);
    }
    p.validate();
    return p;
}

std::string manifest_json(const NashMoserResult& r, const SchemeParams& p, const GridSpec& g) {
    nlohmann::json j;
    j["params"] = nlohmann::json::parse(params_to_json(p));
    j["grid"] = nlohmann::json::parse(fields::grid_to_json(g));
    j["status"] = to_string(r.status);
    j["diagnostic"] = r.diagnostic;
    j["iterations"] = r.rows.size();
    j["seconds"] = r.seconds;
    if (!r.rows.empty()) {
        const IterationRow& last = r.rows.back();
        nlohmann::json fin;
        for (const BandNorms& b : last.band) fin["res_L_" + std::to_string(b.s)] = b.res_L;
        fin["res_E"] = last.res_E;
        j["final"] = fin;
        double tel = 0;
        bool H = true;
        for (const IterationRow& row : r.rows) {
            tel = std::max(tel, row.telescoping());
            H = H && row.H_pass();
        }
        j["telescoping_max"] = tel;
        j["H_all_pass"] = H;
        j["step_seconds"] = nlohmann::json::array();
        for (const IterationRow& row : r.rows) j["step_seconds"].push_back(row.seconds);
    }
    j["fits"] = nlohmann::json::array();
    for (const ExponentFit& f : r.fits)
        j["fits"].push_back({{"error", f.error},
                             {"s", f.s},
                             {"slope", f.slope},
                             {"exponent", f.exponent},
                             {"points", f.points},
                             {"within", f.within()}});
    j["oracle"] = {{"step", r.oracle.step}, {"relative", r.oracle.relative}};
    nlohmann::json untested = nlohmann::json::array();
    for (int s = 7; s <= static_cast<int>(p.alpha_tilde()); ++s)
        if (s < p.s_min || s > p.s_max) untested.push_back(s);
    j["untested_s"] = untested;
    return j.dump(2);
}

} // namespace vsheet::nashmoser
