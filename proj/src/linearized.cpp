#include "vsheet/linearized.hpp"

#include "vsheet/norms.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace vsheet::linearized {

using model::PhaseState;
using fields::d_1;
using fields::d_2;
using fields::d_t;

namespace {

PhaseState state_at(const Field& U, int it, int j, int k, int c0 = 0) {
    return {U(it, j, k, c0), U(it, j, k, c0 + 1), U(it, j, k, c0 + 2), U(it, j, k, c0 + 3)};
}

Vec4 vec_at(const Field& V, int it, int j, int k, int c0 = 0) {
    return {V(it, j, k, c0), V(it, j, k, c0 + 1), V(it, j, k, c0 + 2), V(it, j, k, c0 + 3)};
}

void put(Field& V, int it, int j, int k, const Vec4& x, int c0 = 0) {
    for (int c = 0; c < 4; ++c) V(it, j, k, c0 + c) = x(c);
}

// Same weights as fields::diff on one axis.
struct Stencil {
    int idx[3];
    double w[3];
    int n;
};

Stencil stencil(int count, int i, double h, bool periodic) {
    const double r = 1.0 / (2.0 * h);
    if (i > 0 && i + 1 < count) return {{i - 1, i + 1, 0}, {-r, r, 0}, 2};
    if (periodic) {
        const int lo = (i - 1 + count) % count, hi = (i + 1) % count;
        return {{lo, hi, 0}, {-r, r, 0}, 2};
    }
    if (i == 0) return {{0, 1, 2}, {-3 * r, 4 * r, -r}, 3};
    return {{count - 1, count - 2, count - 3}, {3 * r, -4 * r, r}, 3};
}

Field stack(const std::vector<const Field*>& parts) {
    int nc = 0;
    for (const Field* p : parts) nc += p->ncomp();
    Field out(parts.front()->grid(), nc, parts.front()->kind());
    int c = 0;
    for (const Field* p : parts) {
        out.set_components(c, *p);
        c += p->ncomp();
    }
    return out;
}

void require_sides(const Field& V, int nc, const char* what) {
    if (V.ncomp() != nc) throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(nc) + " components");
}

// point coefficients shared by the operators below
struct Frozen {
    Mat4 A1, An; // A1(U), (1/d2Phi)[A2 - dtPhi - d1Phi A1]
};

Frozen frozen_at(const PhaseState& U, double dt, double d1, double d2, const PressureLaw& law) {
    auto [A1, A2] = model::flux_jacobians(U, law);
    if (d2 == 0.0) throw FrontDegeneracyError("degenerate front: d2Phi = 0");
    return {A1, (A2 - dt * Mat4::Identity() - d1 * A1) / d2};
}

// C(U, grad U, grad Phi) as a matrix
Mat4 c_matrix(const PhaseState& U, const Vec4& dU1, const Vec4& dU2, double d1, double d2, const PressureLaw& law) {
    Mat4 C;
    for (int i = 0; i < 4; ++i) {
        auto [dA1, dA2] = model::flux_jacobian_derivs(U, Vec4::Unit(i), law);
        C.col(i) = dA1 * dU1 + (dA2 - d1 * dA1) * dU2 / d2;
    }
    return C;
}

void check_kappa(double d2, int side, double kappa0) {
    if (kappa0 > 0 && side * d2 < kappa0)
        throw FrontDegeneracyError("front degeneracy: |d2Phi| = " + std::to_string(std::abs(d2)) +
                                   " below kappa0 = " + std::to_string(kappa0));
}

} // namespace

BasicState BasicState::from_background(const BackgroundSheet& bg, const GridSpec& g) {
    return make_basic_state(bg, g, Field(), Field(), Field(), Field());
}

BasicState make_basic_state(const BackgroundSheet& bg, const GridSpec& g, const Field& Udot_r, const Field& Udot_l,
                            const Field& Phidot_r, const Field& Phidot_l, double kappa0) {
    BasicState bs;
    bs.background = bg;
    bs.kappa0 = kappa0;
    auto side = [&](const PhaseState& bar, const Field& Ud, const Field& Pd, int sign, Field& U, Field& Phi) {
        U = Field::volume(g, 4);
        U.fill([&](double, double, double, int c) { return bar.vec()(c); });
        if (Ud.size()) {
            require_sides(Ud, 4, "make_basic_state");
            U += Ud;
        }
        Phi = Field::volume(g);
        Phi.fill([&](double, double, double x2, int) { return sign * x2; });
        if (Pd.size()) {
            require_sides(Pd, 1, "make_basic_state");
            Phi += Pd;
        }
        if (!Ud.size() && !Pd.size()) return;
        const Field dt = d_t(Phi), d1 = d_1(Phi);
        for (std::size_t q = 0; q < Phi.size(); ++q) U.data()[4 * q + 3] = dt.data()[q] + U.data()[4 * q + 2] * d1.data()[q];
    };
    side(bg.right, Udot_r, Phidot_r, +1, bs.U_r, bs.Phi_r);
    side(bg.left, Udot_l, Phidot_l, -1, bs.U_l, bs.Phi_l);
    return bs;
}

Field BasicState::U_dot() const {
    Field out = stack({&U_r, &U_l});
    const Vec4 r = background.right.vec(), l = background.left.vec();
    for (std::size_t q = 0; q < out.nodes(); ++q)
        for (int c = 0; c < 4; ++c) {
            out.data()[8 * q + c] -= r(c);
            out.data()[8 * q + 4 + c] -= l(c);
        }
    return out;
}

Field BasicState::Phi_dot() const {
    Field out = stack({&Phi_r, &Phi_l});
    const GridSpec& g = grid();
    for (int it = 0; it < out.nT(); ++it)
        for (int j = 0; j < out.n1(); ++j)
            for (int k = 0; k < out.n2(); ++k) {
                out(it, j, k, 0) -= g.x2(k);
                out(it, j, k, 1) += g.x2(k);
            }
    return out;
}

bool BasicState::is_background() const { return U_dot().max_abs() == 0.0 && Phi_dot().max_abs() == 0.0; }

double BasicState::perturbation_norm(int s, double lambda) const {
    const Field a = U_dot(), b = Phi_dot();
    return norms::aniso_norm(stack({&a, &b}), {s, lambda});
}

bool BasicState::Report::within(double tol) const {
    return eikonal <= tol && boundary_front <= tol && boundary_normal <= tol && boundary_transport <= tol &&
           boundary_mass <= tol;
}

BasicState::Report BasicState::validate() const {
    Report r;
    r.min_mass = 1e300;
    for (const Field* U : {&U_r, &U_l})
        for (std::size_t q = 0; q < U->nodes(); ++q)
            r.min_mass = std::min({r.min_mass, U->data()[4 * q], U->data()[4 * q + 1]});
    if (!(r.min_mass > 0)) throw DomainError("basic state leaves the state space: min mass " + std::to_string(r.min_mass));
    const Field d2r = d_2(Phi_r), d2l = d_2(Phi_l);
    double fm = 1e300;
    for (std::size_t q = 0; q < d2r.size(); ++q) fm = std::min({fm, d2r.data()[q], -d2l.data()[q]});
    r.front_margin = fm - kappa0;
    fields::check_front_bound(Phi_r, +1, kappa0);
    fields::check_front_bound(Phi_l, -1, kappa0);
    r.eikonal = std::max(fields::eikonal_residual(U_r, Phi_r).max_abs(), fields::eikonal_residual(U_l, Phi_l).max_abs());

    const Field tr = U_r.trace(), tl = U_l.trace(), pr = Phi_r.trace(), pl = Phi_l.trace();
    const Field d1phi = d_1(pr), dtphi = d_t(pr);
    for (int it = 0; it < tr.nT(); ++it)
        for (int j = 0; j < tr.n1(); ++j) {
            const double a = d1phi(it, j, 0);
            r.boundary_front = std::max(r.boundary_front, std::abs(pr(it, j, 0) - pl(it, j, 0)));
            r.boundary_normal = std::max(r.boundary_normal, std::abs((tr(it, j, 0, 2) - tl(it, j, 0, 2)) * a -
                                                                     (tr(it, j, 0, 3) - tl(it, j, 0, 3))));
            r.boundary_transport = std::max(r.boundary_transport,
                                            std::abs(dtphi(it, j, 0) + tr(it, j, 0, 2) * a - tr(it, j, 0, 3)));
            r.boundary_mass = std::max(r.boundary_mass, std::abs(tr(it, j, 0, 0) + tr(it, j, 0, 1) -
                                                                 tl(it, j, 0, 0) - tl(it, j, 0, 1)));
        }
    return r;
}

Field frozen_operator(const Field& U, const Field& Phi, const Field& V, const PressureLaw& law) {
    require_sides(U, 4, "frozen_operator");
    require_sides(V, 4, "frozen_operator");
    const Field Vt = d_t(V), V1 = d_1(V), V2 = d_2(V);
    const Field Pt = d_t(Phi), P1 = d_1(Phi), P2 = d_2(Phi);
    Field out = Vt;
    for (int it = 0; it < U.nT(); ++it)
        for (int j = 0; j < U.n1(); ++j)
            for (int k = 0; k < U.n2(); ++k) {
                const Frozen F = frozen_at(state_at(U, it, j, k), Pt(it, j, k), P1(it, j, k), P2(it, j, k), law);
                put(out, it, j, k, vec_at(Vt, it, j, k) + F.A1 * vec_at(V1, it, j, k) + F.An * vec_at(V2, it, j, k));
            }
    return out;
}

Field c_term(const Field& U, const Field& Phi, const Field& V, const PressureLaw& law) {
    require_sides(U, 4, "c_term");
    require_sides(V, 4, "c_term");
    const Field U1 = d_1(U), U2 = d_2(U), P1 = d_1(Phi), P2 = d_2(Phi);
    Field out = Field::volume(U.grid(), 4);
    for (int it = 0; it < U.nT(); ++it)
        for (int j = 0; j < U.n1(); ++j)
            for (int k = 0; k < U.n2(); ++k) {
                const Mat4 C = c_matrix(state_at(U, it, j, k), vec_at(U1, it, j, k), vec_at(U2, it, j, k), P1(it, j, k),
                                        P2(it, j, k), law);
                put(out, it, j, k, C * vec_at(V, it, j, k));
            }
    return out;
}

Field nonlinear_operator(const Field& U, const Field& Phi, const PressureLaw& law, double kappa0) {
    if (kappa0 > 0) {
        const Field P2 = d_2(Phi);
        const double sgn = P2.data()[0] >= 0 ? 1 : -1;
        for (double x : P2.data()) check_kappa(x, static_cast<int>(sgn), kappa0);
    }
    return frozen_operator(U, Phi, U, law);
}

Field nonlinear_operator_L(const BasicState& bs) {
    const Field a = nonlinear_operator(bs.U_r, bs.Phi_r, bs.law(), bs.kappa0);
    const Field b = nonlinear_operator(bs.U_l, bs.Phi_l, bs.law(), bs.kappa0);
    return stack({&a, &b});
}

Field effective_linear_op(const BasicState& bs, const Field& Vdot) {
    require_sides(Vdot, 8, "effective_linear_op");
    Field out = Field::volume(bs.grid(), 8);
    for (Side s : {Side::Right, Side::Left}) {
        const int c0 = 4 * static_cast<int>(s);
        const Field V = Vdot.components(c0, 4);
        Field r = frozen_operator(bs.U(s), bs.Phi(s), V, bs.law());
        if (!bs.is_background()) r += c_term(bs.U(s), bs.Phi(s), V, bs.law());
        out.set_components(c0, r);
    }
    return out;
}

Field linearized_operator(const Field& U, const Field& Phi, const Field& V, const Field& Psi, const PressureLaw& law) {
    Field out = frozen_operator(U, Phi, V, law);
    out += c_term(U, Phi, V, law);
    const Field U2 = d_2(U), St = d_t(Psi), S1 = d_1(Psi), S2 = d_2(Psi);
    const Field Pt = d_t(Phi), P1 = d_1(Phi), P2 = d_2(Phi);
    for (int it = 0; it < U.nT(); ++it)
        for (int j = 0; j < U.n1(); ++j)
            for (int k = 0; k < U.n2(); ++k) {
                const Frozen F = frozen_at(state_at(U, it, j, k), Pt(it, j, k), P1(it, j, k), P2(it, j, k), law);
                const Vec4 u2 = vec_at(U2, it, j, k);
                const double d2 = P2(it, j, k);
                const Vec4 extra = -(St(it, j, k) * u2 + S1(it, j, k) * (F.A1 * u2)) / d2 - S2(it, j, k) / d2 * (F.An * u2);
                put(out, it, j, k, vec_at(out, it, j, k) + extra);
            }
    return out;
}

Field good_unknown(const Field& V, const Field& Psi, const BasicState& bs) {
    require_sides(V, 8, "good_unknown");
    require_sides(Psi, 2, "good_unknown");
    Field out = V;
    for (Side s : {Side::Right, Side::Left}) {
        const int si = static_cast<int>(s);
        const Field U2 = d_2(bs.U(s)), P2 = d_2(bs.Phi(s));
        for (int it = 0; it < V.nT(); ++it)
            for (int j = 0; j < V.n1(); ++j)
                for (int k = 0; k < V.n2(); ++k) {
                    const double d2 = P2(it, j, k);
                    if (d2 == 0.0) throw FrontDegeneracyError("degenerate front in good_unknown");
                    const double f = Psi(it, j, k, si) / d2;
                    for (int c = 0; c < 4; ++c) out(it, j, k, 4 * si + c) -= f * U2(it, j, k, c);
                }
    }
    return out;
}

Field noncharacteristic_trace(const BasicState& bs, const Field& Vt) {
    require_sides(Vt, 8, "noncharacteristic_trace");
    Field out = Field::trace_of(bs.grid(), 4);
    const Field ar = d_1(bs.Phi_r.trace()), al = d_1(bs.Phi_l.trace());
    for (int it = 0; it < out.nT(); ++it)
        for (int j = 0; j < out.n1(); ++j) {
            const double a[2] = {ar(it, j, 0), al(it, j, 0)};
            for (int s = 0; s < 2; ++s) {
                out(it, j, 0, 2 * s) = Vt(it, j, 0, 4 * s) + Vt(it, j, 0, 4 * s + 1);
                out(it, j, 0, 2 * s + 1) = Vt(it, j, 0, 4 * s + 3) - a[s] * Vt(it, j, 0, 4 * s + 2);
            }
        }
    return out;
}

BoundaryCoefficients::BoundaryCoefficients(const BasicState& bs)
    : bs_(&bs), tr_r_(bs.U_r.trace()), tr_l_(bs.U_l.trace()), d2U_r_(d_2(bs.U_r).trace()), d2U_l_(d_2(bs.U_l).trace()),
      d2Phi_r_(d_2(bs.Phi_r).trace()), d2Phi_l_(d_2(bs.Phi_l).trace()), d1phi_(d_1(bs.Phi_r.trace())),
      d1phi_l_(d_1(bs.Phi_l.trace())) {}

BoundaryPoint BoundaryCoefficients::at(int it, int j) const {
    BoundaryPoint p;
    const double vr = tr_r_(it, j, 0, 2), vl = tr_l_(it, j, 0, 2), a = d1phi_(it, j, 0);
    p.b << 0, vr - vl, 1, vr, 0, 0;
    p.M << 0, 0, a, -1, 0, 0, -a, 1,
           0, 0, a, -1, 0, 0, 0, 0,
           1, 1, 0, 0, -1, -1, 0, 0;
    Eigen::Matrix<double, 8, 1> q;
    q.head<4>() = vec_at(d2U_r_, it, j, 0) / d2Phi_r_(it, j, 0);
    q.tail<4>() = vec_at(d2U_l_, it, j, 0) / d2Phi_l_(it, j, 0);
    p.b_sharp = p.M * q;
    return p;
}

Eigen::Matrix<double, 3, 8> BoundaryCoefficients::M_W(int it, int j) const {
    const BoundaryPoint p = at(it, j);
    const double a = d1phi_(it, j, 0);
    const double al = d1phi_l_(it, j, 0);
    Eigen::Matrix<double, 8, 8> T = Eigen::Matrix<double, 8, 8>::Zero();
    T.topLeftCorner<4, 4>() = model::diagonalizer(state_at(tr_r_, it, j, 0), a, bs_->law()).T;
    T.bottomRightCorner<4, 4>() = model::diagonalizer(state_at(tr_l_, it, j, 0), al, bs_->law()).T;
    return p.M * T;
}

Field boundary_op(const BasicState& bs, const Field& Vt, const Field& psi) {
    require_sides(Vt, 8, "boundary_op");
    const BoundaryCoefficients bc(bs);
    const Field pt = d_t(psi), p1 = d_1(psi);
    Field out = Field::trace_of(bs.grid(), 3);
    for (int it = 0; it < out.nT(); ++it)
        for (int j = 0; j < out.n1(); ++j) {
            const BoundaryPoint p = bc.at(it, j);
            Eigen::Matrix<double, 8, 1> v;
            for (int c = 0; c < 8; ++c) v(c) = Vt(it, j, 0, c);
            const Eigen::Vector3d r =
                p.b * Eigen::Vector2d(pt(it, j, 0), p1(it, j, 0)) + p.b_sharp * psi(it, j, 0) + p.M * v;
            for (int c = 0; c < 3; ++c) out(it, j, 0, c) = r(c);
        }
    return out;
}

// ---------------------------------------------------------------- W form

WForm::WForm(const BasicState& bs) : bs_(&bs), constant_(bs.is_background()) {}

namespace {

struct SideView {
    const Field& U;
    const Field& Phi;
    const PressureLaw& law;
    const GridSpec& g;

    double dPhi(int ax, int it, int j, int k) const {
        const Stencil s = ax == 0 ? stencil(Phi.nT(), it, g.dt(), false)
                        : ax == 1 ? stencil(Phi.n1(), j, g.dx1(), g.x1_periodic)
                                  : stencil(Phi.n2(), k, g.dx2(), false);
        double r = 0;
        for (int q = 0; q < s.n; ++q)
            r += s.w[q] * (ax == 0 ? Phi(s.idx[q], j, k) : ax == 1 ? Phi(it, s.idx[q], k) : Phi(it, j, s.idx[q]));
        return r;
    }
    Vec4 dU(int ax, int it, int j, int k) const {
        const Stencil s = ax == 0 ? stencil(U.nT(), it, g.dt(), false)
                        : ax == 1 ? stencil(U.n1(), j, g.dx1(), g.x1_periodic)
                                  : stencil(U.n2(), k, g.dx2(), false);
        Vec4 r = Vec4::Zero();
        for (int q = 0; q < s.n; ++q)
            r += s.w[q] * (ax == 0 ? vec_at(U, s.idx[q], j, k) : ax == 1 ? vec_at(U, it, s.idx[q], k)
                                                                         : vec_at(U, it, j, s.idx[q]));
        return r;
    }
    Mat4 T(int it, int j, int k) const {
        return model::diagonalizer(state_at(U, it, j, k), dPhi(1, it, j, k), law).T;
    }
    Mat4 dT(int ax, int it, int j, int k) const {
        const Stencil s = ax == 0 ? stencil(U.nT(), it, g.dt(), false)
                        : ax == 1 ? stencil(U.n1(), j, g.dx1(), g.x1_periodic)
                                  : stencil(U.n2(), k, g.dx2(), false);
        Mat4 r = Mat4::Zero();
        for (int q = 0; q < s.n; ++q)
            r += s.w[q] * (ax == 0 ? T(s.idx[q], j, k) : ax == 1 ? T(it, s.idx[q], k) : T(it, j, s.idx[q]));
        return r;
    }

    WPoint point(int it, int j, int k, bool constant) const {
        WPoint p;
        const PhaseState st = state_at(U, it, j, k);
        const double pt = dPhi(0, it, j, k), p1 = dPhi(1, it, j, k), p2 = dPhi(2, it, j, k);
        const model::Diagonalizer D = model::diagonalizer(st, p1, law);
        p.T = D.T;
        p.T_inv = D.T_inv;
        const Frozen F = frozen_at(st, pt, p1, p2, law);
        const Mat4 N = D.T_inv * F.An * D.T;
        p.normal = N.diagonal();
        p.offdiag = (N - Mat4(p.normal.asDiagonal())).cwiseAbs().maxCoeff();
        for (int c : {2, 3})
            if (std::abs(p.normal(c)) < 1e-300) throw DomainError("W form: vanishing normal speed");
        p.A0 = Vec4(1, 1, 1 / p.normal(2), 1 / p.normal(3));
        p.B1 = D.T_inv * F.A1 * D.T;
        p.A1 = p.A0.asDiagonal() * p.B1;
        p.speed1 = std::abs(st.v) + model::sound_speed(st.m, st.n, law);
        if (constant) {
            p.C.setZero();
        } else {
            const Mat4 Ce = c_matrix(st, dU(1, it, j, k), dU(2, it, j, k), p1, p2, law);
            p.C = D.T_inv * (dT(0, it, j, k) + F.A1 * dT(1, it, j, k) + F.An * dT(2, it, j, k) + Ce * D.T);
        }
        return p;
    }
};

} // namespace

const std::vector<WPoint>& WForm::slice(Side s, int it) const {
    const int key_it = constant_ ? 0 : it;
    const auto key = std::make_pair(static_cast<int>(s), key_it);
    auto found = cache_.find(key);
    if (found != cache_.end()) return found->second;
    if (cache_.size() > 8) {
        for (auto i = cache_.begin(); i != cache_.end();)
            i = (i->first.second < key_it - 2 || i->first.second > key_it + 2) ? cache_.erase(i) : std::next(i);
    }
    const GridSpec& g = bs_->grid();
    const SideView view{bs_->U(s), bs_->Phi(s), bs_->law(), g};
    const int n1 = bs_->U_r.n1(), n2 = bs_->U_r.n2();
    std::vector<WPoint> pts(static_cast<std::size_t>(n1) * n2);
    if (constant_) {
        const WPoint p = view.point(g.t0(), 0, 0, true);
        std::fill(pts.begin(), pts.end(), p);
    } else {
        for (int j = 0; j < n1; ++j)
            for (int k = 0; k < n2; ++k) pts[j * n2 + k] = view.point(it, j, k, false);
    }
    return cache_.emplace(key, std::move(pts)).first->second;
}

Field WForm::to_W(const Field& V) const {
    require_sides(V, 8, "to_W");
    Field out = V;
    for (int it = 0; it < V.nT(); ++it)
        for (Side s : {Side::Right, Side::Left}) {
            const auto& sl = slice(s, it);
            const int c0 = 4 * static_cast<int>(s);
            for (int j = 0; j < V.n1(); ++j)
                for (int k = 0; k < V.n2(); ++k)
                    put(out, it, j, k, sl[j * V.n2() + k].T_inv * vec_at(V, it, j, k, c0), c0);
        }
    return out;
}

Field WForm::from_W(const Field& W) const {
    require_sides(W, 8, "from_W");
    Field out = W;
    for (int it = 0; it < W.nT(); ++it)
        for (Side s : {Side::Right, Side::Left}) {
            const auto& sl = slice(s, it);
            const int c0 = 4 * static_cast<int>(s);
            for (int j = 0; j < W.n1(); ++j)
                for (int k = 0; k < W.n2(); ++k)
                    put(out, it, j, k, sl[j * W.n2() + k].T * vec_at(W, it, j, k, c0), c0);
        }
    return out;
}

Field WForm::source(const Field& f) const {
    require_sides(f, 8, "source");
    Field out = f;
    for (int it = 0; it < f.nT(); ++it)
        for (Side s : {Side::Right, Side::Left}) {
            const auto& sl = slice(s, it);
            const int c0 = 4 * static_cast<int>(s);
            for (int j = 0; j < f.n1(); ++j)
                for (int k = 0; k < f.n2(); ++k) {
                    const WPoint& p = sl[j * f.n2() + k];
                    put(out, it, j, k, p.A0.asDiagonal() * (p.T_inv * vec_at(f, it, j, k, c0)), c0);
                }
        }
    return out;
}

Field WForm::residual(const Field& W, const Field& F) const {
    require_sides(W, 8, "residual");
    const Field Wt = d_t(W), W1 = d_1(W), W2 = d_2(W);
    Field out = Field::volume(W.grid(), 8);
    for (int it = 0; it < W.nT(); ++it)
        for (Side s : {Side::Right, Side::Left}) {
            const auto& sl = slice(s, it);
            const int c0 = 4 * static_cast<int>(s);
            for (int j = 0; j < W.n1(); ++j)
                for (int k = 0; k < W.n2(); ++k) {
                    const WPoint& p = sl[j * W.n2() + k];
                    Vec4 w2 = vec_at(W2, it, j, k, c0);
                    w2(0) = w2(1) = 0;
                    const Vec4 r = p.A0.asDiagonal() * vec_at(Wt, it, j, k, c0) + p.A1 * vec_at(W1, it, j, k, c0) + w2 +
                                   p.A0.asDiagonal() * (p.C * vec_at(W, it, j, k, c0)) - vec_at(F, it, j, k, c0);
                    put(out, it, j, k, r, c0);
                }
        }
    return out;
}

double WForm::eikonal_defect() const {
    double m = 0;
    for (int it = 0; it < bs_->grid().time_nodes(); ++it)
        for (Side s : {Side::Right, Side::Left})
            for (const WPoint& p : slice(s, it)) m = std::max({m, p.offdiag, std::abs(p.normal(0)), std::abs(p.normal(1))});
    return m;
}

WForm::Materialized WForm::materialize() const {
    const GridSpec& g = bs_->grid();
    Materialized m{Field::volume(g, 8), Field::volume(g, 32), Field::volume(g, 32)};
    for (int it = 0; it < g.time_nodes(); ++it)
        for (Side s : {Side::Right, Side::Left}) {
            const int si = static_cast<int>(s);
            const auto& sl = slice(s, it);
            for (int j = 0; j < m.A0.n1(); ++j)
                for (int k = 0; k < m.A0.n2(); ++k) {
                    const WPoint& p = sl[j * m.A0.n2() + k];
                    const Mat4 K = p.A0.asDiagonal() * p.C;
                    for (int r = 0; r < 4; ++r) {
                        m.A0(it, j, k, 4 * si + r) = p.A0(r);
                        for (int c = 0; c < 4; ++c) {
                            m.A1(it, j, k, 16 * si + 4 * r + c) = p.A1(r, c);
                            m.K(it, j, k, 16 * si + 4 * r + c) = K(r, c);
                        }
                    }
                }
        }
    return m;
}

// ---------------------------------------------------------------- solver

namespace {

using Vec8 = Eigen::Matrix<double, 8, 1>;

struct BoundarySlice {
    std::vector<Eigen::Matrix<double, 3, 8>> MW;
    std::vector<BoundaryPoint> bp;
};

class Solver {
public:
    Solver(const BasicState& bs, const Field& f, const Field& g, const SchemeParams& p, const Field& far)
        : bs_(bs), wf_(bs), bc_(bs), f_(f), g_(g), far_(far), p_(p), grid_(bs.grid()), n1_(bs.U_r.n1()),
          n2_(bs.U_r.n2()) {}

    LinearizedSolution run();

private:
    const BasicState& bs_;
    WForm wf_;
    BoundaryCoefficients bc_;
    const Field& f_;
    const Field& g_;
    const Field& far_;
    SchemeParams p_;
    GridSpec grid_;
    int n1_, n2_;
    std::map<int, BoundarySlice> bslices_;
    std::map<int, std::vector<double>> gsrc_;
    LinearizedSolution sol_;
    int lsq_count_ = 0;

    std::size_t at(int j, int k) const { return (static_cast<std::size_t>(j) * n2_ + k) * 8; }

    const BoundarySlice& bslice(int it) {
        auto f = bslices_.find(it);
        if (f != bslices_.end()) return f->second;
        if (bslices_.size() > 4) bslices_.erase(bslices_.begin());
        BoundarySlice b;
        for (int j = 0; j < n1_; ++j) {
            b.MW.push_back(bc_.M_W(it, j));
            b.bp.push_back(bc_.at(it, j));
        }
        return bslices_.emplace(it, std::move(b)).first->second;
    }

    // T^{-1} f on slice it
    const std::vector<double>& gsrc(int it) {
        auto f = gsrc_.find(it);
        if (f != gsrc_.end()) return f->second;
        if (gsrc_.size() > 4) gsrc_.erase(gsrc_.begin());
        std::vector<double> out(static_cast<std::size_t>(n1_) * n2_ * 8, 0.0);
        if (f_.size())
            for (Side s : {Side::Right, Side::Left}) {
                const auto& sl = wf_.slice(s, it);
                const int c0 = 4 * static_cast<int>(s);
                for (int j = 0; j < n1_; ++j)
                    for (int k = 0; k < n2_; ++k) {
                        const Vec4 r = sl[j * n2_ + k].T_inv * vec_at(f_, it, j, k, c0);
                        for (int c = 0; c < 4; ++c) out[at(j, k) + c0 + c] = r(c);
                    }
            }
        return gsrc_.emplace(it, std::move(out)).first->second;
    }

    // d/dt of (W, psi) with coefficients of slice it
    void rhs(int it, const std::vector<double>& W, const std::vector<double>& psi, std::vector<double>& dW,
             std::vector<double>& dpsi) {
        const double h1 = grid_.dx1(), h2 = grid_.dx2();
        const std::vector<double>& G = gsrc(it);
        for (Side s : {Side::Right, Side::Left}) {
            const auto& sl = wf_.slice(s, it);
            const int c0 = 4 * static_cast<int>(s);
            for (int j = 0; j < n1_; ++j) {
                const int jm = (j - 1 + n1_) % n1_, jp = (j + 1) % n1_, jmm = (j - 2 + n1_) % n1_, jpp = (j + 2) % n1_;
                for (int k = 0; k < n2_; ++k) {
                    const WPoint& p = sl[j * n2_ + k];
                    auto w = [&](int jj, int kk) {
                        const double* q = &W[at(jj, kk) + c0];
                        return Vec4(q[0], q[1], q[2], q[3]);
                    };
                    const Vec4 w0 = w(j, k);
                    const Vec4 dx = (w(jp, k) - w(jm, k)) / (2 * h1);
                    const Vec4 d4 = w(jpp, k) - 4 * w(jp, k) + 6 * w0 - 4 * w(jm, k) + w(jmm, k);
                    Vec4 r = -p.B1 * dx - (p_.dissipation * p.speed1 / h1) * d4 - p.C * w0;
                    for (int c : {2, 3}) {
                        const double d = p.normal(c);
                        double dz;
                        if (d > 0) {
                            if (k == 0) { r(c) = 0; continue; }
                            dz = k == 1 ? (w(j, 2)(c) - w(j, 0)(c)) / (2 * h2)
                                        : (3 * w0(c) - 4 * w(j, k - 1)(c) + w(j, k - 2)(c)) / (2 * h2);
                        } else {
                            if (k == n2_ - 1) { r(c) = 0; continue; }
                            dz = k == n2_ - 2 ? (w(j, k + 1)(c) - w(j, k - 1)(c)) / (2 * h2)
                                              : (-3 * w0(c) + 4 * w(j, k + 1)(c) - w(j, k + 2)(c)) / (2 * h2);
                        }
                        r(c) -= d * dz;
                    }
                    for (int c = 0; c < 4; ++c) {
                        const bool frozen = (c >= 2) && ((k == 0 && p.normal(c) > 0) || (k == n2_ - 1 && p.normal(c) < 0));
                        dW[at(j, k) + c0 + c] = frozen ? 0.0 : r(c) + G[at(j, k) + c0 + c];
                    }
                }
            }
        }
        const BoundarySlice& b = bslice(it);
        for (int j = 0; j < n1_; ++j) {
            const int jm = (j - 1 + n1_) % n1_, jp = (j + 1) % n1_;
            const double d1 = (psi[jp] - psi[jm]) / (2 * h1);
            Vec8 w0;
            for (int c = 0; c < 8; ++c) w0(c) = W[at(j, 0) + c];
            const BoundaryPoint& bp = b.bp[j];
            const double gg = g_.size() ? g_(it, j, 0, 1) : 0.0;
            dpsi[j] = (gg - bp.b(1, 1) * d1 - bp.b_sharp(1) * psi[j] - b.MW[j].row(1).dot(w0)) / bp.b(1, 0);
            const double d4 = psi[(j + 2) % n1_] - 4 * psi[jp] + 6 * psi[j] - 4 * psi[jm] + psi[(j - 2 + n1_) % n1_];
            dpsi[j] -= p_.dissipation * wf_.slice(Side::Right, it)[j * n2_].speed1 / h1 * d4;
        }
    }

    // incoming traces at x2 = 0 from the first and third boundary rows; far-field data at x2 = L2
    void enforce(double wa, int ia, double wb, int ib, std::vector<double>& W, const std::vector<double>& psi) {
        const double h1 = grid_.dx1();
        const auto& sr = wf_.slice(Side::Right, ia);
        const auto& sl = wf_.slice(Side::Left, ia);
        for (int j = 0; j < n1_; ++j) {
            int in[2], nin = 0;
            for (int s = 0; s < 2; ++s) {
                const WPoint& p = (s == 0 ? sr : sl)[j * n2_];
                for (int c : {2, 3})
                    if (p.normal(c) > 0) {
                        if (nin == 2) throw BoundaryRankError("more than two incoming characteristics at x2 = 0");
                        in[nin++] = 4 * s + c;
                    }
            }
            if (nin != 2)
                throw BoundaryRankError("expected two incoming characteristics at x2 = 0, found " + std::to_string(nin));
            Eigen::Matrix<double, 3, 8> MW = wa * bslice(ia).MW[j];
            BoundaryPoint bp = bslice(ia).bp[j];
            bp.b *= wa;
            bp.b_sharp *= wa;
            double g0 = 0, g2 = 0;
            if (g_.size()) {
                g0 = wa * g_(ia, j, 0, 0);
                g2 = wa * g_(ia, j, 0, 2);
            }
            if (wb != 0) {
                MW += wb * bslice(ib).MW[j];
                const BoundaryPoint& q = bslice(ib).bp[j];
                bp.b += wb * q.b;
                bp.b_sharp += wb * q.b_sharp;
                if (g_.size()) {
                    g0 += wb * g_(ib, j, 0, 0);
                    g2 += wb * g_(ib, j, 0, 2);
                }
            }
            const int jm = (j - 1 + n1_) % n1_, jp = (j + 1) % n1_;
            const double d1 = (psi[jp] - psi[jm]) / (2 * h1);
            Vec8 w0;
            for (int c = 0; c < 8; ++c) w0(c) = W[at(j, 0) + c];
            w0(in[0]) = w0(in[1]) = 0;
            Eigen::Matrix2d A;
            Eigen::Vector2d rhs;
            const int rows[2] = {0, 2};
            const double gr[2] = {g0, g2};
            for (int r = 0; r < 2; ++r) {
                A(r, 0) = MW(rows[r], in[0]);
                A(r, 1) = MW(rows[r], in[1]);
                rhs(r) = gr[r] - bp.b(rows[r], 0) * 0.0 - bp.b(rows[r], 1) * d1 - bp.b_sharp(rows[r]) * psi[j] -
                         MW.row(rows[r]).dot(w0);
            }
            Eigen::JacobiSVD<Eigen::Matrix2d> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
            const Eigen::Vector2d sv = svd.singularValues();
            const double rcond = sv(0) > 0 ? sv(1) / sv(0) : 0.0;
            if (rcond < p_.rank_tol)
                throw BoundaryRankError("incoming-trace system singular at x1 = " + std::to_string(grid_.x1(j)) +
                                        " (rcond " + std::to_string(rcond) + ")");
            Eigen::Vector2d x;
            if (rcond < p_.warn_tol) {
                x = svd.solve(rhs);
                if (lsq_count_++ < 5)
                    sol_.warnings.push_back("ill-conditioned incoming-trace solve (rcond " + std::to_string(rcond) +
                                            "), least squares used");
            } else {
                x = A.partialPivLu().solve(rhs);
            }
            W[at(j, 0) + in[0]] = x(0);
            W[at(j, 0) + in[1]] = x(1);
        }
        // far boundary
        const int kt = n2_ - 1;
        for (Side s : {Side::Right, Side::Left}) {
            const auto& sa = wf_.slice(s, ia);
            const int c0 = 4 * static_cast<int>(s);
            for (int j = 0; j < n1_; ++j)
                for (int c : {2, 3})
                    if (sa[j * n2_ + kt].normal(c) < 0) {
                        double v = 0;
                        if (far_.size()) v = wa * far_(ia, j, 0, c0 + c) + (wb != 0 ? wb * far_(ib, j, 0, c0 + c) : 0.0);
                        W[at(j, kt) + c0 + c] = v;
                    }
        }
    }

    void check_cfl(int it) {
        double s1 = 0, s2 = 0;
        for (Side s : {Side::Right, Side::Left})
            for (const WPoint& p : wf_.slice(s, it)) {
                s1 = std::max(s1, p.speed1);
                s2 = std::max({s2, std::abs(p.normal(2)), std::abs(p.normal(3))});
            }
        const double nu = grid_.dt() * (s1 / grid_.dx1() + s2 / grid_.dx2());
        if (nu > p_.cfl)
            throw CflError("CFL violated: dt (s1/dx1 + s2/dx2) = " + std::to_string(nu) + " > " +
                                   std::to_string(p_.cfl) + "; increase nt");
    }
};

LinearizedSolution Solver::run() {
    if (!grid_.x1_periodic) throw std::invalid_argument("solve_linearized needs a periodic x1 axis");
    if (f_.size()) {
        require_sides(f_, 8, "solve_linearized f");
        if (f_.max_abs_past() != 0.0) throw std::invalid_argument("source f must vanish for t < 0");
    }
    if (g_.size()) {
        require_sides(g_, 3, "solve_linearized g");
        if (g_.max_abs_past() != 0.0) throw std::invalid_argument("boundary data g must vanish for t < 0");
    }
    const int nT = grid_.time_nodes(), t0 = grid_.t0();
    sol_.W = Field::volume(grid_, 8);
    sol_.Vdot = Field::volume(grid_, 8);
    sol_.psi = Field::trace_of(grid_, 1);
    const std::size_t N = static_cast<std::size_t>(n1_) * n2_ * 8;
    std::vector<double> W(N, 0.0), W1(N), W2(N), dW(N);
    std::vector<double> psi(n1_, 0.0), p1(n1_), p2(n1_), dpsi(n1_);
    const double dt = grid_.dt();

    auto record = [&](int it) {
        double tr = 0, ps = 0;
        for (int j = 0; j < n1_; ++j) {
            for (int c : {2, 3, 6, 7}) tr += W[at(j, 0) + c] * W[at(j, 0) + c];
            ps += psi[j] * psi[j];
        }
        sol_.steps.push_back({grid_.t(it), std::sqrt(tr * grid_.dx1()), std::sqrt(ps * grid_.dx1())});
        for (Side s : {Side::Right, Side::Left}) {
            const auto& sl = wf_.slice(s, it);
            const int c0 = 4 * static_cast<int>(s);
            for (int j = 0; j < n1_; ++j)
                for (int k = 0; k < n2_; ++k) {
                    const double* q = &W[at(j, k) + c0];
                    const Vec4 w(q[0], q[1], q[2], q[3]);
                    put(sol_.W, it, j, k, w, c0);
                    put(sol_.Vdot, it, j, k, sl[j * n2_ + k].T * w, c0);
                }
        }
        for (int j = 0; j < n1_; ++j) sol_.psi(it, j, 0) = psi[j];
    };
    record(t0);

    for (int it = t0; it + 1 < nT; ++it) {
        check_cfl(it);
        // stage 1
        rhs(it, W, psi, dW, dpsi);
        for (std::size_t q = 0; q < N; ++q) W1[q] = W[q] + dt * dW[q];
        for (int j = 0; j < n1_; ++j) p1[j] = psi[j] + dt * dpsi[j];
        enforce(1.0, it + 1, 0.0, it + 1, W1, p1);
        // stage 2
        rhs(it + 1, W1, p1, dW, dpsi);
        for (std::size_t q = 0; q < N; ++q) W2[q] = 0.75 * W[q] + 0.25 * (W1[q] + dt * dW[q]);
        for (int j = 0; j < n1_; ++j) p2[j] = 0.75 * psi[j] + 0.25 * (p1[j] + dt * dpsi[j]);
        enforce(0.5, it, 0.5, it + 1, W2, p2);
        // stage 3 at t + dt/2: average of the two slices
        std::vector<double> dWb(N), dpb(n1_);
        rhs(it, W2, p2, dW, dpsi);
        rhs(it + 1, W2, p2, dWb, dpb);
        for (std::size_t q = 0; q < N; ++q) W[q] = W[q] / 3.0 + 2.0 / 3.0 * (W2[q] + dt * 0.5 * (dW[q] + dWb[q]));
        for (int j = 0; j < n1_; ++j) psi[j] = psi[j] / 3.0 + 2.0 / 3.0 * (p2[j] + dt * 0.5 * (dpsi[j] + dpb[j]));
        enforce(1.0, it + 1, 0.0, it + 1, W, psi);
        record(it + 1);
    }
    sol_.traces = noncharacteristic_trace(bs_, sol_.Vdot.trace());
    return std::move(sol_);
}

} // namespace


LinearizedSolution solve_linearized(const BasicState& bs, const Field& f, const Field& g, const SchemeParams& p,
                                    const Field& far) {
    Solver s(bs, f, g, p, far);
    return s.run();
}

double growth_rate(const LinearizedSolution& sol) {
    if (sol.steps.size() < 4) return 0.0;
    const double t_end = sol.steps.back().t, t_mid = sol.steps.front().t + 0.5 * (t_end - sol.steps.front().t);
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const StepRecord& r : sol.steps) {
        if (r.t < t_mid || !(r.trace_l2 > 0)) continue;
        const double y = std::log(r.trace_l2);
        n += 1;
        sx += r.t;
        sy += y;
        sxx += r.t * r.t;
        sxy += r.t * y;
    }
    const double den = n * sxx - sx * sx;
    return n >= 2 && den > 0 ? (n * sxy - sx * sy) / den : 0.0;
}

// ---------------------------------------------------------------- energy

namespace {

// x-integral of |u(it)|^2 over the slice; x2 trapezoid for volume fields
double slice_sq(const Field& u, int it) {
    const GridSpec& g = u.grid();
    const bool vol = u.kind() == FieldKind::Volume;
    double s = 0;
    for (int j = 0; j < u.n1(); ++j)
        for (int k = 0; k < u.n2(); ++k) {
            const double wk = vol ? ((k == 0 || k == u.n2() - 1) ? 0.5 : 1.0) * g.dx2() : 1.0;
            double q = 0;
            for (int c = 0; c < u.ncomp(); ++c) q += u(it, j, k, c) * u(it, j, k, c);
            s += wk * q;
        }
    return s * g.dx1();
}

std::vector<double> h1_slices(const Field& u, const GridSpec& g, double lambda) {
    std::vector<double> out(g.time_nodes(), 0.0);
    if (!u.size()) return out;
    const Field ut = d_t(u), u1 = d_1(u);
    for (int it = 0; it < u.nT(); ++it)
        out[it] = lambda * lambda * slice_sq(u, it) + slice_sq(ut, it) + slice_sq(u1, it);
    return out;
}

} // namespace

std::vector<EnergyTerms> energy_series(const LinearizedSolution& sol, const Field& f, const Field& g, double lambda) {
    if (!(lambda >= 1.0)) throw std::invalid_argument("energy estimate needs lambda >= 1");
    const GridSpec& gr = sol.Vdot.grid();
    const std::vector<double> hp = h1_slices(sol.psi, gr, lambda), hf = h1_slices(f, gr, lambda), hg = h1_slices(g, gr, lambda);
    std::vector<EnergyTerms> out;
    EnergyTerms acc;
    double prev[5] = {0, 0, 0, 0, 0};
    for (int it = gr.t0(); it < gr.time_nodes(); ++it) {
        const double w = std::exp(-2 * lambda * gr.t(it));
        const double cur[5] = {w * lambda * slice_sq(sol.Vdot, it), w * slice_sq(sol.traces, it), w * hp[it],
                               w * hf[it] / std::pow(lambda, 3), w * hg[it] / (lambda * lambda)};
        if (it > gr.t0()) {
            double* dst[5] = {&acc.lhs_V, &acc.lhs_trace, &acc.lhs_psi, &acc.rhs_f, &acc.rhs_g};
            for (int q = 0; q < 5; ++q) *dst[q] += 0.5 * gr.dt() * (prev[q] + cur[q]);
        }
        std::copy(cur, cur + 5, prev);
        acc.t = gr.t(it);
        out.push_back(acc);
    }
    return out;
}

EnergyTerms energy_estimate(const LinearizedSolution& sol, const Field& f, const Field& g, double lambda) {
    return energy_series(sol, f, g, lambda).back();
}

void write_energy_csv(const std::string& path, const std::vector<EnergyTerms>& rows, double lambda) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "t,lambda,lambda_V_sq,trace_sq,psi_H1_sq,rhs,ratio\n" << std::setprecision(12);
    for (const EnergyTerms& r : rows)
        os << r.t << ',' << lambda << ',' << r.lhs_V << ',' << r.lhs_trace << ',' << r.lhs_psi << ',' << r.rhs() << ','
           << r.ratio() << '\n';
}

// ---------------------------------------------------------------- monitors

namespace {

Field nc_components(const Field& W) {
    const Field a = W.components(2, 2), b = W.components(6, 2);
    return stack({&a, &b});
}

double hs(const Field& u, int s, double lambda) { return norms::weighted_norm(u, {s, lambda}); }

double sq(double x) { return x * x; }

} // namespace

std::vector<MonitorRow> estimate_monitors(const LinearizedSolution& sol, const BasicState& bs, const Field& f,
                                          const Field& g, int s, double lambda) {
    if (s < 1) throw std::invalid_argument("estimate monitors need s >= 1");
    const GridSpec& gr = bs.grid();
    const Field fz = f.size() ? f : Field::volume(gr, 8);
    const Field gz = g.size() ? g : Field::trace_of(gr, 3);
    const WForm wf(bs);
    const Field F = wf.source(fz);
    const Field& W = sol.W;
    const Field Wnc0 = nc_components(W).trace();
    const Field Ud = bs.U_dot(), Pd = bs.Phi_dot();
    const Field Pd1 = d_1(Pd), Pd2 = d_2(Pd), Pdt = d_t(Pd);
    const Field UgP = stack({&Ud, &Pdt, &Pd1, &Pd2});
    const Field UP = stack({&Ud, &Pd});
    const double sl = std::sqrt(lambda);
    const double w1tan = norms::tan_lipschitz_norm(W, 1);
    std::vector<MonitorRow> rows;

    const EnergyTerms e = energy_estimate(sol, fz, gz, lambda);
    rows.push_back({"estimate", 0, lambda, e.lhs(), e.rhs()});

    {
        const Field U2 = d_2(Ud);
        const Field bnd = stack({&Ud, &U2, &Pdt, &Pd1, &Pd2}).trace();
        const double lhs = sl * norms::l2_hs_norm(W, {s, lambda}) + hs(Wnc0, s, lambda) + hs(sol.psi, s + 1, lambda);
        const double rhs = hs(gz, s + 1, lambda) / lambda + norms::l2_hs_norm(F, {s + 1, lambda}) / (lambda * sl) +
                           w1tan * hs(UgP, s + 2, lambda) / (lambda * sl) +
                           (Wnc0.max_abs() + norms::w1inf_norm(sol.psi)) * hs(bnd, s + 1, lambda) / lambda;
        rows.push_back({"estimate4", s, lambda, lhs, rhs});
    }
    {
        const double lhs = norms::aniso_norm(d_2(nc_components(W)), {s - 1, lambda});
        const double rhs = norms::aniso_norm(F, {s - 1, lambda}) + norms::aniso_norm(W, {s, lambda}) +
                           norms::aniso_norm(UP, {s + 2, lambda}) * w1tan;
        rows.push_back({"Wnc", s, lambda, lhs, rhs});
    }
    {
        const Field Wt = norms::exp_weight(W, lambda);
        const int last = gr.time_nodes() - 1;
        double weighted = 0, unweighted = 0;
        norms::for_each_aniso_derivative(Wt, s, [&](const Field& d, int a0, int a1, int a2, int k) {
            if (a0 + a1 + a2 + 2 * k < 1) return;
            const double v = lambda * sq(fields::l2_norm(d)) + 0.5 * slice_sq(d, last);
            if (a2 >= 1) weighted += v;
            else if (k >= 1) unweighted += v;
        });
        const double rhs = sq(norms::aniso_norm(W, {s, lambda})) +
                           sq(w1tan) * (1 + sq(norms::aniso_norm(UgP, {s + 2, lambda}))) +
                           sq(norms::aniso_norm(F, {s, lambda}));
        rows.push_back({"weightes", s, lambda, weighted, rhs});
        rows.push_back({"unweightes", s, lambda, unweighted, rhs});
    }
    {
        const double lhs = sl * norms::aniso_norm(sol.Vdot, {s, lambda}) + hs(sol.traces, s, lambda) +
                           hs(sol.psi, s + 1, lambda);
        const double rhs = norms::aniso_norm(fz, {s + 1, lambda}) + hs(gz, s + 1, lambda) +
                           (norms::aniso_norm(fz, {6, lambda}) + hs(gz, 6, lambda)) *
                               norms::aniso_norm(UP, {s + 4, lambda});
        rows.push_back({"tameestimate", s, lambda, lhs, rhs});
    }
    return rows;
}

void write_monitor_csv(const std::string& path, const std::vector<MonitorRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "id,s,lambda,lhs,rhs,ratio\n" << std::setprecision(12);
    for (const MonitorRow& r : rows)
        os << r.id << ',' << r.s << ',' << r.lambda << ',' << r.lhs << ',' << r.rhs << ',' << r.ratio() << '\n';
}

// ---------------------------------------------------------------- tangential system

namespace {

double binom(int n, int k) {
    double r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// out(it,j,k, 4 s + r) = sum_c M(it,j,k, 16 s + 4 r + c) x(it,j,k, 4 s + c)
Field apply_blocks(const Field& M, const Field& x) {
    Field out = Field(x.grid(), 8, x.kind());
    for (std::size_t q = 0; q < x.nodes(); ++q)
        for (int s = 0; s < 2; ++s)
            for (int r = 0; r < 4; ++r) {
                double v = 0;
                for (int c = 0; c < 4; ++c) v += M.data()[32 * q + 16 * s + 4 * r + c] * x.data()[8 * q + 4 * s + c];
                out.data()[8 * q + 4 * s + r] = v;
            }
    return out;
}

// diagonal A0 (8 comps) times x (8 comps)
Field apply_diag(const Field& D, const Field& x) {
    Field out = x;
    for (std::size_t q = 0; q < out.size(); ++q) out.data()[q] *= D.data()[q];
    return out;
}

// rows x cols matrix field times vector field
Field apply_matrix(const Field& M, int rows, int cols, const Field& x) {
    Field out = Field(x.grid(), rows, x.kind());
    for (std::size_t q = 0; q < x.nodes(); ++q)
        for (int r = 0; r < rows; ++r) {
            double v = 0;
            for (int c = 0; c < cols; ++c) v += M.data()[q * rows * cols + r * cols + c] * x.data()[q * cols + c];
            out.data()[q * rows + r] = v;
        }
    return out;
}

Field Dtan(const Field& f, int a0, int a1) { return fields::tangential_derivative(f, {a0, a1, 0}); }

} // namespace

TangentialSystem tangential_system(const WForm& wf, const Field& W, const Field& psi, const Field& F, const Field& g,
                                   int l, double lambda) {
    if (l < 0) throw std::invalid_argument("tangential order must be non-negative");
    require_sides(W, 8, "tangential_system");
    const BasicState& bs = wf.state();
    const GridSpec& gr = bs.grid();
    fields::require_capacity(W, fields::Axis::T, l + 1);
    fields::require_capacity(W, fields::Axis::X1, l + 1);
    const WForm::Materialized co = wf.materialize();
    const Field Fz = F.size() ? F : Field::volume(gr, 8);
    const Field gz = g.size() ? g : Field::trace_of(gr, 3);

    // boundary coefficient fields
    const BoundaryCoefficients bc(bs);
    Field bf = Field::trace_of(gr, 6), bsf = Field::trace_of(gr, 3), MWf = Field::trace_of(gr, 24);
    for (int it = 0; it < gr.time_nodes(); ++it)
        for (int j = 0; j < bf.n1(); ++j) {
            const BoundaryPoint p = bc.at(it, j);
            const Eigen::Matrix<double, 3, 8> MW = bc.M_W(it, j);
            for (int r = 0; r < 3; ++r) {
                bf(it, j, 0, 2 * r) = p.b(r, 0);
                bf(it, j, 0, 2 * r + 1) = p.b(r, 1);
                bsf(it, j, 0, r) = p.b_sharp(r);
                for (int c = 0; c < 8; ++c) MWf(it, j, 0, 8 * r + c) = MW(r, c);
            }
        }

    auto interior = [&](const Field& X) {
        Field r = apply_diag(co.A0, d_t(X));
        r += apply_blocks(co.A1, d_1(X));
        Field x2 = d_2(X);
        for (std::size_t q = 0; q < x2.nodes(); ++q)
            for (int c : {0, 1, 4, 5}) x2.data()[8 * q + c] = 0;
        r += x2;
        r += apply_blocks(co.K, X);
        return r;
    };
    const Field base = interior(W) - Fz;

    TangentialSystem ts;
    ts.l = l;
    double lhs_sq[3] = {0, 0, 0}, rhs_sq[2] = {0, 0};
    for (int a0 = l; a0 >= 0; --a0) {
        const int a1 = l - a0;
        ts.betas.push_back({a0, a1});
        const Field DW = Dtan(W, a0, a1), Dpsi = Dtan(psi, a0, a1);
        Field Fl = Dtan(Fz, a0, a1), Gl = Dtan(gz, a0, a1);
        for (int b0 = 0; b0 <= a0; ++b0)
            for (int b1 = 0; b1 <= a1; ++b1) {
                if (b0 + b1 == 0) continue;
                const double c = binom(a0, b0) * binom(a1, b1);
                const Field rest = Dtan(W, a0 - b0, a1 - b1);
                Field term = apply_diag(Dtan(co.A0, b0, b1), d_t(rest));
                term += apply_blocks(Dtan(co.A1, b0, b1), d_1(rest));
                term += apply_blocks(Dtan(co.K, b0, b1), rest);
                Fl.axpy(-c, term);
                const Field prest = Dtan(psi, a0 - b0, a1 - b1);
                const Field pt = d_t(prest), p1 = d_1(prest);
                const Field grad = stack({&pt, &p1});
                Field bterm = apply_matrix(Dtan(bf, b0, b1), 3, 2, grad);
                bterm += apply_matrix(Dtan(MWf, b0, b1), 3, 8, rest.trace());
                const Field dbs = Dtan(bsf, b0, b1);
                for (std::size_t q = 0; q < prest.nodes(); ++q)
                    for (int r = 0; r < 3; ++r) bterm.data()[3 * q + r] += dbs.data()[3 * q + r] * prest.data()[q];
                Gl.axpy(-c, bterm);
            }
        const Field stacked = interior(DW) - Fl;
        const Field diffd = Dtan(base, a0, a1);
        const double scale = std::max(fields::l2_norm(DW), 1e-300);
        ts.consistency = std::max(ts.consistency, fields::l2_norm(stacked - diffd) / scale);
        ts.commutator = std::max(ts.commutator, fields::l2_norm(Fl - Dtan(Fz, a0, a1)));

        lhs_sq[0] += sq(fields::l2_norm_weighted(DW, lambda));
        lhs_sq[1] += sq(fields::l2_norm_weighted(nc_components(DW).trace(), lambda));
        lhs_sq[2] += sq(hs(Dpsi, 1, lambda));
        rhs_sq[0] += sq(norms::l2_hs_norm(Fl, {1, lambda}));
        rhs_sq[1] += sq(hs(Gl, 1, lambda));
        ts.W.push_back(DW);
        ts.F.push_back(std::move(Fl));
        ts.G.push_back(std::move(Gl));
        ts.psi.push_back(Dpsi);
    }
    ts.lhs = std::sqrt(lambda * lhs_sq[0]) + std::sqrt(lhs_sq[1]) + std::sqrt(lhs_sq[2]);
    ts.rhs = std::sqrt(rhs_sq[0]) / (lambda * std::sqrt(lambda)) + std::sqrt(rhs_sq[1]) / lambda;
    return ts;
}

// ---------------------------------------------------------------- dual matrices

DualMatrices dual_matrices(const BasicState& bs, int it, int j, double tol) {
    const Field tr = bs.U_r.trace(), tl = bs.U_l.trace();
    const double mr = tr(it, j, 0, 0), nr = tr(it, j, 0, 1), ml = tl(it, j, 0, 0), nl = tl(it, j, 0, 1);
    if (std::abs(mr - ml) > tol || std::abs(nr - nl) > tol)
        throw TraceMismatchError("traces of m, n differ across the front: |dm| = " + std::to_string(std::abs(mr - ml)) +
                                 ", |dn| = " + std::to_string(std::abs(nr - nl)));
    const Field pr = bs.Phi_r, pl = bs.Phi_l;
    const double a = d_1(pr.trace())(it, j, 0);
    const double d2r = d_2(pr)(it, j, 0), d2l = d_2(pl)(it, j, 0);
    const double m = mr, n = nr, pn = bs.law().p_n(m, n), pm = pn;
    DualMatrices D;
    D.N << 0, 0, a, -1, 0, 0, -a, 1,
           0, 0, a, -1, 0, 0, 0, 0,
           1, 1, 0, 0, -1, -1, 0, 0;
    D.M = D.N;
    const double qr = pn / (2 * n * d2r), ql = pm / (2 * n * d2l);
    D.M1 << 0, -n / d2r, 0, 0, m / d2l, n / d2l, 0, 0,
            -m / d2r, 0, 0, 0, 0, 0, 0, 0,
            0, 0, -qr * a, qr, 0, 0, ql * a, -ql;
    D.N1.setZero();
    D.N1.row(2) = D.M1.row(2);
    D.normal_r = model::normal_matrix(state_at(tr, it, j, 0), d_t(pr.trace())(it, j, 0), a, d2r, bs.law());
    D.normal_l = model::normal_matrix(state_at(tl, it, j, 0), d_t(pl.trace())(it, j, 0),
                                      d_1(pl.trace())(it, j, 0), d2l, bs.law());
    const Eigen::Matrix<double, 8, 8> P = D.M1.transpose() * D.M + D.N1.transpose() * D.N;
    D.block_residual = std::max((P.topLeftCorner<4, 4>() - D.normal_r).cwiseAbs().maxCoeff(),
                                (P.bottomRightCorner<4, 4>() - D.normal_l).cwiseAbs().maxCoeff());
    D.cross_residual = std::max(P.topRightCorner<4, 4>().cwiseAbs().maxCoeff(),
                                P.bottomLeftCorner<4, 4>().cwiseAbs().maxCoeff());
    return D;
}

} // namespace vsheet::linearized
