#include "vsheet/model.hpp"

#include <algorithm>
#include <cmath>

namespace vsheet::model {

void require_valid(double m, double n) {
    if (!(m > 0.0) || !(n > 0.0))
        throw DomainError("state outside (0,inf)x(0,inf)xR^2: m=" + std::to_string(m) + " n=" + std::to_string(n));
}

double PressureLaw::p(double m, double n) const { return (gamma - 1.0) * std::pow(m + n, gamma); }

double PressureLaw::p_n(double m, double n) const { return gamma * (gamma - 1.0) * std::pow(m + n, gamma - 1.0); }

double PressureLaw::p_nn(double m, double n) const {
    return gamma * (gamma - 1.0) * (gamma - 1.0) * std::pow(m + n, gamma - 2.0);
}

std::pair<Mat4, Mat4> flux_jacobians(const PhaseState& U, const PressureLaw& law) {
    require_valid(U.m, U.n);
    const double q = law.p_n(U.m, U.n) / U.n;
    Mat4 A1, A2;
    A1 << U.v, 0, U.m, 0,
          0, U.v, U.n, 0,
          q, q, U.v, 0,
          0, 0, 0, U.v;
    A2 << U.u, 0, 0, U.m,
          0, U.u, 0, U.n,
          0, 0, U.u, 0,
          q, q, 0, U.u;
    return {A1, A2};
}

std::pair<Mat4, Mat4> flux_jacobian_derivs(const PhaseState& U, const Vec4& X, const PressureLaw& law) {
    require_valid(U.m, U.n);
    // q = p_n/n ; dq = (p_nn/n) (Xm + Xn) - (p_n/n^2) Xn
    const double pn = law.p_n(U.m, U.n), pnn = law.p_nn(U.m, U.n);
    const double dq = pnn / U.n * (X(0) + X(1)) - pn / (U.n * U.n) * X(1);
    Mat4 d1, d2;
    d1 << X(2), 0, X(0), 0,
          0, X(2), X(1), 0,
          dq, dq, X(2), 0,
          0, 0, 0, X(2);
    d2 << X(3), 0, 0, X(0),
          0, X(3), 0, X(1),
          0, 0, X(3), 0,
          dq, dq, 0, X(3);
    return {d1, d2};
}

double sound_speed(double m, double n, const PressureLaw& law) {
    require_valid(m, n);
    return std::sqrt((1.0 + m / n) * law.p_n(m, n));
}

Mat4 symmetrizer(const PhaseState& U, const PressureLaw& law) {
    require_valid(U.m, U.n);
    const double pn = law.p_n(U.m, U.n);
    return Vec4(pn / U.m, pn / U.n, U.n, U.n).asDiagonal();
}

Mat4 normal_matrix(const PhaseState& U, double dtPhi, double d1Phi, double d2Phi, const PressureLaw& law) {
    if (d2Phi == 0.0) throw DomainError("degenerate front: d2Phi = 0");
    auto [A1, A2] = flux_jacobians(U, law);
    return (A2 - dtPhi * Mat4::Identity() - d1Phi * A1) / d2Phi;
}

Mat4 symmetrized_normal(const PhaseState& U, double d1Phi, double d2Phi, const PressureLaw& law) {
    require_valid(U.m, U.n);
    const double pn = law.p_n(U.m, U.n), a = d1Phi;
    Mat4 B;
    B << 0, 0, -pn * a, pn,
         0, 0, -pn * a, pn,
         -pn * a, -pn * a, 0, 0,
         pn, pn, 0, 0;
    return B / d2Phi;
}

Diagonalizer diagonalizer(const PhaseState& U, double a, const PressureLaw& law) {
    require_valid(U.m, U.n);
    const double m = U.m, n = U.n, c = sound_speed(m, n, law);
    const double br = std::sqrt(1.0 + a * a), br2 = 1.0 + a * a;
    const double s = n / (m + n), r = m / (m + n), h = n / (2.0 * (m + n) * br), k = n / (2.0 * c) / br2;
    Diagonalizer d;
    d.T << 1, 0, m / n * br, m / n * br,
           -1, 0, br, br,
           0, 1, -c / n * a, c / n * a,
           0, a, c / n, -c / n;
    d.T_inv << s, -r, 0, 0,
               0, 0, 1 / br2, a / br2,
               h, h, -k * a, k,
               h, h, k * a, -k;
    return d;
}

Eigen::Vector3d rankine_hugoniot_residual(const PhaseState& Up, const PhaseState& Um, double dphi_dt,
                                          double dphi_dx1) {
    return {dphi_dt - Up.u + Up.v * dphi_dx1, dphi_dt - Um.u + Um.v * dphi_dx1, (Up.m + Up.n) - (Um.m + Um.n)};
}

std::string to_string(Stability s) {
    switch (s) {
    case Stability::Stable: return "Stable";
    case Stability::CriticalExcluded: return "CriticalExcluded";
    case Stability::NotCovered: return "NotCovered";
    }
    return "?";
}

double BackgroundSheet::lambda_max() const {
    const double r = neighborhood;
    double out = 0.0;
    for (const PhaseState* s : {&right, &left}) {
        // c grows with m and falls with n only through 1+m/n; scan the box corners
        double cmax = 0.0;
        for (double dm : {-r, r})
            for (double dn : {-r, r}) {
                const double m = s->m + dm, n = s->n + dn;
                if (m > 0 && n > 0) cmax = std::max(cmax, sound_speed(m, n, law));
            }
        out = std::max({out, std::abs(s->v) + r + cmax, std::abs(s->u) + r + cmax});
    }
    return out;
}

void BackgroundSheet::validate(double tol) const {
    require_valid(right.m, right.n);
    require_valid(left.m, left.n);
    if (law.gamma <= 1.0) throw DomainError("gamma must exceed 1");
    const double jr = right.m + right.n, jl = left.m + left.n;
    if (std::abs(jr - jl) > tol * std::max(1.0, jr)) throw DomainError("background total masses differ across the sheet");
    if (right.u != 0.0 || left.u != 0.0) throw DomainError("background normal velocity must vanish");
}

BackgroundSheet BackgroundSheet::symmetric(double m, double n, double vbar, const PressureLaw& law) {
    BackgroundSheet bg;
    bg.right = {m, n, vbar, 0.0};
    bg.left = {m, n, -vbar, 0.0};
    bg.law = law;
    return bg;
}

StabilityVerdict check_supersonic(const BackgroundSheet& bg, double rel_tol) {
    const double cr = bg.c_r(), cl = bg.c_l();
    StabilityVerdict out;
    out.jump = bg.right.v - bg.left.v;
    out.threshold = std::pow(std::cbrt(cr * cr) + std::cbrt(cl * cl), 1.5);
    out.critical = std::sqrt(2.0) * (cr + cl);
    if (std::abs(out.jump - out.critical) <= rel_tol * out.critical)
        out.cls = Stability::CriticalExcluded;
    else if (out.jump > out.threshold)
        out.cls = Stability::Stable;
    else
        out.cls = Stability::NotCovered;
    return out;
}

} // namespace vsheet::model
