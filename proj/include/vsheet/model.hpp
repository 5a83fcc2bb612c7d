#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <utility>

namespace vsheet {

using Mat4 = Eigen::Matrix4d;
using Vec4 = Eigen::Vector4d;

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

namespace model {

/// p(m,n) = (gamma-1)(m+n)^gamma.
struct PressureLaw {
    double gamma = 2.0;

    double p(double m, double n) const;
    /// p_m = p_n
    double p_n(double m, double n) const;
    /// d(p_n)/dm = d(p_n)/dn
    double p_nn(double m, double n) const;
};

/// U = (m, n, v, u)
struct PhaseState {
    double m = 1.0, n = 1.0, v = 0.0, u = 0.0;

    Vec4 vec() const { return {m, n, v, u}; }
    static PhaseState from(const Vec4& U) { return {U(0), U(1), U(2), U(3)}; }
};

void require_valid(double m, double n);

std::pair<Mat4, Mat4> flux_jacobians(const PhaseState& U, const PressureLaw& law);

/// directional derivatives dA1(U)X, dA2(U)X
std::pair<Mat4, Mat4> flux_jacobian_derivs(const PhaseState& U, const Vec4& X, const PressureLaw& law);

double sound_speed(double m, double n, const PressureLaw& law);

Mat4 symmetrizer(const PhaseState& U, const PressureLaw& law);

/// (1/d2Phi)[A2 - dtPhi I - d1Phi A1]
Mat4 normal_matrix(const PhaseState& U, double dtPhi, double d1Phi, double d2Phi, const PressureLaw& law);

/// closed form of S times normal_matrix once dtPhi = u - v d1Phi
Mat4 symmetrized_normal(const PhaseState& U, double d1Phi, double d2Phi, const PressureLaw& law);

struct Diagonalizer {
    Mat4 T, T_inv;
};

Diagonalizer diagonalizer(const PhaseState& U, double d1Phi, const PressureLaw& law);

Eigen::Vector3d rankine_hugoniot_residual(const PhaseState& Up, const PhaseState& Um, double dphi_dt,
                                          double dphi_dx1);

enum class Stability { Stable, CriticalExcluded, NotCovered };

std::string to_string(Stability s);

struct BackgroundSheet {
    PhaseState right{1, 1, 4.2, 0};
    PhaseState left{1, 1, -4.2, 0};
    PressureLaw law{};
    double neighborhood = 0.1;

    double c_r() const { return sound_speed(right.m, right.n, law); }
    double c_l() const { return sound_speed(left.m, left.n, law); }
    /// max of |v|+c, |u|+c over the box of half-width `neighborhood` around each side
    double lambda_max() const;
    void validate(double tol = 1e-12) const;

    static BackgroundSheet symmetric(double m, double n, double vbar, const PressureLaw& law = {});
};

struct StabilityVerdict {
    Stability cls;
    double jump;      // v_r - v_l
    double threshold; // (c_r^{2/3} + c_l^{2/3})^{3/2}
    double critical;  // sqrt(2)(c_r + c_l)
    double margin() const { return jump - threshold; }
};

StabilityVerdict check_supersonic(const BackgroundSheet& bg, double rel_tol = 1e-9);

} // namespace model
} // namespace vsheet
