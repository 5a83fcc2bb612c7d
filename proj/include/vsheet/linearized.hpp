#pragma once

#include "vsheet/fields.hpp"
#include "vsheet/model.hpp"

#include <Eigen/Dense>
#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace vsheet::linearized {

using model::BackgroundSheet;
using model::PressureLaw;

struct BoundaryRankError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TraceMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Side { Right = 0, Left = 1 };

inline int side_sign(Side s) { return s == Side::Right ? 1 : -1; }

/// U_{r,l} = Ubar_{r,l} + Udot, Phi_{r,l} = +-x2 + Phidot on one grid
struct BasicState {
    Field U_r, U_l;
    Field Phi_r, Phi_l;
    BackgroundSheet background;
    double kappa0 = 0.5;
    /// smallness bound the caller claims for [(Udot, Phidot)]_{10}; checked by `perturbation_norm`
    double K = 0.0;

    const GridSpec& grid() const { return U_r.grid(); }
    const PressureLaw& law() const { return background.law; }
    const Field& U(Side s) const { return s == Side::Right ? U_r : U_l; }
    const Field& Phi(Side s) const { return s == Side::Right ? Phi_r : Phi_l; }

    static BasicState from_background(const BackgroundSheet& bg, const GridSpec& g);

    /// 8 components (Udot_r, Udot_l) and 2 components (Phidot_r, Phidot_l)
    Field U_dot() const;
    Field Phi_dot() const;
    bool is_background() const;

    /// [(Udot, Phidot)]_{s,lambda,T}
    double perturbation_norm(int s, double lambda) const;

    struct Report {
        double min_mass = 0, front_margin = 0, eikonal = 0;
        /// constraints on x2 = 0: Phi_r - Phi_l, normal velocity jump, front transport, total mass
        double boundary_front = 0, boundary_normal = 0, boundary_transport = 0, boundary_mass = 0;
        bool within(double tol) const;
    };
    /// throws DomainError on non-positive masses and FrontDegeneracyError when the front bound fails
    Report validate() const;
};

/// Udot, Phidot from caller-supplied perturbations; u is replaced by d_tPhi + v d_1Phi so the
/// discrete eikonal equations hold exactly. Perturbation fields may be empty (zero).
BasicState make_basic_state(const BackgroundSheet& bg, const GridSpec& g, const Field& Udot_r, const Field& Udot_l,
                            const Field& Phidot_r, const Field& Phidot_l, double kappa0 = 0.5);

/// d_tU + A1(U)d_1U + (1/d2Phi)[A2(U) - d_tPhi - d_1Phi A1(U)]d_2U on one side
Field nonlinear_operator(const Field& U, const Field& Phi, const PressureLaw& law, double kappa0 = 0.0);

/// both sides stacked: 8 components
Field nonlinear_operator_L(const BasicState& bs);

/// L(U,grad Phi)V: frozen-coefficient first-order part
Field frozen_operator(const Field& U, const Field& Phi, const Field& V, const PressureLaw& law);

/// C(U, grad U, grad Phi)V
Field c_term(const Field& U, const Field& Phi, const Field& V, const PressureLaw& law);

/// L'_e V̇ per side, 8 components in and out
Field effective_linear_op(const BasicState& bs, const Field& Vdot);

/// d/dkappa L(U + kappa V, Phi + kappa Psi) at kappa = 0, one side
Field linearized_operator(const Field& U, const Field& Phi, const Field& V, const Field& Psi, const PressureLaw& law);

/// V - (Psi/d2Phi) d2U per side; V has 8 components, Psi 2
Field good_unknown(const Field& V, const Field& Psi, const BasicState& bs);

/// P(phi)V̇|_{x2=0}: (V1+V2, V4 - d1Phi V3) per side, 4 components
Field noncharacteristic_trace(const BasicState& bs, const Field& Vdot_trace);

/// b, M, b_sharp at one boundary node
struct BoundaryPoint {
    Eigen::Matrix<double, 3, 2> b;
    Eigen::Matrix<double, 3, 8> M;
    Eigen::Vector3d b_sharp;
};

class BoundaryCoefficients {
public:
    explicit BoundaryCoefficients(const BasicState& bs);
    BoundaryPoint at(int it, int j) const;
    /// M blockdiag(T_r, T_l)
    Eigen::Matrix<double, 3, 8> M_W(int it, int j) const;

private:
    const BasicState* bs_;
    Field tr_r_, tr_l_, d2U_r_, d2U_l_, d2Phi_r_, d2Phi_l_, d1phi_, d1phi_l_;
};

/// b grad psi + b_sharp psi + M V̇|_{x2=0}; 3-component trace
Field boundary_op(const BasicState& bs, const Field& Vdot_trace, const Field& psi);

/// Coefficients of A0 d_tW + A1 d_1W + I2 d_2W + A0 C W = F at one node
struct WPoint {
    Mat4 T, T_inv;
    Vec4 A0;      // diagonal
    Mat4 B1;      // T^{-1} A1(U) T
    Mat4 A1;      // A0 B1
    Mat4 C;       // T^{-1}[d_tT + A1 d_1T + Ã2 d_2T + C_e T]
    Vec4 normal;  // diagonal of T^{-1} Ã2 T
    double offdiag = 0; // largest off-diagonal entry of T^{-1} Ã2 T
    double speed1 = 0;  // spectral radius of T^{-1} A1 T
};

class WForm {
public:
    explicit WForm(const BasicState& bs);

    const BasicState& state() const { return *bs_; }
    bool constant() const { return constant_; }

    /// coefficients on time slice `it`, indexed j * n2 + k; cached
    const std::vector<WPoint>& slice(Side s, int it) const;

    Field to_W(const Field& Vdot) const;
    Field from_W(const Field& W) const;
    /// F = A0 T^{-1} f
    Field source(const Field& f) const;
    /// A0 d_tW + A1 d_1W + I2 d_2W + A0 C W - F
    Field residual(const Field& W, const Field& F) const;
    /// largest off-diagonal normal entry over the grid
    double eikonal_defect() const;

    /// coefficient fields for small grids: A0 (4 per side), A1 (16), K = A0 C (16)
    struct Materialized {
        Field A0, A1, K;
    };
    Materialized materialize() const;

private:
    const BasicState* bs_;
    bool constant_;
    mutable std::map<std::pair<int, int>, std::vector<WPoint>> cache_;
};

struct SchemeParams {
    double cfl = 0.8;
    /// fourth-difference dissipation in x1 for W and psi, relative to the local speed
    double dissipation = 0.1;
    /// reciprocal condition number below which the incoming-trace solve is rejected
    double rank_tol = 1e-12;
    /// reciprocal condition number below which least squares is used and a warning logged
    double warn_tol = 1e-8;
};

struct StepRecord {
    double t;
    double trace_l2; // ||W^nc|_{x2=0}(t)||_{L^2(x1)}
    double psi_l2;
};

struct LinearizedSolution {
    Field W, Vdot;     // 8 components
    Field psi;         // trace
    Field traces;      // P(phi)V̇|_{x2=0}, 4 components
    std::vector<StepRecord> steps;
    std::vector<std::string> warnings;
};

/// Far-boundary data: W values imposed at x2 = L2 for incoming components; empty = zero.
LinearizedSolution solve_linearized(const BasicState& bs, const Field& f, const Field& g,
                                    const SchemeParams& p = {}, const Field& far = Field());

/// slope of log trace_l2 over the second half of the run
double growth_rate(const LinearizedSolution& sol);

/// terms of the L^2 estimate on [t_min, t]
struct EnergyTerms {
    double t = 0;
    double lhs_V = 0, lhs_trace = 0, lhs_psi = 0;
    double rhs_f = 0, rhs_g = 0;
    double lhs() const { return lhs_V + lhs_trace + lhs_psi; }
    double rhs() const { return rhs_f + rhs_g; }
    double ratio() const { return rhs() > 0 ? lhs() / rhs() : 0.0; }
};

EnergyTerms energy_estimate(const LinearizedSolution& sol, const Field& f, const Field& g, double lambda);
/// cumulative terms at every non-negative time node
std::vector<EnergyTerms> energy_series(const LinearizedSolution& sol, const Field& f, const Field& g, double lambda);
void write_energy_csv(const std::string& path, const std::vector<EnergyTerms>& rows, double lambda);

struct MonitorRow {
    std::string id;
    int s;
    double lambda, lhs, rhs;
    double ratio() const { return rhs > 0 ? lhs / rhs : 0.0; }
};

std::vector<MonitorRow> estimate_monitors(const LinearizedSolution& sol, const BasicState& bs, const Field& f,
                                          const Field& g, int s, double lambda);
void write_monitor_csv(const std::string& path, const std::vector<MonitorRow>& rows);

struct TangentialSystem {
    int l = 0;
    std::vector<std::array<int, 2>> betas; // (alpha0, alpha1)
    std::vector<Field> W, F, G;            // per beta: D^beta W, F^(l), G^(l)
    std::vector<Field> psi;
    /// max over beta of ||stacked residual - D^beta(base residual)|| / ||D^beta W||_{L^2}
    double consistency = 0;
    /// largest commutator source ||F^(l) - D^beta F|| over beta
    double commutator = 0;
    double lhs = 0, rhs = 0;
};

/// l-th order tangential system of the W form; base F and g are the W-form data
TangentialSystem tangential_system(const WForm& wf, const Field& W, const Field& psi, const Field& F, const Field& g,
                                   int l, double lambda);

struct DualMatrices {
    Eigen::Matrix<double, 3, 8> M1, N1, N, M;
    Mat4 normal_r, normal_l;
    /// max entry of blockdiag(normal_r, normal_l) - (M1^T M + N1^T N) on the diagonal blocks
    double block_residual = 0;
    /// max entry of M1^T M + N1^T N on the r-l cross blocks
    double cross_residual = 0;
};

DualMatrices dual_matrices(const BasicState& bs, int it, int j, double tol = 1e-10);

} // namespace vsheet::linearized
