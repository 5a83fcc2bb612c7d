#pragma once

#include "vsheet/fields.hpp"
#include "vsheet/linearized.hpp"
#include "vsheet/model.hpp"

#include <array>
#include <limits>
#include <string>
#include <vector>

namespace vsheet::compat {

using linearized::Side;
using model::BackgroundSheet;

struct CompatibilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CompatConfig {
    /// highest time-derivative order of the trace recursion
    int max_order = 3;
    /// pass threshold for the boundary jump conditions
    double tol = 1e-10;
    /// pass threshold for the 1/x2-weighted integrals; infinite = reported only
    double integral_limit = std::numeric_limits<double>::infinity();
    /// sup |Udot0|, sup |phi0| above which data are not small
    double small_data = 0.1;
    /// data support radius (unit half-disk)
    double support_radius = 1.0;
    double support_tol = 1e-12;
    double initial_front_bound = 7.0 / 8.0;
    double front_bound = 3.0 / 4.0;
    /// time derivatives of the residual checked at t = 0 (at most 2)
    int j_max = 2;
    double residual_tol = 1e-2;
    /// norm orders for the measured estimates: approximate solution and data
    int approx_norm_order = 2;
    int data_norm_order = 3;
    /// time cutoff equals 1 on |t| <= time_flat T and vanishes at |t| = T
    double time_flat = 0.25;
};

/// Udot0 on both sides (4-component slices), phi0 on the x1 nodes
struct InitialData {
    BackgroundSheet background;
    GridSpec grid;
    Field U0_plus, U0_minus;
    std::vector<double> phi0;
    int mu = 2;

    static InitialData zero(const BackgroundSheet& bg, const GridSpec& g, int mu = 2);
    const Field& U0(Side s) const { return s == Side::Right ? U0_plus : U0_minus; }
    /// shapes, smallness and supports; throws std::invalid_argument
    void validate(const CompatConfig& cfg) const;
};

struct ExtendedFront {
    Field Phi0; // scalar slice, shared by both sides
    double norm = 0, data_norm = 0;
    double support = 0, support_bound = 0;
    double ratio() const { return data_norm > 0 ? norm / data_norm : 0.0; }
};

/// exp(-<xi> x2) extension in x1-Fourier space times a radial cutoff from r = 1 to min(1 + lambda_max T/2, L1)
ExtendedFront extend_front(const std::vector<double>& phi0, const GridSpec& g, const BackgroundSheet& bg,
                           int norm_order = 3);

/// ||phi||_{H^s} on the periodic x1 grid
double hs_norm_1d(const std::vector<double>& phi, const GridSpec& g, int s);

/// d_t^l Udot|_{t=0} for l <= L and d_t^l Phidot|_{t=0} for l <= L + 1, per side
struct TimeTraces {
    int L = 0;
    std::array<std::vector<Field>, 2> U, Phi;

    const Field& U_l(Side s, int l) const { return U[static_cast<int>(s)][l]; }
    const Field& Phi_l(Side s, int l) const { return Phi[static_cast<int>(s)][l]; }
    /// largest distance from the origin of a node where the trace is nonzero
    double support(Side s, int l, bool front) const;
};

TimeTraces time_derivative_traces(const InitialData& data, int L, const CompatConfig& cfg = {});
/// with an already extended front
TimeTraces time_derivative_traces(const InitialData& data, const Field& Phi0, int L, const CompatConfig& cfg = {});

struct ConditionEntry {
    std::string quantity; // "Phi", "m", "n"
    int l = 0, j = 0;
    double violation = 0;
};

struct IntegralEntry {
    std::string quantity;
    int j = 0, order = 0;
    double value = 0;
};

struct CompatReport {
    int mu = 0;
    double tol = 0, integral_limit = 0;
    std::vector<ConditionEntry> conditions;
    std::vector<IntegralEntry> integrals;
    bool compatible = true;
    double max_violation = 0;

    double violation(const std::string& q, int l, int j) const;
    double integral(const std::string& q, int j) const;
    std::string to_json() const;
};

CompatReport check_compatibility(const InitialData& data, int mu, const CompatConfig& cfg = {});
CompatReport check_compatibility(const TimeTraces& tr, int mu, const CompatConfig& cfg = {});

/// midpoint rule from x2 = dx2/2 of |u|^2 dx1 dx2 / x2, u scalar slice
double weighted_boundary_integral(const Field& u);

struct ApproxSolution {
    BackgroundSheet background;
    Field U_plus, U_minus;     // full states, 4 components
    Field Phi_plus, Phi_minus; // full fronts
    Field phi;                 // trace
    Field f_a;                 // 8 components, zero for t < 0
    CompatReport report;

    double eikonal_residual = 0, boundary_residual = 0, front_mismatch = 0;
    /// sup over x of |d_t^j L(U^a, grad Phi^a)| at t = 0, j = 0..min(j_max, mu - 1)
    std::vector<double> residual_dt;
    double front_min = 0;
    double norm_approx = 0, norm_data = 0, norm_f = 0;
    double support_U = 0, support_Phi = 0, support_f = 0;

    const GridSpec& grid() const { return U_plus.grid(); }
    const Field& U(Side s) const { return s == Side::Right ? U_plus : U_minus; }
    const Field& Phi(Side s) const { return s == Side::Right ? Phi_plus : Phi_minus; }
    linearized::BasicState basic_state(double kappa0 = 0.5) const;
    /// U^a, Phi^a, phi^a and f^a in the field binary format
    void write(const std::string& dir) const;
};

ApproxSolution build_approximate(const InitialData& data, const CompatConfig& cfg = {});

/// L(U, grad Phi) for U = Ubar + Udot, Phi = +-x2 + Phidot, differentiating the perturbations only
Field residual_L(const Field& U, const Field& Phi, Side s, const BackgroundSheet& bg);

/// (v+ - v-) d1phi - (u+ - u-), d_tphi + v+ d1phi - u+, (m+ + n+) - (m- + n-)
Field boundary_B(const Field& U_plus_trace, const Field& U_minus_trace, const Field& phi);

struct VResidual {
    double L = 0, E = 0, B = 0, front = 0, past = 0;
    double max() const;
};

class VProblem {
public:
    explicit VProblem(const ApproxSolution& a);

    const ApproxSolution& approx() const { return *a_; }
    const Field& f_a() const { return a_->f_a; }

    /// V: 8 components, Psi: 2 components
    Field L(const Field& V, const Field& Psi) const;
    Field E(const Field& V, const Field& Psi) const;
    Field B(const Field& V_trace, const Field& psi) const;
    /// L - f^a, E, B, Psi traces - psi, and values for t < 0
    VResidual residual(const Field& V, const Field& Psi, const Field& psi) const;

    /// L(U^a + V, grad(Phi^a + Psi)) and the eikonal residual of (U^a + V, Phi^a + Psi) compared with
    /// L(V,Psi) - f^a (t >= 0) and E(V,Psi); max entrywise differences
    struct Substitution {
        double interior = 0, eikonal = 0;
    };
    Substitution substitution(const Field& V, const Field& Psi) const;

private:
    const ApproxSolution* a_;
    Field L0_;
};

VProblem assemble_V_problem(const ApproxSolution& a);

} // namespace vsheet::compat
