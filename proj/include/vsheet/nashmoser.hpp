#pragma once

#include "vsheet/compat.hpp"
#include "vsheet/fields.hpp"
#include "vsheet/linearized.hpp"
#include "vsheet/norms.hpp"

#include <string>
#include <vector>

namespace vsheet::nashmoser {

using linearized::Side;

struct SchemeParams {
    /// regularity index; desk runs use small values
    double alpha = 3.0;
    double theta0 = 1.0;
    /// smallness budget of the inductive bounds
    double delta = 1e-2;
    double lambda = 1.0;
    int max_iters = 8;
    /// monitored band of s
    int s_min = 2, s_max = 4;
    /// order of the eikonal residual norm in the inductive bounds
    int eikonal_order = 3;
    double kappa0 = 0.5;
    /// R_T profile width; <= 0 means min(1, L2/2)
    double lift_width = -1.0;
    /// full state history and the exponent fits
    bool monitor = true;
    /// consecutive growth steps of [dV]_{s_min} that abort the run
    int divergence_window = 3;
    /// step whose quadratic error is cross-checked with the integral remainder; < 0 disables
    int oracle_step = 1;
    /// stop once [L - f^a]_{s_min} <= stop_tol; < 0 disables
    double stop_tol = 0.0;
    /// theta is set per step; widths scaled for short desk horizons
    norms::SmootherSpec smoother{1.0, 8.0, 0.02, 0.1};
    linearized::SchemeParams linear;

    double alpha_tilde() const { return alpha + 4; }
    double mu() const { return alpha_tilde() + 3; }
    void validate() const;
};

/// theta_i = sqrt(theta0^2 + i)
double theta(const SchemeParams& p, int i);
/// theta_{i+1} - theta_i
double theta_step(const SchemeParams& p, int i);

double exponent_L1(double s, double alpha);
double exponent_L2(double s, double alpha);
double exponent_L3(double s, double alpha);
double exponent_L4(double s, double alpha);

/// S_theta_i; i < 0 gives the zero operator
Field smoother(const Field& u, const SchemeParams& p, int i);

struct IterationState {
    int i = 0;
    Field V, Psi, psi;            // 8, 2 components and the front trace
    Field E, E_tilde, E_hat;      // errors accumulated over steps < i
    Field e, e_tilde, e_hat;      // errors of step i - 1
    Field sum_f, sum_g, sum_h;    // sources summed over steps < i
    Field f, g, h;                // sources of step i - 1; h holds (h+, h-)

    static IterationState zero(const GridSpec& g);
};

struct ModifiedState {
    Field V, Psi, psi;
    linearized::BasicState basic;
    /// trace equalities of m, n, Psi, sup |E(V, Psi)| and sup over t < 0
    double jump_m = 0, jump_n = 0, jump_front = 0, eikonal = 0, past = 0;
};

ModifiedState modified_state(const compat::VProblem& vp, const IterationState& st, const SchemeParams& p);

struct Sources {
    Field f, g, h;
    /// running-sum checks of the source recursions after adding this step
    double fg_f = 0, fg_g = 0, plus = 0, minus = 0;
};

Sources source_terms(const compat::VProblem& vp, const IterationState& st, const SchemeParams& p);

struct LinearStep {
    Field Vdot, dpsi;
    std::vector<std::string> warnings;
};

LinearStep linear_step(const ModifiedState& mod, const Sources& src, const SchemeParams& p);

struct FrontLift {
    Field dPsi;
    /// sup |dPsi^+-|_0 - dpsi| before the traces are reset
    double trace_gap = 0;
};

/// upwind marching of the interior front transport equations
FrontLift front_lift(const compat::VProblem& vp, const ModifiedState& mod, const LinearStep& step, const Sources& src,
                     const SchemeParams& p);

/// pieces of the step errors, each the defining difference evaluated directly
struct StepErrors {
    Field dV, dPsi, dpsi;
    Field e1, e2, e3, eD, e_identity, e_solve;
    Field te1, te2, te3, te_solve;
    Field he1, he2, he3, he_transport;
    Field e, e_tilde, e_hat;
    Field L_next, B_next, E_next;
    double lb = 0, lb2 = 0;
};

/// advances st to i + 1 and accumulates the errors
StepErrors reconstruct_and_account(const compat::VProblem& vp, IterationState& st, const ModifiedState& mod,
                                   const LinearStep& step, const FrontLift& lift, const Sources& src,
                                   const SchemeParams& p);

struct BandNorms {
    int s = 0;
    double dV = 0, dPsi = 0, dpsi = 0;
    double e = 0, e_tilde = 0, e_hat = 0;
    double e1 = 0, e2 = 0, e3 = 0, eD = 0;
    double res_L = 0, res_B = 0;
    /// inductive bounds: step size, interior residual, boundary residual, each measured value and bound
    double Ha = 0, Ha_bound = 0, Hb = 0, Hb_bound = 0, Hc = 0, Hc_bound = 0;
};

struct IterationRow {
    int i = 0;
    double theta = 0, Delta = 0;
    std::vector<BandNorms> band;
    double res_E = 0, Hd_bound = 0;
    double fg_f = 0, fg_g = 0, plus = 0, minus = 0, lb = 0, lb2 = 0;
    double jump_m = 0, jump_n = 0, jump_front = 0, mod_eikonal = 0;
    double past = 0, trace_gap = 0, solve_defect = 0;
    double seconds = 0;

    const BandNorms& at(int s) const;
    bool H_pass() const;
    /// largest telescoping residual
    double telescoping() const;
};

struct ExponentFit {
    std::string error; // e1, e2, e3, eD
    int s = 0;
    double slope = 0, exponent = 0;
    int points = 0;
    bool within() const { return points < 2 || slope <= exponent; }
};

struct OracleCheck {
    int step = -1;
    double relative = 0;
};

struct NashMoserResult {
    enum class Status { Completed, Converged, Diverged };
    Status status = Status::Completed;
    std::string diagnostic;
    std::vector<IterationRow> rows;
    std::vector<ExponentFit> fits;
    OracleCheck oracle;
    IterationState final_state;
    std::vector<IterationState> history;
    double seconds = 0;

    /// [L(V_i, Psi_i) - f^a]_s for i = 1..rows.size()
    std::vector<double> residual(int s) const;
};

/// fits log([err_k]_s / Delta_k) against log theta_k and compares with L_j(s) - 1
std::vector<ExponentFit> inductive_monitor(const std::vector<IterationRow>& rows, const SchemeParams& p);

NashMoserResult run_nash_moser(const compat::ApproxSolution& a, const SchemeParams& p);

/// recomputes the inductive bounds of every row for p.delta and p.alpha; theta_i stays that of the run
void apply_bounds(NashMoserResult& r, const SchemeParams& p);

std::string to_string(NashMoserResult::Status s);

void write_iteration_csv(const std::string& path, const NashMoserResult& r, const SchemeParams& p);
std::string manifest_json(const NashMoserResult& r, const SchemeParams& p, const GridSpec& g);

std::string params_to_json(const SchemeParams& p);
SchemeParams params_from_json(const std::string& s);

} // namespace vsheet::nashmoser
