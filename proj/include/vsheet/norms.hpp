#pragma once

#include "vsheet/fields.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace vsheet::norms {

struct NormParams {
    int s = 0;
    double lambda = 1.0;

    void validate() const;
};

/// sum_{|alpha|<=s} lambda^{s-|alpha|} ||e^{-lambda t} d^alpha u||, full gradient (t,x1,x2), or (t,x1) on traces
double weighted_norm(const Field& u, const NormParams& p);

/// [u]_{s,lambda,T}: sum_{|alpha|+2k<=s} lambda^{s-|alpha|-2k} ||e^{-lambda t} d_*^alpha d_2^k u||.
/// Time differences are conjugated by the weight.
double aniso_norm(const Field& u, const NormParams& p);

/// [v]_{s,*,T} with lambda-power factors and no exponential weight; [u]_{s,lambda,T} = [e^{-lambda t}u]_{s,*,T}
double aniso_star_norm(const Field& v, const NormParams& p);

/// Visits d_t^a0 d_1^a1 (sigma d_2)^a2 d_2^k u for a0+a1+a2+2k <= s with plain differences.
void for_each_aniso_derivative(const Field& u, int s,
                               const std::function<void(const Field&, int a0, int a1, int a2, int k)>& visit);

/// multiplies by e^{-lambda t}
Field exp_weight(const Field& u, double lambda);

/// (int ||u(.,x2)||^2_{H^s_lambda(omega_T)} dx2)^{1/2}
double l2_hs_norm(const Field& u, const NormParams& p);

/// ||e^{-lambda t} u||_{L^q}, q = 2p
double lq_weighted(const Field& u, double lambda, int q);
double sup_norm(const Field& u);

/// W^{1,tan} (order 1) and W^{2,tan} (order 2) max norms
double tan_lipschitz_norm(const Field& u, int order);
/// ||u||_inf + ||grad u||_inf with the full gradient
double w1inf_norm(const Field& u);

struct SmootherSpec {
    double theta = 1.0;
    /// x1 cutoff |k| <= k_scale * theta, tapering to zero at 2 k_scale theta
    double k_scale = 2.0;
    /// causal time kernel width t_scale / theta
    double t_scale = 1.0;
    /// one-sided x2 kernel width x2_scale * sigma(x2) / theta^2
    double x2_scale = 1.0;
    /// vanishing moments of the t and x2 kernels
    int moments = 4;
    bool smooth_t = true, smooth_x1 = true, smooth_x2 = true;

    void validate() const;
};

/// S_theta. Preserves vanishing for t < 0 and acts on the x2 = 0 row through traces only.
Field smooth(const Field& u, const SmootherSpec& spec);

/// central difference of S_theta in theta
Field smooth_dtheta(const Field& u, const SmootherSpec& spec, double h = 1e-3);

/// Rough test field for the smoothing law: t^4 e^{-x2^2} sum_k (k pi/L1)^{-(alpha+1/2+eps)} cos(k pi x1/L1 + 0.7k).
/// Its [.]_alpha norm stays bounded under refinement of the x1 grid.
Field rough_field(const GridSpec& g, double alpha, int kmax, double eps = 0.05);

struct SmoothingLawRow {
    int alpha, beta;
    std::vector<double> thetas, values;
    /// least-squares slope of log [S_theta u - u]_beta against log theta
    double slope;
};

struct SmoothingLawConfig {
    GridSpec grid{};
    std::vector<int> alphas{4}, betas{2, 3};
    std::vector<double> thetas{2, 4, 8, 16};
    double lambda = 1.0;
    int kmax = 160;
    SmootherSpec smoother{};
    /// returns a configuration whose x1 content is rough enough for the x1 terms to dominate
    static SmoothingLawConfig standard();
};

std::vector<SmoothingLawRow> smoothing_law_study(const SmoothingLawConfig& cfg);

/// g(t,x1) rho(x2/delta), rho = 1 at 0 and 0 beyond 1; delta <= 0 selects min(1, L2/2)
Field lift_boundary(const Field& g, double delta = -1.0);

/// Random smooth compactly supported fields for oracles and the inequality harness.
struct CorpusEntry {
    double amp = 1.0;
    double x1c = 0.0, w1 = 0.5, k1 = 1.0, phase = 0.0;
    double w2 = 0.5;
    double omega = 1.0;
    /// 1 = profile exp(-(x2/w2)^2); 0 = profile vanishing linearly at x2 = 0
    bool boundary_nonzero = true;

    double eval(double t, double x1, double x2, double T) const;
};

std::vector<CorpusEntry> make_corpus(int count, std::uint64_t seed);
Field sample(const CorpusEntry& e, const GridSpec& g, int ncomp = 1);

struct HarnessRow {
    std::string inequality;
    double lambda;
    int refinement;
    double constant;
    int samples;
};

struct HarnessConfig {
    GridSpec grid{};
    std::vector<double> lambdas{1, 2, 4, 8};
    int refinements = 2;
    int corpus_size = 8;
    std::uint64_t seed = 1;
};

std::vector<HarnessRow> appendix_a_harness(const HarnessConfig& cfg);
void write_harness_csv(const std::string& path, const std::vector<HarnessRow>& rows);

} // namespace vsheet::norms
