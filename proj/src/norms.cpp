#include "vsheet/norms.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <fftw3.h>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

namespace vsheet::norms {

using fields::Axis;

void NormParams::validate() const {
    if (s < 0) throw std::invalid_argument("norm order must be non-negative");
    if (lambda < 1.0) throw std::invalid_argument("lambda must be >= 1");
}

Field exp_weight(const Field& u, double lambda) {
    Field out = u;
    const std::size_t per = out.size() / out.nT();
    for (int it = 0; it < out.nT(); ++it) {
        const double w = std::exp(-lambda * out.t(it));
        for (std::size_t q = 0; q < per; ++q) out.data()[it * per + q] *= w;
    }
    return out;
}

namespace {

bool has_x2(const Field& u) { return u.kind() != FieldKind::Trace; }
bool has_t(const Field& u) { return u.kind() != FieldKind::Slice; }

// Walks d_t^a0 d_1^a1 (tan x2)^a2 d_2^k u over a0+a1+a2+2k <= s keeping one field per chain level.
// `tan_x2` selects sigma d_2 (anisotropic) or d_2 (full gradient, then k is unused).
template <class Visit>
void walk(const Field& u, int s, bool aniso, bool conj_t, double lambda, Visit visit) {
    const int kmax = (aniso && has_x2(u)) ? s / 2 : 0;
    const int a2max = has_x2(u) ? s : 0;
    const int a0max = has_t(u) ? s : 0;
    Field Fk = u;
    for (int k = 0; k <= kmax; ++k) {
        if (k > 0) Fk = fields::d_2(Fk);
        Field G = Fk;
        for (int a2 = 0; a2 <= std::min(a2max, s - 2 * k); ++a2) {
            if (a2 > 0) G = aniso ? fields::sigma_d2(G) : fields::d_2(G);
            Field H = G;
            for (int a1 = 0; a1 <= s - 2 * k - a2; ++a1) {
                if (a1 > 0) H = fields::d_1(H);
                Field I = H;
                for (int a0 = 0; a0 <= std::min(a0max, s - 2 * k - a2 - a1); ++a0) {
                    if (a0 > 0) I = conj_t ? fields::diff_t_conjugated(I, lambda) : fields::d_t(I);
                    visit(I, a0, a1, a2, k);
                }
            }
        }
    }
}

} // namespace

double weighted_norm(const Field& u, const NormParams& p) {
    p.validate();
    double sum = 0;
    walk(u, p.s, false, false, p.lambda, [&](const Field& d, int a0, int a1, int a2, int) {
        sum += std::pow(p.lambda, p.s - a0 - a1 - a2) * fields::l2_norm_weighted(d, p.lambda);
    });
    return sum;
}

double aniso_norm(const Field& u, const NormParams& p) {
    p.validate();
    double sum = 0;
    walk(u, p.s, true, true, p.lambda, [&](const Field& d, int a0, int a1, int a2, int k) {
        sum += std::pow(p.lambda, p.s - a0 - a1 - a2 - 2 * k) * fields::l2_norm_weighted(d, p.lambda);
    });
    return sum;
}

double aniso_star_norm(const Field& v, const NormParams& p) {
    if (p.s < 0) throw std::invalid_argument("norm order must be non-negative");
    double sum = 0;
    walk(v, p.s, true, false, p.lambda, [&](const Field& d, int a0, int a1, int a2, int k) {
        sum += std::pow(p.lambda, p.s - a0 - a1 - a2 - 2 * k) * fields::l2_norm(d);
    });
    return sum;
}

void for_each_aniso_derivative(const Field& u, int s,
                               const std::function<void(const Field&, int, int, int, int)>& visit) {
    if (s < 0) throw std::invalid_argument("norm order must be non-negative");
    walk(u, s, true, false, 1.0, visit);
}

double l2_hs_norm(const Field& u, const NormParams& p) {
    p.validate();
    if (u.kind() != FieldKind::Volume) throw std::invalid_argument("l2_hs_norm needs a volume field");
    // tangential H^s_lambda per x2 level, trapezoid in x2
    std::vector<double> level(u.n2(), 0.0);
    const GridSpec& g = u.grid();
    for (int k = 0; k < u.n2(); ++k) {
        Field tr = Field::trace_of(g, u.ncomp());
        for (int it = 0; it < u.nT(); ++it)
            for (int j = 0; j < u.n1(); ++j)
                for (int c = 0; c < u.ncomp(); ++c) tr(it, j, 0, c) = u(it, j, k, c);
        level[k] = weighted_norm(tr, p);
    }
    double s = 0;
    for (int k = 0; k < u.n2(); ++k) s += ((k == 0 || k == u.n2() - 1) ? 0.5 : 1.0) * g.dx2() * level[k] * level[k];
    return std::sqrt(s);
}

double lq_weighted(const Field& u, double lambda, int q) {
    const Field w = exp_weight(u, lambda);
    const GridSpec& g = u.grid();
    double s = 0;
    for (int it = 0; it < w.nT(); ++it) {
        const double wt = has_t(w) ? ((it == 0 || it == w.nT() - 1) ? 0.5 : 1.0) * g.dt() : 1.0;
        for (int j = 0; j < w.n1(); ++j)
            for (int k = 0; k < w.n2(); ++k) {
                const double wk = has_x2(w) ? ((k == 0 || k == w.n2() - 1) ? 0.5 : 1.0) * g.dx2() : 1.0;
                for (int c = 0; c < w.ncomp(); ++c) s += wt * g.dx1() * wk * std::pow(std::abs(w(it, j, k, c)), q);
            }
    }
    return std::pow(s, 1.0 / q);
}

double sup_norm(const Field& u) { return u.max_abs(); }

double tan_lipschitz_norm(const Field& u, int order) {
    if (order != 1 && order != 2) throw std::invalid_argument("tan_lipschitz_norm order must be 1 or 2");
    double total = u.max_abs();
    auto axes_ok = [&](const std::array<int, 3>& a) {
        return (has_t(u) || a[0] == 0) && (has_x2(u) || a[2] == 0);
    };
    for (int o = 1; o <= order; ++o)
        for (int a0 = 0; a0 <= o; ++a0)
            for (int a1 = 0; a0 + a1 <= o; ++a1) {
                const std::array<int, 3> a{a0, a1, o - a0 - a1};
                if (!axes_ok(a)) continue;
                Field d = u;
                for (int i = 0; i < a[2]; ++i) d = fields::sigma_d2(d);
                for (int i = 0; i < a[1]; ++i) d = fields::d_1(d);
                for (int i = 0; i < a[0]; ++i) d = fields::d_t(d);
                total += d.max_abs();
            }
    if (order == 2 && has_x2(u)) total += fields::d_2(u).max_abs();
    return total;
}

double w1inf_norm(const Field& u) {
    double total = u.max_abs();
    if (has_t(u)) total += fields::d_t(u).max_abs();
    total += fields::d_1(u).max_abs();
    if (has_x2(u)) total += fields::d_2(u).max_abs();
    return total;
}

void SmootherSpec::validate() const {
    if (!(theta >= 1.0)) throw std::invalid_argument("smoother theta must be >= 1");
    if (moments < 1) throw std::invalid_argument("smoother needs at least one moment");
}

namespace {

// Weights w_q, q=0..Q, w = rho_q P(q) with sum_q w_q q^j = delta_{j0} for j < N.
std::vector<double> moment_kernel(int Q, int N) {
    std::vector<double> rho(Q + 1);
    for (int q = 0; q <= Q; ++q) {
        const double x = (q + 0.5) / (Q + 1.0);
        rho[q] = x * x * (1 - x) * (1 - x);
    }
    Eigen::MatrixXd A(N, N);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(N);
    b(0) = 1.0;
    for (int j = 0; j < N; ++j)
        for (int i = 0; i < N; ++i) {
            double s = 0;
            for (int q = 0; q <= Q; ++q) s += rho[q] * std::pow(static_cast<double>(q) / Q, i + j);
            A(j, i) = s;
        }
    const Eigen::VectorXd c = A.fullPivLu().solve(b);
    std::vector<double> w(Q + 1);
    for (int q = 0; q <= Q; ++q) {
        double P = 0;
        for (int i = 0; i < N; ++i) P += c(i) * std::pow(static_cast<double>(q) / Q, i);
        w[q] = rho[q] * P;
    }
    return w;
}

class KernelCache {
public:
    explicit KernelCache(int N) : N_(N) {}
    // empty vector means identity
    const std::vector<double>& get(int Q) {
        auto it = cache_.find(Q);
        if (it != cache_.end()) return it->second;
        std::vector<double> w;
        if (Q + 1 >= 2 * N_ && Q >= 2) w = moment_kernel(Q, N_);
        return cache_.emplace(Q, std::move(w)).first->second;
    }

private:
    int N_;
    std::map<int, std::vector<double>> cache_;
};

void smooth_t(Field& u, const SmootherSpec& sp) {
    const GridSpec& g = u.grid();
    const int Q = static_cast<int>(std::floor(sp.t_scale / sp.theta / g.dt()));
    KernelCache kc(sp.moments);
    const std::vector<double>& w = kc.get(Q);
    if (w.empty()) return;
    const std::size_t per = u.size() / u.nT();
    std::vector<double> out(u.size(), 0.0);
    for (int it = 0; it < u.nT(); ++it)
        for (int q = 0; q <= Q && it - q >= 0; ++q) {
            const double wq = w[q];
            const double* src = u.data().data() + (it - q) * per;
            double* dst = out.data() + it * per;
            for (std::size_t p = 0; p < per; ++p) dst[p] += wq * src[p];
        }
    u.data() = std::move(out);
}

void smooth_x1(Field& u, const SmootherSpec& sp) {
    const GridSpec& g = u.grid();
    if (!g.x1_periodic) throw std::invalid_argument("x1 smoothing requires a periodic x1 axis");
    const int n = u.n1();
    const int nh = n / 2 + 1;
    std::vector<double> filt(nh);
    const double kc = sp.k_scale * sp.theta, base = std::numbers::pi / g.L1;
    for (int m = 0; m < nh; ++m) filt[m] = fields::smooth_step_down(m * base / kc - 1.0) / n;
    bool all_one = true;
    for (int m = 0; m < nh; ++m) all_one = all_one && filt[m] * n == 1.0;
    if (all_one) return;

    double* in = fftw_alloc_real(n);
    fftw_complex* spec = fftw_alloc_complex(nh);
    fftw_plan fwd = fftw_plan_dft_r2c_1d(n, in, spec, FFTW_ESTIMATE);
    fftw_plan bwd = fftw_plan_dft_c2r_1d(n, spec, in, FFTW_ESTIMATE);
    const std::size_t stride = static_cast<std::size_t>(u.n2()) * u.ncomp();
    const std::size_t block = stride * n;
    for (std::size_t b0 = 0; b0 < u.size(); b0 += block)
        for (std::size_t off = 0; off < stride; ++off) {
            double* line = u.data().data() + b0 + off;
            bool zero = true;
            for (int j = 0; j < n; ++j) {
                in[j] = line[j * stride];
                zero = zero && in[j] == 0.0;
            }
            if (zero) continue;
            fftw_execute(fwd);
            for (int m = 0; m < nh; ++m) {
                spec[m][0] *= filt[m];
                spec[m][1] *= filt[m];
            }
            fftw_execute(bwd);
            for (int j = 0; j < n; ++j) line[j * stride] = in[j];
        }
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
    fftw_free(in);
    fftw_free(spec);
}

void smooth_x2(Field& u, const SmootherSpec& sp) {
    const GridSpec& g = u.grid();
    const int n2 = u.n2(), nc = u.ncomp();
    KernelCache kc(sp.moments);
    std::vector<int> Qk(n2);
    for (int k = 0; k < n2; ++k) {
        const double width = sp.x2_scale * fields::sigma_weight(g.x2(k)) / (sp.theta * sp.theta);
        Qk[k] = std::min(static_cast<int>(std::floor(width / g.dx2())), n2 - 1 - k);
    }
    std::vector<double> line(static_cast<std::size_t>(n2) * nc);
    for (int it = 0; it < u.nT(); ++it)
        for (int j = 0; j < u.n1(); ++j) {
            for (int k = 0; k < n2; ++k)
                for (int c = 0; c < nc; ++c) line[k * nc + c] = u(it, j, k, c);
            for (int k = 1; k < n2; ++k) {
                const std::vector<double>& w = kc.get(Qk[k]);
                if (w.empty()) continue;
                for (int c = 0; c < nc; ++c) {
                    double s = 0;
                    for (int q = 0; q <= Qk[k]; ++q) s += w[q] * line[(k + q) * nc + c];
                    u(it, j, k, c) = s;
                }
            }
        }
}

} // namespace

Field smooth(const Field& u, const SmootherSpec& spec) {
    spec.validate();
    Field out = u;
    if (spec.smooth_t && has_t(out)) smooth_t(out, spec);
    if (spec.smooth_x1) smooth_x1(out, spec);
    if (spec.smooth_x2 && has_x2(out)) smooth_x2(out, spec);
    return out;
}

Field smooth_dtheta(const Field& u, const SmootherSpec& spec, double h) {
    SmootherSpec a = spec, b = spec;
    a.theta = spec.theta + h;
    b.theta = std::max(1.0, spec.theta - h);
    Field d = smooth(u, a) - smooth(u, b);
    d *= 1.0 / (a.theta - b.theta);
    return d;
}

Field lift_boundary(const Field& g, double delta) {
    if (g.kind() != FieldKind::Trace) throw std::invalid_argument("lift_boundary expects a trace field");
    const GridSpec& gr = g.grid();
    if (delta <= 0) delta = std::min(1.0, gr.L2 / 2);
    Field u = Field::volume(gr, g.ncomp());
    for (int k = 0; k < u.n2(); ++k) {
        const double r = fields::smooth_step_down(gr.x2(k) / delta);
        if (r == 0.0) continue;
        for (int it = 0; it < u.nT(); ++it)
            for (int j = 0; j < u.n1(); ++j)
                for (int c = 0; c < u.ncomp(); ++c) u(it, j, k, c) = r * g(it, j, 0, c);
    }
    return u;
}

Field rough_field(const GridSpec& g, double alpha, int kmax, double eps) {
    const double base = std::numbers::pi / g.L1;
    std::vector<double> amp(kmax + 1);
    for (int k = 1; k <= kmax; ++k) amp[k] = std::pow(k * base, -(alpha + 0.5 + eps));
    std::vector<double> prof(g.x1_nodes());
    for (int j = 0; j < g.x1_nodes(); ++j) {
        double s = 0;
        for (int k = 1; k <= kmax; ++k) s += amp[k] * std::cos(k * base * g.x1(j) + 0.7 * k);
        prof[j] = s;
    }
    Field u = Field::volume(g);
    for (int it = g.t0() + 1; it < u.nT(); ++it) {
        const double t4 = std::pow(g.t(it), 4);
        for (int j = 0; j < u.n1(); ++j)
            for (int k = 0; k < u.n2(); ++k) u(it, j, k) = t4 * prof[j] * std::exp(-g.x2(k) * g.x2(k));
    }
    return u;
}

SmoothingLawConfig SmoothingLawConfig::standard() {
    SmoothingLawConfig c;
    c.grid.T = 1.0;
    c.grid.L1 = std::numbers::pi / 8;
    c.grid.L2 = 2.0;
    c.grid.nt = 32;
    c.grid.n1 = 1024;
    c.grid.n2 = 16;
    c.smoother.k_scale = 8.0;
    return c;
}

std::vector<SmoothingLawRow> smoothing_law_study(const SmoothingLawConfig& cfg) {
    std::vector<SmoothingLawRow> rows;
    for (int alpha : cfg.alphas) {
        const Field u = rough_field(cfg.grid, alpha, cfg.kmax);
        std::vector<Field> diffs;
        for (double th : cfg.thetas) {
            SmootherSpec sp = cfg.smoother;
            sp.theta = th;
            diffs.push_back(smooth(u, sp) - u);
        }
        for (int beta : cfg.betas) {
            SmoothingLawRow r{alpha, beta, cfg.thetas, {}, 0.0};
            double sx = 0, sy = 0, sxx = 0, sxy = 0;
            for (std::size_t i = 0; i < diffs.size(); ++i) {
                const double v = aniso_norm(diffs[i], {beta, cfg.lambda});
                r.values.push_back(v);
                const double x = std::log(cfg.thetas[i]), y = std::log(v);
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
            }
            const double n = static_cast<double>(diffs.size());
            r.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

double CorpusEntry::eval(double t, double x1, double x2, double T) const {
    if (t <= 0) return 0.0;
    const double on = 1.0 - std::cos(std::numbers::pi * std::min(t / T, 1.0));
    const double tt = on * on * std::cos(omega * t + phase);
    const double z = (x1 - x1c) / w1;
    const double xx = std::exp(-z * z) * std::cos(k1 * (x1 - x1c) + phase);
    const double y = x2 / w2;
    const double yy = boundary_nonzero ? std::exp(-y * y) : y * std::exp(-y * y);
    return amp * tt * xx * yy;
}

namespace {
double unit(std::mt19937_64& r) { return static_cast<double>(r() >> 11) * 0x1.0p-53; }
} // namespace

std::vector<CorpusEntry> make_corpus(int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<CorpusEntry> out;
    const double widths[] = {1.0, 0.5, 0.25, 0.125};
    for (int i = 0; i < count; ++i) {
        CorpusEntry e;
        e.amp = 0.5 + unit(rng);
        e.x1c = 0.4 * (unit(rng) - 0.5);
        e.w1 = widths[(i / 4) % 4] * (0.8 + 0.4 * unit(rng));
        e.k1 = 3.0 * unit(rng);
        e.phase = 2 * std::numbers::pi * unit(rng);
        e.w2 = widths[i % 4] * (0.9 + 0.2 * unit(rng));
        e.omega = 2.0 * unit(rng);
        e.boundary_nonzero = (i % 8) < 6;
        out.push_back(e);
    }
    return out;
}

Field sample(const CorpusEntry& e, const GridSpec& g, int ncomp) {
    Field f = Field::volume(g, ncomp);
    f.fill([&](double t, double x1, double x2, int c) { return e.eval(t, x1, x2, g.T) * (1.0 + 0.25 * c); });
    return f;
}

namespace {

struct Acc {
    double best = 0;
    int n = 0;
    void add(double num, double den) {
        if (den <= 0 || !(num == num)) return;
        best = std::max(best, num / den);
        ++n;
    }
};

} // namespace

std::vector<HarnessRow> appendix_a_harness(const HarnessConfig& cfg) {
    std::vector<HarnessRow> rows;
    const auto corpus = make_corpus(cfg.corpus_size, cfg.seed);
    for (int ref = 0; ref < cfg.refinements; ++ref) {
        const GridSpec g = cfg.grid.refined(ref);
        std::vector<Field> F;
        for (const auto& e : corpus) F.push_back(sample(e, g));
        for (double lam : cfg.lambdas) {
            std::map<std::string, Acc> acc;
            const double eT = std::exp(-lam * g.T);
            for (std::size_t i = 0; i < F.size(); ++i) {
                const Field& u = F[i];
                const Field& v = F[(i + 1) % F.size()];
                const Field tr = u.trace();
                for (int s : {2, 3})
                    acc["trace_s" + std::to_string(s)].add(weighted_norm(tr, {s - 1, lam}), aniso_norm(u, {s, lam}));
                acc["lift_s1"].add(aniso_norm(lift_boundary(tr), {2, lam}), weighted_norm(tr, {1, lam}));

                // anisotropic Gagliardo-Nirenberg, s = 4
                const double a4 = aniso_norm(u, {4, lam}), uinf = u.max_abs();
                walk(u, 2, true, false, lam, [&](const Field& d, int a0, int a1, int a2, int k) {
                    const int ord = a0 + a1 + a2 + 2 * k;
                    if (ord < 1 || ord > 2) return;
                    const int p = 4 / ord;
                    acc["gn2_p" + std::to_string(p)].add(lq_weighted(d, lam, 2 * p),
                                                         std::pow(uinf, 1.0 - 1.0 / p) * std::pow(a4, 1.0 / p));
                });
                Field uv = u;
                for (std::size_t q = 0; q < uv.size(); ++q) uv.data()[q] *= v.data()[q];
                for (int s : {2, 4})
                    acc["product2_s" + std::to_string(s)].add(
                        aniso_norm(uv, {s, lam}), uinf * aniso_norm(v, {s, lam}) + v.max_abs() * aniso_norm(u, {s, lam}));
                acc["product3_s3"].add(aniso_norm(uv, {3, lam}), tan_lipschitz_norm(u, 1) * aniso_norm(v, {3, lam}) +
                                                                     tan_lipschitz_norm(v, 1) * aniso_norm(u, {3, lam}));
                acc["sb2_linf"].add(eT * uinf, a4);
                acc["sb2_w1inf"].add(eT * w1inf_norm(u), aniso_norm(u, {6, lam}));
                acc["sb3_w1tan"].add(eT * tan_lipschitz_norm(u, 1), aniso_norm(u, {5, lam}));

                // boundary versions
                const Field h = v.trace();
                const double gH2 = weighted_norm(tr, {2, lam});
                acc["gn_boundary_p2"].add(lq_weighted(fields::d_1(tr), lam, 4),
                                          std::sqrt(tr.max_abs()) * std::sqrt(gH2));
                Field gh = tr;
                for (std::size_t q = 0; q < gh.size(); ++q) gh.data()[q] *= h.data()[q];
                acc["product_boundary_s2"].add(weighted_norm(gh, {2, lam}),
                                               tr.max_abs() * weighted_norm(h, {2, lam}) + h.max_abs() * gH2);
                acc["sb_boundary"].add(eT * tr.max_abs(), gH2);
            }
            for (auto& [name, a] : acc) rows.push_back({name, lam, ref, a.best, a.n});
        }
    }
    return rows;
}

void write_harness_csv(const std::string& path, const std::vector<HarnessRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "# inequality: name of the inequality check; constant: max over corpus of LHS/RHS\n";
    os << "inequality,lambda,refinement,constant,samples\n" << std::setprecision(10);
    for (const auto& r : rows) os << r.inequality << ',' << r.lambda << ',' << r.refinement << ',' << r.constant << ',' << r.samples << '\n';
}

} // namespace vsheet::norms
