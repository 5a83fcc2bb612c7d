#include "vsheet/fields.hpp"
#include "vsheet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include "json.hpp"
#include <sstream>

namespace vsheet {

void GridSpec::validate() const {
    if (!(T > 0 && L1 > 0 && L2 > 0)) throw std::invalid_argument("grid extents must be positive");
    if (nt < 4 || n1 < 4 || n2 < 4) throw std::invalid_argument("grid counts must be >= 4");
    if (ghost < 2) throw std::invalid_argument("at least two ghost slices are required");
}

void GridSpec::check_cfl(double speed, double cfl) const {
    if (!(cfl > 0 && cfl <= 1)) throw CflError("cfl must lie in (0,1]");
    const double lim = cfl * std::min(dx1(), dx2()) / speed;
    if (dt() > lim * (1 + 1e-12))
        throw CflError("CFL violated: dt=" + std::to_string(dt()) + " limit=" + std::to_string(lim));
}

GridSpec GridSpec::refined(int level) const {
    GridSpec g = *this;
    const int f = 1 << level;
    g.nt *= f;
    g.n1 *= f;
    g.n2 *= f;
    return g;
}

Field::Field(const GridSpec& g, int ncomp, FieldKind kind) : grid_(g), kind_(kind), nc_(ncomp) {
    if (ncomp < 1) throw std::invalid_argument("field needs at least one component");
    nT_ = kind == FieldKind::Slice ? 1 : g.time_nodes();
    n1_ = g.x1_nodes();
    n2_ = kind == FieldKind::Trace ? 1 : g.x2_nodes();
    data_.assign(static_cast<std::size_t>(nT_) * n1_ * n2_ * nc_, 0.0);
}

double& Field::at2(int a, int b, int c) {
    return kind_ == FieldKind::Slice ? (*this)(0, a, b, c) : (*this)(a, b, 0, c);
}
double Field::at2(int a, int b, int c) const {
    return kind_ == FieldKind::Slice ? (*this)(0, a, b, c) : (*this)(a, b, 0, c);
}

Field Field::component(int c) const { return components(c, 1); }

Field Field::components(int first, int count) const {
    if (first < 0 || first + count > nc_) throw std::out_of_range("component range");
    Field out(grid_, count, kind_);
    const std::size_t n = nodes();
    for (std::size_t p = 0; p < n; ++p)
        for (int c = 0; c < count; ++c) out.data_[p * count + c] = data_[p * nc_ + first + c];
    return out;
}

void Field::set_component(int c, const Field& src, int src_c) {
    if (src.nodes() != nodes()) throw std::invalid_argument("set_component: shape mismatch");
    const std::size_t n = nodes();
    for (std::size_t p = 0; p < n; ++p) data_[p * nc_ + c] = src.data_[p * src.nc_ + src_c];
}

void Field::set_components(int first, const Field& src) {
    for (int c = 0; c < src.nc_; ++c) set_component(first + c, src, c);
}

Field Field::trace() const {
    if (kind_ != FieldKind::Volume) throw std::invalid_argument("trace of a non-volume field");
    Field out(grid_, nc_, FieldKind::Trace);
    for (int it = 0; it < nT_; ++it)
        for (int j = 0; j < n1_; ++j)
            for (int c = 0; c < nc_; ++c) out(it, j, 0, c) = (*this)(it, j, 0, c);
    return out;
}

Field Field::time_slice(int it) const {
    if (kind_ != FieldKind::Volume) throw std::invalid_argument("time_slice of a non-volume field");
    Field out(grid_, nc_, FieldKind::Slice);
    std::copy_n(data_.begin() + index(it, 0, 0), out.size(), out.data_.begin());
    return out;
}

void Field::set_time_slice(int it, const Field& s) {
    if (s.kind_ != FieldKind::Slice || s.nc_ != nc_ || s.n1_ != n1_ || s.n2_ != n2_)
        throw std::invalid_argument("set_time_slice: shape mismatch");
    std::copy(s.data_.begin(), s.data_.end(), data_.begin() + index(it, 0, 0));
}

void Field::fill(const std::function<double(double, double, double, int)>& f) {
    for (int it = 0; it < nT_; ++it)
        for (int j = 0; j < n1_; ++j)
            for (int k = 0; k < n2_; ++k)
                for (int c = 0; c < nc_; ++c) (*this)(it, j, k, c) = f(t(it), x1(j), x2(k), c);
}

bool Field::same_shape(const Field& o) const {
    return kind_ == o.kind_ && nc_ == o.nc_ && nT_ == o.nT_ && n1_ == o.n1_ && n2_ == o.n2_;
}

void Field::require_same_shape(const Field& o, const char* what) const {
    if (!same_shape(o)) throw std::invalid_argument(std::string(what) + ": field shape mismatch");
}

Field& Field::operator+=(const Field& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}
Field& Field::operator-=(const Field& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}
Field& Field::operator*=(double a) {
    for (double& x : data_) x *= a;
    return *this;
}
Field& Field::axpy(double a, const Field& x) {
    require_same_shape(x, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
    return *this;
}
Field& Field::mul_scalar_field(const Field& s) {
    if (s.nc_ != 1 || s.nodes() != nodes()) throw std::invalid_argument("mul_scalar_field: shape mismatch");
    const std::size_t n = nodes();
    for (std::size_t p = 0; p < n; ++p)
        for (int c = 0; c < nc_; ++c) data_[p * nc_ + c] *= s.data_[p];
    return *this;
}

double Field::max_abs() const {
    double m = 0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
}

double Field::max_abs_past() const {
    if (kind_ == FieldKind::Slice) return 0.0;
    double m = 0;
    for (int it = 0; it < nT_ && grid_.t(it) < 0; ++it) {
        auto b = data_.begin() + index(it, 0, 0), e = b + static_cast<std::ptrdiff_t>(n1_) * n2_ * nc_;
        for (auto p = b; p != e; ++p) m = std::max(m, std::abs(*p));
    }
    return m;
}

void Field::zero_past() {
    if (kind_ == FieldKind::Slice) return;
    for (int it = 0; it < nT_ && grid_.t(it) < 0; ++it)
        std::fill_n(data_.begin() + index(it, 0, 0), static_cast<std::size_t>(n1_) * n2_ * nc_, 0.0);
}

Field operator+(Field a, const Field& b) { return a += b; }
Field operator-(Field a, const Field& b) { return a -= b; }
Field operator*(double s, Field a) { return a *= s; }

namespace fields {

double smooth_step_down(double s) {
    if (s <= 0) return 1.0;
    if (s >= 1) return 0.0;
    return 1.0 - s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}

double sigma_weight(double x2) {
    if (x2 < 0) throw DomainError("sigma_weight: negative x2");
    if (x2 <= 0.5) return x2;
    if (x2 >= 1.0) return 1.0;
    const double s = 2.0 * (x2 - 0.5);
    return 0.5 + s * (0.5 + s * s * (2.0 + s * (-3.5 + 1.5 * s)));
}

namespace {

struct AxisLayout {
    int count;
    std::size_t stride;
    double h;
    bool periodic;
};

AxisLayout layout(const Field& f, Axis ax) {
    const GridSpec& g = f.grid();
    const std::size_t nc = f.ncomp();
    switch (ax) {
    case Axis::T: return {f.nT(), static_cast<std::size_t>(f.n1()) * f.n2() * nc, g.dt(), false};
    case Axis::X1: return {f.n1(), static_cast<std::size_t>(f.n2()) * nc, g.dx1(), g.x1_periodic};
    case Axis::X2: return {f.n2(), nc, g.dx2(), false};
    }
    return {};
}

const char* axis_name(Axis ax) { return ax == Axis::T ? "t" : ax == Axis::X1 ? "x1" : "x2"; }

// Applies a per-line kernel along `ax`. kernel(in, out, count, stride) works on one line.
template <class K>
Field along(const Field& f, Axis ax, K kernel) {
    const AxisLayout L = layout(f, ax);
    Field out = f;
    const std::size_t total = f.size();
    const std::size_t block = L.stride * L.count;
    const double* in = f.data().data();
    double* o = out.data().data();
    for (std::size_t b0 = 0; b0 < total; b0 += block)
        for (std::size_t off = 0; off < L.stride; ++off) kernel(in + b0 + off, o + b0 + off, L);
    return out;
}

} // namespace

void require_capacity(const Field& f, Axis ax, int order) {
    if (order <= 0) return;
    const AxisLayout L = layout(f, ax);
    if (L.count < std::max(3, 2 * order + 1))
        throw ResolutionError(std::string("insufficient resolution along ") + axis_name(ax) + " for order " +
                              std::to_string(order));
}

Field diff(const Field& f, Axis ax) {
    require_capacity(f, ax, 1);
    return along(f, ax, [](const double* in, double* out, const AxisLayout& L) {
        const int n = L.count;
        const std::size_t s = L.stride;
        const double r = 1.0 / (2.0 * L.h);
        auto u = [&](int i) { return in[static_cast<std::size_t>(i) * s]; };
        for (int i = 1; i + 1 < n; ++i) out[i * s] = (u(i + 1) - u(i - 1)) * r;
        if (L.periodic) {
            out[0] = (u(1) - u(n - 1)) * r;
            out[(n - 1) * s] = (u(0) - u(n - 2)) * r;
        } else {
            out[0] = (-3 * u(0) + 4 * u(1) - u(2)) * r;
            out[(n - 1) * s] = (3 * u(n - 1) - 4 * u(n - 2) + u(n - 3)) * r;
        }
    });
}

Field diff_t_conjugated(const Field& f, double lambda) {
    require_capacity(f, Axis::T, 1);
    return along(f, Axis::T, [lambda](const double* in, double* out, const AxisLayout& L) {
        const int n = L.count;
        const std::size_t s = L.stride;
        const double r = 1.0 / (2.0 * L.h), e = std::exp(-lambda * L.h), ei = 1.0 / e;
        auto u = [&](int i) { return in[static_cast<std::size_t>(i) * s]; };
        for (int i = 1; i + 1 < n; ++i) out[i * s] = (e * u(i + 1) - ei * u(i - 1)) * r;
        out[0] = (-3 * u(0) + 4 * e * u(1) - e * e * u(2)) * r;
        out[(n - 1) * s] = (3 * u(n - 1) - 4 * ei * u(n - 2) + ei * ei * u(n - 3)) * r;
    });
}

Field d_t(const Field& f) { return diff(f, Axis::T); }
Field d_1(const Field& f) { return diff(f, Axis::X1); }
Field d_2(const Field& f) { return diff(f, Axis::X2); }

Field sigma_d2(const Field& f) {
    Field out = d_2(f);
    const int nc = f.ncomp();
    for (int it = 0; it < out.nT(); ++it)
        for (int j = 0; j < out.n1(); ++j)
            for (int k = 0; k < out.n2(); ++k) {
                const double w = sigma_weight(f.x2(k));
                for (int c = 0; c < nc; ++c) out(it, j, k, c) *= w;
            }
    return out;
}

Field tangential_derivative(const Field& f, std::array<int, 3> a) {
    require_capacity(f, Axis::T, a[0]);
    require_capacity(f, Axis::X1, a[1]);
    require_capacity(f, Axis::X2, a[2]);
    Field out = f;
    for (int i = 0; i < a[2]; ++i) out = sigma_d2(out);
    for (int i = 0; i < a[1]; ++i) out = d_1(out);
    for (int i = 0; i < a[0]; ++i) out = d_t(out);
    return out;
}

Field eikonal_residual(const Field& U, const Field& Phi) {
    if (U.ncomp() != 4 || Phi.ncomp() != 1 || U.nodes() != Phi.nodes())
        throw std::invalid_argument("eikonal_residual: expects U[4] and scalar Phi on the same grid");
    Field r = d_t(Phi);
    const Field p1 = d_1(Phi);
    const std::size_t n = Phi.nodes();
    for (std::size_t p = 0; p < n; ++p) r.data()[p] += U.data()[4 * p + 2] * p1.data()[p] - U.data()[4 * p + 3];
    return r;
}

double FrontPair::trace_mismatch() const {
    double m = 0;
    const Field a = Phi_plus.trace(), b = Phi_minus.trace();
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max({m, std::abs(a.data()[i] - phi.data()[i]), std::abs(b.data()[i] - phi.data()[i])});
    return m;
}

void FrontPair::check_bounds() const {
    check_front_bound(Phi_plus, +1, kappa0);
    check_front_bound(Phi_minus, -1, kappa0);
}

void check_front_bound(const Field& Phi, int side, double kappa0) {
    const Field d = d_2(Phi);
    double worst = 1e300;
    for (double x : d.data()) worst = std::min(worst, side * x);
    if (worst < kappa0)
        throw FrontDegeneracyError("front degeneracy: " + std::string(side > 0 ? "+" : "-") +
                                   "d2Phi reaches " + std::to_string(worst) + " < kappa0 = " + std::to_string(kappa0));
}

namespace {

// 2nd-order upwind-biased derivative of a periodic or bounded line
double upwind_d1(const std::vector<double>& u, int j, double vel, double h, bool periodic) {
    const int n = static_cast<int>(u.size());
    auto at = [&](int i) {
        if (periodic) return u[((i % n) + n) % n];
        return u[std::clamp(i, 0, n - 1)];
    };
    if (!periodic && (j < 2 || j > n - 3)) {
        if (j == 0) return (-3 * at(0) + 4 * at(1) - at(2)) / (2 * h);
        if (j == n - 1) return (3 * at(n - 1) - 4 * at(n - 2) + at(n - 3)) / (2 * h);
        return (at(j + 1) - at(j - 1)) / (2 * h);
    }
    if (vel >= 0) return (3 * at(j) - 4 * at(j - 1) + at(j - 2)) / (2 * h);
    return (-3 * at(j) + 4 * at(j + 1) - at(j + 2)) / (2 * h);
}

} // namespace

Field enforce_eikonal(const Field& U, const Field& Phi0, int side, double kappa0, double cfl) {
    const GridSpec& g = U.grid();
    if (U.ncomp() != 4 || U.kind() != FieldKind::Volume) throw std::invalid_argument("enforce_eikonal: U must be a 4-component volume field");
    if (Phi0.kind() != FieldKind::Slice || Phi0.ncomp() != 1) throw std::invalid_argument("enforce_eikonal: Phi0 must be a scalar slice");
    {
        const Field d = d_2(Phi0);
        for (double x : d.data())
            if (side * x < 7.0 / 8.0 - 1e-12) throw FrontDegeneracyError("initial front violates +-d2Phi0 >= 7/8");
    }
    Field Phi = Field::volume(g, 1);
    for (int it = 0; it <= g.t0(); ++it) Phi.set_time_slice(it, Phi0);

    const int N1 = g.x1_nodes(), N2 = g.x2_nodes();
    double vmax = 1e-12;
    for (std::size_t p = 0; p < U.nodes(); ++p) vmax = std::max(vmax, std::abs(U.data()[4 * p + 2]));
    const int nsub = std::max(1, static_cast<int>(std::ceil(g.dt() * vmax / (cfl * g.dx1()))));
    const double h = g.dt() / nsub;

    std::vector<double> line(N1), k1(N1), stage(N1), acc(N1);
    for (int k = 0; k < N2; ++k) {
        for (int j = 0; j < N1; ++j) line[j] = Phi0.at2(j, k);
        for (int it = g.t0(); it + 1 < g.time_nodes(); ++it) {
            for (int sub = 0; sub < nsub; ++sub) {
                auto rhs = [&](const std::vector<double>& ph, double frac, std::vector<double>& out) {
                    for (int j = 0; j < N1; ++j) {
                        const double v = (1 - frac) * U(it, j, k, 2) + frac * U(it + 1, j, k, 2);
                        const double u = (1 - frac) * U(it, j, k, 3) + frac * U(it + 1, j, k, 3);
                        out[j] = u - v * upwind_d1(ph, j, v, g.dx1(), g.x1_periodic);
                    }
                };
                const double f0 = static_cast<double>(sub) / nsub, f1 = static_cast<double>(sub + 1) / nsub;
                // SSP-RK3
                rhs(line, f0, k1);
                for (int j = 0; j < N1; ++j) stage[j] = line[j] + h * k1[j];
                rhs(stage, f1, k1);
                for (int j = 0; j < N1; ++j) stage[j] = 0.75 * line[j] + 0.25 * (stage[j] + h * k1[j]);
                rhs(stage, 0.5 * (f0 + f1), k1);
                for (int j = 0; j < N1; ++j) line[j] = line[j] / 3.0 + 2.0 / 3.0 * (stage[j] + h * k1[j]);
            }
            for (int j = 0; j < N1; ++j) Phi(it + 1, j, k) = line[j];
        }
    }
    check_front_bound(Phi, side, kappa0);
    return Phi;
}

namespace {

double trap_weight(int i, int n) { return (i == 0 || i == n - 1) ? 0.5 : 1.0; }

double weighted_sq_sum(const Field& f, double lambda) {
    const GridSpec& g = f.grid();
    const bool vol_t = f.kind() != FieldKind::Slice;
    const bool has_x2 = f.kind() != FieldKind::Trace;
    const double w1 = g.dx1();
    double s = 0;
    for (int it = 0; it < f.nT(); ++it) {
        const double wt = vol_t ? trap_weight(it, f.nT()) * g.dt() * std::exp(-2 * lambda * f.t(it)) : 1.0;
        for (int j = 0; j < f.n1(); ++j) {
            const double wj = g.x1_periodic ? w1 : trap_weight(j, f.n1()) * w1;
            for (int k = 0; k < f.n2(); ++k) {
                const double wk = has_x2 ? trap_weight(k, f.n2()) * g.dx2() : 1.0;
                double q = 0;
                for (int c = 0; c < f.ncomp(); ++c) q += f(it, j, k, c) * f(it, j, k, c);
                s += wt * wj * wk * q;
            }
        }
    }
    return s;
}

} // namespace

double l2_norm(const Field& f) { return std::sqrt(weighted_sq_sum(f, 0.0)); }
double l2_norm_weighted(const Field& f, double lambda) { return std::sqrt(weighted_sq_sum(f, lambda)); }

std::string grid_to_json(const GridSpec& g) {
    nlohmann::json j{{"T", g.T}, {"L1", g.L1}, {"L2", g.L2}, {"nt", g.nt}, {"n1", g.n1}, {"n2", g.n2},
                     {"x1_periodic", g.x1_periodic}, {"ghost", g.ghost}};
    return j.dump();
}

GridSpec grid_from_json(const std::string& s) {
    const auto j = nlohmann::json::parse(s);
    GridSpec g;
    g.T = j.value("T", g.T);
    g.L1 = j.value("L1", g.L1);
    g.L2 = j.value("L2", g.L2);
    g.nt = j.value("nt", g.nt);
    g.n1 = j.value("n1", g.n1);
    g.n2 = j.value("n2", g.n2);
    g.x1_periodic = j.value("x1_periodic", g.x1_periodic);
    g.ghost = j.value("ghost", g.ghost);
    return g;
}

namespace {
const char kMagic[4] = {'V', 'S', 'F', '1'};
const char* kind_name(FieldKind k) { return k == FieldKind::Volume ? "volume" : k == FieldKind::Trace ? "trace" : "slice"; }
} // namespace

void write_field(const std::string& path, const Field& f) {
    nlohmann::json h = nlohmann::json::parse(grid_to_json(f.grid()));
    nlohmann::json head{{"grid", h}, {"ncomp", f.ncomp()}, {"kind", kind_name(f.kind())},
                        {"shape", {f.nT(), f.n1(), f.n2(), f.ncomp()}}, {"layout", "row-major t,x1,x2,comp; float64 LE"}};
    const std::string hs = head.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path);
    os.write(kMagic, 4);
    const std::uint64_t len = hs.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    os.write(reinterpret_cast<const char*>(f.data().data()), static_cast<std::streamsize>(f.size() * sizeof(double)));
}

Field read_field(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a field file: " + path);
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string hs(len, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(len));
    const auto head = nlohmann::json::parse(hs);
    const GridSpec g = grid_from_json(head["grid"].dump());
    const std::string k = head["kind"];
    const FieldKind kind = k == "volume" ? FieldKind::Volume : k == "trace" ? FieldKind::Trace : FieldKind::Slice;
    Field f(g, head["ncomp"].get<int>(), kind);
    is.read(reinterpret_cast<char*>(f.data().data()), static_cast<std::streamsize>(f.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated field payload: " + path);
    return f;
}

void write_csv_slice(const std::string& path, const Field& f, int it, int comp) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "# x1,x2,value at t=" << f.t(it) << " component " << comp << "\n";
    os << "x1,x2,value\n" << std::setprecision(17);
    for (int j = 0; j < f.n1(); ++j)
        for (int k = 0; k < f.n2(); ++k) os << f.x1(j) << ',' << f.x2(k) << ',' << f(it, j, k, comp) << '\n';
}

} // namespace fields
} // namespace vsheet
