#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsheet {

struct ResolutionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FrontDegeneracyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CflError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Truncated Omega_T. Time nodes t_i = (i - ghost) dt, i = 0..nt+ghost, so the
/// first `ghost` slices sit at negative time. x1 is periodic on [-L1, L1) by default.
struct GridSpec {
    double T = 1.0, L1 = 2.0, L2 = 2.0;
    int nt = 32, n1 = 32, n2 = 16;
    bool x1_periodic = true;
    int ghost = 2;

    double dt() const { return T / nt; }
    double dx1() const { return 2.0 * L1 / n1; }
    double dx2() const { return L2 / n2; }
    int time_nodes() const { return nt + 1 + ghost; }
    int x1_nodes() const { return x1_periodic ? n1 : n1 + 1; }
    int x2_nodes() const { return n2 + 1; }
    double t(int i) const { return (i - ghost) * dt(); }
    double x1(int j) const { return -L1 + j * dx1(); }
    double x2(int k) const { return k * dx2(); }
    /// index of t = 0
    int t0() const { return ghost; }

    void validate() const;
    /// dt <= cfl min(dx1,dx2)/speed
    void check_cfl(double speed, double cfl) const;
    /// same extents, counts scaled by 2^level
    GridSpec refined(int level) const;
    bool operator==(const GridSpec&) const = default;
};

/// Volume: (t, x1, x2). Trace: (t, x1) on {x2 = 0}. Slice: (x1, x2) at t = 0.
enum class FieldKind { Volume, Trace, Slice };

class Field {
public:
    Field() = default;
    Field(const GridSpec& g, int ncomp, FieldKind kind = FieldKind::Volume);

    static Field volume(const GridSpec& g, int ncomp = 1) { return Field(g, ncomp, FieldKind::Volume); }
    static Field trace_of(const GridSpec& g, int ncomp = 1) { return Field(g, ncomp, FieldKind::Trace); }
    static Field slice(const GridSpec& g, int ncomp = 1) { return Field(g, ncomp, FieldKind::Slice); }

    const GridSpec& grid() const { return grid_; }
    FieldKind kind() const { return kind_; }
    int ncomp() const { return nc_; }
    int nT() const { return nT_; }
    int n1() const { return n1_; }
    int n2() const { return n2_; }
    std::size_t size() const { return data_.size(); }
    std::size_t nodes() const { return data_.size() / nc_; }

    double t(int it) const { return kind_ == FieldKind::Slice ? 0.0 : grid_.t(it); }
    double x1(int j) const { return grid_.x1(j); }
    double x2(int k) const { return grid_.x2(k); }

    std::size_t index(int it, int j, int k, int c = 0) const {
        return ((static_cast<std::size_t>(it) * n1_ + j) * n2_ + k) * nc_ + c;
    }
    double& operator()(int it, int j, int k, int c = 0) { return data_[index(it, j, k, c)]; }
    double operator()(int it, int j, int k, int c = 0) const { return data_[index(it, j, k, c)]; }
    /// trace/slice shorthand
    double& at2(int a, int b, int c = 0);
    double at2(int a, int b, int c = 0) const;

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    Field component(int c) const;
    Field components(int first, int count) const;
    void set_component(int c, const Field& src, int src_c = 0);
    void set_components(int first, const Field& src);
    /// restriction to x2 = 0
    Field trace() const;
    /// time slice it as a Slice field
    Field time_slice(int it) const;
    void set_time_slice(int it, const Field& s);

    /// fill from f(t, x1, x2, c)
    void fill(const std::function<double(double, double, double, int)>& f);
    bool same_shape(const Field& o) const;
    void require_same_shape(const Field& o, const char* what) const;

    Field& operator+=(const Field& o);
    Field& operator-=(const Field& o);
    Field& operator*=(double a);
    Field& axpy(double a, const Field& x);
    /// pointwise product with a scalar field (1 component)
    Field& mul_scalar_field(const Field& s);

    double max_abs() const;
    /// max |u| over nodes with t < 0
    double max_abs_past() const;
    void zero_past();

private:
    GridSpec grid_{};
    FieldKind kind_ = FieldKind::Volume;
    int nc_ = 0, nT_ = 0, n1_ = 0, n2_ = 0;
    std::vector<double> data_;
};

Field operator+(Field a, const Field& b);
Field operator-(Field a, const Field& b);
Field operator*(double s, Field a);

namespace fields {

/// sigma(0)=0, sigma=x2 on [0,1/2], 1 beyond 1, quintic Hermite blend between
double sigma_weight(double x2);

/// smooth cutoff: 1 for s <= 0, 0 for s >= 1 (quintic)
double smooth_step_down(double s);

enum class Axis { T = 0, X1 = 1, X2 = 2 };

/// first derivative along one axis, 2nd order centered, one-sided at ends
Field diff(const Field& f, Axis ax);
/// conjugated time difference for e^{-lambda t}: returns e^{lambda t} d_t(e^{-lambda t} u) evaluated with
/// weights folded into the stencil
Field diff_t_conjugated(const Field& f, double lambda);
Field d_t(const Field& f);
Field d_1(const Field& f);
Field d_2(const Field& f);
Field sigma_d2(const Field& f);

/// d_t^a0 d_1^a1 (sigma d_2)^a2
Field tangential_derivative(const Field& f, std::array<int, 3> alpha);
/// check that an axis can carry `order` repeated first differences
void require_capacity(const Field& f, Axis ax, int order);

/// d_t Phi + v d_1 Phi - u, with U = (m,n,v,u)
Field eikonal_residual(const Field& U, const Field& Phi);

struct FrontPair {
    Field Phi_plus, Phi_minus, phi;
    double kappa0 = 0.5;

    /// Phi^+|0 = Phi^-|0 = phi and the sign bounds
    double trace_mismatch() const;
    void check_bounds() const;
};

/// +d2Phi >= kappa0 (side = +1) or -d2Phi >= kappa0 (side = -1)
void check_front_bound(const Field& Phi, int side, double kappa0);

/// Integrates d_t Phi = u - v d_1 Phi from Phi0 at t = 0. Ghost slices hold Phi0.
Field enforce_eikonal(const Field& U, const Field& Phi0, int side, double kappa0 = 0.5, double cfl = 0.5);

/// L2 quadrature weight sum: trapezoid in t and x2, uniform in periodic x1
double l2_norm(const Field& f);
double l2_norm_weighted(const Field& f, double lambda);

void write_field(const std::string& path, const Field& f);
Field read_field(const std::string& path);
/// rows x1,x2,value at time node it
void write_csv_slice(const std::string& path, const Field& f, int it, int comp);

std::string grid_to_json(const GridSpec& g);
GridSpec grid_from_json(const std::string& s);

} // namespace fields
} // namespace vsheet
