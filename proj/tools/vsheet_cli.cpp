#include "CLI11.hpp"
#include "json.hpp"

#include "vsheet/compat.hpp"
#include "vsheet/linearized.hpp"
#include "vsheet/model.hpp"
#include "vsheet/nashmoser.hpp"
#include "vsheet/norms.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vsheet;

namespace {

enum Exit : int { kOk = 0, kConfig = 1, kNotCovered = 2, kCritical = 3, kDiverged = 4, kRuntime = 5 };

constexpr int kSchema = 1;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config, out;
    std::optional<std::uint64_t> seed;
    std::vector<double> lambda_sweep;
    int refine = 0;
};

// ---------------------------------------------------------------- hashing, time

std::string sha1_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1)
        throw std::runtime_error("sha1 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

/// same digest as `git hash-object`
std::string git_blob_sha1(const std::string& bytes) {
    std::string blob = "blob " + std::to_string(bytes.size());
    blob.push_back('\0');
    return sha1_hex(blob + bytes);
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::string label(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
}

// uniform in [-1, 1] from the raw 64-bit stream, identical on every platform
double signed_unit(std::mt19937_64& rng) { return 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0; }

int thread_count() {
    const char* s = std::getenv("VSHEET_THREADS");
    if (!s || !*s) return 1;
    char* end = nullptr;
    const long n = std::strtol(s, &end, 10);
    if (*end != '\0' || n < 1) throw ConfigError(std::string("VSHEET_THREADS must be a positive integer, got '") + s + "'");
    return static_cast<int>(n);
}

// ---------------------------------------------------------------- session

class Session {
public:
    Session(std::string command, const Options& opt, json config, bool write_files)
        : command_(std::move(command)), opt_(opt), config_(std::move(config)), write_(write_files),
          started_(utc_now()) {
        json eff{{"command", command_}, {"config", config_}, {"refine", opt_.refine}};
        if (opt_.seed) eff["seed"] = *opt_.seed;
        if (!opt_.lambda_sweep.empty()) eff["lambda_sweep"] = opt_.lambda_sweep;
        config_hash_ = sha1_hex(eff.dump());
        if (write_) fs::create_directories(opt_.out);
    }

    bool writes() const { return write_; }
    std::uint64_t seed() const { return opt_.seed ? *opt_.seed : config_.value("seed", std::uint64_t{1}); }
    fs::path path(const std::string& name) const { return fs::path(opt_.out) / name; }

    void record(const std::string& name) {
        const std::string bytes = slurp(path(name));
        files_.push_back({{"path", name}, {"bytes", bytes.size()}, {"sha1", git_blob_sha1(bytes)}, {"written", utc_now()}});
    }

    void write_text(const std::string& name, const std::string& text) {
        {
            std::ofstream os(path(name), std::ios::binary);
            if (!os) throw std::runtime_error("cannot write " + path(name).string());
            os << text;
        }
        record(name);
    }

    void set(const std::string& key, json v) { extra_[key] = std::move(v); }

    int finish(int code, const std::string& error = "") {
        if (!write_) return code;
        json m{{"schema", kSchema},
               {"command", command_},
               {"config_path", opt_.config},
               {"config_sha1", config_hash_},
               {"seed", seed()},
               {"refine", opt_.refine},
               {"threads", threads_},
               {"started", started_},
               {"finished", utc_now()},
               {"exit_code", code},
               {"files", files_}};
        if (!error.empty()) m["error"] = error;
        for (auto& [k, v] : extra_.items()) m[k] = v;
        std::ofstream os(path("manifest.json"), std::ios::binary);
        os << m.dump(2) << '\n';
        return code;
    }

    void set_threads(int n) { threads_ = n; }

private:
    std::string command_;
    Options opt_;
    json config_;
    bool write_;
    std::string started_, config_hash_;
    json files_ = json::array();
    json extra_ = json::object();
    int threads_ = 1;
};

// ---------------------------------------------------------------- config blocks

json load_config(const std::string& path) {
    std::string text;
    try {
        text = slurp(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(path + ": top level must be an object");
    if (!j.contains("schema")) throw ConfigError(path + ": missing schema field");
    if (j["schema"] != kSchema) throw ConfigError(path + ": unsupported schema " + j["schema"].dump());
    return j;
}

void allow_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

model::PhaseState phase(const json& j, const std::string& where) {
    allow_keys(j, {"m", "n", "v", "u"}, where);
    return {j.value("m", 1.0), j.value("n", 1.0), j.at("v").get<double>(), j.value("u", 0.0)};
}

model::BackgroundSheet parse_background(const json& j) {
    allow_keys(j, {"symmetric", "right", "left", "gamma", "neighborhood"}, "background");
    const model::PressureLaw law{j.value("gamma", 2.0)};
    model::BackgroundSheet bg;
    if (j.contains("symmetric")) {
        const json& s = j["symmetric"];
        allow_keys(s, {"m", "n", "vbar"}, "background.symmetric");
        bg = model::BackgroundSheet::symmetric(s.value("m", 1.0), s.value("n", 1.0), s.at("vbar").get<double>(), law);
    } else {
        bg.right = phase(j.at("right"), "background.right");
        bg.left = phase(j.at("left"), "background.left");
        bg.law = law;
    }
    bg.neighborhood = j.value("neighborhood", bg.neighborhood);
    bg.validate();
    return bg;
}

GridSpec parse_grid(const json& j, int refine) {
    allow_keys(j, {"T", "L1", "L2", "nt", "n1", "n2", "x1_periodic", "ghost"}, "grid");
    GridSpec g = fields::grid_from_json(j.dump());
    g.validate();
    if (refine < 0) throw ConfigError("--refine must be >= 0");
    return g.refined(refine);
}

std::vector<double> lambdas_of(const json& cfg, const Options& opt, std::vector<double> fallback) {
    std::vector<double> l = !opt.lambda_sweep.empty() ? opt.lambda_sweep
                            : cfg.contains("lambdas") ? cfg["lambdas"].get<std::vector<double>>()
                                                      : std::move(fallback);
    if (l.empty()) throw ConfigError("at least one lambda is required");
    for (double x : l)
        if (!(x > 0)) throw ConfigError("lambda values must be positive");
    return l;
}

Options with_default_out(Options o) {
    if (o.out.empty()) o.out = "vsheet_out";
    return o;
}

/// runs f and turns every failure into a config error
template <class F>
auto configure(F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

// ---------------------------------------------------------------- stability-check

int cmd_stability_check(const Options& opt) {
    const json cfg = load_config(opt.config);
    const model::BackgroundSheet bg = configure([&] {
        allow_keys(cfg, {"schema", "seed", "background", "rel_tol"}, "config");
        return parse_background(cfg.at("background"));
    });
    const double rel_tol = configure([&] { return cfg.value("rel_tol", 1e-9); });
    Session ses("stability-check", opt, cfg, !opt.out.empty());
    ses.set_threads(thread_count());

    const model::StabilityVerdict v = model::check_supersonic(bg, rel_tol);
    const json out{{"classification", model::to_string(v.cls)},
                   {"jump", v.jump},
                   {"threshold", v.threshold},
                   {"critical", v.critical},
                   {"margin", v.margin()},
                   {"c_r", bg.c_r()},
                   {"c_l", bg.c_l()}};
    std::cout << out.dump(2) << '\n';
    if (ses.writes()) ses.write_text("verdict.json", out.dump(2) + "\n");
    const int code = v.cls == model::Stability::Stable ? kOk : v.cls == model::Stability::NotCovered ? kNotCovered : kCritical;
    return ses.finish(code);
}

// ---------------------------------------------------------------- linearized-run

struct SourceSpec {
    std::string kind = "boundary_modes";
    double amp = 1.0, ramp = 0.1;
    int modes = 3, row = 2;
};

SourceSpec parse_source(const json& j) {
    allow_keys(j, {"kind", "amp", "ramp", "modes", "row"}, "source");
    SourceSpec s;
    s.kind = j.value("kind", s.kind);
    s.amp = j.value("amp", s.amp);
    s.ramp = j.value("ramp", s.ramp);
    s.modes = j.value("modes", s.modes);
    s.row = j.value("row", s.row);
    if (s.kind != "zero" && s.kind != "boundary_modes" && s.kind != "interior_modes")
        throw ConfigError("source.kind must be zero, boundary_modes or interior_modes");
    if (!(s.ramp > 0) || s.modes < 1) throw ConfigError("source.ramp must be positive and source.modes >= 1");
    if (s.row < 0 || s.row > 2) throw ConfigError("source.row must be 0, 1 or 2");
    return s;
}

/// seeded sum of x1 Fourier modes switched on by a linear ramp
void make_sources(const SourceSpec& s, const GridSpec& g, std::uint64_t seed, Field& f, Field& gb) {
    f = Field::volume(g, 8);
    gb = Field::trace_of(g, 3);
    if (s.kind == "zero") return;
    std::mt19937_64 rng(seed);
    const int ncoef = s.kind == "boundary_modes" ? 1 : 8;
    std::vector<double> a(ncoef * s.modes), b(ncoef * s.modes);
    for (std::size_t q = 0; q < a.size(); ++q) {
        a[q] = signed_unit(rng);
        b[q] = signed_unit(rng);
    }
    const double k0 = std::numbers::pi / g.L1;
    auto profile = [&](double t, double x1, int c) {
        if (t <= 0) return 0.0;
        double sum = 0;
        for (int q = 0; q < s.modes; ++q)
            sum += a[c * s.modes + q] * std::cos((q + 1) * k0 * x1) + b[c * s.modes + q] * std::sin((q + 1) * k0 * x1);
        return s.amp * std::min(t / s.ramp, 1.0) * sum;
    };
    if (s.kind == "boundary_modes")
        gb.fill([&](double t, double x1, double, int c) { return c == s.row ? profile(t, x1, 0) : 0.0; });
    else
        f.fill([&](double t, double x1, double x2, int c) { return profile(t, x1, c) * std::exp(-x2); });
}

linearized::SchemeParams parse_scheme(const json& j) {
    allow_keys(j, {"cfl", "dissipation", "rank_tol", "warn_tol"}, "scheme");
    linearized::SchemeParams p;
    p.cfl = j.value("cfl", p.cfl);
    p.dissipation = j.value("dissipation", p.dissipation);
    p.rank_tol = j.value("rank_tol", p.rank_tol);
    p.warn_tol = j.value("warn_tol", p.warn_tol);
    if (!(p.cfl > 0 && p.cfl <= 1) || p.dissipation < 0) throw ConfigError("scheme: cfl in (0,1] and dissipation >= 0");
    return p;
}

std::string steps_csv(const linearized::LinearizedSolution& sol) {
    std::ostringstream os;
    os << "# t: time; trace_l2: L2(x1) norm of the noncharacteristic trace; psi_l2: L2(x1) norm of the front\n";
    os << "t,trace_l2,psi_l2\n" << std::setprecision(12);
    for (const auto& r : sol.steps) os << r.t << ',' << r.trace_l2 << ',' << r.psi_l2 << '\n';
    return os.str();
}

int cmd_linearized_run(const Options& opt) {
    const json cfg = load_config(opt.config);
    struct Setup {
        model::BackgroundSheet bg;
        std::optional<model::BackgroundSheet> probe;
        GridSpec g;
        linearized::SchemeParams sp;
        SourceSpec src;
        std::vector<double> lambdas;
        int monitor_s = 1;
        bool monitors = true;
    };
    const Setup su = configure([&] {
        allow_keys(cfg, {"schema", "seed", "background", "grid", "scheme", "source", "lambdas", "monitor_s", "monitors", "probe"},
                   "config");
        Setup s;
        s.bg = parse_background(cfg.at("background"));
        s.g = parse_grid(cfg.value("grid", json::object()), opt.refine);
        s.sp = parse_scheme(cfg.value("scheme", json::object()));
        s.src = parse_source(cfg.value("source", json::object()));
        s.lambdas = lambdas_of(cfg, opt, {5.0});
        s.monitor_s = cfg.value("monitor_s", 1);
        s.monitors = cfg.value("monitors", true);
        if (s.monitor_s < 0) throw ConfigError("monitor_s must be >= 0");
        if (cfg.contains("probe")) {
            allow_keys(cfg["probe"], {"background"}, "probe");
            s.probe = parse_background(cfg["probe"].at("background"));
        }
        return s;
    });
    Session ses("linearized-run", with_default_out(opt),
                cfg, true);
    ses.set_threads(thread_count());

    json summary;
    auto verdict = [](const model::BackgroundSheet& b) {
        const auto v = model::check_supersonic(b);
        return json{{"classification", model::to_string(v.cls)}, {"margin", v.margin()}};
    };
    summary["background"] = verdict(su.bg);
    try {
        Field f, gb;
        make_sources(su.src, su.g, ses.seed(), f, gb);
        const auto bs = linearized::BasicState::from_background(su.bg, su.g);
        const auto sol = linearized::solve_linearized(bs, f, gb, su.sp);
        ses.write_text("steps.csv", steps_csv(sol));
        summary["growth_rate"] = linearized::growth_rate(sol);
        summary["warnings"] = sol.warnings;

        std::vector<std::vector<linearized::EnergyTerms>> series;
        for (double lam : su.lambdas) series.push_back(linearized::energy_series(sol, f, gb, lam));
        {
            std::ostringstream os;
            os << "# t: time; per lambda: lhs and rhs of the weighted L2 energy estimate on [0, t] and their ratio\n";
            os << 't';
            for (double lam : su.lambdas) os << ",lhs_" << label(lam) << ",rhs_" << label(lam) << ",ratio_" << label(lam);
            os << '\n' << std::setprecision(12);
            for (std::size_t r = 0; r < series.front().size(); ++r) {
                os << series.front()[r].t;
                for (const auto& s : series) os << ',' << s[r].lhs() << ',' << s[r].rhs() << ',' << s[r].ratio();
                os << '\n';
            }
            ses.write_text("energy.csv", os.str());
        }
        json fin = json::object();
        for (std::size_t q = 0; q < su.lambdas.size(); ++q) fin[label(su.lambdas[q])] = series[q].back().ratio();
        summary["final_ratio"] = fin;

        if (su.monitors) {
            std::ostringstream os;
            os << "# id: monitored estimate; s: tangential order; lhs, rhs and ratio over the whole run\n";
            os << "id,s,lambda,lhs,rhs,ratio\n" << std::setprecision(12);
            for (double lam : su.lambdas)
                for (const auto& m : linearized::estimate_monitors(sol, bs, f, gb, su.monitor_s, lam))
                    os << m.id << ',' << m.s << ',' << m.lambda << ',' << m.lhs << ',' << m.rhs << ',' << m.ratio() << '\n';
            ses.write_text("monitors.csv", os.str());
        }

        if (su.probe) {
            const auto bs2 = linearized::BasicState::from_background(*su.probe, su.g);
            const auto sol2 = linearized::solve_linearized(bs2, f, gb, su.sp);
            ses.write_text("probe_steps.csv", steps_csv(sol2));
            const double r0 = linearized::growth_rate(sol), r1 = linearized::growth_rate(sol2);
            summary["probe"] = verdict(*su.probe);
            summary["probe"]["growth_rate"] = r1;
            summary["probe"]["rate_difference"] = r1 - r0;
            summary["probe"]["probe_larger"] = r1 > r0;
        }
    } catch (const std::exception& e) {
        summary["error"] = e.what();
        ses.write_text("summary.json", summary.dump(2) + "\n");
        std::cerr << "linearized-run: " << e.what() << '\n';
        return ses.finish(kRuntime, e.what());
    }
    ses.write_text("summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump(2) << '\n';
    return ses.finish(kOk);
}

// ---------------------------------------------------------------- nash-moser-run

struct DataSpec {
    std::string kind = "bump";
    double amp = 1e-3, radius = 0.4, c1 = 0.0, c2 = 0.6, front_amp = 0.0;
    int mu = 3;
};

DataSpec parse_data(const json& j) {
    allow_keys(j, {"kind", "amp", "radius", "center", "front_amp", "mu"}, "data");
    DataSpec d;
    d.kind = j.value("kind", d.kind);
    d.amp = j.value("amp", d.amp);
    d.radius = j.value("radius", d.radius);
    d.front_amp = j.value("front_amp", d.front_amp);
    d.mu = j.value("mu", d.mu);
    if (j.contains("center")) {
        const auto c = j["center"].get<std::vector<double>>();
        if (c.size() != 2) throw ConfigError("data.center must be [x1, x2]");
        d.c1 = c[0];
        d.c2 = c[1];
    }
    if (d.kind != "zero" && d.kind != "bump") throw ConfigError("data.kind must be zero or bump");
    if (!(d.radius > 0)) throw ConfigError("data.radius must be positive");
    return d;
}

double bump(double q) { return q < 1 ? std::exp(1 - 1 / (1 - q)) : 0.0; }

compat::InitialData make_data(const DataSpec& d, const model::BackgroundSheet& bg, const GridSpec& g, std::uint64_t seed) {
    compat::InitialData data = compat::InitialData::zero(bg, g, d.mu);
    if (d.kind == "zero") return data;
    std::mt19937_64 rng(seed);
    double cp[4], cm[4];
    for (double& c : cp) c = signed_unit(rng);
    for (double& c : cm) c = signed_unit(rng);
    const double r2 = d.radius * d.radius;
    auto shape = [&](double x1, double x2) { return bump(((x1 - d.c1) * (x1 - d.c1) + (x2 - d.c2) * (x2 - d.c2)) / r2); };
    data.U0_plus.fill([&](double, double x1, double x2, int c) { return d.amp * cp[c] * shape(x1, x2); });
    data.U0_minus.fill([&](double, double x1, double x2, int c) { return d.amp * cm[c] * shape(x1, x2); });
    for (int j = 0; j < g.x1_nodes(); ++j) data.phi0[j] = d.front_amp * bump(g.x1(j) * g.x1(j) / r2);
    return data;
}

compat::CompatConfig parse_compat(const json& j) {
    allow_keys(j, {"max_order", "tol", "small_data", "support_radius", "initial_front_bound", "front_bound", "j_max",
                   "residual_tol", "time_flat"},
               "compat");
    compat::CompatConfig c;
    c.max_order = j.value("max_order", c.max_order);
    c.tol = j.value("tol", c.tol);
    c.small_data = j.value("small_data", c.small_data);
    c.support_radius = j.value("support_radius", c.support_radius);
    c.initial_front_bound = j.value("initial_front_bound", c.initial_front_bound);
    c.front_bound = j.value("front_bound", c.front_bound);
    c.j_max = j.value("j_max", c.j_max);
    c.residual_tol = j.value("residual_tol", c.residual_tol);
    c.time_flat = j.value("time_flat", c.time_flat);
    return c;
}

double data_size(const compat::InitialData& d) {
    double s = std::max(d.U0_plus.max_abs(), d.U0_minus.max_abs());
    for (double x : d.phi0) s = std::max(s, std::abs(x));
    return s;
}

int cmd_nash_moser_run(const Options& opt) {
    const json cfg = load_config(opt.config);
    struct Setup {
        model::BackgroundSheet bg;
        GridSpec g;
        DataSpec data;
        compat::CompatConfig cc;
        nashmoser::SchemeParams p;
        std::vector<double> theta0, delta;
    };
    const Setup su = configure([&] {
        allow_keys(cfg, {"schema", "seed", "background", "grid", "data", "compat", "scheme", "sweep"}, "config");
        Setup s;
        s.bg = parse_background(cfg.at("background"));
        s.g = parse_grid(cfg.value("grid", json{{"T", 0.1}, {"L1", 2.0}, {"L2", 1.0}, {"nt", 16}, {"n1", 32}, {"n2", 16}}),
                         opt.refine);
        s.data = parse_data(cfg.value("data", json::object()));
        s.cc = parse_compat(cfg.value("compat", json::object()));
        s.p = nashmoser::params_from_json(cfg.value("scheme", json::object()).dump());
        if (!opt.lambda_sweep.empty()) {
            if (opt.lambda_sweep.size() != 1) throw ConfigError("nash-moser-run takes a single lambda");
            s.p.lambda = opt.lambda_sweep.front();
        }
        const json sw = cfg.value("sweep", json::object());
        allow_keys(sw, {"theta0", "delta"}, "sweep");
        s.theta0 = sw.value("theta0", std::vector<double>{s.p.theta0});
        s.delta = sw.value("delta", std::vector<double>{s.p.delta});
        if (s.theta0.empty() || s.delta.empty()) throw ConfigError("sweep lists must not be empty");
        for (double t : s.theta0) {
            nashmoser::SchemeParams q = s.p;
            q.theta0 = t;
            q.validate();
        }
        for (double d : s.delta)
            if (!(d > 0)) throw ConfigError("sweep.delta values must be positive");
        return s;
    });
    Session ses("nash-moser-run", with_default_out(opt),
                cfg, true);
    ses.set_threads(thread_count());

    const compat::InitialData data = make_data(su.data, su.bg, su.g, ses.seed());
    const double size = data_size(data);
    if (size > su.cc.small_data) {
        const std::string msg = "smallness lost: data sup " + label(size) + " exceeds small_data " + label(su.cc.small_data);
        std::cerr << "nash-moser-run: " << msg << '\n';
        return ses.finish(kDiverged, msg);
    }
    compat::CompatReport report;
    try {
        report = compat::check_compatibility(data, su.data.mu, su.cc);
    } catch (const std::exception& e) {
        std::cerr << "nash-moser-run: " << e.what() << '\n';
        return ses.finish(kConfig, e.what());
    }
    ses.write_text("compat.json", report.to_json() + "\n");
    if (!report.compatible) {
        std::cerr << "nash-moser-run: incompatible initial data\n" << report.to_json() << '\n';
        return ses.finish(kConfig, "incompatible initial data");
    }

    std::optional<compat::ApproxSolution> approx;
    try {
        approx = compat::build_approximate(data, su.cc);
    } catch (const FrontDegeneracyError& e) {
        std::cerr << "nash-moser-run: smallness lost: " << e.what() << '\n';
        return ses.finish(kDiverged, std::string("smallness lost: ") + e.what());
    } catch (const DomainError& e) {
        std::cerr << "nash-moser-run: smallness lost: " << e.what() << '\n';
        return ses.finish(kDiverged, std::string("smallness lost: ") + e.what());
    } catch (const std::exception& e) {
        std::cerr << "nash-moser-run: " << e.what() << '\n';
        return ses.finish(kRuntime, e.what());
    }

    const bool single = su.theta0.size() == 1 && su.delta.size() == 1;
    std::ostringstream sweep;
    sweep << "# one row per (theta0, delta); file: iteration CSV; res_L: final [L - f^a]_{s_min}; H_pass: the inductive bounds held at every "
             "step; telescoping: largest telescoping residual\n";
    sweep << "theta0,delta,status,iterations,res_L,H_pass,telescoping,file\n" << std::setprecision(12);
    json runs = json::array();
    int code = kOk;
    int k = 0;
    for (double t0 : su.theta0) {
        nashmoser::SchemeParams p = su.p;
        p.theta0 = t0;
        std::optional<nashmoser::NashMoserResult> base;
        std::string failure;
        try {
            base = nashmoser::run_nash_moser(*approx, p);
        } catch (const FrontDegeneracyError& e) {
            failure = std::string("smallness lost: ") + e.what();
        } catch (const DomainError& e) {
            failure = std::string("smallness lost: ") + e.what();
        } catch (const std::exception& e) {
            std::cerr << "nash-moser-run: " << e.what() << '\n';
            ses.set("runs", runs);
            if (k > 0) ses.write_text("sweep.csv", sweep.str());
            return ses.finish(kRuntime, e.what());
        }
        for (double d : su.delta) {
            p.delta = d;
            const std::string file = single ? "iterations.csv" : "iterations_" + std::to_string(k) + ".csv";
            const std::string man = single ? "run.json" : "run_" + std::to_string(k) + ".json";
            ++k;
            if (!base) {
                code = kDiverged;
                std::cerr << "nash-moser-run: theta0 = " << t0 << ": " << failure << '\n';
                sweep << t0 << ',' << d << ",smallness_lost,0,,,,\n";
                runs.push_back({{"theta0", t0}, {"delta", d}, {"status", "smallness_lost"}, {"diagnostic", failure}});
                continue;
            }
            nashmoser::NashMoserResult r = *base;
            nashmoser::apply_bounds(r, p);
            nashmoser::write_iteration_csv(ses.path(file).string(), r, p);
            ses.record(file);
            ses.write_text(man, nashmoser::manifest_json(r, p, su.g) + "\n");
            bool H = true;
            double tel = 0;
            for (const auto& row : r.rows) {
                H = H && row.H_pass();
                tel = std::max(tel, row.telescoping());
            }
            const double res = r.rows.empty() ? 0.0 : r.rows.back().band.front().res_L;
            sweep << t0 << ',' << d << ',' << nashmoser::to_string(r.status) << ',' << r.rows.size() << ',' << res << ','
                  << H << ',' << tel << ',' << file << '\n';
            runs.push_back({{"theta0", t0},
                            {"delta", d},
                            {"status", nashmoser::to_string(r.status)},
                            {"diagnostic", r.diagnostic},
                            {"iterations", r.rows.size()},
                            {"res_L", res},
                            {"H_pass", H},
                            {"file", file}});
            if (r.status == nashmoser::NashMoserResult::Status::Diverged) {
                code = kDiverged;
                std::cerr << "nash-moser-run: theta0 = " << t0 << ", delta = " << d << ": diverged: " << r.diagnostic << '\n';
            }
        }
    }
    if (!single) ses.write_text("sweep.csv", sweep.str());
    ses.set("runs", runs);
    std::cout << runs.dump(2) << '\n';
    return ses.finish(code, code == kDiverged ? "divergence or smallness loss" : "");
}

// ---------------------------------------------------------------- norms-bench

int cmd_norms_bench(const Options& opt) {
    const json cfg = load_config(opt.config);
    norms::HarnessConfig hc = configure([&] {
        allow_keys(cfg, {"schema", "seed", "grid", "lambdas", "refinements", "corpus_size"}, "config");
        norms::HarnessConfig h;
        if (cfg.contains("grid")) h.grid = parse_grid(cfg["grid"], opt.refine);
        else h.grid = h.grid.refined(opt.refine);
        h.lambdas = lambdas_of(cfg, opt, h.lambdas);
        h.refinements = cfg.value("refinements", h.refinements);
        h.corpus_size = cfg.value("corpus_size", h.corpus_size);
        if (h.refinements < 1 || h.corpus_size < 0) throw ConfigError("refinements >= 1 and corpus_size >= 0 required");
        return h;
    });
    Session ses("norms-bench", with_default_out(opt),
                cfg, true);
    ses.set_threads(thread_count());
    hc.seed = ses.seed();

    std::vector<norms::HarnessRow> rows;
    try {
        rows = norms::appendix_a_harness(hc);
    } catch (const std::exception& e) {
        std::cerr << "norms-bench: " << e.what() << '\n';
        return ses.finish(kRuntime, e.what());
    }
    norms::write_harness_csv(ses.path("harness.csv").string(), rows);
    ses.record("harness.csv");

    // largest ratio of constants across refinement levels, per inequality and lambda
    std::map<std::pair<std::string, double>, std::pair<double, double>> range;
    bool finite = true;
    for (const auto& r : rows) {
        finite = finite && std::isfinite(r.constant);
        auto [it, fresh] = range.try_emplace({r.inequality, r.lambda}, r.constant, r.constant);
        if (!fresh) {
            it->second.first = std::min(it->second.first, r.constant);
            it->second.second = std::max(it->second.second, r.constant);
        }
    }
    json spread = json::object();
    for (const auto& [key, mm] : range) {
        const double s = mm.first > 0 ? mm.second / mm.first : 1.0;
        spread[key.first] = std::max(spread.value(key.first, 1.0), s);
    }
    const json summary{{"rows", rows.size()}, {"all_finite", finite}, {"refinement_spread", spread}};
    ses.write_text("summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump(2) << '\n';
    return ses.finish(kOk);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"vsheet: two-phase vortex sheet experiments"};
    app.require_subcommand(1);
    Options opt;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "JSON configuration")->required();
        sub->add_option("--out", opt.out, "output directory");
        sub->add_option("--seed", seed, "RNG seed (overrides the config)");
        sub->add_option("--lambda-sweep", opt.lambda_sweep, "comma-separated lambda values")->delimiter(',');
        sub->add_option("--refine", opt.refine, "refinement level of the configured grid");
    };
    CLI::App* stab = app.add_subcommand("stability-check", "classify a planar background sheet");
    CLI::App* lin = app.add_subcommand("linearized-run", "solve the linearized problem and report energies");
    CLI::App* nm = app.add_subcommand("nash-moser-run", "build the approximate solution and iterate");
    CLI::App* bench = app.add_subcommand("norms-bench", "measure the constants of the norm inequalities");
    for (CLI::App* s : {stab, lin, nm, bench}) add_common(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfig;
    }
    for (CLI::App* s : {stab, lin, nm, bench})
        if (s->count("--seed")) opt.seed = seed;

    try {
        if (*stab) return cmd_stability_check(opt);
        if (*lin) return cmd_linearized_run(opt);
        if (*nm) return cmd_nash_moser_run(opt);
        return cmd_norms_bench(opt);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
}
