#include "flatforge/simkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace flatforge {

// ---------------------------------------------------------------------------
// Reference atoms
// ---------------------------------------------------------------------------
double RefAtom::deriv(int order, double t) const {
    switch (kind) {
        case Kind::Constant:
            return order == 0 ? offset : 0.0;
        case Kind::Poly: {
            double acc = 0.0;
            for (std::size_t i = order; i < coeffs.size(); ++i) {
                double c = coeffs[i];
                for (std::size_t k = 0; k < static_cast<std::size_t>(order); ++k) {
                    c *= static_cast<double>(i - k);
                }
                acc += c * std::pow(t, static_cast<double>(i - order));
            }
            return acc;
        }
        case Kind::Sine: {
            double value = amplitude * std::pow(omega, order) *
                           std::sin(omega * t + phase + order * std::numbers::pi / 2.0);
            if (order == 0) value += offset;
            return value;
        }
    }
    return 0.0;
}

namespace {

std::vector<double> parse_doubles(const std::string& body, const std::string& what) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= body.size()) {
        std::size_t next = body.find(',', pos);
        std::string piece = body.substr(pos, next == std::string::npos ? next : next - pos);
        try {
            std::size_t used = 0;
            double v = std::stod(piece, &used);
            while (used < piece.size() && std::isspace(static_cast<unsigned char>(piece[used]))) {
                ++used;
            }
            if (used != piece.size()) throw std::invalid_argument(piece);
            out.push_back(v);
        } catch (const std::exception&) {
            throw UnsupportedAtom("bad number '" + piece + "' in " + what);
        }
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return out;
}

}  // namespace

RefAtom parse_ref_atom(const std::string& text) {
    std::size_t colon = text.find(':');
    if (colon == std::string::npos) {
        throw UnsupportedAtom("reference atom needs the form kind:args, got '" + text + "'");
    }
    std::string kind = text.substr(0, colon);
    std::string body = text.substr(colon + 1);
    RefAtom atom;
    if (kind == "const") {
        auto v = parse_doubles(body, "const atom");
        if (v.size() != 1) throw UnsupportedAtom("const atom takes one value");
        atom.kind = RefAtom::Kind::Constant;
        atom.offset = v[0];
    } else if (kind == "poly") {
        auto v = parse_doubles(body, "poly atom");
        if (v.empty()) throw UnsupportedAtom("poly atom needs coefficients");
        atom.kind = RefAtom::Kind::Poly;
        atom.coeffs = std::move(v);
    } else if (kind == "sin") {
        auto v = parse_doubles(body, "sin atom");
        if (v.size() != 4) throw UnsupportedAtom("sin atom takes A,omega,phase,offset");
        atom.kind = RefAtom::Kind::Sine;
        atom.amplitude = v[0];
        atom.omega = v[1];
        atom.phase = v[2];
        atom.offset = v[3];
    } else {
        throw UnsupportedAtom("unknown reference atom kind '" + kind + "'");
    }
    for (double v : {atom.amplitude, atom.omega, atom.phase, atom.offset}) {
        if (!std::isfinite(v)) throw UnsupportedAtom("reference atom parameters must be finite");
    }
    return atom;
}

Reference parse_reference(const std::string& text) {
    std::size_t semi = text.find(';');
    if (semi == std::string::npos) {
        throw UnsupportedAtom("reference needs two atoms separated by ';'");
    }
    Reference ref;
    ref.ch[0] = parse_ref_atom(text.substr(0, semi));
    ref.ch[1] = parse_ref_atom(text.substr(semi + 1));
    return ref;
}

RefBundle Reference::bundle(MultiIndex R, double t) const {
    RefBundle b;
    for (int j = 1; j <= 2; ++j) {
        b.yd[j - 1].resize(R[j] + 1);
        for (int alpha = 0; alpha <= R[j]; ++alpha) {
            b.yd[j - 1][alpha] = ch[j - 1].deriv(alpha, t);
        }
    }
    return b;
}

// ---------------------------------------------------------------------------
// Closed-loop integration
// ---------------------------------------------------------------------------
SimResult simulate(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                   const Controller& ctrl, const Reference& ref, const SimConfig& cfg) {
    if (!(cfg.dt > 0.0) || !(cfg.tf > cfg.t0)) {
        throw ValidationError("simulation needs dt > 0 and tf > t0");
    }
    if ((cfg.tf - cfg.t0) / cfg.dt > 1e7) {
        throw ValidationError("simulation would exceed 1e7 steps");
    }
    if (cfg.x0.size() != sys.n) {
        throw ValidationError("x0 dimension does not match the system");
    }

    // Input layouts for the compiled tapes.
    std::vector<VarId> law_vars;
    for (int i = 1; i <= sys.n; ++i) law_vars.push_back(VarId::state(i));
    for (const auto& [name, value] : ctrl.params) law_vars.push_back(VarId::parameter(name));
    const std::size_t ref_base = law_vars.size();
    for (int j = 1; j <= 2; ++j) {
        for (int alpha = 0; alpha <= ctrl.R[j]; ++alpha) law_vars.push_back(VarId::ref(j, alpha));
    }
    CompiledExpr law(ctrl.law, law_vars, cfg.guard);

    std::vector<VarId> sys_vars;
    for (int i = 1; i <= sys.n; ++i) sys_vars.push_back(VarId::state(i));
    sys_vars.push_back(sys.input_var(1));
    sys_vars.push_back(sys.input_var(2));
    for (const auto& [name, value] : sys.params) sys_vars.push_back(VarId::parameter(name));
    CompiledExpr field(sys.f, sys_vars, cfg.guard);
    CompiledExpr output(phi, sys_vars, cfg.guard);

    std::vector<double> law_in(law_vars.size());
    std::vector<double> sys_in(sys_vars.size());
    {
        std::size_t k = sys.n;
        for (const auto& [name, value] : ctrl.params) law_in[k++] = value;
        k = sys.n + 2;
        for (const auto& [name, value] : sys.params) sys_in[k++] = value;
    }
    std::vector<double> scratch_law(law.scratch_size());
    std::vector<double> scratch_sys(std::max(field.scratch_size(), output.scratch_size()));

    auto control_at = [&](double t, const Eigen::VectorXd& x) {
        for (int i = 0; i < sys.n; ++i) law_in[i] = x(i);
        std::size_t k = ref_base;
        for (int j = 1; j <= 2; ++j) {
            for (int alpha = 0; alpha <= ctrl.R[j]; ++alpha) {
                law_in[k++] = ref.ch[j - 1].deriv(alpha, t);
            }
        }
        Eigen::Vector2d u;
        law.eval(law_in, std::span<double>(u.data(), 2), scratch_law);
        return u;
    };
    auto field_at = [&](const Eigen::VectorXd& x, const Eigen::Vector2d& u) {
        for (int i = 0; i < sys.n; ++i) sys_in[i] = x(i);
        sys_in[sys.n] = u(0);
        sys_in[sys.n + 1] = u(1);
        Eigen::VectorXd dx(sys.n);
        field.eval(sys_in, std::span<double>(dx.data(), sys.n), scratch_sys);
        return dx;
    };

    const long long steps = std::llround((cfg.tf - cfg.t0) / cfg.dt);
    SimResult res;
    res.n = sys.n;
    Eigen::VectorXd x = cfg.x0;

    for (long long k = 0; k <= steps; ++k) {
        double t = cfg.t0 + static_cast<double>(k) * cfg.dt;
        Eigen::Vector2d u;
        Eigen::Vector2d y;
        try {
            u = control_at(t, x);
            for (int i = 0; i < sys.n; ++i) sys_in[i] = x(i);
            sys_in[sys.n] = u(0);
            sys_in[sys.n + 1] = u(1);
            output.eval(sys_in, std::span<double>(y.data(), 2), scratch_sys);
        } catch (const Error& err) {
            res.truncated = true;
            res.truncation_reason = err.name() + ": " + err.what();
            break;
        }
        Eigen::Vector2d yd(ref.ch[0].deriv(0, t), ref.ch[1].deriv(0, t));
        res.t.push_back(t);
        res.x.push_back(x);
        res.u.push_back(u);
        res.y.push_back(y);
        res.yd.push_back(yd);
        res.e.push_back(y - yd);
        if (k == steps) break;

        try {
            const double h = cfg.dt;
            Eigen::VectorXd k1 = field_at(x, u);
            Eigen::VectorXd k2 = field_at(x + 0.5 * h * k1, control_at(t + 0.5 * h, x + 0.5 * h * k1));
            Eigen::VectorXd k3 = field_at(x + 0.5 * h * k2, control_at(t + 0.5 * h, x + 0.5 * h * k2));
            Eigen::VectorXd k4 = field_at(x + h * k3, control_at(t + h, x + h * k3));
            x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        } catch (const Error& err) {
            res.truncated = true;
            res.truncation_reason = err.name() + ": " + err.what();
            break;
        }
    }
    return res;
}

void write_csv(const SimResult& result, std::ostream& os) {
    os << "t";
    for (int i = 1; i <= result.n; ++i) os << ",x" << i;
    os << ",u1,u2,y1,y2,yd1,yd2,e1,e2\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << ',' << buf;
    };
    for (std::size_t r = 0; r < result.rows(); ++r) {
        std::snprintf(buf, sizeof(buf), "%.17g", result.t[r]);
        os << buf;
        for (int i = 0; i < result.n; ++i) put(result.x[r](i));
        put(result.u[r](0));
        put(result.u[r](1));
        put(result.y[r](0));
        put(result.y[r](1));
        put(result.yd[r](0));
        put(result.yd[r](1));
        put(result.e[r](0));
        put(result.e[r](1));
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Linear error-dynamics certificate
// ---------------------------------------------------------------------------
namespace {

// Analytic solution of e^(k) + sum a_b e^(b) = 0 with real (possibly
// repeated) poles: modal basis t^m exp(p t).
class ModalSolution {
public:
    ModalSolution(std::span<const double> a, std::span<const double> e0) {
        const int k = static_cast<int>(a.size());
        // companion-matrix roots of s^k + a_{k-1} s^{k-1} + ... + a_0
        Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(k, k);
        for (int i = 1; i < k; ++i) comp(i, i - 1) = 1.0;
        for (int i = 0; i < k; ++i) comp(i, k - 1) = -a[i];
        Eigen::EigenSolver<Eigen::MatrixXd> es(comp);
        std::vector<double> reals(k);
        for (int i = 0; i < k; ++i) reals[i] = es.eigenvalues()(i).real();
        std::sort(reals.begin(), reals.end());

        // cluster nearby roots into multiplicities (repeated real poles split
        // into tight star patterns numerically; their mean is accurate)
        std::vector<std::pair<double, int>> clusters;
        for (double r : reals) {
            if (!clusters.empty()) {
                auto& [center, count] = clusters.back();
                if (std::abs(r - center) < 0.05 * (1.0 + std::abs(center))) {
                    center = (center * count + r) / (count + 1);
                    ++count;
                    continue;
                }
            }
            clusters.emplace_back(r, 1);
        }
        for (const auto& [p, mult] : clusters) {
            for (int m = 0; m < mult; ++m) basis_.emplace_back(p, m);
        }

        // match the initial jet: V c = e0, V(d, i) = d-th derivative of
        // basis_i at t=0, i.e. d!/(d-m)! p^(d-m) for d >= m
        Eigen::MatrixXd V(k, k);
        for (int d = 0; d < k; ++d) {
            for (int i = 0; i < k; ++i) {
                auto [p, m] = basis_[i];
                if (d < m) {
                    V(d, i) = 0.0;
                    continue;
                }
                double c = 1.0;
                for (int j = 0; j < d - m; ++j) c *= p;
                for (int j = d; j > d - m; --j) c *= static_cast<double>(j);
                // c = p^(d-m) * d!/(d-m)!
                V(d, i) = c;
            }
        }
        Eigen::Map<const Eigen::VectorXd> rhs(e0.data(), k);
        coeff_ = V.fullPivLu().solve(rhs);
    }

    double operator()(double t) const {
        double acc = 0.0;
        for (int i = 0; i < coeff_.size(); ++i) {
            auto [p, m] = basis_[i];
            double term = coeff_(i) * std::exp(p * t);
            for (int j = 0; j < m; ++j) term *= t;
            acc += term;
        }
        return acc;
    }

private:
    std::vector<std::pair<double, int>> basis_;  // (pole, power of t)
    Eigen::VectorXd coeff_;
};

}  // namespace

ErrorDynReport error_dynamics_check(const SimResult& result, const Controller& ctrl,
                                    const Reference& ref, double tol) {
    if (result.truncated) {
        throw CheckFailed("simulation was truncated (" + result.truncation_reason +
                          "); error dynamics not checkable");
    }
    if (result.rows() == 0) throw CheckFailed("empty simulation result");
    const double t0 = result.t.front();

    // Values of the solved v-jets at t0 (evaluate the chain in order).
    Point p;
    for (int i = 0; i < result.n; ++i) p[VarId::state(i + 1)] = result.x.front()(i);
    for (const auto& [name, value] : ctrl.params) p[VarId::parameter(name)] = value;
    RefBundle b0 = ref.bundle(ctrl.R, t0);
    for (int j = 1; j <= 2; ++j) {
        for (int alpha = 0; alpha <= ctrl.R[j]; ++alpha) {
            p[VarId::ref(j, alpha)] = b0.yd[j - 1][alpha];
        }
    }
    for (const auto& entry : ctrl.chain) p[entry.v] = evaluate(entry.rhs, p);

    ErrorDynReport rep;
    rep.ok = true;
    for (int j = 1; j <= 2; ++j) {
        const int kj = ctrl.kappa[j];
        if (kj == 0) {
            // exact channel: the law enforces e^j = 0 algebraically
            for (std::size_t r = 0; r < result.rows(); ++r) {
                double err = std::abs(result.e[r](j - 1));
                if (err > rep.max_e_exact) {
                    rep.max_e_exact = err;
                    if (err >= 1e-6) rep.worst_time = result.t[r];
                }
            }
            if (rep.max_e_exact >= 1e-6) {
                rep.ok = false;
                rep.detail = "exact channel " + std::to_string(j) + " drifted to " +
                             std::to_string(rep.max_e_exact);
            }
            continue;
        }
        // initial error jet from the Brunovsky v-form (no numerical
        // differentiation of the simulated output anywhere)
        std::vector<double> e0(kj);
        for (int beta = 0; beta < kj; ++beta) {
            e0[beta] = evaluate(ctrl.bstate.v_form[j - 1][beta], p) - b0.yd[j - 1][beta];
        }
        ModalSolution sol(ctrl.gains.a[j - 1], e0);

        double peak = 0.0;
        for (std::size_t r = 0; r < result.rows(); ++r) {
            peak = std::max(peak, std::abs(sol(result.t[r] - t0)));
        }
        const double denom = std::max(peak, 1e-6);
        for (std::size_t r = 0; r < result.rows(); ++r) {
            double dev = std::abs(result.e[r](j - 1) - sol(result.t[r] - t0)) / denom;
            if (dev > rep.max_dev) {
                rep.max_dev = dev;
                rep.worst_time = result.t[r];
            }
        }
        if (rep.max_dev >= tol) {
            rep.ok = false;
            rep.detail = "channel " + std::to_string(j) + " deviates from the modal solution by " +
                         std::to_string(rep.max_dev) + " at t = " + std::to_string(rep.worst_time);
        }
    }
    if (!rep.ok) throw CheckFailed(rep.detail);
    return rep;
}

}  // namespace flatforge
