#include "flatforge/flatsys.hpp"

#include <algorithm>
#include <sstream>

namespace flatforge {

std::vector<VarId> ControlSystem::state_vars() const {
    std::vector<VarId> v;
    v.reserve(n);
    for (int i = 1; i <= n; ++i) v.push_back(state_var(i));
    return v;
}

std::vector<VarId> ControlSystem::base_coordinates() const {
    std::vector<VarId> v = state_vars();
    v.push_back(input_var(1));
    v.push_back(input_var(2));
    return v;
}

std::string FlatnessReport::str() const {
    std::ostringstream os;
    os << "K = " << K.str() << "\n";
    os << "R = " << R.str() << "\n";
    os << "dims B_{K+beta} = [";
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? ", " : "") << dims[i];
    os << "]\n";
    os << "codistribution growth: " << (unit_growth_ok ? "ok" : "FAILED") << "\n";
    os << "input Jacobian rank one: " << (input_rank_one_ok ? "ok" : "FAILED") << "\n";
    os << "static feedback linearizable: " << (static_feedback_linearizable ? "yes" : "no")
       << "\n";
    os << "prolongations needed (#R - n): " << prolongations << "\n";
    return os.str();
}

Expr total_derivative(const Expr& e, const ControlSystem& sys) {
    std::vector<ExprTerm> parts;
    for (const VarId& v : free_variables(e)) {
        if (v.kind == VarKind::State) {
            parts.push_back({Rational(1), sys.f[v.index - 1] * differentiate(e, v)});
        } else if (v.kind == sys.input_kind) {
            parts.push_back({Rational(1), var(v.shifted(1)) * differentiate(e, v)});
        }
    }
    return make_sum(std::move(parts), Rational(0));
}

std::vector<Expr> OutputJets::flatten() const {
    std::vector<Expr> out;
    out.reserve(ch[0].size() + ch[1].size());
    for (const auto& e : ch[0]) out.push_back(e);
    for (const auto& e : ch[1]) out.push_back(e);
    return out;
}

OutputJets output_derivatives(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                              MultiIndex A) {
    OutputJets jets;
    for (int j = 1; j <= 2; ++j) {
        Expr cur = phi[j - 1];
        jets.ch[j - 1].push_back(cur);
        for (int alpha = 1; alpha <= A[j]; ++alpha) {
            cur = total_derivative(cur, sys);
            jets.ch[j - 1].push_back(cur);
        }
    }
    return jets;
}

MultiIndex relative_degrees(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                            std::mt19937_64& rng) {
    MultiIndex K;
    for (int j = 1; j <= 2; ++j) {
        Expr cur = phi[j - 1];
        int k = -1;
        for (int alpha = 0; alpha <= sys.n + 2; ++alpha) {
            bool depends = false;
            for (int l = 1; l <= 2; ++l) {
                Expr d = differentiate(cur, sys.input_var(l));
                if (!is_zero(d, sys.dom, rng)) {
                    depends = true;
                    break;
                }
            }
            if (depends) {
                k = alpha;
                break;
            }
            cur = total_derivative(cur, sys);
        }
        if (k < 0) {
            throw NoRelativeDegree("output channel " + std::to_string(j) +
                                   " shows no input dependence up to order n+2");
        }
        (j == 1 ? K.a1 : K.a2) = k;
    }
    return K;
}

namespace {

// Dim B_A = rank(d phi_[A]) + (n+2) - rank(d phi_[A] stacked on dx, du),
// evaluated at one sample point.  Differentials are taken over the jet
// coordinates actually present.
int codim_at_point(const ControlSystem& sys, const std::vector<Expr>& outputs, const Point& p) {
    std::vector<VarId> coords = sys.base_coordinates();
    {
        std::vector<VarId> present;
        for (const auto& e : outputs) collect_free_variables(e, present);
        std::sort(present.begin(), present.end());
        present.erase(std::unique(present.begin(), present.end()), present.end());
        for (const auto& v : present) {
            if (v.kind == VarKind::Param) continue;
            if (std::find(coords.begin(), coords.end(), v) == coords.end()) coords.push_back(v);
        }
    }
    const int n_coords = static_cast<int>(coords.size());
    const int n_out = static_cast<int>(outputs.size());
    const int n_base = sys.n + 2;

    ExprMatrix dphi = jacobian(outputs, coords);
    Eigen::MatrixXd top = dphi.eval(p);

    Eigen::MatrixXd stacked(n_out + n_base, n_coords);
    stacked.topRows(n_out) = top;
    stacked.bottomRows(n_base).setZero();
    for (int i = 0; i < n_base; ++i) stacked(n_out + i, i) = 1.0;

    const double tol = 1e-8;
    return matrix_rank(top, tol) + n_base - matrix_rank(stacked, tol);
}

}  // namespace

std::vector<int> codistribution_dims(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                                     MultiIndex K, int beta_max, std::mt19937_64& rng,
                                     int samples) {
    std::vector<int> dims;
    OutputJets jets = output_derivatives(sys, phi, K.shifted(beta_max));
    for (int beta = 0; beta <= beta_max; ++beta) {
        std::vector<Expr> outputs;
        for (int j = 1; j <= 2; ++j) {
            for (int alpha = 0; alpha <= K[j] + beta; ++alpha) {
                outputs.push_back(jets.at(j, alpha));
            }
        }
        std::vector<VarId> vars;
        for (const auto& e : outputs) collect_free_variables(e, vars);
        std::sort(vars.begin(), vars.end());
        vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
        DomainSampler sampler(sys.dom, vars);

        int best = -1;
        int valid = 0;
        int attempts = 0;
        while (valid < samples && attempts < 10 * samples) {
            ++attempts;
            Point p = sampler.sample(rng);
            try {
                best = std::max(best, codim_at_point(sys, outputs, p));
            } catch (const DomainError&) {
                continue;
            }
            ++valid;
        }
        if (valid < samples) {
            throw InconclusiveDomain("codistribution dimension sampling exhausted its budget");
        }
        dims.push_back(best);
    }
    return dims;
}

bool check_unit_growth(const std::vector<int>& dims) {
    for (std::size_t i = 1; i < dims.size(); ++i) {
        if (dims[i] != dims[i - 1] + 1) return false;
    }
    return true;
}

bool check_rank_one_input(const ControlSystem& sys, const std::array<Expr, 2>& phi, MultiIndex K,
                          std::mt19937_64& rng) {
    OutputJets jets = output_derivatives(sys, phi, K);
    std::vector<Expr> rows = {jets.at(1, K[1]), jets.at(2, K[2])};
    std::vector<VarId> cols = {sys.input_var(1), sys.input_var(2)};
    return numeric_rank(jacobian(rows, cols), sys.dom, rng) == 1;
}

MultiIndex compute_orders(const ControlSystem& sys, const std::array<Expr, 2>& phi, MultiIndex K,
                          std::mt19937_64& rng, const std::optional<MultiIndex>& declared,
                          const std::vector<int>* dims_in) {
    const int step = sys.n - K.total();
    if (step < 0) {
        throw InconsistentR("relative degrees exceed the state dimension: K = " + K.str());
    }
    MultiIndex R{K.a1 + step, K.a2 + step};

    std::vector<int> dims_local;
    const std::vector<int>* dims = dims_in;
    if (!dims) {
        dims_local = codistribution_dims(sys, phi, K, step, rng);
        dims = &dims_local;
    }
    if (static_cast<int>(dims->size()) < step + 1) {
        throw InconsistentR("dimension sequence too short for the cross-check");
    }
    if ((*dims)[step] != sys.n + 2) {
        throw InconsistentR("codistribution sequence does not reach n+2 at beta = n - #K; "
                            "the candidate output is not flat on this domain");
    }
    if (step > 0 && (*dims)[step - 1] >= sys.n + 2) {
        throw InconsistentR("codistribution sequence reaches n+2 before beta = n - #K");
    }
    if (declared && !(*declared == R)) {
        throw InconsistentR("declared orders " + declared->str() + " disagree with computed " +
                            R.str());
    }
    return R;
}

namespace {

// Highest reference-jet order per channel appearing in an expression list.
MultiIndex max_ref_orders(std::span<const Expr> exprs) {
    MultiIndex m{-1, -1};
    std::vector<VarId> vars;
    for (const auto& e : exprs) collect_free_variables(e, vars);
    for (const auto& v : vars) {
        if (v.kind != VarKind::RefJet) continue;
        int& slot = v.index == 1 ? m.a1 : m.a2;
        slot = std::max(slot, v.order);
    }
    return m;
}

}  // namespace

RoundTripReport verify_parameterization(const ControlSystem& sys, const FlatSpec& spec,
                                        std::mt19937_64& rng, int trials) {
    if (!spec.f_x || !spec.f_u) {
        throw MissingParameterization("verify_parameterization needs F_x and F_u");
    }
    std::array<Expr, 2> fu = *spec.f_u;
    const std::vector<Expr>& fx = *spec.f_x;

    std::vector<Expr> all(fx.begin(), fx.end());
    all.push_back(fu[0]);
    all.push_back(fu[1]);
    MultiIndex R = max_ref_orders(all);
    if (spec.declared_R) R = *spec.declared_R;

    OutputJets jets = output_derivatives(sys, spec.phi, R);

    // Sample (x, u, u-jets) over every variable the output jets mention.
    std::vector<VarId> vars;
    for (int j = 1; j <= 2; ++j) {
        for (const auto& e : jets.ch[j - 1]) collect_free_variables(e, vars);
    }
    std::sort(vars.begin(), vars.end());
    vars.erase(std::unique(vars.begin(), vars.end()), vars.end());

    RoundTripReport report;
    report.trials = trials;
    const double tol = 1e-9;
    int valid = 0;
    int attempts = 0;
    while (valid < trials && attempts < 10 * trials) {
        ++attempts;
        Point p = sys.dom.sample(vars, rng);
        Point y = p;  // keeps parameter bindings
        bool ok = true;
        try {
            for (int j = 1; j <= 2; ++j) {
                for (int alpha = 0; alpha <= R[j]; ++alpha) {
                    y[VarId::ref(j, alpha)] = evaluate(jets.at(j, alpha), p);
                }
            }
            double norm_x = 0.0, norm_u = 0.0, res_x = 0.0, res_u = 0.0;
            for (int i = 1; i <= sys.n; ++i) {
                double xi = p.at(VarId::state(i));
                norm_x = std::max(norm_x, std::abs(xi));
                res_x = std::max(res_x, std::abs(evaluate(fx[i - 1], y) - xi));
            }
            for (int j = 1; j <= 2; ++j) {
                double uj = p.at(sys.input_var(j));
                norm_u = std::max(norm_u, std::abs(uj));
                res_u = std::max(res_u, std::abs(evaluate(fu[j - 1], y) - uj));
            }
            if (res_x >= tol * (1.0 + norm_x) || res_u >= tol * (1.0 + norm_u)) {
                std::ostringstream os;
                os << "parameterization round trip failed: |F_x(Y) - x| = " << res_x
                   << ", |F_u(Y) - u| = " << res_u << " at point {";
                for (const auto& v : vars) os << " " << v.name() << "=" << p.at(v);
                os << " }";
                throw RoundTripFailure(os.str());
            }
            report.max_residual_x = std::max(report.max_residual_x, res_x);
            report.max_residual_u = std::max(report.max_residual_u, res_u);
        } catch (const DomainError&) {
            ok = false;
        }
        if (ok) ++valid;
    }
    if (valid < trials) {
        throw InconclusiveDomain("parameterization round trip exhausted its redraw budget");
    }
    return report;
}

FlatnessReport analyze(const ControlSystem& sys, const FlatSpec& spec, std::mt19937_64& rng) {
    FlatnessReport rep;
    rep.K = relative_degrees(sys, spec.phi, rng);
    const int step = sys.n - rep.K.total();
    if (step < 0) {
        throw InconsistentR("relative degrees exceed the state dimension: K = " + rep.K.str());
    }
    rep.dims = codistribution_dims(sys, spec.phi, rep.K, step, rng);
    rep.R = compute_orders(sys, spec.phi, rep.K, rng, spec.declared_R, &rep.dims);
    rep.unit_growth_ok = check_unit_growth(rep.dims);
    rep.input_rank_one_ok = check_rank_one_input(sys, spec.phi, rep.K, rng);
    rep.static_feedback_linearizable = (rep.R == rep.K);
    rep.prolongations = rep.R.total() - sys.n;
    return rep;
}

namespace {

void require_var_classes(const Expr& e, std::initializer_list<VarKind> allowed, int max_order,
                         const std::string& what) {
    for (const VarId& v : free_variables(e)) {
        bool ok = false;
        for (VarKind k : allowed) {
            if (v.kind == k) {
                ok = true;
                break;
            }
        }
        if (!ok || (v.is_jet() && max_order >= 0 && v.order > max_order)) {
            throw ValidationError(what + " must not mention " + v.name());
        }
    }
}

}  // namespace

void validate_system(const ControlSystem& sys, std::mt19937_64& rng) {
    if (static_cast<int>(sys.f.size()) != sys.n || sys.n <= 0) {
        throw ValidationError("dynamics must provide exactly n expressions");
    }
    for (int i = 0; i < sys.n; ++i) {
        require_var_classes(sys.f[i], {VarKind::State, VarKind::InputJet, VarKind::Param}, 0,
                            "dynamics of x" + std::to_string(i + 1));
        for (const VarId& v : free_variables(sys.f[i])) {
            if (v.kind == VarKind::State && v.index > sys.n) {
                throw ValidationError("dynamics mention unknown state " + v.name());
            }
        }
    }
    std::vector<VarId> cols = {VarId::input(1), VarId::input(2)};
    if (numeric_rank(jacobian(sys.f, cols), sys.dom, rng) != 2) {
        throw ValidationError("rank d_u f must be 2 (no redundant inputs)");
    }
}

void validate_spec(const ControlSystem& sys, const FlatSpec& spec, std::mt19937_64& rng) {
    for (int j = 0; j < 2; ++j) {
        require_var_classes(spec.phi[j], {VarKind::State, VarKind::InputJet, VarKind::Param}, 0,
                            "flat output y" + std::to_string(j + 1));
    }
    // Functional independence of the two output components.
    std::vector<VarId> cols = sys.base_coordinates();
    std::vector<Expr> rows = {spec.phi[0], spec.phi[1]};
    if (numeric_rank(jacobian(rows, cols), sys.dom, rng) != 2) {
        throw ValidationError("flat output components are not functionally independent");
    }
    if (spec.f_x.has_value() != spec.f_u.has_value()) {
        throw ValidationError("parameterization must define both F_x and F_u");
    }
    if (spec.f_x) {
        if (static_cast<int>(spec.f_x->size()) != sys.n) {
            throw ValidationError("F_x must provide one expression per state");
        }
        for (const auto& e : *spec.f_x) {
            require_var_classes(e, {VarKind::RefJet, VarKind::Param}, -1, "F_x");
        }
        for (const auto& e : *spec.f_u) {
            require_var_classes(e, {VarKind::RefJet, VarKind::Param}, -1, "F_u");
        }
        verify_parameterization(sys, spec, rng, 20);
    }
}

}  // namespace flatforge
