#include "flatforge/linearize.hpp"

#include <algorithm>

#include <Eigen/Dense>

namespace flatforge {

namespace {

// --------------------------------------------------------------------------
// Closed-form solve of  expr(s, ...) == rhs  for the variable s, when s
// enters through a single rational power (possibly nested inside one
// factor).  Returns nothing when no such form exists.
// --------------------------------------------------------------------------
std::optional<Expr> solve_for(const Expr& expr, const VarId& s, const Expr& rhs) {
    // Split into s-independent part `a` and s-dependent terms.
    std::vector<ExprTerm> indep;
    std::vector<ExprTerm> dep;
    Rational a_const(0);
    if (expr.kind() == NodeKind::Sum) {
        a_const = expr.affine_constant();
        for (const auto& t : expr.terms()) {
            (depends_on(t.factor, s) ? dep : indep).push_back(t);
        }
    } else if (depends_on(expr, s)) {
        dep.push_back({Rational(1), expr});
    } else {
        return std::nullopt;
    }
    if (dep.empty()) return std::nullopt;
    Expr a = make_sum(std::move(indep), a_const);

    // Factor each dependent term as coeff * rest * base^q with base either
    // the bare variable or one opaque subexpression.
    struct Piece {
        Expr rest;      // s-independent cofactor (with the term coefficient)
        Expr base;      // s-carrying factor base
        Rational q;     // its exponent
        bool bare;      // base is exactly var(s)
    };
    std::vector<Piece> pieces;
    for (const auto& t : dep) {
        const Expr& f = t.factor;
        if (f.is_variable() && f.variable() == s) {
            pieces.push_back({constant(t.weight), f, Rational(1), true});
            continue;
        }
        if (f.kind() != NodeKind::Product) {
            pieces.push_back({constant(t.weight), f, Rational(1), false});
            continue;
        }
        std::vector<ExprTerm> rest;
        std::optional<Piece> piece;
        bool bad = false;
        for (const auto& pf : f.terms()) {
            if (!depends_on(pf.factor, s)) {
                rest.push_back(pf);
                continue;
            }
            if (piece) {
                bad = true;  // s in more than one factor
                break;
            }
            bool bare = pf.factor.is_variable() && pf.factor.variable() == s;
            piece = Piece{Expr(), pf.factor, pf.weight, bare};
        }
        if (bad || !piece) return std::nullopt;
        piece->rest = make_product(std::move(rest), t.weight * f.affine_constant());
        pieces.push_back(*piece);
    }

    // Common bare power: expr = a + (sum rest_i) * s^q.
    bool all_bare = std::all_of(pieces.begin(), pieces.end(), [](const Piece& p) { return p.bare; });
    if (all_bare) {
        const Rational q = pieces[0].q;
        for (const auto& p : pieces) {
            if (!(p.q == q)) return std::nullopt;
        }
        std::vector<ExprTerm> cs;
        for (const auto& p : pieces) cs.push_back({Rational(1), p.rest});
        Expr c = make_sum(std::move(cs), Rational(0));
        Expr w = (rhs - a) / c;
        return pow(w, Rational(1) / q);
    }

    // Single nested factor: expr = a + rest * base^q, recurse into base.
    if (pieces.size() != 1 || pieces[0].bare) return std::nullopt;
    const Piece& p = pieces[0];
    if (depends_on(p.rest, s)) return std::nullopt;
    Expr w = pow((rhs - a) / p.rest, Rational(1) / p.q);
    return solve_for(p.base, s, w);
}

ExprMatrix input_jacobian(const ControlSystem& sys, const std::array<Expr, 2>& fwd) {
    std::vector<Expr> rows = {fwd[0], fwd[1]};
    std::vector<VarId> cols = {sys.input_var(1), sys.input_var(2)};
    return jacobian(rows, cols);
}

// forward(x, inverse(x, ubar)) == ubar within 1e-9 at samples.
bool inverse_round_trips(const ControlSystem& sys, const std::array<Expr, 2>& forward,
                         const std::array<Expr, 2>& inverse, std::mt19937_64& rng) {
    std::vector<VarId> vars;
    collect_free_variables(forward[0], vars);
    collect_free_variables(forward[1], vars);
    std::sort(vars.begin(), vars.end());
    vars.erase(std::unique(vars.begin(), vars.end()), vars.end());

    int valid = 0, attempts = 0;
    while (valid < 20 && attempts < 200) {
        ++attempts;
        Point p = sys.dom.sample(vars, rng);
        try {
            Point q = p;
            q[VarId::bar_input(1)] = evaluate(forward[0], p);
            q[VarId::bar_input(2)] = evaluate(forward[1], p);
            for (int j = 1; j <= 2; ++j) {
                double uj = p.at(sys.input_var(j));
                double back = evaluate(inverse[j - 1], q);
                if (std::abs(back - uj) >= 1e-9 * (1.0 + std::abs(uj))) return false;
            }
        } catch (const DomainError&) {
            continue;
        }
        ++valid;
    }
    return valid > 0;
}

StaticFeedback build_feedback_impl(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                                   MultiIndex K, std::mt19937_64& rng, int lead) {
    OutputJets jets = output_derivatives(sys, phi, K);
    Expr lead_expr = jets.at(lead, K[lead]);

    StaticFeedback best;
    bool found = false;
    for (int l = 1; l <= 2; ++l) {
        std::array<Expr, 2> fwd = {lead_expr, var(sys.input_var(l))};
        ExprMatrix jac = input_jacobian(sys, fwd);
        int rank;
        try {
            rank = numeric_rank(jac, sys.dom, rng);
        } catch (const InconclusiveDomain&) {
            continue;
        }
        if (rank != 2) continue;
        DomainSampler sampler(sys.dom, jac.free_vars());
        double sigma = min_singular_value(jac, sampler, rng);
        if (!found || sigma > best.min_sigma) {
            best.forward = fwd;
            best.complement = l;
            best.lead_channel = lead;
            best.min_sigma = sigma;
            found = true;
        }
    }
    if (!found) {
        throw SingularFeedback("no raw input completes the feedback to a regular map on the domain");
    }

    // Closed-form inverse: fix the complement, solve for the other input.
    const int m = best.complement == 1 ? 2 : 1;
    SubstMap fix;
    fix[sys.input_var(best.complement)] = var(VarId::bar_input(2));
    Expr eq = substitute(best.forward[0], fix);
    if (auto um = solve_for(eq, sys.input_var(m), var(VarId::bar_input(1)))) {
        std::array<Expr, 2> inverse;
        inverse[best.complement - 1] = var(VarId::bar_input(2));
        inverse[m - 1] = *um;
        if (inverse_round_trips(sys, best.forward, inverse, rng)) {
            best.inverse = inverse;
        }
    }
    return best;
}

}  // namespace

StaticFeedback build_feedback(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                              MultiIndex K, std::mt19937_64& rng) {
    return build_feedback_impl(sys, phi, K, rng, 1);
}

StaticFeedback build_feedback_alt(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                                  MultiIndex K, std::mt19937_64& rng) {
    return build_feedback_impl(sys, phi, K, rng, 2);
}

Eigen::Vector2d invert_feedback_numeric(const StaticFeedback& fb, const ControlSystem& sys,
                                        const Point& base, const Eigen::Vector2d& ubar,
                                        const Eigen::Vector2d& guess) {
    const std::array<VarId, 2> uv = {sys.input_var(1), sys.input_var(2)};
    std::array<std::array<Expr, 2>, 2> jac;
    for (int i = 0; i < 2; ++i) {
        for (int k = 0; k < 2; ++k) jac[i][k] = differentiate(fb.forward[i], uv[k]);
    }
    auto residual = [&](const Eigen::Vector2d& u) {
        Point p = base;
        p[uv[0]] = u(0);
        p[uv[1]] = u(1);
        Eigen::Vector2d r;
        r << evaluate(fb.forward[0], p) - ubar(0), evaluate(fb.forward[1], p) - ubar(1);
        return r;
    };

    Eigen::Vector2d u = guess;
    Eigen::Vector2d r = residual(u);
    const double tol = 1e-12 * (1.0 + ubar.lpNorm<Eigen::Infinity>());
    for (int it = 0; it < 50; ++it) {
        if (r.lpNorm<Eigen::Infinity>() < tol) return u;
        Point p = base;
        p[uv[0]] = u(0);
        p[uv[1]] = u(1);
        Eigen::Matrix2d J;
        for (int i = 0; i < 2; ++i) {
            for (int k = 0; k < 2; ++k) J(i, k) = evaluate(jac[i][k], p);
        }
        Eigen::Vector2d step = J.partialPivLu().solve(-r);
        double lambda = 1.0;
        bool accepted = false;
        while (lambda > 1e-4) {
            Eigen::Vector2d cand = u + lambda * step;
            Eigen::Vector2d rc;
            try {
                rc = residual(cand);
            } catch (const DomainError&) {
                lambda *= 0.5;
                continue;
            }
            if (rc.norm() < (1.0 - 0.25 * lambda) * r.norm() || rc.norm() < tol) {
                u = cand;
                r = rc;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) break;
    }
    if (r.lpNorm<Eigen::Infinity>() < tol) return u;
    throw NewtonDivergence("feedback inversion did not converge (residual " +
                           std::to_string(r.norm()) + ")");
}

const ControlSystem& TransformedSystem::system() const {
    if (!symbolic_) {
        throw ValidationError("transformed system has no closed-form inverse; "
                              "only pointwise evaluation is available");
    }
    return sys_bar_;
}

Eigen::VectorXd TransformedSystem::eval_field(const Eigen::VectorXd& x,
                                              const Eigen::Vector2d& ubar) const {
    Point p;
    for (const auto& [v, val] : original_.dom.bindings()) p[v] = val;
    for (int i = 0; i < original_.n; ++i) p[VarId::state(i + 1)] = x(i);
    if (symbolic_) {
        p[VarId::bar_input(1)] = ubar(0);
        p[VarId::bar_input(2)] = ubar(1);
        Eigen::VectorXd out(original_.n);
        for (int i = 0; i < original_.n; ++i) out(i) = evaluate(sys_bar_.f[i], p);
        return out;
    }
    auto [lo1, hi1] = original_.dom.interval(original_.input_var(1));
    auto [lo2, hi2] = original_.dom.interval(original_.input_var(2));
    Eigen::Vector2d guess(0.5 * (lo1 + hi1), 0.5 * (lo2 + hi2));
    Eigen::Vector2d u = invert_feedback_numeric(fb_, original_, p, ubar, guess);
    p[original_.input_var(1)] = u(0);
    p[original_.input_var(2)] = u(1);
    Eigen::VectorXd out(original_.n);
    for (int i = 0; i < original_.n; ++i) out(i) = evaluate(original_.f[i], p);
    return out;
}

TransformedSystem transform_system(const ControlSystem& sys, const StaticFeedback& fb) {
    ControlSystem bar = sys;
    bar.input_kind = VarKind::BarInputJet;
    bar.input_names = {"ubar1", "ubar2"};
    bool symbolic = fb.inverse.has_value();
    if (symbolic) {
        SubstMap m;
        m[sys.input_var(1)] = (*fb.inverse)[0];
        m[sys.input_var(2)] = (*fb.inverse)[1];
        for (auto& fi : bar.f) fi = substitute(fi, m);
    } else {
        bar.f.clear();
    }
    return TransformedSystem(std::move(bar), sys, fb, symbolic);
}

FeedbackSampler::FeedbackSampler(const ControlSystem& sys, const StaticFeedback& fb,
                                 int max_order_lead, int max_order_complement)
    : sys_(sys) {
    Expr j1 = fb.forward[0];
    for (int a = 0; a <= max_order_lead; ++a) {
        jets1_.push_back(j1);
        j1 = total_derivative(j1, sys);
    }
    Expr j2 = fb.forward[1];
    for (int a = 0; a <= max_order_complement; ++a) {
        jets2_.push_back(j2);
        j2 = total_derivative(j2, sys);
    }
    for (const auto& e : jets1_) collect_free_variables(e, base_vars_);
    for (const auto& e : jets2_) collect_free_variables(e, base_vars_);
    for (const auto& v : sys.state_vars()) base_vars_.push_back(v);
    std::sort(base_vars_.begin(), base_vars_.end());
    base_vars_.erase(std::unique(base_vars_.begin(), base_vars_.end()), base_vars_.end());
}

Point FeedbackSampler::sample(std::mt19937_64& rng) const {
    Point p = sys_.dom.sample(base_vars_, rng);
    for (std::size_t a = 0; a < jets1_.size(); ++a) {
        p[VarId::bar_input(1, static_cast<int>(a))] = evaluate(jets1_[a], p);
    }
    for (std::size_t a = 0; a < jets2_.size(); ++a) {
        p[VarId::bar_input(2, static_cast<int>(a))] = evaluate(jets2_[a], p);
    }
    return p;
}

TransformedChain transformed_chain(const TransformedSystem& tsys, const std::array<Expr, 2>& phi,
                                   MultiIndex K, MultiIndex R, std::mt19937_64& rng) {
    const ControlSystem& bar = tsys.system();
    const StaticFeedback& fb = tsys.feedback();
    const int lead = fb.lead_channel;
    const int other = lead == 1 ? 2 : 1;
    const int p = R[lead] - K[lead];

    SubstMap inv;
    inv[tsys.original().input_var(1)] = (*fb.inverse)[0];
    inv[tsys.original().input_var(2)] = (*fb.inverse)[1];

    TransformedChain chain;
    chain.lead = lead;
    chain.K = K;
    chain.R = R;
    chain.prolongations = R.total() - bar.n;

    for (int j = 1; j <= 2; ++j) {
        Expr cur = substitute(phi[j - 1], inv);
        chain.y[j - 1].push_back(cur);
        for (int alpha = 1; alpha <= R[j]; ++alpha) {
            cur = total_derivative(cur, bar);
            chain.y[j - 1].push_back(cur);
        }
    }

    FeedbackSampler sampler(tsys.original(), fb, p, 0);

    // Lead channel: y^lead_{k+beta} must be the bare jet ubar1_beta.
    for (int beta = 0; beta <= p; ++beta) {
        Expr expected = var(VarId::bar_input(1, beta));
        Expr& got = chain.y[lead - 1][K[lead] + beta];
        if (got == expected) continue;
        if (!is_zero(got - expected, sampler, rng)) {
            throw StructureViolation("lead-channel derivative of order " +
                                     std::to_string(K[lead] + beta) +
                                     " does not reduce to the new input jet");
        }
        got = expected;  // numerically identical; keep the exact structural form
    }

    // Non-lead channel: the complement input must stay out of everything
    // below the top derivative.
    for (int beta = 0; K[other] + beta < R[other]; ++beta) {
        const Expr& e = chain.y[other - 1][K[other] + beta];
        for (const VarId& v : free_variables(e)) {
            if (v.kind == VarKind::BarInputJet && v.index == 2) {
                if (!is_zero(differentiate(e, v), sampler, rng)) {
                    throw StructureViolation("ubar2 enters the derivative chain at order " +
                                             std::to_string(K[other] + beta) +
                                             " of channel " + std::to_string(other) +
                                             "; candidate is not (x,u)-flat as declared");
                }
            }
            if (v.kind == VarKind::InputJet) {
                throw StructureViolation("untransformed input " + v.name() +
                                         " left in the derivative chain");
            }
        }
    }

    // The full map must be a local diffeomorphism onto the output jets.
    std::vector<VarId> cols;
    for (const auto& v : bar.state_vars()) cols.push_back(v);
    for (int a = 0; a <= p; ++a) cols.push_back(VarId::bar_input(1, a));
    cols.push_back(VarId::bar_input(2, 0));
    std::vector<Expr> rows;
    for (int j = 1; j <= 2; ++j) {
        for (int a = 0; a <= R[j]; ++a) rows.push_back(chain.at(j, a));
    }
    const int full = R.total() + 2;
    if (numeric_rank(jacobian(rows, cols), sampler, rng) != full) {
        throw RankDeficient("derivative chain map is not a diffeomorphism at samples");
    }
    return chain;
}

ProlongedSystem prolong(const ControlSystem& sys_bar, int p) {
    ProlongedSystem out;
    out.p = p;
    out.state = sys_bar.state_vars();
    out.f = sys_bar.f;
    for (int a = 0; a < p; ++a) {
        out.state.push_back(VarId::bar_input(1, a));
        out.f.push_back(var(VarId::bar_input(1, a + 1)));
    }
    out.inputs = {VarId::bar_input(1, p), VarId::bar_input(2, 0)};
    return out;
}

bool check_static_linearizable(const ProlongedSystem& prolonged, const TransformedChain& chain,
                               const Sampler& sampler, std::mt19937_64& rng, int samples) {
    std::vector<VarId> cols = prolonged.state;
    cols.push_back(prolonged.inputs[0]);
    cols.push_back(prolonged.inputs[1]);
    std::vector<Expr> rows;
    for (int j = 1; j <= 2; ++j) {
        for (int a = 0; a <= chain.R[j]; ++a) rows.push_back(chain.at(j, a));
    }
    const int full = chain.R.total() + 2;
    return numeric_rank(jacobian(rows, cols), sampler, rng, samples) == full;
}

Linearization linearize(const ControlSystem& sys, const FlatSpec& spec,
                        const FlatnessReport& report, FeedbackVariant variant,
                        std::mt19937_64& rng) {
    StaticFeedback fb = variant == FeedbackVariant::Primary
                            ? build_feedback(sys, spec.phi, report.K, rng)
                            : build_feedback_alt(sys, spec.phi, report.K, rng);
    TransformedSystem tsys = transform_system(sys, fb);
    TransformedChain chain = transformed_chain(tsys, spec.phi, report.K, report.R, rng);
    const int lead = fb.lead_channel;
    auto sampler = std::make_shared<FeedbackSampler>(sys, fb, report.R[lead] - report.K[lead], 0);
    return Linearization{std::move(fb), std::move(tsys), std::move(chain), std::move(sampler)};
}

}  // namespace flatforge
