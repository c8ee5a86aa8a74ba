#include "flatforge/tracking.hpp"

#include <algorithm>
#include <cmath>

namespace flatforge {

namespace {

std::vector<double> monic_coeffs(std::span<const double> poles) {
    // ascending powers; leading coefficient (implicit) is 1
    std::vector<double> c = {1.0};
    for (double p : poles) {
        if (!std::isfinite(p)) throw CountMismatch("poles must be finite");
        std::vector<double> next(c.size() + 1, 0.0);
        for (std::size_t i = 0; i < c.size(); ++i) {
            next[i + 1] += c[i];
            next[i] -= p * c[i];
        }
        c = std::move(next);
    }
    c.pop_back();  // drop the monic leading 1
    return c;
}

}  // namespace

GainSet place_poles(MultiIndex kappa, std::span<const double> poles1,
                    std::span<const double> poles2) {
    if (static_cast<int>(poles1.size()) != kappa.a1 ||
        static_cast<int>(poles2.size()) != kappa.a2) {
        throw CountMismatch("pole counts " + std::to_string(poles1.size()) + "/" +
                            std::to_string(poles2.size()) + " do not match kappa " + kappa.str());
    }
    GainSet g;
    g.a[0] = monic_coeffs(poles1);
    g.a[1] = monic_coeffs(poles2);
    return g;
}

std::vector<VChainEntry> build_v_chain(const BrunovskyState& bstate, const GainSet& gains) {
    const int d = bstate.lead;
    const int e = d == 1 ? 2 : 1;
    const MultiIndex kappa = bstate.kappa;
    const MultiIndex R = bstate.R;

    std::vector<VChainEntry> chain;

    // Lead channel: v^d_lambda = yd^d_{kappa_d+lambda}
    //   - sum_beta a^{d,beta} (y^d_{beta+lambda} - yd^d_{beta+lambda}),
    // where derivatives at or above kappa_d refer to already-solved v jets.
    for (int lambda = 0; lambda <= R[d] - kappa[d]; ++lambda) {
        std::vector<ExprTerm> terms;
        terms.push_back({Rational(1), var(VarId::ref(d, kappa[d] + lambda))});
        const auto& a = gains.a[d - 1];
        for (int beta = 0; beta < kappa[d]; ++beta) {
            int order = beta + lambda;
            Expr y_val = order < kappa[d] ? bstate.v_form[d - 1][order]
                                          : var(VarId::new_input(d, order - kappa[d]));
            Expr err = y_val - var(VarId::ref(d, order));
            terms.push_back({-rational_from_double(a[beta]), err});
        }
        chain.push_back({VarId::new_input(d, lambda),
                         make_sum(std::move(terms), Rational(0))});
    }

    // Other channel (kappa_e = r_e): a single equation referencing the
    // v-substituted Brunovsky components.
    {
        std::vector<ExprTerm> terms;
        terms.push_back({Rational(1), var(VarId::ref(e, R[e]))});
        const auto& a = gains.a[e - 1];
        for (int beta = 0; beta < kappa[e]; ++beta) {
            Expr err = bstate.v_form[e - 1][beta] - var(VarId::ref(e, beta));
            terms.push_back({-rational_from_double(a[beta]), err});
        }
        chain.push_back({VarId::new_input(e, 0), make_sum(std::move(terms), Rational(0))});
    }
    return chain;
}

Controller synthesize(const FlatSpec& spec, const BrunovskyState& bstate, const GainSet& gains,
                      const std::map<std::string, double>& params) {
    if (!spec.f_u) {
        throw MissingParameterization("control synthesis needs the input parameterization F_u");
    }
    Controller ctrl;
    ctrl.kappa = bstate.kappa;
    ctrl.R = bstate.R;
    ctrl.lead = bstate.lead;
    ctrl.gains = gains;
    ctrl.bstate = bstate;
    ctrl.params = params;
    ctrl.chain = build_v_chain(bstate, gains);

    // Solve the triangular chain into fully explicit expressions.
    SubstMap solved;
    for (const auto& entry : ctrl.chain) {
        solved[entry.v] = substitute(entry.rhs, solved);
    }

    // Replace the reference jets of F_u: components of the Brunovsky state
    // below kappa, new-input jets from kappa upward.
    SubstMap m;
    for (int j = 1; j <= 2; ++j) {
        for (int beta = 0; beta < ctrl.kappa[j]; ++beta) {
            m[VarId::ref(j, beta)] = bstate.v_form[j - 1][beta];
        }
        for (int lambda = 0; lambda <= ctrl.R[j] - ctrl.kappa[j]; ++lambda) {
            m[VarId::ref(j, ctrl.kappa[j] + lambda)] = var(VarId::new_input(j, lambda));
        }
    }
    for (int j = 0; j < 2; ++j) {
        Expr with_state = substitute((*spec.f_u)[j], m);
        ctrl.law[j] = substitute(with_state, solved);
    }
    return ctrl;
}

Eigen::Vector2d eval_control(const Controller& ctrl, std::span<const double> x,
                             const RefBundle& ref) {
    Point p;
    for (std::size_t i = 0; i < x.size(); ++i) {
        p[VarId::state(static_cast<int>(i) + 1)] = x[i];
    }
    for (const auto& [name, value] : ctrl.params) p[VarId::parameter(name)] = value;
    for (int j = 1; j <= 2; ++j) {
        if (static_cast<int>(ref.yd[j - 1].size()) < ctrl.R[j] + 1) {
            throw CountMismatch("reference bundle misses derivatives of channel " +
                                std::to_string(j));
        }
        for (int alpha = 0; alpha <= ctrl.R[j]; ++alpha) {
            p[VarId::ref(j, alpha)] = ref.yd[j - 1][alpha];
        }
    }
    EvalOptions opts;
    opts.guard = ctrl.guard;
    Eigen::Vector2d u;
    u << evaluate(ctrl.law[0], p, opts), evaluate(ctrl.law[1], p, opts);
    return u;
}

}  // namespace flatforge
