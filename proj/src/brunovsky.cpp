#include "flatforge/brunovsky.hpp"

#include <algorithm>

namespace flatforge {

std::vector<Expr> BrunovskyState::flat_components() const {
    std::vector<Expr> out;
    for (int j = 0; j < 2; ++j) {
        for (const auto& e : components[j]) out.push_back(e);
    }
    return out;
}

std::vector<Expr> BrunovskyState::flat_v_form() const {
    std::vector<Expr> out;
    for (int j = 0; j < 2; ++j) {
        for (const auto& e : v_form[j]) out.push_back(e);
    }
    return out;
}

BrunovskyState build_brunovsky(const TransformedChain& chain, FeedbackVariant variant) {
    // The chain was built for one fixed feedback; the variant must match the
    // channel whose derivative became the new input.
    const int lead = chain.lead;
    if ((variant == FeedbackVariant::Primary && lead != 1) ||
        (variant == FeedbackVariant::Alternate && lead != 2)) {
        throw ValidationError("Brunovsky variant does not match the chain's lead channel");
    }
    const int other = lead == 1 ? 2 : 1;

    BrunovskyState b;
    b.lead = lead;
    b.R = chain.R;
    // kappa: the lead channel keeps its relative degree, the other channel
    // contributes all derivatives below its top order.
    if (lead == 1) {
        b.kappa = {chain.K.a1, chain.R.a2};
    } else {
        b.kappa = {chain.R.a1, chain.K.a2};
    }

    for (int j = 1; j <= 2; ++j) {
        for (int beta = 0; beta < b.kappa[j]; ++beta) {
            b.components[j - 1].push_back(chain.at(j, beta));
        }
    }

    // Replace the prolonged-input jets ubar1_a by the tracking input jets
    // v^lead_a; this is exactly the state a quasi-static loop evaluates.
    const int depth = chain.R[other] - chain.K[other];
    SubstMap m;
    for (int a = 0; a < std::max(depth, 1); ++a) {
        m[VarId::bar_input(1, a)] = var(VarId::new_input(lead, a));
    }
    for (int j = 0; j < 2; ++j) {
        for (const auto& e : b.components[j]) {
            b.v_form[j].push_back(substitute(e, m));
        }
    }
    return b;
}

bool check_state_transformation(const BrunovskyState& bstate, int n, const Sampler& sampler,
                                std::mt19937_64& rng, int samples, double tol) {
    std::vector<Expr> rows = bstate.flat_components();
    if (static_cast<int>(rows.size()) != n) return false;
    std::vector<VarId> cols;
    cols.reserve(n);
    for (int i = 1; i <= n; ++i) cols.push_back(VarId::state(i));
    return numeric_rank(jacobian(rows, cols), sampler, rng, samples, tol) == n;
}

bool check_fx_rank(const ControlSystem& sys, const FlatSpec& spec, const BrunovskyState& bstate,
                   std::mt19937_64& rng, int samples, double tol) {
    if (!spec.f_x) throw MissingParameterization("check_fx_rank needs F_x");
    const std::vector<Expr>& fx = *spec.f_x;

    // Columns: the reference jets indexed by y_{[kappa-1]}.
    std::vector<VarId> cols;
    for (int j = 1; j <= 2; ++j) {
        for (int beta = 0; beta < bstate.kappa[j]; ++beta) {
            cols.push_back(VarId::ref(j, beta));
        }
    }
    ExprMatrix jac = jacobian(fx, cols);

    // Sample reference jets consistently with the system: draw (x, u-jets)
    // and push them through the output derivatives up to R-1.
    MultiIndex top = bstate.R.shifted(-1);
    OutputJets jets = output_derivatives(sys, spec.phi, top);
    std::vector<VarId> base_vars;
    for (int j = 0; j < 2; ++j) {
        for (const auto& e : jets.ch[j]) collect_free_variables(e, base_vars);
    }
    std::sort(base_vars.begin(), base_vars.end());
    base_vars.erase(std::unique(base_vars.begin(), base_vars.end()), base_vars.end());

    int n = sys.n;
    int valid = 0, attempts = 0, rank = 0;
    while (valid < samples && attempts < 10 * samples) {
        ++attempts;
        Point p = sys.dom.sample(base_vars, rng);
        try {
            Point y = p;
            for (int j = 1; j <= 2; ++j) {
                for (int alpha = 0; alpha <= top[j]; ++alpha) {
                    y[VarId::ref(j, alpha)] = evaluate(jets.at(j, alpha), p);
                }
            }
            rank = std::max(rank, matrix_rank(jac.eval(y), tol));
        } catch (const DomainError&) {
            continue;
        }
        ++valid;
    }
    if (valid < samples) {
        throw InconclusiveDomain("F_x rank check exhausted its redraw budget");
    }
    return rank == n;
}

}  // namespace flatforge
