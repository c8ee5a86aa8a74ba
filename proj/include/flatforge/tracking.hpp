#pragma once

// Quasi-static tracking control: pole placement, the triangular solve for
// the new-input jets, and the final control law u = alpha(x, yd-jets).

#include "flatforge/brunovsky.hpp"

namespace flatforge {

struct GainSet {
    // a[j-1][beta], beta = 0..kappa_j-1; empty when kappa_j = 0.  The closed
    // loop enforces e^j_{kappa_j} + sum_beta a^{j,beta} e^j_beta = 0.
    std::array<std::vector<double>, 2> a;
};

// Monic characteristic polynomial coefficients from the given poles, one
// list per channel (sizes must match kappa).  Throws CountMismatch.
GainSet place_poles(MultiIndex kappa, std::span<const double> poles1,
                    std::span<const double> poles2);

struct VChainEntry {
    VarId v;   // the jet being solved, e.g. v1_2 or v2
    Expr rhs;  // over (x, params, yd jets, previously solved v jets)
};

// The triangular solve: first the lead-channel jets v^d_0..v^d_{r_d-kappa_d},
// then the single equation of the other channel.  Entries may reference
// earlier entries only.
std::vector<VChainEntry> build_v_chain(const BrunovskyState& bstate, const GainSet& gains);

struct Controller {
    MultiIndex kappa;
    MultiIndex R;
    int lead = 1;
    GainSet gains;
    BrunovskyState bstate;
    std::vector<VChainEntry> chain;
    std::array<Expr, 2> law;  // fully substituted: (x, params, yd jets) -> u
    std::map<std::string, double> params;
    double guard = 1e-9;
};

// Substitutes the Brunovsky components and the solved v-jets into F_u,
// yielding a law that depends on the state and reference jets only.  Throws
// MissingParameterization when the spec carries no F_u.
Controller synthesize(const FlatSpec& spec, const BrunovskyState& bstate, const GainSet& gains,
                      const std::map<std::string, double>& params);

// Reference derivative values at one time instant: yd[j-1][alpha] for
// alpha = 0..r_j.
struct RefBundle {
    std::array<std::vector<double>, 2> yd;
};

// Evaluates the law with every division guarded by ctrl.guard.  Throws
// SingularityEncountered naming the offending expression.
Eigen::Vector2d eval_control(const Controller& ctrl, std::span<const double> x,
                             const RefBundle& ref);

}  // namespace flatforge
