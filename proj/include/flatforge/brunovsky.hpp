#pragma once

// Generalized Brunovsky states assembled from the transformed derivative
// chain, their regularity certificates, and the substitution that rewrites
// them over the new tracking input jets.

#include "flatforge/linearize.hpp"

namespace flatforge {

struct BrunovskyState {
    MultiIndex kappa;   // (k_lead, r_other) for the chosen variant
    MultiIndex R;
    int lead = 1;       // channel whose ubar1 jets drive the components
    // components[j-1][beta] = y^j_beta for beta < kappa_j, over (x, ubar1 jets).
    std::array<std::vector<Expr>, 2> components;
    // The same components with ubar1_alpha replaced by the new-input jets
    // v^lead_alpha (the quantities a tracking loop can evaluate online).
    std::array<std::vector<Expr>, 2> v_form;

    std::vector<Expr> flat_components() const;
    std::vector<Expr> flat_v_form() const;
};

// Selects y_{[kappa-1]} with kappa = (k1, r2) (primary) or (r1, k2)
// (alternate) from the chain and produces the v-substituted form.
BrunovskyState build_brunovsky(const TransformedChain& chain, FeedbackVariant variant);

// rank d_x components == n at samples.
bool check_state_transformation(const BrunovskyState& bstate, int n, const Sampler& sampler,
                                std::mt19937_64& rng, int samples = 10, double tol = 1e-8);

// rank of the n x n Jacobian of F_x with respect to the reference jets
// indexed by y_{[kappa-1]} equals n, at jet points consistent with the
// system (reference jets bound to sampled output jets).
bool check_fx_rank(const ControlSystem& sys, const FlatSpec& spec, const BrunovskyState& bstate,
                   std::mt19937_64& rng, int samples = 10, double tol = 1e-8);

}  // namespace flatforge
