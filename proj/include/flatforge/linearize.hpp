#pragma once

// Static feedback that turns a flat-output derivative into a new input, the
// transformed system, the triangular derivative chain in the new
// coordinates, input prolongation and the static-feedback-linearizability
// certificate.

#include <optional>

#include <Eigen/Core>

#include "flatforge/flatsys.hpp"

namespace flatforge {

enum class FeedbackVariant {
    Primary,    // ubar1 = phi^1_{k1}
    Alternate,  // ubar1 = phi^2_{k2}
};

struct StaticFeedback {
    std::array<Expr, 2> forward;                  // ubar = (phi^lead_{k}, u^complement) in (x, u)
    std::optional<std::array<Expr, 2>> inverse;   // u = inverse(x, ubar) when solvable in closed form
    int complement = 2;                           // which raw input was kept as ubar2
    int lead_channel = 1;                         // output channel driving ubar1
    double min_sigma = 0.0;                       // smallest singular value of d_u forward over samples
};

// Chooses the complement input by conditioning (largest smallest singular
// value of the input Jacobian over samples) and solves for the closed-form
// inverse when the lead expression is a single rational power of the
// remaining input.  Throws SingularFeedback when no complement gives a
// regular Jacobian on the domain.
StaticFeedback build_feedback(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                              MultiIndex K, std::mt19937_64& rng);
// Same with the roles of the output channels swapped.
StaticFeedback build_feedback_alt(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                                  MultiIndex K, std::mt19937_64& rng);

// Pointwise inverse by damped Newton iteration (tolerance 1e-12, at most 50
// steps).  `base` must bind the states and any parameters.  Throws
// NewtonDivergence.
Eigen::Vector2d invert_feedback_numeric(const StaticFeedback& fb, const ControlSystem& sys,
                                        const Point& base, const Eigen::Vector2d& ubar,
                                        const Eigen::Vector2d& guess);

// The system in (x, ubar) coordinates.  With a closed-form inverse the
// dynamics are symbolic; otherwise only pointwise evaluation is available.
class TransformedSystem {
public:
    TransformedSystem(ControlSystem sys_bar, ControlSystem original, StaticFeedback fb,
                      bool symbolic)
        : sys_bar_(std::move(sys_bar)), original_(std::move(original)), fb_(std::move(fb)),
          symbolic_(symbolic) {}

    bool symbolic() const { return symbolic_; }
    const ControlSystem& system() const;          // throws when not symbolic
    const ControlSystem& original() const { return original_; }
    const StaticFeedback& feedback() const { return fb_; }

    // f(x, u) with u recovered from ubar (symbolically or by Newton).
    Eigen::VectorXd eval_field(const Eigen::VectorXd& x, const Eigen::Vector2d& ubar) const;

private:
    ControlSystem sys_bar_;
    ControlSystem original_;
    StaticFeedback fb_;
    bool symbolic_;
};

TransformedSystem transform_system(const ControlSystem& sys, const StaticFeedback& fb);

// Flat output and its derivatives up to R in the transformed coordinates.
// `y[c][alpha]` lives over (x, ubar1 jets) except the top derivative of the
// non-lead channel, which also carries ubar2.
struct TransformedChain {
    int lead = 1;
    MultiIndex K;
    MultiIndex R;
    std::array<std::vector<Expr>, 2> y;  // y[j-1][alpha], alpha = 0..r_j
    int prolongations = 0;               // p = #R - n

    const Expr& at(int j, int alpha) const { return y[j - 1][alpha]; }
};

// Computes the chain, asserts the triangular layout (the complement input
// appears only in the top derivative of the non-lead channel; the lead
// channel reproduces the ubar1 jets exactly) and checks that the full map is
// a local diffeomorphism at samples.  Throws StructureViolation or
// RankDeficient.
TransformedChain transformed_chain(const TransformedSystem& tsys, const std::array<Expr, 2>& phi,
                                   MultiIndex K, MultiIndex R, std::mt19937_64& rng);

struct ProlongedSystem {
    std::vector<VarId> state;    // x_1..x_n, ubar1, ubar1_1, ..., ubar1_{p-1}
    std::array<VarId, 2> inputs; // (ubar1_p, ubar2)
    std::vector<Expr> f;         // dynamics per state entry
    int p = 0;
};

// Appends p integrators in front of ubar1; p = 0 leaves the system as is.
ProlongedSystem prolong(const ControlSystem& sys_bar, int p);

// True iff the Jacobian of the chain outputs with respect to (extended
// state, inputs) reaches rank #R + 2 at samples.
bool check_static_linearizable(const ProlongedSystem& prolonged, const TransformedChain& chain,
                               const Sampler& sampler, std::mt19937_64& rng, int samples = 10);

// Draws (x, u-jets) from the base domain and pushes them through the
// jet-extended feedback, producing consistent values for (x, ubar jets).
class FeedbackSampler : public Sampler {
public:
    FeedbackSampler(const ControlSystem& sys, const StaticFeedback& fb, int max_order_lead,
                    int max_order_complement = 0);
    Point sample(std::mt19937_64& rng) const override;

private:
    const ControlSystem sys_;
    std::vector<Expr> jets1_;  // ubar1_alpha in (x, u-jets)
    std::vector<Expr> jets2_;  // ubar2_alpha in (x, u-jets)
    std::vector<VarId> base_vars_;
};

// Convenience pipeline: feedback, transformed system, chain and a consistent
// sampler for downstream certificates.
struct Linearization {
    StaticFeedback fb;
    TransformedSystem tsys;
    TransformedChain chain;
    std::shared_ptr<FeedbackSampler> sampler;
};

Linearization linearize(const ControlSystem& sys, const FlatSpec& spec,
                        const FlatnessReport& report, FeedbackVariant variant,
                        std::mt19937_64& rng);

}  // namespace flatforge
