#pragma once

// System / flat-output model and the structural analysis: total derivatives
// along the system vector field, relative degrees, the codistribution
// dimension sequence, the derivative orders of the parameterizing map, and
// the parameterization round-trip oracle.

#include <array>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flatforge/symexpr.hpp"

namespace flatforge {

// Pairs of derivative orders (one per flat-output channel).
struct MultiIndex {
    int a1 = 0;
    int a2 = 0;

    int operator[](int j) const { return j == 1 ? a1 : a2; }
    int total() const { return a1 + a2; }  // #A
    MultiIndex shifted(int c) const { return {a1 + c, a2 + c}; }

    friend MultiIndex operator+(MultiIndex a, MultiIndex b) { return {a.a1 + b.a1, a.a2 + b.a2}; }
    friend MultiIndex operator-(MultiIndex a, MultiIndex b) { return {a.a1 - b.a1, a.a2 - b.a2}; }
    friend bool operator==(const MultiIndex&, const MultiIndex&) = default;

    bool leq(const MultiIndex& o) const { return a1 <= o.a1 && a2 <= o.a2; }

    std::string str() const {
        return "(" + std::to_string(a1) + ", " + std::to_string(a2) + ")";
    }
};

struct ControlSystem {
    int n = 0;
    std::vector<std::string> state_names;           // display names, one per state
    std::array<std::string, 2> input_names{"u1", "u2"};
    VarKind input_kind = VarKind::InputJet;         // BarInputJet after a feedback
    std::vector<Expr> f;                            // n dynamics expressions
    std::map<std::string, double> params;
    Domain dom;                                     // includes parameter bindings

    VarId state_var(int i) const { return VarId::state(i); }
    VarId input_var(int j, int order = 0) const { return VarId{input_kind, j, order, {}}; }

    std::vector<VarId> state_vars() const;
    // (x, u) coordinates: states followed by the two order-0 inputs.
    std::vector<VarId> base_coordinates() const;
};

struct FlatSpec {
    std::array<Expr, 2> phi;                        // candidate flat output in (x, u)
    std::optional<std::vector<Expr>> f_x;           // x = F_x(y-jets), n expressions
    std::optional<std::array<Expr, 2>> f_u;         // u = F_u(y-jets)
    std::optional<MultiIndex> declared_R;
};

struct FlatnessReport {
    MultiIndex K;
    MultiIndex R;
    std::vector<int> dims;                 // Dim B_{K+beta}, beta = 0..(n - #K)
    bool unit_growth_ok = false;           // dimensions grow by exactly one
    bool input_rank_one_ok = false;        // rank d_u phi_K == 1
    bool static_feedback_linearizable = false;  // R == K
    int prolongations = 0;                 // #R - n

    std::string str() const;
};

// Time derivative along the system vector field; higher input jets are
// introduced on demand.
Expr total_derivative(const Expr& e, const ControlSystem& sys);

struct OutputJets {
    std::array<std::vector<Expr>, 2> ch;  // ch[j-1][alpha] = phi^j_alpha

    const Expr& at(int j, int alpha) const { return ch[j - 1][alpha]; }
    // phi^1_0..a1 followed by phi^2_0..a2.
    std::vector<Expr> flatten() const;
};

// phi^j_alpha for alpha = 0..A[j].
OutputJets output_derivatives(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                              MultiIndex A);

// Relative degree per channel: the smallest derivative order that depends on
// an input.  Throws NoRelativeDegree when the search bound n+2 is exceeded.
MultiIndex relative_degrees(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                            std::mt19937_64& rng);

// Dim B_{K+beta} for beta = 0..beta_max, computed numerically at samples.
std::vector<int> codistribution_dims(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                                     MultiIndex K, int beta_max, std::mt19937_64& rng,
                                     int samples = 10);

// r_j = k_j + (n - #K), cross-checked against the dimension sequence and the
// declared orders.  Throws InconsistentR on any mismatch.
MultiIndex compute_orders(const ControlSystem& sys, const std::array<Expr, 2>& phi, MultiIndex K,
                          std::mt19937_64& rng, const std::optional<MultiIndex>& declared,
                          const std::vector<int>* dims = nullptr);

// The codistribution dimensions grow by exactly one per step.
bool check_unit_growth(const std::vector<int>& dims);

// rank d_u (phi^1_{k1}, phi^2_{k2}) == 1 on the domain.
bool check_rank_one_input(const ControlSystem& sys, const std::array<Expr, 2>& phi, MultiIndex K,
                          std::mt19937_64& rng);

struct RoundTripReport {
    double max_residual_x = 0.0;
    double max_residual_u = 0.0;
    int trials = 0;
};

// Samples (x, u, u-jets), evaluates the output jets, binds them to the
// reference-jet variables of F_x/F_u and checks the round trip.  Throws
// RoundTripFailure with the worst point on failure.
RoundTripReport verify_parameterization(const ControlSystem& sys, const FlatSpec& spec,
                                        std::mt19937_64& rng, int trials = 100);

// Full analysis pipeline; validates nothing (call validate_system first).
FlatnessReport analyze(const ControlSystem& sys, const FlatSpec& spec, std::mt19937_64& rng);

// ControlSystem invariants: expression variable classes and rank d_u f == 2.
void validate_system(const ControlSystem& sys, std::mt19937_64& rng);

// FlatSpec invariants: variable classes, functional independence of phi, and
// the round trip when a parameterization is present.
void validate_spec(const ControlSystem& sys, const FlatSpec& spec, std::mt19937_64& rng);

}  // namespace flatforge
