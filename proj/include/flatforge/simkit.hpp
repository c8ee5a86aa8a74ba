#pragma once

// Reference trajectories with exact derivatives, fixed-step closed-loop
// integration, and the certificate that the simulated tracking error obeys
// the placed linear error dynamics.

#include <iosfwd>

#include "flatforge/tracking.hpp"

namespace flatforge {

// One closed-form reference atom per output channel.
struct RefAtom {
    enum class Kind { Constant, Poly, Sine };
    Kind kind = Kind::Constant;
    std::vector<double> coeffs;  // Poly: c0 + c1 t + c2 t^2 + ...
    double amplitude = 0.0;      // Sine: A sin(w t + phase) + offset
    double omega = 0.0;
    double phase = 0.0;
    double offset = 0.0;         // Constant uses offset only

    double deriv(int order, double t) const;
};

struct Reference {
    std::array<RefAtom, 2> ch;

    RefBundle bundle(MultiIndex R, double t) const;
};

// Atom grammar: "const:<c>" | "poly:<c0>,<c1>,..." | "sin:<A>,<w>,<phase>,<offset>".
RefAtom parse_ref_atom(const std::string& text);
// Two atoms separated by ';'.
Reference parse_reference(const std::string& text);

struct SimConfig {
    double t0 = 0.0;
    double tf = 5.0;
    double dt = 1e-3;
    Eigen::VectorXd x0;
    double guard = 1e-9;
};

struct SimResult {
    int n = 0;
    std::vector<double> t;
    std::vector<Eigen::VectorXd> x;
    std::vector<Eigen::Vector2d> u;
    std::vector<Eigen::Vector2d> y;
    std::vector<Eigen::Vector2d> yd;
    std::vector<Eigen::Vector2d> e;
    bool truncated = false;
    std::string truncation_reason;

    std::size_t rows() const { return t.size(); }
};

// Classical fixed-step RK4; the control law is re-evaluated at every stage.
// A singularity guard trip stops the run and marks the result truncated.
SimResult simulate(const ControlSystem& sys, const std::array<Expr, 2>& phi,
                   const Controller& ctrl, const Reference& ref, const SimConfig& cfg);

// Header `t,x1..xn,u1,u2,y1,y2,yd1,yd2,e1,e2`, 17 significant digits.
void write_csv(const SimResult& result, std::ostream& os);

struct ErrorDynReport {
    bool ok = false;
    double max_dev = 0.0;      // peak-normalized deviation from the modal solution
    double max_e_exact = 0.0;  // largest |e^j| over channels checked for exactness
    double worst_time = 0.0;
    std::string detail;
};

// Compares the simulated error of each channel with the analytic solution of
// its placed linear dynamics (modal expansion from the gain coefficients;
// initial error jets evaluated through the Brunovsky v-form, never by
// numerical differentiation).  Channels with kappa_j = 0 are checked for
// exactness instead.  Throws CheckFailed when the deviation exceeds tol.
ErrorDynReport error_dynamics_check(const SimResult& result, const Controller& ctrl,
                                    const Reference& ref, double tol = 1e-3);

}  // namespace flatforge
