#pragma once

// Shared helpers for the test suites: finite-difference derivative oracle and
// small utilities for sampling points.

#include <cmath>
#include <random>

#include "flatforge/symexpr.hpp"

namespace flatforge::testing {

// Central finite difference d e / d v at p with step h.
inline double central_difference(const Expr& e, const VarId& v, Point p, double h) {
    Point hi = p;
    Point lo = p;
    hi[v] += h;
    lo[v] -= h;
    return (evaluate(e, hi) - evaluate(e, lo)) / (2.0 * h);
}

// Checks differentiate() against the central difference oracle at `trials`
// random points drawn from `dom`.  Points where either side raises
// DomainError are skipped (they do not count toward `trials`).
inline bool derivative_matches_fd(const Expr& e, const Domain& dom, std::mt19937_64& rng,
                                  int trials = 100, double h = 1e-6, double tol = 1e-6) {
    std::vector<VarId> vars = free_variables(e);
    if (vars.empty()) return true;
    int done = 0;
    int attempts = 0;
    while (done < trials && attempts < 50 * trials) {
        ++attempts;
        Point p = dom.sample(vars, rng);
        for (const auto& v : vars) {
            if (v.kind == VarKind::Param) continue;
            try {
                Expr de = differentiate(e, v);
                double sym = evaluate(de, p);
                double fd = central_difference(e, v, p, h);
                double err = std::abs(sym - fd) / std::max(1.0, std::abs(sym));
                if (err >= tol) return false;
            } catch (const DomainError&) {
                continue;
            }
        }
        ++done;
    }
    return done > 0;
}

}  // namespace flatforge::testing
