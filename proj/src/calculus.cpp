#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "flatforge/symexpr.hpp"

namespace flatforge {

namespace detail {
struct Node;
}

namespace {

using Memo = std::unordered_map<const detail::Node*, Expr>;

Expr diff(const Expr& e, const VarId& v, Memo& memo);

Expr diff_function(const Expr& e, const VarId& v, Memo& memo) {
    auto a = e.args();
    switch (e.function()) {
        case Fn::Sin: return cos(a[0]) * diff(a[0], v, memo);
        case Fn::Cos: return -(sin(a[0]) * diff(a[0], v, memo));
        case Fn::Tan: {
            Expr t = tan(a[0]);
            return (constant(1) + t * t) * diff(a[0], v, memo);
        }
        case Fn::Exp: return e * diff(a[0], v, memo);
        case Fn::Ln: return pow(a[0], Rational(-1)) * diff(a[0], v, memo);
        case Fn::Atan: {
            Expr den = constant(1) + a[0] * a[0];
            return pow(den, Rational(-1)) * diff(a[0], v, memo);
        }
        case Fn::Atan2: {
            // d atan2(y, x) = (x dy - y dx) / (x^2 + y^2)
            const Expr& y = a[0];
            const Expr& x = a[1];
            Expr den = x * x + y * y;
            return (x * diff(y, v, memo) - y * diff(x, v, memo)) * pow(den, Rational(-1));
        }
    }
    return constant(0);
}

Expr diff(const Expr& e, const VarId& v, Memo& memo) {
    if (auto it = memo.find(e.raw()); it != memo.end()) return it->second;
    Expr result;
    switch (e.kind()) {
        case NodeKind::Constant:
            result = constant(0);
            break;
        case NodeKind::Variable:
            result = constant(e.variable() == v ? 1 : 0);
            break;
        case NodeKind::Sum: {
            std::vector<ExprTerm> parts;
            parts.reserve(e.terms().size());
            for (const auto& t : e.terms()) parts.push_back({t.weight, diff(t.factor, v, memo)});
            result = make_sum(std::move(parts), Rational(0));
            break;
        }
        case NodeKind::Product: {
            // d(c * prod f_i^e_i) = sum_i c*e_i * f_i^(e_i - 1) * prod_{j!=i} f_j^e_j * df_i
            std::vector<ExprTerm> parts;
            auto factors = e.terms();
            for (std::size_t i = 0; i < factors.size(); ++i) {
                Expr dfi = diff(factors[i].factor, v, memo);
                if (dfi.is_zero_constant()) continue;
                std::vector<ExprTerm> rest(factors.begin(), factors.end());
                rest[i].weight -= Rational(1);
                Expr part = make_product(std::move(rest), e.affine_constant() * factors[i].weight);
                parts.push_back({Rational(1), part * dfi});
            }
            result = make_sum(std::move(parts), Rational(0));
            break;
        }
        case NodeKind::Function:
            result = diff_function(e, v, memo);
            break;
    }
    memo.emplace(e.raw(), result);
    return result;
}

}  // namespace

Expr differentiate(const Expr& e, const VarId& v) {
    Memo memo;
    return diff(e, v, memo);
}

namespace {

Expr subst(const Expr& e, const SubstMap& b, Memo& memo) {
    if (auto it = memo.find(e.raw()); it != memo.end()) return it->second;
    Expr result = e;
    switch (e.kind()) {
        case NodeKind::Constant:
            break;
        case NodeKind::Variable: {
            if (auto it = b.find(e.variable()); it != b.end()) result = it->second;
            break;
        }
        case NodeKind::Sum: {
            std::vector<ExprTerm> parts;
            parts.reserve(e.terms().size());
            for (const auto& t : e.terms()) parts.push_back({t.weight, subst(t.factor, b, memo)});
            result = make_sum(std::move(parts), e.affine_constant());
            break;
        }
        case NodeKind::Product: {
            std::vector<ExprTerm> parts;
            parts.reserve(e.terms().size());
            for (const auto& t : e.terms()) parts.push_back({t.weight, subst(t.factor, b, memo)});
            result = make_product(std::move(parts), e.affine_constant());
            break;
        }
        case NodeKind::Function: {
            std::vector<Expr> args;
            args.reserve(e.args().size());
            for (const auto& a : e.args()) args.push_back(subst(a, b, memo));
            result = make_function(e.function(), std::move(args));
            break;
        }
    }
    memo.emplace(e.raw(), result);
    return result;
}

}  // namespace

Expr substitute(const Expr& e, const SubstMap& bindings) {
    if (bindings.empty()) return e;
    Memo memo;
    return subst(e, bindings, memo);
}

namespace {

void collect(const Expr& e, std::unordered_set<const detail::Node*>& seen,
             std::vector<VarId>& out) {
    if (!seen.insert(e.raw()).second) return;
    switch (e.kind()) {
        case NodeKind::Constant: return;
        case NodeKind::Variable:
            out.push_back(e.variable());
            return;
        case NodeKind::Sum:
        case NodeKind::Product:
            for (const auto& t : e.terms()) collect(t.factor, seen, out);
            return;
        case NodeKind::Function:
            for (const auto& a : e.args()) collect(a, seen, out);
            return;
    }
}

}  // namespace

void collect_free_variables(const Expr& e, std::vector<VarId>& out) {
    std::unordered_set<const detail::Node*> seen;
    collect(e, seen, out);
}

std::vector<VarId> free_variables(const Expr& e) {
    std::vector<VarId> out;
    collect_free_variables(e, out);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

bool depends_on(const Expr& e, const VarId& v) {
    std::vector<VarId> vars = free_variables(e);
    return std::binary_search(vars.begin(), vars.end(), v);
}

}  // namespace flatforge
