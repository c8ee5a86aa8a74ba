#include "flatforge/symexpr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace flatforge {

// ---------------------------------------------------------------------------
// Rational
// ---------------------------------------------------------------------------
namespace {

using int128 = __int128;

long long narrow(int128 v, const char* what) {
    if (v > std::numeric_limits<long long>::max() || v < std::numeric_limits<long long>::min()) {
        throw Error("RationalOverflow", std::string("rational overflow in ") + what);
    }
    return static_cast<long long>(v);
}

std::pair<long long, long long> reduced(int128 n, int128 d, const char* what) {
    if (d == 0) throw DomainError("rational with zero denominator");
    if (d < 0) {
        n = -n;
        d = -d;
    }
    int128 a = n < 0 ? -n : n;
    int128 b = d;
    while (b != 0) {
        int128 t = a % b;
        a = b;
        b = t;
    }
    if (a != 0) {
        n /= a;
        d /= a;
    }
    return {narrow(n, what), narrow(d, what)};
}

}  // namespace

Rational::Rational(long long n, long long d) {
    auto [rn, rd] = reduced(n, d, "construction");
    num_ = rn;
    den_ = rd;
}

Rational Rational::operator-() const {
    Rational r;
    r.num_ = narrow(-static_cast<int128>(num_), "negation");
    r.den_ = den_;
    return r;
}

Rational& Rational::operator+=(const Rational& o) {
    auto [n, d] = reduced(static_cast<int128>(num_) * o.den_ + static_cast<int128>(o.num_) * den_,
                          static_cast<int128>(den_) * o.den_, "addition");
    num_ = n;
    den_ = d;
    return *this;
}

Rational& Rational::operator-=(const Rational& o) { return *this += -o; }

Rational& Rational::operator*=(const Rational& o) {
    auto [n, d] = reduced(static_cast<int128>(num_) * o.num_,
                          static_cast<int128>(den_) * o.den_, "multiplication");
    num_ = n;
    den_ = d;
    return *this;
}

Rational& Rational::operator/=(const Rational& o) {
    if (o.num_ == 0) throw DomainError("rational division by zero");
    auto [n, d] = reduced(static_cast<int128>(num_) * o.den_,
                          static_cast<int128>(den_) * o.num_, "division");
    num_ = n;
    den_ = d;
    return *this;
}

Rational Rational::pow_int(long long e) const {
    if (e == 0) return Rational(1);
    if (num_ == 0 && e < 0) throw DomainError("zero raised to a negative power");
    Rational base = *this;
    if (e < 0) {
        base = Rational(den_, num_);
        e = -e;
    }
    Rational acc(1);
    while (e > 0) {
        if (e & 1) acc *= base;
        base = (e > 1) ? base * base : base;
        e >>= 1;
    }
    return acc;
}

std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
    int128 lhs = static_cast<int128>(a.num_) * b.den_;
    int128 rhs = static_cast<int128>(b.num_) * a.den_;
    if (lhs < rhs) return std::strong_ordering::less;
    if (lhs > rhs) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
}

std::string Rational::str() const {
    if (den_ == 1) return std::to_string(num_);
    return std::to_string(num_) + "/" + std::to_string(den_);
}

Rational rational_from_double(double x) {
    if (!std::isfinite(x)) throw DomainError("cannot rationalize a non-finite value");
    const double tol = 1e-12 * (1.0 + std::abs(x));
    long long sign = x < 0 ? -1 : 1;
    double r = std::abs(x);
    // continued-fraction convergents p/q
    long long p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    double frac = r;
    for (int it = 0; it < 64; ++it) {
        double fl = std::floor(frac);
        if (fl > 4e18) break;
        long long a = static_cast<long long>(fl);
        long long p2 = a * p1 + p0;
        long long q2 = a * q1 + q0;
        if (q2 > 2000000000LL || p2 < 0 || q2 < 0) break;
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        double approx = static_cast<double>(p1) / static_cast<double>(q1);
        if (std::abs(approx - r) <= tol) return Rational(sign * p1, q1);
        double rem = frac - fl;
        if (rem < 1e-15) break;
        frac = 1.0 / rem;
    }
    if (q1 > 0 && std::abs(static_cast<double>(p1) / static_cast<double>(q1) - r) <= tol) {
        return Rational(sign * p1, q1);
    }
    throw DomainError("no bounded rational approximation for " + std::to_string(x));
}

// ---------------------------------------------------------------------------
// VarId
// ---------------------------------------------------------------------------
std::string VarId::name() const {
    auto jet = [this](const char* prefix) {
        std::string s = prefix + std::to_string(index);
        if (order > 0) s += "_" + std::to_string(order);
        return s;
    };
    switch (kind) {
        case VarKind::State: return "x" + std::to_string(index);
        case VarKind::InputJet: return jet("u");
        case VarKind::BarInputJet: return jet("ubar");
        case VarKind::NewInputJet: return jet("v");
        case VarKind::RefJet: return jet("yd");
        case VarKind::Param: return param;
    }
    return "?";
}

std::size_t VarIdHash::operator()(const VarId& v) const noexcept {
    std::size_t h = std::hash<std::string>{}(v.param);
    h ^= (static_cast<std::size_t>(v.kind) * 0x9e3779b97f4a7c15ULL) + (h << 6) + (h >> 2);
    h ^= (static_cast<std::size_t>(v.index) * 0xc2b2ae3d27d4eb4fULL) + (h << 6) + (h >> 2);
    h ^= (static_cast<std::size_t>(v.order) * 0x165667b19e3779f9ULL) + (h << 6) + (h >> 2);
    return h;
}

// ---------------------------------------------------------------------------
// Nodes
// ---------------------------------------------------------------------------
namespace detail {

struct Node {
    NodeKind kind;
    Rational value;              // Constant
    VarId var;                   // Variable
    Rational constant;           // Sum: additive constant; Product: coefficient
    std::vector<ExprTerm> terms;  // Sum / Product
    Fn fn = Fn::Sin;             // Function
    std::vector<Expr> args;      // Function
    std::size_t hash = 0;
};

namespace {

std::size_t mix(std::size_t h, std::size_t v) {
    return h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

std::size_t rational_hash(const Rational& r) {
    return mix(std::hash<long long>{}(r.num()), std::hash<long long>{}(r.den()));
}

std::size_t node_hash(const Node& n) {
    std::size_t h = static_cast<std::size_t>(n.kind) * 0x100000001b3ULL;
    switch (n.kind) {
        case NodeKind::Constant: return mix(h, rational_hash(n.value));
        case NodeKind::Variable: return mix(h, VarIdHash{}(n.var));
        case NodeKind::Sum:
        case NodeKind::Product:
            h = mix(h, rational_hash(n.constant));
            for (const auto& t : n.terms) {
                h = mix(h, rational_hash(t.weight));
                h = mix(h, t.factor.hash());
            }
            return h;
        case NodeKind::Function:
            h = mix(h, static_cast<std::size_t>(n.fn));
            for (const auto& a : n.args) h = mix(h, a.hash());
            return h;
    }
    return h;
}

}  // namespace
}  // namespace detail

// Friend builders -----------------------------------------------------------

Expr detail_from_node(std::shared_ptr<const detail::Node> n) { return Expr(std::move(n)); }

static Expr finish(detail::Node n) {
    n.hash = detail::node_hash(n);
    return detail_from_node(std::make_shared<const detail::Node>(std::move(n)));
}

Expr make_constant(Rational r) {
    detail::Node n;
    n.kind = NodeKind::Constant;
    n.value = std::move(r);
    return finish(std::move(n));
}

Expr make_variable(VarId v) {
    detail::Node n;
    n.kind = NodeKind::Variable;
    n.var = std::move(v);
    return finish(std::move(n));
}

namespace {

struct ExprLess {
    bool operator()(const Expr& a, const Expr& b) const { return Expr::compare(a, b) < 0; }
};

// Builds a Product node directly from already-canonical parts.
Expr raw_product(Rational coeff, std::vector<ExprTerm> factors) {
    detail::Node n;
    n.kind = NodeKind::Product;
    n.constant = std::move(coeff);
    n.terms = std::move(factors);
    return finish(std::move(n));
}

// Builds a Sum node directly from already-canonical parts.
Expr raw_sum(Rational constant, std::vector<ExprTerm> terms) {
    detail::Node n;
    n.kind = NodeKind::Sum;
    n.constant = std::move(constant);
    n.terms = std::move(terms);
    return finish(std::move(n));
}

}  // namespace

Expr make_sum(std::vector<ExprTerm> in, Rational k) {
    std::map<Expr, Rational, ExprLess> acc;

    auto add_term = [&](const Rational& c, const Expr& e, auto&& self) -> void {
        if (c.is_zero()) return;
        switch (e.kind()) {
            case NodeKind::Constant:
                k += c * e.constant_value();
                return;
            case NodeKind::Sum: {
                k += c * e.affine_constant();
                for (const auto& t : e.terms()) self(c * t.weight, t.factor, self);
                return;
            }
            case NodeKind::Product: {
                const Rational& pc = e.affine_constant();
                if (!pc.is_one()) {
                    if (e.terms().size() == 1 && e.terms()[0].weight.is_one()) {
                        // single bare factor: recurse, it may be a sum again
                        self(c * pc, e.terms()[0].factor, self);
                    } else {
                        std::vector<ExprTerm> fs(e.terms().begin(), e.terms().end());
                        acc[raw_product(Rational(1), std::move(fs))] += c * pc;
                    }
                    return;
                }
                acc[e] += c;
                return;
            }
            default:
                acc[e] += c;
                return;
        }
    };
    for (auto& t : in) add_term(t.weight, t.factor, add_term);

    std::vector<ExprTerm> terms;
    terms.reserve(acc.size());
    for (auto& [e, c] : acc) {
        if (!c.is_zero()) terms.push_back({c, e});
    }

    if (terms.empty()) return make_constant(std::move(k));
    if (k.is_zero() && terms.size() == 1) {
        if (terms[0].weight.is_one()) return terms[0].factor;
        // c*t with c != 1 is canonically a product with coefficient c.
        return make_product({{Rational(1), terms[0].factor}}, terms[0].weight);
    }
    // Canonical sign: the leading term carries a positive weight; otherwise
    // the sign is factored out, so x - y and -(y - x) share one form.
    if (terms.front().weight.is_negative()) {
        for (auto& t : terms) t.weight = -t.weight;
        Expr inner = raw_sum(-k, std::move(terms));
        return make_product({{Rational(1), inner}}, Rational(-1));
    }
    return raw_sum(std::move(k), std::move(terms));
}

Expr make_product(std::vector<ExprTerm> in, Rational coeff) {
    if (coeff.is_zero()) return make_constant(Rational(0));
    std::map<Expr, Rational, ExprLess> acc;
    bool zero = false;

    auto add_factor = [&](const Rational& e, const Expr& b, auto&& self) -> void {
        if (zero || e.is_zero()) return;
        switch (b.kind()) {
            case NodeKind::Constant: {
                const Rational& v = b.constant_value();
                if (v.is_one()) return;
                if (v.is_zero()) {
                    if (e.is_negative()) {
                        acc[b] += e;  // 0^negative: kept, evaluation raises DomainError
                    } else {
                        zero = true;
                    }
                    return;
                }
                if (e.is_integer()) {
                    coeff *= v.pow_int(e.num());
                } else {
                    acc[b] += e;  // e.g. 2^(1/2) stays symbolic
                }
                return;
            }
            case NodeKind::Product: {
                if (e.is_integer()) {
                    coeff *= b.affine_constant().pow_int(e.num());
                    for (const auto& t : b.terms()) self(t.weight * e, t.factor, self);
                } else {
                    // Fractional powers distribute over products and merge
                    // exponents multiplicatively (principal branch; all
                    // decisions rest on sampling domains where the factors
                    // are positive).  Keeps e.g. sqrt(u1*u2)/sqrt(u1) in a
                    // form where the u1 powers cancel.
                    if (!b.affine_constant().is_one()) {
                        self(e, make_constant(b.affine_constant()), self);
                    }
                    for (const auto& t : b.terms()) self(t.weight * e, t.factor, self);
                }
                return;
            }
            default:
                acc[b] += e;
                return;
        }
    };
    for (auto& t : in) add_factor(t.weight, t.factor, add_factor);

    if (zero) return make_constant(Rational(0));

    std::vector<ExprTerm> factors;
    factors.reserve(acc.size());
    for (auto& [b, e] : acc) {
        if (!e.is_zero()) factors.push_back({e, b});
    }

    if (factors.empty()) return make_constant(std::move(coeff));
    if (coeff.is_one() && factors.size() == 1 && factors[0].weight.is_one()) {
        return factors[0].factor;
    }
    detail::Node n;
    n.kind = NodeKind::Product;
    n.constant = std::move(coeff);
    n.terms = std::move(factors);
    return finish(std::move(n));
}

Expr make_function(Fn fn, std::vector<Expr> args) {
    // Exact folds at distinguished points.
    if (args.size() == 1 && args[0].is_constant()) {
        const Rational& v = args[0].constant_value();
        if (v.is_zero()) {
            switch (fn) {
                case Fn::Sin:
                case Fn::Tan:
                case Fn::Atan: return make_constant(Rational(0));
                case Fn::Cos:
                case Fn::Exp: return make_constant(Rational(1));
                default: break;
            }
        }
        if (v.is_one() && fn == Fn::Ln) return make_constant(Rational(0));
    }
    // Pull signs through odd/even functions so that e.g. cos(-x) == cos(x).
    if (args.size() == 1 && (fn == Fn::Sin || fn == Fn::Cos || fn == Fn::Tan || fn == Fn::Atan)) {
        const Expr& a = args[0];
        auto negated = [](const Expr& x) {
            switch (x.kind()) {
                case NodeKind::Constant: return x.constant_value().is_negative();
                case NodeKind::Product: return x.affine_constant().is_negative();
                case NodeKind::Sum:
                    return !x.terms().empty() &&
                           !(x.affine_constant() > Rational(0)) &&
                           std::all_of(x.terms().begin(), x.terms().end(), [](const ExprTerm& t) {
                               return t.weight.is_negative();
                           });
                default: return false;
            }
        };
        bool negative = negated(a);
        if (negative) {
            Expr flipped = scale(a, Rational(-1));
            Expr inner = make_function(fn, {flipped});
            return fn == Fn::Cos ? inner : -inner;
        }
    }
    detail::Node n;
    n.kind = NodeKind::Function;
    n.fn = fn;
    n.args = std::move(args);
    return finish(std::move(n));
}

// ---------------------------------------------------------------------------
// Expr members
// ---------------------------------------------------------------------------
Expr::Expr() : node_(make_constant(Rational(0)).node_) {}

NodeKind Expr::kind() const { return node_->kind; }

bool Expr::is_zero_constant() const {
    return node_->kind == NodeKind::Constant && node_->value.is_zero();
}

bool Expr::is_one_constant() const {
    return node_->kind == NodeKind::Constant && node_->value.is_one();
}

const Rational& Expr::constant_value() const { return node_->value; }
const VarId& Expr::variable() const { return node_->var; }
const Rational& Expr::affine_constant() const { return node_->constant; }
std::span<const ExprTerm> Expr::terms() const { return node_->terms; }
Fn Expr::function() const { return node_->fn; }
std::span<const Expr> Expr::args() const { return node_->args; }
std::size_t Expr::hash() const { return node_->hash; }

namespace {

int cmp_rational(const Rational& a, const Rational& b) {
    auto c = a <=> b;
    if (c == std::strong_ordering::less) return -1;
    if (c == std::strong_ordering::greater) return 1;
    return 0;
}

int cmp_varid(const VarId& a, const VarId& b) {
    auto c = a <=> b;
    if (c == std::strong_ordering::less || c == std::partial_ordering::less) return -1;
    if (c == std::strong_ordering::greater || c == std::partial_ordering::greater) return 1;
    return 0;
}

}  // namespace

int Expr::compare(const Expr& a, const Expr& b) {
    if (a.node_.get() == b.node_.get()) return 0;
    if (a.kind() != b.kind()) {
        return static_cast<int>(a.kind()) < static_cast<int>(b.kind()) ? -1 : 1;
    }
    switch (a.kind()) {
        case NodeKind::Constant: return cmp_rational(a.constant_value(), b.constant_value());
        case NodeKind::Variable: return cmp_varid(a.variable(), b.variable());
        case NodeKind::Function: {
            if (a.function() != b.function()) {
                return static_cast<int>(a.function()) < static_cast<int>(b.function()) ? -1 : 1;
            }
            if (a.args().size() != b.args().size()) {
                return a.args().size() < b.args().size() ? -1 : 1;
            }
            for (std::size_t i = 0; i < a.args().size(); ++i) {
                if (int c = compare(a.args()[i], b.args()[i]); c != 0) return c;
            }
            return 0;
        }
        case NodeKind::Sum:
        case NodeKind::Product: {
            if (int c = cmp_rational(a.affine_constant(), b.affine_constant()); c != 0) return c;
            if (a.terms().size() != b.terms().size()) {
                return a.terms().size() < b.terms().size() ? -1 : 1;
            }
            for (std::size_t i = 0; i < a.terms().size(); ++i) {
                if (int c = compare(a.terms()[i].factor, b.terms()[i].factor); c != 0) return c;
                if (int c = cmp_rational(a.terms()[i].weight, b.terms()[i].weight); c != 0) return c;
            }
            return 0;
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Arithmetic builders
// ---------------------------------------------------------------------------
Expr operator+(const Expr& a, const Expr& b) {
    return make_sum({{Rational(1), a}, {Rational(1), b}}, Rational(0));
}

Expr operator-(const Expr& a, const Expr& b) {
    return make_sum({{Rational(1), a}, {Rational(-1), b}}, Rational(0));
}

Expr operator-(const Expr& a) { return scale(a, Rational(-1)); }

Expr scale(const Expr& e, const Rational& c) {
    return make_sum({{c, e}}, Rational(0));
}

Expr operator*(const Expr& a, const Expr& b) {
    return make_product({{Rational(1), a}, {Rational(1), b}}, Rational(1));
}

Expr operator/(const Expr& a, const Expr& b) {
    return make_product({{Rational(1), a}, {Rational(-1), b}}, Rational(1));
}

Expr pow(const Expr& base, const Rational& exponent) {
    return make_product({{exponent, base}}, Rational(1));
}

Expr sin(const Expr& a) { return make_function(Fn::Sin, {a}); }
Expr cos(const Expr& a) { return make_function(Fn::Cos, {a}); }
Expr tan(const Expr& a) { return make_function(Fn::Tan, {a}); }
Expr sqrt(const Expr& a) { return pow(a, Rational(1, 2)); }
Expr exp(const Expr& a) { return make_function(Fn::Exp, {a}); }
Expr ln(const Expr& a) { return make_function(Fn::Ln, {a}); }
Expr atan(const Expr& a) { return make_function(Fn::Atan, {a}); }
Expr atan2(const Expr& y, const Expr& x) { return make_function(Fn::Atan2, {y, x}); }

// ---------------------------------------------------------------------------
// Printer (inverse of the parser grammar)
// ---------------------------------------------------------------------------
namespace {

enum Prec { kAdd = 0, kMul = 1, kPow = 2 };

void print(std::ostream& os, const Expr& e, int parent);

void print_rational(std::ostream& os, const Rational& r, int parent) {
    bool needs_parens = (parent >= kPow && !r.is_integer()) || (parent >= kPow && r.is_negative()) ||
                        (parent >= kMul && r.is_negative());
    if (needs_parens) os << "(";
    os << r.str();
    if (needs_parens) os << ")";
}

// Prints one product factor base^|exp|, exp != 0.
void print_factor(std::ostream& os, const Expr& base, const Rational& exp) {
    Rational a = exp.is_negative() ? -exp : exp;
    if (a.is_one()) {
        print(os, base, kMul);
        return;
    }
    if (a == Rational(1, 2)) {
        os << "sqrt(";
        print(os, base, kAdd);
        os << ")";
        return;
    }
    print(os, base, kPow);
    os << "^";
    if (a.is_integer()) {
        os << a.str();
    } else {
        os << "(" << a.str() << ")";
    }
}

void print_product(std::ostream& os, const Rational& coeff, std::span<const ExprTerm> factors,
                   int parent) {
    std::vector<const ExprTerm*> num, den;
    for (const auto& t : factors) {
        (t.weight.is_negative() ? den : num).push_back(&t);
    }
    Rational c = coeff;
    bool neg = c.is_negative();
    if (neg) c = -c;

    bool parens = parent >= kPow || (neg && parent >= kMul);
    if (parens) os << "(";
    if (neg) os << "-";

    bool printed = false;
    if (!c.is_one() || num.empty()) {
        if (c.is_integer() || den.empty()) {
            os << c.str();
        } else {
            os << "(" << c.str() << ")";
        }
        printed = true;
    }
    for (const auto* t : num) {
        if (printed) os << "*";
        print_factor(os, t->factor, t->weight);
        printed = true;
    }
    if (!den.empty()) {
        os << "/";
        if (den.size() > 1) os << "(";
        for (std::size_t i = 0; i < den.size(); ++i) {
            if (i) os << "*";
            print_factor(os, den[i]->factor, den[i]->weight);
        }
        if (den.size() > 1) os << ")";
    }
    if (parens) os << ")";
}

void print(std::ostream& os, const Expr& e, int parent) {
    switch (e.kind()) {
        case NodeKind::Constant:
            print_rational(os, e.constant_value(), parent);
            return;
        case NodeKind::Variable:
            os << e.variable().name();
            return;
        case NodeKind::Function: {
            static const char* names[] = {"sin", "cos", "tan", "exp", "ln", "atan", "atan2"};
            os << names[static_cast<int>(e.function())] << "(";
            for (std::size_t i = 0; i < e.args().size(); ++i) {
                if (i) os << ", ";
                print(os, e.args()[i], kAdd);
            }
            os << ")";
            return;
        }
        case NodeKind::Product:
            print_product(os, e.affine_constant(), e.terms(), parent);
            return;
        case NodeKind::Sum: {
            bool parens = parent >= kMul;
            if (parens) os << "(";
            bool first = true;
            for (const auto& t : e.terms()) {
                Rational c = t.weight;
                if (!first) {
                    os << (c.is_negative() ? " - " : " + ");
                    if (c.is_negative()) c = -c;
                } else if (c.is_negative()) {
                    os << "-";
                    c = -c;
                }
                if (c.is_one()) {
                    print(os, t.factor, kMul);
                } else {
                    if (c.is_integer()) {
                        os << c.str();
                    } else {
                        os << "(" << c.str() << ")";
                    }
                    os << "*";
                    print(os, t.factor, kMul);
                }
                first = false;
            }
            const Rational& k = e.affine_constant();
            if (!k.is_zero()) {
                Rational c = k;
                os << (c.is_negative() ? " - " : " + ");
                if (c.is_negative()) c = -c;
                if (c.is_integer()) {
                    os << c.str();
                } else {
                    os << "(" << c.str() << ")";
                }
            }
            if (parens) os << ")";
            return;
        }
    }
}

}  // namespace

std::string to_string(const Expr& e) {
    std::ostringstream os;
    print(os, e, kAdd);
    return os.str();
}

}  // namespace flatforge
