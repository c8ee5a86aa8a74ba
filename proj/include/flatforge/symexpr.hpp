#pragma once

// Minimal computer-algebra kernel: immutable expression trees over jet
// variables, partial differentiation, substitution, IEEE evaluation and
// probabilistic zero/rank testing.  Expressions are kept in a light normal
// form (sums collect like terms with rational coefficients, products merge
// rational powers of equal bases); everything beyond that is decided
// numerically by sampling.

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "flatforge/errors.hpp"

namespace flatforge {

// ---------------------------------------------------------------------------
// Exact rational arithmetic (int64 with overflow detection).
// ---------------------------------------------------------------------------
class Rational {
public:
    Rational() = default;
    Rational(long long n) : num_(n) {}  // NOLINT: implicit by design
    Rational(long long n, long long d);

    long long num() const { return num_; }
    long long den() const { return den_; }

    bool is_zero() const { return num_ == 0; }
    bool is_one() const { return num_ == 1 && den_ == 1; }
    bool is_integer() const { return den_ == 1; }
    bool is_negative() const { return num_ < 0; }

    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

    Rational operator-() const;
    Rational& operator+=(const Rational& o);
    Rational& operator-=(const Rational& o);
    Rational& operator*=(const Rational& o);
    Rational& operator/=(const Rational& o);

    friend Rational operator+(Rational a, const Rational& b) { return a += b; }
    friend Rational operator-(Rational a, const Rational& b) { return a -= b; }
    friend Rational operator*(Rational a, const Rational& b) { return a *= b; }
    friend Rational operator/(Rational a, const Rational& b) { return a /= b; }

    // Exact integer power; throws on overflow or 0^negative.
    Rational pow_int(long long e) const;

    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num_ == b.num_ && a.den_ == b.den_;
    }
    friend std::strong_ordering operator<=>(const Rational& a, const Rational& b);

    std::string str() const;

private:
    long long num_ = 0;
    long long den_ = 1;
};

// ---------------------------------------------------------------------------
// Variables.  Jet variables carry a channel index and a time-derivative
// order; they are created on demand, no maximum order is ever fixed.
// ---------------------------------------------------------------------------
enum class VarKind : std::uint8_t {
    State,        // x<i>
    InputJet,     // u<j>, u<j>_<a>
    BarInputJet,  // ubar<j>, ubar<j>_<a>   (inputs after a static feedback)
    NewInputJet,  // v<j>, v<j>_<a>         (new input of the linearized loop)
    RefJet,       // yd<j>, yd<j>_<a>       (flat-output / reference jets)
    Param,        // named real parameter
};

struct VarId {
    VarKind kind = VarKind::Param;
    int index = 0;  // state number (>=1) or input channel (1 or 2)
    int order = 0;  // time-derivative order for jet kinds
    std::string param;

    static VarId state(int i) { return {VarKind::State, i, 0, {}}; }
    static VarId input(int j, int order = 0) { return {VarKind::InputJet, j, order, {}}; }
    static VarId bar_input(int j, int order = 0) { return {VarKind::BarInputJet, j, order, {}}; }
    static VarId new_input(int j, int order = 0) { return {VarKind::NewInputJet, j, order, {}}; }
    static VarId ref(int j, int order = 0) { return {VarKind::RefJet, j, order, {}}; }
    static VarId parameter(std::string name) { return {VarKind::Param, 0, 0, std::move(name)}; }

    bool is_jet() const { return kind != VarKind::State && kind != VarKind::Param; }
    VarId shifted(int d) const { return {kind, index, order + d, param}; }

    std::string name() const;

    friend bool operator==(const VarId&, const VarId&) = default;
    friend auto operator<=>(const VarId&, const VarId&) = default;
};

struct VarIdHash {
    std::size_t operator()(const VarId& v) const noexcept;
};

class Expr;
using Point = std::unordered_map<VarId, double, VarIdHash>;
using SubstMap = std::unordered_map<VarId, Expr, VarIdHash>;

// ---------------------------------------------------------------------------
// Expression trees.
// ---------------------------------------------------------------------------
enum class NodeKind : std::uint8_t { Constant, Variable, Function, Product, Sum };

enum class Fn : std::uint8_t { Sin, Cos, Tan, Exp, Ln, Atan, Atan2 };
// sqrt(e) is represented as pow(e, 1/2) and printed back as sqrt(...).

namespace detail {
struct Node;
}

struct ExprTerm;

class Expr {
public:
    Expr();  // the constant 0

    NodeKind kind() const;

    bool is_constant() const { return kind() == NodeKind::Constant; }
    bool is_variable() const { return kind() == NodeKind::Variable; }
    bool is_zero_constant() const;
    bool is_one_constant() const;

    const Rational& constant_value() const;  // Constant nodes
    const VarId& variable() const;           // Variable nodes

    const Rational& affine_constant() const;     // Sum constant / Product coefficient
    std::span<const ExprTerm> terms() const;     // Sum or Product
    Fn function() const;                         // Function nodes
    std::span<const Expr> args() const;          // Function nodes

    std::size_t hash() const;
    const detail::Node* raw() const { return node_.get(); }

    friend bool operator==(const Expr& a, const Expr& b) { return compare(a, b) == 0; }
    friend bool operator!=(const Expr& a, const Expr& b) { return compare(a, b) != 0; }

    // Deterministic structural total order (used for canonical term ordering).
    static int compare(const Expr& a, const Expr& b);

private:
    explicit Expr(std::shared_ptr<const detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<const detail::Node> node_;

    friend Expr detail_from_node(std::shared_ptr<const detail::Node> n);
};

// Sum: additive constant and (coefficient, term) pairs.
// Product: rational coefficient and (exponent, base) pairs.
struct ExprTerm {
    Rational weight;  // coefficient (Sum) or exponent (Product)
    Expr factor;
};

// Builders.  All of them normalize: constants fold, like terms collect,
// equal bases merge exponents, zero/unit identities apply.
Expr make_constant(Rational r);
Expr make_variable(VarId v);
Expr make_sum(std::vector<ExprTerm> terms, Rational constant);
Expr make_product(std::vector<ExprTerm> factors, Rational coeff);
Expr make_function(Fn fn, std::vector<Expr> args);

inline Expr constant(Rational r) { return make_constant(std::move(r)); }
inline Expr constant(long long n) { return make_constant(Rational(n)); }
inline Expr var(VarId v) { return make_variable(std::move(v)); }

// Best rational approximation by continued fractions; the result is within
// 1e-12 * (1 + |x|) of x.  Throws DomainError for values that cannot be
// approximated with a bounded denominator (never for decimals of ordinary
// magnitude).
Rational rational_from_double(double x);

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr pow(const Expr& base, const Rational& exponent);
Expr scale(const Expr& e, const Rational& c);

Expr sin(const Expr& a);
Expr cos(const Expr& a);
Expr tan(const Expr& a);
Expr sqrt(const Expr& a);
Expr exp(const Expr& a);
Expr ln(const Expr& a);
Expr atan(const Expr& a);
Expr atan2(const Expr& y, const Expr& x);

// ---------------------------------------------------------------------------
// Core operations.
// ---------------------------------------------------------------------------

// Parses the shared expression grammar (see README).  Throws ParseError with
// the byte offset of the problem.
Expr parse_expr(std::string_view text);

// Partial derivative by standard calculus rules, constant-folded.
Expr differentiate(const Expr& e, const VarId& v);

// Simultaneous substitution; variables absent from the map are untouched.
Expr substitute(const Expr& e, const SubstMap& bindings);

struct EvalOptions {
    // When > 0, denominators, tangent poles and the atan2 origin within this
    // threshold raise SingularityEncountered instead of DomainError.
    double guard = 0.0;
    // When set, receives the largest intermediate magnitude seen.
    double* scale = nullptr;
};

double evaluate(const Expr& e, const Point& point);
double evaluate(const Expr& e, const Point& point, const EvalOptions& opts);

std::vector<VarId> free_variables(const Expr& e);  // sorted, unique
void collect_free_variables(const Expr& e, std::vector<VarId>& out);
bool depends_on(const Expr& e, const VarId& v);

std::string to_string(const Expr& e);

// ---------------------------------------------------------------------------
// Sampling domain: closed intervals per variable, a default interval for
// unlisted variables, and pinned values (parameters).
// ---------------------------------------------------------------------------
class Domain {
public:
    Domain() = default;

    void set(const VarId& v, double lo, double hi);
    void set_default(double lo, double hi);
    void bind(const VarId& v, double value);

    std::pair<double, double> interval(const VarId& v) const;
    std::optional<double> bound_value(const VarId& v) const;
    std::pair<double, double> default_interval() const { return {def_lo_, def_hi_}; }
    const std::map<VarId, std::pair<double, double>>& intervals() const { return intervals_; }
    const std::map<VarId, double>& bindings() const { return bindings_; }

    Point sample(std::span<const VarId> vars, std::mt19937_64& rng) const;

private:
    std::map<VarId, std::pair<double, double>> intervals_;
    std::map<VarId, double> bindings_;
    double def_lo_ = -1.0;
    double def_hi_ = 1.0;
};

// A point source for the randomized tests.  DomainSampler draws the given
// variables independently from a Domain; other implementations may produce
// correlated points (e.g. pushing domain samples through a feedback).
class Sampler {
public:
    virtual ~Sampler() = default;
    virtual Point sample(std::mt19937_64& rng) const = 0;
};

class DomainSampler : public Sampler {
public:
    DomainSampler(const Domain& dom, std::vector<VarId> vars)
        : dom_(dom), vars_(std::move(vars)) {}
    Point sample(std::mt19937_64& rng) const override { return dom_.sample(vars_, rng); }

private:
    Domain dom_;
    std::vector<VarId> vars_;
};

// ---------------------------------------------------------------------------
// Probabilistic zero test and generic rank.
// ---------------------------------------------------------------------------

// True iff |e| < 1e-9 * (1 + scale) at every one of `trials` sample points,
// where scale is the largest intermediate magnitude at that point.  Points
// raising DomainError are redrawn (at most 10 * trials redraws in total);
// throws InconclusiveDomain when the budget is exhausted.
bool is_zero(const Expr& e, const Domain& dom, std::mt19937_64& rng, int trials = 20);
bool is_zero(const Expr& e, const Sampler& sampler, std::mt19937_64& rng, int trials = 20);

struct ExprMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<Expr> elems;  // row-major

    ExprMatrix() = default;
    ExprMatrix(int r, int c) : rows(r), cols(c), elems(static_cast<std::size_t>(r) * c) {}

    Expr& at(int i, int k) { return elems[static_cast<std::size_t>(i) * cols + k]; }
    const Expr& at(int i, int k) const { return elems[static_cast<std::size_t>(i) * cols + k]; }

    std::vector<VarId> free_vars() const;
    Eigen::MatrixXd eval(const Point& p) const;
};

ExprMatrix jacobian(std::span<const Expr> rows, std::span<const VarId> cols);

// Rank by row reduction with pivot threshold tol * (largest row norm).
int matrix_rank(Eigen::MatrixXd m, double tol);

// Generic rank: maximum of matrix_rank over evaluated samples.
int numeric_rank(const ExprMatrix& m, const Domain& dom, std::mt19937_64& rng, int samples = 10,
                 double tol = 1e-8);
int numeric_rank(const ExprMatrix& m, const Sampler& sampler, std::mt19937_64& rng,
                 int samples = 10, double tol = 1e-8);

// Smallest singular value of m over samples (conditioning report).
double min_singular_value(const ExprMatrix& m, const Sampler& sampler, std::mt19937_64& rng,
                          int samples = 10);

// ---------------------------------------------------------------------------
// Compiled evaluation for hot loops (DAG flattened to an instruction tape).
// ---------------------------------------------------------------------------
class CompiledExpr {
public:
    CompiledExpr() = default;
    CompiledExpr(std::span<const Expr> outputs, std::span<const VarId> inputs, double guard = 0.0);

    int num_inputs() const { return static_cast<int>(num_inputs_); }
    int num_outputs() const { return static_cast<int>(output_slots_.size()); }
    std::size_t scratch_size() const { return slots_; }

    // `scratch` must have at least scratch_size() elements.
    void eval(std::span<const double> inputs, std::span<double> outputs,
              std::span<double> scratch) const;

private:
    enum class Op : std::uint8_t {
        Load,     // slot = inputs[a]
        Const,    // slot = imm
        AddMul,   // slot = slot_a + imm * slot_b
        MulPow,   // slot = slot_a * slot_b^imm   (checks guard/domain)
        Fun1,     // slot = fn(slot_a)
        Fun2,     // slot = fn(slot_a, slot_b)
    };
    struct Instr {
        Op op;
        Fn fn = Fn::Sin;
        std::uint32_t dst = 0, a = 0, b = 0;
        double imm = 0.0;
    };
    std::vector<Instr> code_;
    std::vector<std::uint32_t> output_slots_;
    std::size_t slots_ = 0;
    std::size_t num_inputs_ = 0;
    double guard_ = 0.0;
};

}  // namespace flatforge
