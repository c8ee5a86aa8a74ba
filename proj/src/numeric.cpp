#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "flatforge/symexpr.hpp"

namespace flatforge {

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------
namespace {

constexpr double kPoleTol = 1e-12;

struct EvalCtx {
    const Point& point;
    double guard;
    double scale = 0.0;
    std::unordered_map<const detail::Node*, double> memo;
};

[[noreturn]] void singular(const Expr& e, double magnitude) {
    throw SingularityEncountered("denominator magnitude " + std::to_string(magnitude) + " in " +
                                 to_string(e));
}

double pow_rat(double base, const Rational& e) {
    if (e.is_integer()) {
        long long n = e.num();
        if (n >= -64 && n <= 64) {
            double acc = 1.0;
            double b = n < 0 ? 1.0 / base : base;
            for (long long i = 0, m = n < 0 ? -n : n; i < m; ++i) acc *= b;
            return acc;
        }
        return std::pow(base, static_cast<double>(n));
    }
    if (e.den() == 2) {
        double r = std::sqrt(base);
        return pow_rat(r, Rational(e.num()));
    }
    return std::pow(base, e.to_double());
}

double eval_node(const Expr& e, EvalCtx& ctx);

double eval_function(const Expr& e, EvalCtx& ctx) {
    auto args = e.args();
    double a = eval_node(args[0], ctx);
    switch (e.function()) {
        case Fn::Sin: return std::sin(a);
        case Fn::Cos: return std::cos(a);
        case Fn::Tan: {
            double c = std::cos(a);
            double tol = std::max(kPoleTol, ctx.guard);
            if (std::abs(c) < tol) {
                if (ctx.guard > 0.0 && std::abs(c) < ctx.guard) singular(e, std::abs(c));
                throw DomainError("tan evaluated at a pole");
            }
            return std::sin(a) / c;
        }
        case Fn::Exp: return std::exp(a);
        case Fn::Ln:
            if (a <= 0.0) throw DomainError("ln of non-positive value");
            return std::log(a);
        case Fn::Atan: return std::atan(a);
        case Fn::Atan2: {
            double b = eval_node(args[1], ctx);
            double tol = std::max(kPoleTol, ctx.guard);
            if (std::abs(a) < tol && std::abs(b) < tol) {
                if (ctx.guard > 0.0) singular(e, std::max(std::abs(a), std::abs(b)));
                throw DomainError("atan2 evaluated at the origin");
            }
            return std::atan2(a, b);
        }
    }
    throw DomainError("unknown function");
}

double eval_node(const Expr& e, EvalCtx& ctx) {
    if (auto it = ctx.memo.find(e.raw()); it != ctx.memo.end()) return it->second;
    double value = 0.0;
    switch (e.kind()) {
        case NodeKind::Constant:
            value = e.constant_value().to_double();
            break;
        case NodeKind::Variable: {
            auto it = ctx.point.find(e.variable());
            if (it == ctx.point.end()) {
                throw UnboundVariable("unbound variable " + e.variable().name());
            }
            value = it->second;
            break;
        }
        case NodeKind::Sum: {
            value = e.affine_constant().to_double();
            for (const auto& t : e.terms()) {
                value += t.weight.to_double() * eval_node(t.factor, ctx);
            }
            break;
        }
        case NodeKind::Product: {
            value = e.affine_constant().to_double();
            for (const auto& t : e.terms()) {
                double b = eval_node(t.factor, ctx);
                if (t.weight.is_negative() && ctx.guard > 0.0 && std::abs(b) < ctx.guard) {
                    singular(t.factor, std::abs(b));
                }
                if (!t.weight.is_integer() && b < 0.0) {
                    throw DomainError("fractional power of a negative value");
                }
                value *= pow_rat(b, t.weight);
            }
            break;
        }
        case NodeKind::Function:
            value = eval_function(e, ctx);
            break;
    }
    if (!std::isfinite(value)) throw DomainError("non-finite value in " + to_string(e));
    ctx.scale = std::max(ctx.scale, std::abs(value));
    ctx.memo.emplace(e.raw(), value);
    return value;
}

}  // namespace

double evaluate(const Expr& e, const Point& point, const EvalOptions& opts) {
    EvalCtx ctx{point, opts.guard, 0.0, {}};
    double v = eval_node(e, ctx);
    if (opts.scale) *opts.scale = ctx.scale;
    return v;
}

double evaluate(const Expr& e, const Point& point) { return evaluate(e, point, {}); }

// ---------------------------------------------------------------------------
// Domain
// ---------------------------------------------------------------------------
void Domain::set(const VarId& v, double lo, double hi) {
    if (!(hi > lo)) throw ValidationError("domain interval for " + v.name() + " must have positive length");
    intervals_[v] = {lo, hi};
}

void Domain::set_default(double lo, double hi) {
    if (!(hi > lo)) throw ValidationError("default domain interval must have positive length");
    def_lo_ = lo;
    def_hi_ = hi;
}

void Domain::bind(const VarId& v, double value) { bindings_[v] = value; }

std::pair<double, double> Domain::interval(const VarId& v) const {
    if (auto it = intervals_.find(v); it != intervals_.end()) return it->second;
    return {def_lo_, def_hi_};
}

std::optional<double> Domain::bound_value(const VarId& v) const {
    if (auto it = bindings_.find(v); it != bindings_.end()) return it->second;
    return std::nullopt;
}

Point Domain::sample(std::span<const VarId> vars, std::mt19937_64& rng) const {
    Point p;
    p.reserve(vars.size() + bindings_.size());
    for (const auto& [v, value] : bindings_) p[v] = value;
    for (const auto& v : vars) {
        if (p.count(v)) continue;
        auto [lo, hi] = interval(v);
        std::uniform_real_distribution<double> dist(lo, hi);
        p[v] = dist(rng);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Probabilistic zero test
// ---------------------------------------------------------------------------
namespace {

constexpr double kZeroTol = 1e-9;

bool is_zero_impl(const Expr& e, const Sampler& sampler, std::mt19937_64& rng, int trials) {
    if (e.is_constant()) return e.constant_value().is_zero();
    int valid = 0;
    int attempts = 0;
    const int budget = 10 * trials;
    while (valid < trials && attempts < budget) {
        ++attempts;
        Point p = sampler.sample(rng);
        double scale = 0.0;
        double v;
        try {
            v = evaluate(e, p, {.guard = 0.0, .scale = &scale});
        } catch (const DomainError&) {
            continue;
        }
        if (std::abs(v) >= kZeroTol * (1.0 + scale)) return false;
        ++valid;
    }
    if (valid < trials) {
        throw InconclusiveDomain("zero test exhausted its redraw budget on " + to_string(e));
    }
    return true;
}

}  // namespace

bool is_zero(const Expr& e, const Sampler& sampler, std::mt19937_64& rng, int trials) {
    return is_zero_impl(e, sampler, rng, trials);
}

bool is_zero(const Expr& e, const Domain& dom, std::mt19937_64& rng, int trials) {
    DomainSampler sampler(dom, free_variables(e));
    return is_zero_impl(e, sampler, rng, trials);
}

// ---------------------------------------------------------------------------
// Jacobians and rank
// ---------------------------------------------------------------------------
std::vector<VarId> ExprMatrix::free_vars() const {
    std::vector<VarId> out;
    for (const auto& e : elems) collect_free_variables(e, out);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Eigen::MatrixXd ExprMatrix::eval(const Point& p) const {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int k = 0; k < cols; ++k) {
            m(i, k) = evaluate(at(i, k), p);
        }
    }
    return m;
}

ExprMatrix jacobian(std::span<const Expr> rows, std::span<const VarId> cols) {
    ExprMatrix m(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
            m.at(static_cast<int>(i), static_cast<int>(k)) = differentiate(rows[i], cols[k]);
        }
    }
    return m;
}

int matrix_rank(Eigen::MatrixXd m, double tol) {
    if (m.rows() == 0 || m.cols() == 0) return 0;
    double max_row_norm = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        max_row_norm = std::max(max_row_norm, m.row(i).norm());
    }
    const double thresh = tol * max_row_norm;
    int rank = 0;
    for (Eigen::Index col = 0; col < m.cols() && rank < m.rows(); ++col) {
        Eigen::Index pivot = rank;
        double best = std::abs(m(rank, col));
        for (Eigen::Index i = rank + 1; i < m.rows(); ++i) {
            if (std::abs(m(i, col)) > best) {
                best = std::abs(m(i, col));
                pivot = i;
            }
        }
        if (best <= thresh) continue;
        m.row(pivot).swap(m.row(rank));
        for (Eigen::Index i = rank + 1; i < m.rows(); ++i) {
            double factor = m(i, col) / m(rank, col);
            m.row(i) -= factor * m.row(rank);
        }
        ++rank;
    }
    return rank;
}

namespace {

int numeric_rank_impl(const ExprMatrix& m, const Sampler& sampler, std::mt19937_64& rng,
                      int samples, double tol) {
    if (m.rows == 0 || m.cols == 0) return 0;
    int valid = 0;
    int attempts = 0;
    const int budget = 10 * samples;
    int rank = 0;
    while (valid < samples && attempts < budget) {
        ++attempts;
        Point p = sampler.sample(rng);
        Eigen::MatrixXd num;
        try {
            num = m.eval(p);
        } catch (const DomainError&) {
            continue;
        }
        rank = std::max(rank, matrix_rank(std::move(num), tol));
        ++valid;
    }
    if (valid < samples) {
        throw InconclusiveDomain("rank test exhausted its redraw budget");
    }
    return rank;
}

}  // namespace

int numeric_rank(const ExprMatrix& m, const Sampler& sampler, std::mt19937_64& rng, int samples,
                 double tol) {
    return numeric_rank_impl(m, sampler, rng, samples, tol);
}

int numeric_rank(const ExprMatrix& m, const Domain& dom, std::mt19937_64& rng, int samples,
                 double tol) {
    DomainSampler sampler(dom, m.free_vars());
    return numeric_rank_impl(m, sampler, rng, samples, tol);
}

double min_singular_value(const ExprMatrix& m, const Sampler& sampler, std::mt19937_64& rng,
                          int samples) {
    double worst = std::numeric_limits<double>::infinity();
    int valid = 0;
    int attempts = 0;
    const int budget = 10 * samples;
    while (valid < samples && attempts < budget) {
        ++attempts;
        Point p = sampler.sample(rng);
        Eigen::MatrixXd num;
        try {
            num = m.eval(p);
        } catch (const DomainError&) {
            continue;
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(num);
        worst = std::min(worst, svd.singularValues().minCoeff());
        ++valid;
    }
    if (valid < samples) {
        throw InconclusiveDomain("singular value scan exhausted its redraw budget");
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Compiled evaluation
// ---------------------------------------------------------------------------
CompiledExpr::CompiledExpr(std::span<const Expr> outputs, std::span<const VarId> inputs,
                           double guard)
    : guard_(guard) {
    num_inputs_ = inputs.size();
    std::unordered_map<VarId, std::uint32_t, VarIdHash> input_slot;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        input_slot[inputs[i]] = static_cast<std::uint32_t>(i);
    }

    std::unordered_map<const detail::Node*, std::uint32_t> slot_of;
    std::uint32_t next_slot = static_cast<std::uint32_t>(inputs.size());

    auto emit = [&](const Expr& e, auto&& self) -> std::uint32_t {
        if (auto it = slot_of.find(e.raw()); it != slot_of.end()) return it->second;
        std::uint32_t dst = 0;
        switch (e.kind()) {
            case NodeKind::Constant:
                dst = next_slot++;
                code_.push_back({Op::Const, Fn::Sin, dst, 0, 0, e.constant_value().to_double()});
                break;
            case NodeKind::Variable: {
                auto it = input_slot.find(e.variable());
                if (it == input_slot.end()) {
                    throw UnboundVariable("compiled expression needs input " + e.variable().name());
                }
                dst = it->second;
                break;
            }
            case NodeKind::Sum: {
                std::uint32_t acc = next_slot++;
                code_.push_back({Op::Const, Fn::Sin, acc, 0, 0, e.affine_constant().to_double()});
                for (const auto& t : e.terms()) {
                    std::uint32_t f = self(t.factor, self);
                    std::uint32_t out = next_slot++;
                    code_.push_back({Op::AddMul, Fn::Sin, out, acc, f, t.weight.to_double()});
                    acc = out;
                }
                dst = acc;
                break;
            }
            case NodeKind::Product: {
                std::uint32_t acc = next_slot++;
                code_.push_back({Op::Const, Fn::Sin, acc, 0, 0, e.affine_constant().to_double()});
                for (const auto& t : e.terms()) {
                    std::uint32_t f = self(t.factor, self);
                    std::uint32_t out = next_slot++;
                    code_.push_back({Op::MulPow, Fn::Sin, out, acc, f, t.weight.to_double()});
                    acc = out;
                }
                dst = acc;
                break;
            }
            case NodeKind::Function: {
                std::uint32_t a = self(e.args()[0], self);
                std::uint32_t b = e.args().size() > 1 ? self(e.args()[1], self) : 0;
                dst = next_slot++;
                code_.push_back({e.args().size() > 1 ? Op::Fun2 : Op::Fun1, e.function(), dst, a, b,
                                 0.0});
                break;
            }
        }
        slot_of.emplace(e.raw(), dst);
        return dst;
    };

    for (const auto& out : outputs) {
        output_slots_.push_back(emit(out, emit));
    }
    slots_ = next_slot;
}

void CompiledExpr::eval(std::span<const double> inputs, std::span<double> outputs,
                        std::span<double> scratch) const {
    std::copy(inputs.begin(), inputs.end(), scratch.begin());
    double* s = scratch.data();
    for (const auto& in : code_) {
        double v = 0.0;
        switch (in.op) {
            case Op::Load: v = inputs[in.a]; break;
            case Op::Const: v = in.imm; break;
            case Op::AddMul: v = s[in.a] + in.imm * s[in.b]; break;
            case Op::MulPow: {
                double b = s[in.b];
                if (in.imm < 0.0 && guard_ > 0.0 && std::abs(b) < guard_) {
                    throw SingularityEncountered("denominator magnitude " + std::to_string(b) +
                                                 " below guard in compiled expression");
                }
                double p;
                double r = std::round(in.imm);
                if (r == in.imm && std::abs(r) <= 64.0) {
                    p = 1.0;
                    double base = r < 0 ? 1.0 / b : b;
                    for (int i = 0, m = static_cast<int>(std::abs(r)); i < m; ++i) p *= base;
                } else {
                    if (b < 0.0) throw DomainError("fractional power of a negative value");
                    p = std::pow(b, in.imm);
                }
                v = s[in.a] * p;
                break;
            }
            case Op::Fun1: {
                double a = s[in.a];
                switch (in.fn) {
                    case Fn::Sin: v = std::sin(a); break;
                    case Fn::Cos: v = std::cos(a); break;
                    case Fn::Tan: {
                        double c = std::cos(a);
                        double tol = std::max(kPoleTol, guard_);
                        if (std::abs(c) < tol) {
                            if (guard_ > 0.0) {
                                throw SingularityEncountered("tan pole below guard");
                            }
                            throw DomainError("tan evaluated at a pole");
                        }
                        v = std::sin(a) / c;
                        break;
                    }
                    case Fn::Exp: v = std::exp(a); break;
                    case Fn::Ln:
                        if (a <= 0.0) throw DomainError("ln of non-positive value");
                        v = std::log(a);
                        break;
                    case Fn::Atan: v = std::atan(a); break;
                    default: throw DomainError("bad unary function");
                }
                break;
            }
            case Op::Fun2: {
                double a = s[in.a];
                double b = s[in.b];
                double tol = std::max(kPoleTol, guard_);
                if (std::abs(a) < tol && std::abs(b) < tol) {
                    if (guard_ > 0.0) throw SingularityEncountered("atan2 origin below guard");
                    throw DomainError("atan2 evaluated at the origin");
                }
                v = std::atan2(a, b);
                break;
            }
        }
        if (!std::isfinite(v)) throw DomainError("non-finite value in compiled expression");
        s[in.dst] = v;
    }
    for (std::size_t i = 0; i < output_slots_.size(); ++i) {
        outputs[i] = s[output_slots_[i]];
    }
}

}  // namespace flatforge
