#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "common.hpp"
#include "flatforge/symexpr.hpp"

using namespace flatforge;

namespace {

const VarId x1 = VarId::state(1);
const VarId x2 = VarId::state(2);
const VarId x3 = VarId::state(3);
const VarId u1 = VarId::input(1);
const VarId u2 = VarId::input(2);

Expr X1 = var(x1);
Expr X3 = var(x3);
Expr U1 = var(u1);

}  // namespace

TEST_CASE("rational arithmetic is exact") {
    Rational a(1, 3), b(1, 6);
    CHECK(a + b == Rational(1, 2));
    CHECK(a - b == Rational(1, 6));
    CHECK(a * b == Rational(1, 18));
    CHECK(a / b == Rational(2));
    CHECK(Rational(-4, 8) == Rational(-1, 2));
    CHECK(Rational(2).pow_int(10) == Rational(1024));
    CHECK(Rational(2, 3).pow_int(-2) == Rational(9, 4));
    CHECK(Rational(1, 3) < Rational(1, 2));
    CHECK_THROWS_AS(Rational(1, 0), DomainError);
}

TEST_CASE("parse builds the grammar-forced tree") {
    // "x1 + cos(x3)*u1" -> sum(x1, product(cos(x3), u1))
    Expr e = parse_expr("x1 + cos(x3)*u1");
    CHECK(e == X1 + cos(X3) * U1);

    // naming rule: "u1_2" is the second derivative of input 1
    Expr j = parse_expr("u1_2");
    CHECK(j.is_variable());
    CHECK(j.variable() == VarId::input(1, 2));

    // "yd2_3 - 2*v1_1" -> sum(RefJet(2,3), neg(product(2, NewInputJet(1,1))))
    Expr r = parse_expr("yd2_3 - 2*v1_1");
    CHECK(r == var(VarId::ref(2, 3)) - constant(2) * var(VarId::new_input(1, 1)));

    // ubar family and the y alias for flat-output jets
    CHECK(parse_expr("ubar1_2").variable() == VarId::bar_input(1, 2));
    CHECK(parse_expr("y1_1") == parse_expr("yd1_1"));

    // precedence and association
    CHECK(parse_expr("1 - 2 - 3") == constant(-4));
    CHECK(parse_expr("2*3 + 4/8") == constant(Rational(13, 2)));
    CHECK(parse_expr("2^3^2") == constant(64));  // left-to-right: (2^3)^2
    CHECK(parse_expr("-x1^2") == -(pow(X1, 2)));
    CHECK(parse_expr("x1^-1") == pow(X1, -1));
    CHECK(parse_expr("x1^(1/2)") == sqrt(X1));
    CHECK(parse_expr("0.5") == constant(Rational(1, 2)));
    CHECK(parse_expr("2.5e2") == constant(250));
}

TEST_CASE("parse reports errors with byte offsets") {
    CHECK_THROWS_AS(parse_expr("x1 + "), ParseError);
    CHECK_THROWS_AS(parse_expr("foo(x1)"), ParseError);       // unknown function
    CHECK_THROWS_AS(parse_expr("u3"), ParseError);            // channel out of range
    CHECK_THROWS_AS(parse_expr("x0"), ParseError);            // index must be positive
    CHECK_THROWS_AS(parse_expr("x1_2"), ParseError);          // states have no jet order
    CHECK_THROWS_AS(parse_expr("u1_"), ParseError);           // malformed jet suffix
    CHECK_THROWS_AS(parse_expr("2^x1"), ParseError);          // symbolic exponent
    CHECK_THROWS_AS(parse_expr("atan2(x1)"), ParseError);     // arity
    CHECK_THROWS_AS(parse_expr("sin"), ParseError);           // bare function name

    try {
        parse_expr("x1 + @");
        CHECK(false);
    } catch (const ParseError& err) {
        CHECK(err.offset == 5);
    }
}

TEST_CASE("differentiate follows calculus rules and folds") {
    Expr e = X1 + cos(X3) * U1;
    CHECK(differentiate(e, x3) == -(sin(X3) * U1));
    CHECK(differentiate(e, u2) == constant(0));
    CHECK(differentiate(e, x1) == constant(1));

    CHECK(differentiate(tan(X1), x1) == parse_expr("1 + tan(x1)^2"));
    CHECK(differentiate(sqrt(X1), x1) == parse_expr("1/(2*sqrt(x1))"));
    CHECK(differentiate(ln(X1), x1) == parse_expr("1/x1"));
    CHECK(differentiate(exp(scale(X1, 2)), x1) == parse_expr("2*exp(2*x1)"));
}

TEST_CASE("differentiate agrees with central differences") {
    std::mt19937_64 rng(12345);
    Domain dom;
    dom.set(x3, -0.5, 0.5);
    dom.set(u1, 0.5, 1.5);
    dom.set(u2, 0.5, 1.5);

    std::vector<Expr> corpus = {
        parse_expr("x1 + cos(x3)*u1"),
        parse_expr("x2 - x1*u2/u1"),
        parse_expr("x3 - x1*sqrt(u2/u1)"),
        parse_expr("atan2(x1 - x2, u1)"),
        parse_expr("exp(x1)*ln(u1) + tan(x3)"),
        parse_expr("(x1 + x2)^3/(1 + u1^2)"),
        parse_expr("atan(x1*x2) - sqrt(u1*u2)"),
    };
    for (const auto& e : corpus) {
        CAPTURE(to_string(e));
        CHECK(flatforge::testing::derivative_matches_fd(e, dom, rng, 100));
    }
}

TEST_CASE("substitute performs simultaneous textual substitution") {
    Expr e = sin(X3) * U1;
    SubstMap m;
    m[u1] = parse_expr("(ubar1 - x1)/cos(x3)");
    CHECK(substitute(e, m) == parse_expr("sin(x3)*(ubar1 - x1)/cos(x3)"));

    CHECK(substitute(e, {}) == e);

    SubstMap z;
    z[x1] = constant(0);
    CHECK(substitute(X1, z) == constant(0));

    // simultaneous: swapping does not cascade
    SubstMap swap;
    swap[x1] = var(x2);
    swap[x2] = var(x1);
    CHECK(substitute(X1 + scale(var(x2), 2), swap) == var(x2) + scale(X1, 2));
}

TEST_CASE("substitute then evaluate equals evaluate with composed bindings") {
    std::mt19937_64 rng(7);
    Domain dom;
    Expr e = parse_expr("x1^2*sin(x2) + x1/(1 + x2^2)");
    SubstMap m;
    m[x1] = parse_expr("u1 + u2");
    m[x2] = parse_expr("u1*u2");
    Expr composed = substitute(e, m);
    for (int t = 0; t < 50; ++t) {
        Point p = dom.sample(std::vector<VarId>{u1, u2}, rng);
        Point q;
        q[x1] = evaluate(m[x1], p);
        q[x2] = evaluate(m[x2], p);
        CHECK(evaluate(composed, p) == doctest::Approx(evaluate(e, q)).epsilon(1e-12));
    }
}

TEST_CASE("evaluate computes IEEE doubles and raises the spec errors") {
    Point p;
    p[x3] = 0.5;
    p[u1] = 2.0;
    CHECK(evaluate(sin(X3) * U1, p) == doctest::Approx(0.9588510772084060).epsilon(1e-12));

    CHECK_THROWS_AS(evaluate(X1, Point{}), UnboundVariable);

    Point q;
    q[u1] = 1.0;
    q[u2] = -1.0;
    CHECK_THROWS_AS(evaluate(sqrt(var(u1) * var(u2)), q), DomainError);

    Point l;
    l[x1] = 0.0;
    CHECK_THROWS_AS(evaluate(ln(X1), l), DomainError);

    Point t;
    t[x1] = std::acos(0.0);  // pi/2
    CHECK_THROWS_AS(evaluate(tan(X1), t), DomainError);

    Point a;
    a[x1] = 0.0;
    a[x2] = 0.0;
    CHECK_THROWS_AS(evaluate(atan2(X1, var(x2)), a), DomainError);

    Point d;
    d[x1] = 1.0;
    d[x2] = 0.0;
    CHECK_THROWS_AS(evaluate(X1 / var(x2), d), DomainError);  // non-finite
}

TEST_CASE("guarded evaluation trips SingularityEncountered") {
    Point p;
    p[x1] = 1.0;
    p[x2] = 1e-10;
    EvalOptions opts;
    opts.guard = 1e-9;
    CHECK_THROWS_AS(evaluate(X1 / var(x2), p, opts), SingularityEncountered);
    p[x2] = 0.5;
    CHECK(evaluate(X1 / var(x2), p, opts) == doctest::Approx(2.0));
}

TEST_CASE("is_zero decides by sampling") {
    std::mt19937_64 rng(99);
    Domain dom;

    CHECK(is_zero(constant(0) * X1, dom, rng));
    CHECK(is_zero(differentiate(cos(X3) * U1, u2), dom, rng));
    CHECK(is_zero(X1 - X1, dom, rng));

    Domain d3;
    d3.set(x3, -1.0, 1.0);
    CHECK_FALSE(is_zero(pow(sin(X3), 2), d3, rng));

    // trig identity holds only numerically (no symbolic cancellation)
    CHECK(is_zero(pow(sin(X1), 2) + pow(cos(X1), 2) - constant(1), dom, rng));

    // a domain where evaluation always fails is inconclusive
    Domain bad;
    bad.set(x1, -2.0, -1.0);
    CHECK_THROWS_AS(is_zero(sqrt(X1), bad, rng), InconclusiveDomain);
}

TEST_CASE("jacobian differentiates entrywise") {
    std::vector<Expr> rows = {parse_expr("x1 + cos(x3)*u1"), parse_expr("cos(x3)*u1")};
    std::vector<VarId> cols = {u1, u2};
    ExprMatrix m = jacobian(rows, cols);
    CHECK(m.at(0, 0) == cos(X3));
    CHECK(m.at(0, 1) == constant(0));
    CHECK(m.at(1, 0) == cos(X3));
    CHECK(m.at(1, 1) == constant(0));

    std::vector<Expr> idrow = {X1};
    std::vector<VarId> idcol = {x1};
    CHECK(jacobian(idrow, idcol).at(0, 0) == constant(1));

    std::vector<Expr> crow = {constant(7)};
    CHECK(jacobian(crow, idcol).at(0, 0) == constant(0));
}

TEST_CASE("numeric_rank returns the generic rank") {
    std::mt19937_64 rng(2024);
    Domain dom;
    dom.set(x3, -1.0, 1.0);

    std::vector<Expr> rows = {parse_expr("x1 + cos(x3)*u1"), parse_expr("cos(x3)*u1")};
    std::vector<VarId> cols = {u1, u2};
    CHECK(numeric_rank(jacobian(rows, cols), dom, rng) == 1);

    ExprMatrix id3(3, 3);
    for (int i = 0; i < 3; ++i) id3.at(i, i) = constant(1);
    CHECK(numeric_rank(id3, dom, rng) == 3);

    ExprMatrix zero(2, 3);
    CHECK(numeric_rank(zero, dom, rng) == 0);
}

TEST_CASE("numeric_rank is invariant under row permutation and scaling") {
    std::mt19937_64 rng(77);
    Domain dom;
    ExprMatrix m(3, 3);
    m.at(0, 0) = parse_expr("x1");
    m.at(0, 1) = parse_expr("x2");
    m.at(0, 2) = constant(1);
    m.at(1, 0) = parse_expr("2*x1");
    m.at(1, 1) = parse_expr("2*x2");
    m.at(1, 2) = constant(2);  // row 1 = 2 * row 0: rank 2
    m.at(2, 0) = parse_expr("sin(x1)");
    m.at(2, 1) = constant(0);
    m.at(2, 2) = parse_expr("x1*x2");

    int base = numeric_rank(m, dom, rng);
    CHECK(base == 2);

    std::mt19937_64 prng(3);
    std::uniform_real_distribution<double> scdist(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        ExprMatrix p(3, 3);
        std::array<int, 3> perm = {0, 1, 2};
        std::shuffle(perm.begin(), perm.end(), prng);
        for (int i = 0; i < 3; ++i) {
            double s = 0.0;
            while (std::abs(s) < 0.05) s = scdist(prng);
            // scale by a rational approximation to keep arithmetic exact
            Rational rs(static_cast<long long>(std::lround(s * 64)), 64);
            if (rs.is_zero()) rs = Rational(1, 64);
            for (int k = 0; k < 3; ++k) p.at(i, k) = scale(m.at(perm[i], k), rs);
        }
        CHECK(numeric_rank(p, dom, rng) == base);
    }
}

TEST_CASE("matrix_rank uses the relative pivot threshold") {
    Eigen::MatrixXd m(2, 2);
    m << 1.0, 2.0, 1.0, 2.0 + 1e-12;
    CHECK(matrix_rank(m, 1e-8) == 1);
    m(1, 1) = 2.5;
    CHECK(matrix_rank(m, 1e-8) == 2);
    CHECK(matrix_rank(Eigen::MatrixXd::Zero(3, 3), 1e-8) == 0);
}

TEST_CASE("printer round-trips through the parser") {
    std::vector<std::string> texts = {
        "x1 + cos(x3)*u1",
        "x2 - x1*u2/u1",
        "x3 - x1*sqrt(u2/u1)",
        "atan2(y1_1 - y2_2, y2_1)",
        "((y1_2 - y2_3)*y2_1 - (y1_1 - y2_2)*y2_2)/((y1_1 - y2_2)^2 + y2_1^2)",
        "-x1^2 + 3/2*x2 - 1/3",
        "epsilon*cos(x5)*u2 - sin(x5)*u1",
        "1/(1 + tan(x3)^2)",
        "exp(-2*x1)*ln(x2 + 3)",
        "u1^(3/2) - u2^-2",
        "sqrt(x1^2 + x2^2) + atan(x1)",
    };
    for (const auto& t : texts) {
        Expr e = parse_expr(t);
        CAPTURE(t);
        CAPTURE(to_string(e));
        CHECK(parse_expr(to_string(e)) == e);
    }
}

TEST_CASE("canonical collection cancels like terms") {
    Expr e = parse_expr("epsilon*sin(x5)*u2 - epsilon*u2*sin(x5)");
    CHECK(e == constant(0));
    Expr f = parse_expr("cos(x3)*(1/cos(x3))");
    CHECK(f == constant(1));
    Expr g = parse_expr("x1 + cos(x3)*(ubar1 - x1)/cos(x3)");
    CHECK(g == parse_expr("ubar1"));
    CHECK(parse_expr("cos(-x1)") == parse_expr("cos(x1)"));
    CHECK(parse_expr("sin(-x1)") == parse_expr("-sin(x1)"));
}
