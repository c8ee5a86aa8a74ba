#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "corpus.hpp"
#include "flatforge/linearize.hpp"

using namespace flatforge;
using flatforge::testing::academic;
using flatforge::testing::vehicle;
using flatforge::testing::vtol;

namespace {

// |a - b| relative agreement at random consistent samples
void check_numeric_equal(const Expr& a, const Expr& b, const Sampler& sampler,
                         std::mt19937_64& rng, int points = 100, double tol = 1e-10) {
    int valid = 0, attempts = 0;
    while (valid < points && attempts < 10 * points) {
        ++attempts;
        Point p = sampler.sample(rng);
        double va, vb;
        try {
            va = evaluate(a, p);
            vb = evaluate(b, p);
        } catch (const DomainError&) {
            continue;
        }
        REQUIRE(std::abs(va - vb) < tol * std::max({1.0, std::abs(va), std::abs(vb)}));
        ++valid;
    }
    REQUIRE(valid == points);
}

}  // namespace

TEST_CASE("feedback construction matches the worked examples") {
    std::mt19937_64 rng(21);

    auto veh = vehicle();
    StaticFeedback fb = build_feedback(veh.sys, veh.spec.phi, MultiIndex{0, 1}, rng);
    CHECK(fb.forward[0] == parse_expr("x1 + cos(x3)*u1"));
    CHECK(fb.forward[1] == parse_expr("u2"));
    CHECK(fb.complement == 2);
    REQUIRE(fb.inverse.has_value());
    CHECK((*fb.inverse)[0] == parse_expr("(ubar1 - x1)/cos(x3)"));
    CHECK((*fb.inverse)[1] == parse_expr("ubar2"));

    StaticFeedback alt = build_feedback_alt(veh.sys, veh.spec.phi, MultiIndex{0, 1}, rng);
    CHECK(alt.forward[0] == parse_expr("cos(x3)*u1"));
    CHECK(alt.lead_channel == 2);

    auto ac = academic();
    StaticFeedback fba = build_feedback(ac.sys, ac.spec.phi, MultiIndex{0, 0}, rng);
    CHECK(fba.forward[0] == parse_expr("x2 - x1*u2/u1"));
    CHECK(fba.complement == 2);
    REQUIRE(fba.inverse.has_value());
    CHECK((*fba.inverse)[0] == parse_expr("x1*ubar2/(x2 - ubar1)"));

    auto vt = vtol();
    StaticFeedback fbt = build_feedback(vt.sys, vt.spec.phi, MultiIndex{0, 2}, rng);
    CHECK(fbt.forward[0] ==
          parse_expr("x1 - epsilon*sin(x5) + cos(x5)*u1 - 1 - epsilon*x6^2*cos(x5)"));
    CHECK(fbt.complement == 2);
    CHECK(fbt.inverse.has_value());

    // alternate VTOL lead: the second total derivative of the vertical output
    StaticFeedback fbta = build_feedback_alt(vt.sys, vt.spec.phi, MultiIndex{0, 2}, rng);
    CHECK(fbta.forward[0] == parse_expr("cos(x5)*u1 - epsilon*x6^2*cos(x5) - 1"));
}

TEST_CASE("forward-inverse identity holds at samples") {
    std::mt19937_64 rng(22);
    for (auto loader : {vehicle, academic, vtol}) {
        auto ls = loader();
        MultiIndex K = relative_degrees(ls.sys, ls.spec.phi, rng);
        StaticFeedback fb = build_feedback(ls.sys, ls.spec.phi, K, rng);
        REQUIRE(fb.inverse.has_value());
        std::vector<VarId> vars = ls.sys.base_coordinates();
        int checked = 0;
        for (int t = 0; t < 200 && checked < 100; ++t) {
            Point p = ls.sys.dom.sample(vars, rng);
            try {
                Point q = p;
                q[VarId::bar_input(1)] = evaluate(fb.forward[0], p);
                q[VarId::bar_input(2)] = evaluate(fb.forward[1], p);
                for (int j = 1; j <= 2; ++j) {
                    double uj = p.at(ls.sys.input_var(j));
                    double back = evaluate((*fb.inverse)[j - 1], q);
                    REQUIRE(std::abs(back - uj) < 1e-9 * (1.0 + std::abs(uj)));
                }
            } catch (const DomainError&) {
                continue;
            }
            ++checked;
        }
        REQUIRE(checked == 100);
    }
}

TEST_CASE("transform_system rewrites the dynamics over the new input") {
    std::mt19937_64 rng(23);

    // identity feedback: system unchanged up to the input renaming
    auto veh = vehicle();
    StaticFeedback id;
    id.forward = {parse_expr("u1"), parse_expr("u2")};
    id.inverse = {{parse_expr("ubar1"), parse_expr("ubar2")}};
    id.complement = 2;
    TransformedSystem tid = transform_system(veh.sys, id);
    SubstMap back;
    back[VarId::bar_input(1)] = parse_expr("u1");
    back[VarId::bar_input(2)] = parse_expr("u2");
    for (int i = 0; i < 3; ++i) {
        CHECK(substitute(tid.system().f[i], back) == veh.sys.f[i]);
    }

    // vehicle: x1' = sin(x3) (ubar1 - x1)/cos(x3)
    StaticFeedback fb = build_feedback(veh.sys, veh.spec.phi, MultiIndex{0, 1}, rng);
    TransformedSystem tveh = transform_system(veh.sys, fb);
    CHECK(tveh.system().f[0] == parse_expr("sin(x3)*(ubar1 - x1)/cos(x3)"));
    CHECK(tveh.system().f[1] == parse_expr("ubar1 - x1"));
    CHECK(tveh.system().f[2] == parse_expr("ubar2"));

    // academic: printed form of the transformed dynamics
    auto ac = academic();
    StaticFeedback fba = build_feedback(ac.sys, ac.spec.phi, MultiIndex{0, 0}, rng);
    TransformedSystem tac = transform_system(ac.sys, fba);
    FeedbackSampler sampler(ac.sys, fba, 0, 0);
    check_numeric_equal(tac.system().f[0], parse_expr("x1/(x2 - ubar1)*ubar2"), sampler, rng, 50,
                        1e-12);
    CHECK(tac.system().f[1] == parse_expr("ubar2"));
    check_numeric_equal(tac.system().f[2], parse_expr("sqrt(x1/(x2 - ubar1))*ubar2"), sampler,
                        rng, 50, 1e-12);
}

TEST_CASE("numeric inversion handles feedbacks without closed forms") {
    std::mt19937_64 rng(24);
    auto veh = vehicle();
    // u1 enters through both a power and a transcendental factor: no single
    // rational power, so only Newton applies
    StaticFeedback fb;
    fb.forward = {parse_expr("u1 + sin(u1)/2 + x1"), parse_expr("u2")};
    fb.complement = 2;
    Point base;
    base[VarId::state(1)] = 0.3;
    base[VarId::state(2)] = 0.0;
    base[VarId::state(3)] = 0.0;

    Eigen::Vector2d target(1.7, 0.4);
    Eigen::Vector2d u = invert_feedback_numeric(fb, veh.sys, base, target, {1.0, 0.0});
    Point p = base;
    p[VarId::input(1)] = u(0);
    p[VarId::input(2)] = u(1);
    CHECK(evaluate(fb.forward[0], p) == doctest::Approx(1.7).epsilon(1e-12));
    CHECK(u(1) == doctest::Approx(0.4));

    // an unreachable value diverges: u + sin(u)/2 is monotone with range R,
    // but exp(u1) + exp(-u1) never goes below 2
    StaticFeedback bad;
    bad.forward = {parse_expr("exp(u1) + exp(-u1)"), parse_expr("u2")};
    bad.complement = 2;
    CHECK_THROWS_AS(
        invert_feedback_numeric(bad, veh.sys, base, Eigen::Vector2d(0.0, 0.0), {0.5, 0.0}),
        NewtonDivergence);

    // transform_system falls back to evaluable-only mode
    TransformedSystem tsys = transform_system(veh.sys, fb);
    CHECK_FALSE(tsys.symbolic());
    CHECK_THROWS_AS(tsys.system(), ValidationError);
    Eigen::VectorXd x(3);
    x << 0.3, 0.0, 0.0;
    Eigen::VectorXd dx = tsys.eval_field(x, target);
    // dx = f(x, u) with the numerically recovered u
    CHECK(dx(0) == doctest::Approx(std::sin(0.0) * u(0)));
    CHECK(dx(1) == doctest::Approx(std::cos(0.0) * u(0)));
    CHECK(dx(2) == doctest::Approx(0.4));
}

TEST_CASE("transformed chain reproduces the worked vehicle derivatives") {
    std::mt19937_64 rng(25);
    auto veh = vehicle();
    FlatnessReport rep = analyze(veh.sys, veh.spec, rng);
    Linearization lin = linearize(veh.sys, veh.spec, rep, FeedbackVariant::Primary, rng);

    // lead channel collapses to the new input jets
    CHECK(lin.chain.at(1, 0) == parse_expr("ubar1"));
    CHECK(lin.chain.at(1, 1) == parse_expr("ubar1_1"));
    CHECK(lin.chain.at(1, 2) == parse_expr("ubar1_2"));
    CHECK(lin.chain.at(2, 1) == parse_expr("ubar1 - x1"));

    // worked closed forms for the second channel
    Expr y22 = parse_expr("(x1 - ubar1)*tan(x3) + ubar1_1");
    Expr y23 = parse_expr(
        "(ubar1 - x1)*((1 - ubar2)*tan(x3)^2 - ubar2) - ubar1_1*tan(x3) + ubar1_2");
    check_numeric_equal(lin.chain.at(2, 2), y22, *lin.sampler, rng, 100, 1e-10);
    check_numeric_equal(lin.chain.at(2, 3), y23, *lin.sampler, rng, 100, 1e-10);
}

TEST_CASE("transformed chain structure holds for both variants on the corpus") {
    std::mt19937_64 rng(26);
    for (auto loader : {vehicle, academic, vtol}) {
        auto ls = loader();
        FlatnessReport rep = analyze(ls.sys, ls.spec, rng);
        for (auto variant : {FeedbackVariant::Primary, FeedbackVariant::Alternate}) {
            CAPTURE(static_cast<int>(variant));
            Linearization lin = linearize(ls.sys, ls.spec, rep, variant, rng);
            const int lead = lin.fb.lead_channel;
            const int other = lead == 1 ? 2 : 1;
            // ubar2 and raw inputs stay out of everything below the top line
            for (int beta = 0; rep.K[other] + beta < rep.R[other]; ++beta) {
                for (const VarId& v : free_variables(lin.chain.at(other, rep.K[other] + beta))) {
                    CHECK(v.kind != VarKind::InputJet);
                    bool is_ubar2 = v.kind == VarKind::BarInputJet && v.index == 2;
                    CHECK_FALSE(is_ubar2);
                }
            }
            // the top line of the non-lead channel does carry ubar2
            bool top_has_ubar2 = false;
            for (const VarId& v : free_variables(lin.chain.at(other, rep.R[other]))) {
                if (v.kind == VarKind::BarInputJet && v.index == 2) top_has_ubar2 = true;
            }
            CHECK(top_has_ubar2);
        }
    }
}

TEST_CASE("a wrong derivative-order claim is rejected") {
    std::mt19937_64 rng(27);
    auto veh = vehicle();
    StaticFeedback fb = build_feedback(veh.sys, veh.spec.phi, MultiIndex{0, 1}, rng);
    TransformedSystem tsys = transform_system(veh.sys, fb);
    // pretending R = (3, 4) pushes ubar2 below the claimed top line
    CHECK_THROWS_AS(
        transformed_chain(tsys, veh.spec.phi, MultiIndex{0, 1}, MultiIndex{3, 4}, rng),
        StructureViolation);
}

TEST_CASE("prolongation appends the integrator chain") {
    std::mt19937_64 rng(28);
    auto ac = academic();
    FlatnessReport rep = analyze(ac.sys, ac.spec, rng);
    CHECK(rep.prolongations == 3);
    Linearization lin = linearize(ac.sys, ac.spec, rep, FeedbackVariant::Primary, rng);
    ProlongedSystem pro = prolong(lin.tsys.system(), rep.prolongations);
    CHECK(pro.state.size() == 6);  // n + p = #R
    CHECK(static_cast<int>(pro.state.size()) == rep.R.total());
    CHECK(pro.inputs[0] == VarId::bar_input(1, 3));
    CHECK(pro.inputs[1] == VarId::bar_input(2, 0));
    CHECK(pro.f[3] == parse_expr("ubar1_1"));
    CHECK(pro.f[4] == parse_expr("ubar1_2"));
    CHECK(pro.f[5] == parse_expr("ubar1_3"));

    // p = 0 keeps the system as is
    ProlongedSystem none = prolong(lin.tsys.system(), 0);
    CHECK(none.state.size() == 3);
    CHECK(none.f.size() == 3);
    CHECK(none.inputs[0] == VarId::bar_input(1, 0));
}

TEST_CASE("static linearizability after exactly #R - n prolongations") {
    std::mt19937_64 rng(29);
    for (auto loader : {vehicle, academic}) {
        auto ls = loader();
        FlatnessReport rep = analyze(ls.sys, ls.spec, rng);
        Linearization lin = linearize(ls.sys, ls.spec, rep, FeedbackVariant::Primary, rng);
        const int p = rep.prolongations;
        ProlongedSystem full = prolong(lin.tsys.system(), p);
        CHECK(check_static_linearizable(full, lin.chain, *lin.sampler, rng));
        ProlongedSystem less = prolong(lin.tsys.system(), p - 1);
        CHECK_FALSE(check_static_linearizable(less, lin.chain, *lin.sampler, rng));
    }
}
